//! The six-stage query pipeline: refine, decompose, retrieve, enhance,
//! synthesize, cite.

mod retrieval;
mod stages;

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::agents::{enhance_subquery, select_agent, AgentMatch, AgentRegistry};
use crate::citation::{attribute, CitationError, CitedAnswer, EvidenceItem};
use crate::clock::{elapsed_ms, Clock};
use crate::config::PipelineConfig;
use crate::corpus::content_digest;
use crate::embeddings::Encoder;
use crate::gateway::{CallRecord, Gateway, GatewayError};
use crate::stage::Stage;
use crate::store::RetrievedChunk;

pub use retrieval::{
    pool_size, retrieve_parallel, retrieve_sequential, ArmError, DatabaseRetriever, LiveWebRetriever,
    RetrievalArms, RetrievalOutcome, StoreRetriever, SubQueryReport, WebRetriever,
};
pub use stages::{
    decompose_prompt, decompose_query, parse_refinement, parse_sub_queries, refine_prompt, refine_query,
    synthesis_model, synthesis_prompt, synthesize, DecomposeOutcome, RefineOutcome,
};

/// The query as it moves through stages 1 and 2.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryEnvelope {
    pub raw: String,
    pub refined: String,
    pub sub_queries: Vec<String>,
    /// Sub-queries after agent keyword expansion, index-aligned.
    pub enhanced_sub_queries: Vec<String>,
    pub received_at: DateTime<Utc>,
}

/// Deduplicated evidence in canonical order: database chunks by
/// (doc, chunk), then web chunks by (doc, chunk).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceBundle {
    pub db_chunks: Vec<RetrievedChunk>,
    pub web_chunks: Vec<RetrievedChunk>,
}

impl EvidenceBundle {
    pub fn iter(&self) -> impl Iterator<Item = &RetrievedChunk> {
        self.db_chunks.iter().chain(&self.web_chunks)
    }

    pub fn len(&self) -> usize {
        self.db_chunks.len() + self.web_chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn evidence_items(&self) -> Vec<EvidenceItem> {
        self.iter().map(EvidenceItem::from).collect()
    }
}

#[derive(Debug)]
pub enum PipelineErrorKind {
    EmptyQuery,
    NoEvidence,
    Retrieval(String),
    Generation(GatewayError),
    Citation(CitationError),
}

/// A run that could not produce an answer, with the stage that stopped it.
#[derive(Debug)]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: PipelineErrorKind,
}

impl PipelineError {
    /// The failure lies with a model or network provider.
    pub fn is_provider_failure(&self) -> bool {
        match &self.kind {
            PipelineErrorKind::Generation(e) => e.is_provider_failure(),
            PipelineErrorKind::Retrieval(_) => true,
            _ => false,
        }
    }
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} ({}): ", self.stage.number(), self.stage.name())?;
        match &self.kind {
            PipelineErrorKind::EmptyQuery => f.write_str("the query is empty"),
            PipelineErrorKind::NoEvidence => f.write_str("no evidence was retrieved from any enabled source"),
            PipelineErrorKind::Retrieval(m) => write!(f, "retrieval failed: {m}"),
            PipelineErrorKind::Generation(e) => write!(f, "{e}"),
            PipelineErrorKind::Citation(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for PipelineError {}

/// One telemetry line per stage per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Always `"stage"`; separates these lines from per-call lines.
    pub kind: String,
    pub run_id: String,
    pub stage: Stage,
    pub number: u8,
    pub duration_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Sampling temperature of the stage's generation call (stages 1, 2, 5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub llm_calls: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentMatch>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degradations: Vec<String>,
}

impl StageRecord {
    fn new(run_id: &str, stage: Stage, duration_ms: f64) -> Self {
        Self {
            kind: "stage".to_string(),
            run_id: run_id.to_string(),
            stage,
            number: stage.number(),
            duration_ms,
            model: None,
            temperature: None,
            llm_calls: 0,
            counts: BTreeMap::new(),
            agents: Vec::new(),
            degradations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTelemetry {
    pub run_id: String,
    /// Sorted by stage number, one per stage.
    pub records: Vec<StageRecord>,
}

impl RunTelemetry {
    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.records.iter().find(|r| r.stage == stage)
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("stage records serialize") + "\n")
            .collect()
    }

    /// Appends one line per stage to `path`.
    pub fn append_to(&self, path: &Path) -> std::io::Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        f.write_all(self.to_jsonl().as_bytes())
    }
}

/// Normalizes typed or transcribed input: control characters dropped,
/// whitespace collapsed.
pub fn preprocess_query(raw: &str) -> String {
    raw.chars()
        .map(|c| if c.is_control() { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Everything a run needs besides the query.
#[derive(Clone, Copy)]
pub struct PipelineContext<'a> {
    pub config: &'a PipelineConfig,
    pub gateway: &'a Gateway,
    pub agents: &'a AgentRegistry,
    pub db: Option<&'a dyn DatabaseRetriever>,
    pub web: Option<&'a dyn WebRetriever>,
    pub citation_encoder: &'a dyn Encoder,
    pub clock: &'a dyn Clock,
    /// Input hook run before stage 1, e.g. a speech-to-text transliterator.
    pub preprocess: Option<&'a (dyn Fn(&str) -> String + Sync)>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub envelope: QueryEnvelope,
    pub bundle: EvidenceBundle,
    pub retrieval: Vec<SubQueryReport>,
    /// Synthesized text before citation markers were added.
    pub draft: String,
    pub synthesis_model: String,
    pub cited: CitedAnswer,
    pub telemetry: RunTelemetry,
}

/// Agent choice and keyword expansion for each sub-query.
pub fn enhance_all(sub_queries: &[String], registry: &AgentRegistry, max_terms: usize) -> (Vec<String>, Vec<AgentMatch>) {
    sub_queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let (agent, score) = select_agent(registry, q);
            let enhanced = enhance_subquery(q, agent, max_terms);
            let m = AgentMatch {
                sub_query_index: i,
                agent: agent.name.clone(),
                score,
            };
            (enhanced, m)
        })
        .unzip()
}

struct CallCursor<'a> {
    gateway: &'a Gateway,
    seen: usize,
}

impl CallCursor<'_> {
    fn take(&mut self) -> Vec<CallRecord> {
        let all = self.gateway.calls();
        let fresh = all.get(self.seen..).map(<[CallRecord]>::to_vec).unwrap_or_default();
        self.seen = all.len();
        fresh
    }
}

fn apply_calls(record: &mut StageRecord, calls: &[CallRecord]) {
    record.llm_calls = calls.len();
    if let Some(first) = calls.iter().find(|c| c.stage == record.stage) {
        record.model = Some(first.model.clone());
        record.temperature = Some(first.temperature);
    }
}

/// Runs all six stages for one query.
///
/// Stages 1 to 4 degrade rather than fail. The run stops only when the
/// query is empty, no evidence was found, synthesis fails, or citation
/// cannot embed its inputs.
pub fn run_pipeline(raw: &str, ctx: &PipelineContext<'_>) -> Result<PipelineRun, PipelineError> {
    let config = ctx.config;
    let clock = ctx.clock;
    let received_at = clock.now();
    let input = match ctx.preprocess {
        Some(hook) => preprocess_query(&hook(raw)),
        None => preprocess_query(raw),
    };
    if input.is_empty() {
        return Err(PipelineError {
            stage: Stage::Refine,
            kind: PipelineErrorKind::EmptyQuery,
        });
    }
    let run_id = content_digest(&format!("{}|{input}", received_at.to_rfc3339()))[..16].to_string();
    let mut cursor = CallCursor {
        gateway: ctx.gateway,
        seen: ctx.gateway.calls().len(),
    };
    let mut records = Vec::with_capacity(6);

    // 1. refine
    let t = clock.monotonic();
    let refine = refine_query(&input, ctx.gateway, config);
    let mut rec = StageRecord::new(&run_id, Stage::Refine, elapsed_ms(t, clock.monotonic()));
    apply_calls(&mut rec, &cursor.take());
    rec.degradations = refine.degradations;
    records.push(rec);
    let refined = refine.refined;

    // 2. decompose
    let t = clock.monotonic();
    let decomposed = decompose_query(&refined, ctx.gateway, config);
    let mut rec = StageRecord::new(&run_id, Stage::Decompose, elapsed_ms(t, clock.monotonic()));
    apply_calls(&mut rec, &cursor.take());
    rec.counts.insert("sub_queries".into(), decomposed.sub_queries.len());
    rec.degradations = decomposed.degradations;
    records.push(rec);
    let sub_queries = decomposed.sub_queries;

    // 4. enhance, measured on its own even when it precedes retrieval
    let t = clock.monotonic();
    let (enhanced, matches) = enhance_all(&sub_queries, ctx.agents, config.agents.max_expansion_terms);
    let mut enhance_rec = StageRecord::new(&run_id, Stage::Enhance, elapsed_ms(t, clock.monotonic()));
    enhance_rec.counts.insert(
        "expanded".into(),
        enhanced.iter().zip(&sub_queries).filter(|(e, q)| e != q).count(),
    );
    enhance_rec.counts.insert(
        if config.stages.enhance_before_retrieval { "before_retrieval" } else { "after_retrieval" }.into(),
        1,
    );
    enhance_rec.agents = matches;

    // 3. retrieve
    let retrieval_queries = if config.stages.enhance_before_retrieval { &enhanced } else { &sub_queries };
    let arms = RetrievalArms {
        db: ctx.db,
        web: ctx.web,
        db_top_k: config.retrieval.db_top_k,
        web_top_n: config.retrieval.web_top_n,
    };
    let t = clock.monotonic();
    let outcome = retrieve_parallel(retrieval_queries, arms, config.stages.max_workers).map_err(|e| PipelineError {
        stage: Stage::Retrieve,
        kind: PipelineErrorKind::Retrieval(e.0),
    })?;
    let mut rec = StageRecord::new(&run_id, Stage::Retrieve, elapsed_ms(t, clock.monotonic()));
    let calls = cursor.take();
    rec.llm_calls = calls.len();
    rec.counts.insert("selection_calls".into(), calls.len());
    rec.counts.insert("db_chunks".into(), outcome.bundle.db_chunks.len());
    rec.counts.insert("web_chunks".into(), outcome.bundle.web_chunks.len());
    rec.counts.insert("workers".into(), outcome.workers);
    rec.degradations = outcome
        .reports
        .iter()
        .flat_map(|r| r.errors.iter().map(move |e| format!("sub-query {}: {e}", r.index)))
        .collect();
    records.push(rec);
    records.push(enhance_rec);
    let bundle = outcome.bundle;
    if bundle.is_empty() {
        return Err(PipelineError {
            stage: Stage::Retrieve,
            kind: PipelineErrorKind::NoEvidence,
        });
    }

    // 5. synthesize
    let t = clock.monotonic();
    let (draft, synthesis_model) = synthesize(&refined, &enhanced, &bundle, ctx.gateway, config).map_err(|e| PipelineError {
        stage: Stage::Synthesize,
        kind: PipelineErrorKind::Generation(e),
    })?;
    let mut rec = StageRecord::new(&run_id, Stage::Synthesize, elapsed_ms(t, clock.monotonic()));
    apply_calls(&mut rec, &cursor.take());
    rec.counts.insert("evidence_chunks".into(), bundle.len());
    rec.counts.insert("answer_words".into(), draft.split_whitespace().count());
    records.push(rec);

    // 6. cite
    let t = clock.monotonic();
    let cited = attribute(&draft, &bundle.evidence_items(), ctx.citation_encoder, &config.citation).map_err(|e| {
        PipelineError {
            stage: Stage::Cite,
            kind: PipelineErrorKind::Citation(e),
        }
    })?;
    let mut rec = StageRecord::new(&run_id, Stage::Cite, elapsed_ms(t, clock.monotonic()));
    rec.model = Some(ctx.citation_encoder.model_id().to_string());
    rec.counts.insert("citations".into(), cited.citations.len());
    rec.counts.insert("sentences".into(), cited.sentences.len());
    rec.counts.insert("uncited_sentences".into(), cited.uncited_sentence_count);
    records.push(rec);

    records.sort_by_key(|r| r.number);
    Ok(PipelineRun {
        envelope: QueryEnvelope {
            raw: input,
            refined,
            sub_queries,
            enhanced_sub_queries: enhanced,
            received_at,
        },
        bundle,
        retrieval: outcome.reports,
        draft,
        synthesis_model,
        cited,
        telemetry: RunTelemetry { run_id, records },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocessing_collapses_whitespace_and_controls() {
        assert_eq!(preprocess_query("  wheat\u{0007}\tmsp \n now "), "wheat msp now");
        assert_eq!(preprocess_query(" \n\t"), "");
    }
}
