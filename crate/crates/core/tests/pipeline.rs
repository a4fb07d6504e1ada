use std::path::{Path, PathBuf};
use std::sync::Arc;

use fieldrag::agents::AgentRegistry;
use fieldrag::citation::strip_markers;
use fieldrag::clock::FixedClock;
use fieldrag::embeddings::{build_encoder, fallback_descriptor, Encoder};
use fieldrag::gateway::{Gateway, GatewayError, GenerationBackend, GenerationRequest, MockBackend};
use fieldrag::pipeline::{
    run_pipeline, LiveWebRetriever, PipelineContext, PipelineErrorKind, PipelineRun, StoreRetriever,
};
use fieldrag::store::{IngestOptions, VectorStore};
use fieldrag::web::{ExtractOptions, FixtureWeb};
use fieldrag::{PipelineConfig, Stage};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

struct Harness {
    config: PipelineConfig,
    encoder: Arc<dyn Encoder>,
    store: VectorStore,
    agents: AgentRegistry,
    clock: FixedClock,
}

impl Harness {
    fn new() -> Self {
        let config = PipelineConfig::default();
        let e = &config.embeddings;
        let encoder = build_encoder(&fallback_descriptor(e.fallback_dimension), e).unwrap();
        let mut store = VectorStore::new();
        store
            .ingest_jsonl(&fixtures().join("corpus_20.jsonl"), encoder.as_ref(), &IngestOptions::default())
            .unwrap();
        let agents = AgentRegistry::builtin(&config.agents.default_agent).unwrap();
        Self {
            config,
            encoder,
            store,
            agents,
            clock: FixedClock::epoch(),
        }
    }

    fn gateway(&self, seed: u64) -> Gateway {
        Gateway::from_config(&self.config.generation, Some(seed), Arc::new(FixedClock::epoch())).unwrap()
    }

    fn run(&self, query: &str, gateway: &Gateway, with_db: bool) -> Result<PipelineRun, fieldrag::pipeline::PipelineError> {
        let db = StoreRetriever {
            store: &self.store,
            encoder: self.encoder.clone(),
        };
        let ctx = PipelineContext {
            config: &self.config,
            gateway,
            agents: &self.agents,
            db: with_db.then_some(&db as _),
            web: None,
            citation_encoder: self.encoder.as_ref(),
            clock: &self.clock,
            preprocess: None,
        };
        run_pipeline(query, &ctx)
    }
}

const QUERY: &str = "How can farmers reduce nitrogen fertilizer use in wheat?";

#[test]
fn mock_run_passes_all_six_stages() {
    let h = Harness::new();
    let gw = h.gateway(7);
    let run = h.run(QUERY, &gw, true).unwrap();
    let numbers: Vec<u8> = run.telemetry.records.iter().map(|r| r.number).collect();
    assert_eq!(numbers, [1, 2, 3, 4, 5, 6]);
    let temps: Vec<Option<f64>> = run.telemetry.records.iter().map(|r| r.temperature).collect();
    assert_eq!(temps, [Some(0.1), Some(0.5), None, None, Some(0.2), None]);
    assert!((3..=5).contains(&run.envelope.sub_queries.len()));
    assert_eq!(run.envelope.enhanced_sub_queries.len(), run.envelope.sub_queries.len());
    assert!(!run.bundle.is_empty());
    assert_eq!(strip_markers(&run.cited.text), run.draft);
    let labels: Vec<String> = run.bundle.iter().map(|c| c.label()).collect();
    for c in &run.cited.citations {
        assert!(labels.contains(&c.label), "{} cited but not retrieved", c.label);
    }
}

#[test]
fn mock_runs_are_reproducible() {
    let h = Harness::new();
    let a = h.run(QUERY, &h.gateway(7), true).unwrap();
    let b = h.run(QUERY, &h.gateway(7), true).unwrap();
    assert_eq!(a.cited, b.cited);
    assert_eq!(a.telemetry.to_jsonl(), b.telemetry.to_jsonl());
}

#[test]
fn blank_query_is_rejected_before_any_call() {
    let h = Harness::new();
    let gw = h.gateway(1);
    let err = h.run(" \t\n", &gw, true).unwrap_err();
    assert!(matches!(err.kind, PipelineErrorKind::EmptyQuery));
    assert!(gw.calls().is_empty());
}

#[test]
fn no_evidence_source_stops_before_synthesis() {
    let h = Harness::new();
    let gw = h.gateway(1);
    let err = h.run(QUERY, &gw, false).unwrap_err();
    assert!(matches!(err.kind, PipelineErrorKind::NoEvidence));
    assert!(gw.calls().iter().all(|c| c.stage != Stage::Synthesize));
}

/// Mock replies, except for prompts with the given prefixes.
struct Failing {
    inner: MockBackend,
    prefixes: &'static [&'static str],
}

impl GenerationBackend for Failing {
    fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        if self.prefixes.iter().any(|p| request.prompt.starts_with(p)) {
            return Err(GatewayError::Model {
                model: request.model_id.clone(),
                message: "refused".into(),
            });
        }
        self.inner.complete(request)
    }
}

fn failing_gateway(h: &Harness, prefixes: &'static [&'static str]) -> Gateway {
    let backend: Arc<dyn GenerationBackend> = Arc::new(Failing {
        inner: MockBackend::new(3),
        prefixes,
    });
    h.config
        .generation
        .models
        .iter()
        .fold(h.gateway(3), |gw, m| gw.with_backend(&m.model_id, backend.clone()))
}

#[test]
fn early_stage_failures_degrade_without_aborting() {
    let h = Harness::new();
    let gw = failing_gateway(&h, &["Refine:", "Decompose"]);
    let run = h.run(QUERY, &gw, true).unwrap();
    assert_eq!(run.envelope.refined, QUERY);
    assert!(run.envelope.sub_queries.iter().all(|q| q == QUERY));
    let degraded: Vec<&String> = run.telemetry.records.iter().flat_map(|r| &r.degradations).collect();
    assert!(degraded.iter().any(|d| d.contains("refine failed")));
    assert!(degraded.iter().any(|d| d.contains("decompose failed")));
    assert!(!run.draft.is_empty());
}

#[test]
fn synthesis_failure_is_reported_with_its_stage() {
    let h = Harness::new();
    let gw = failing_gateway(&h, &["Synthesize from:"]);
    let err = h.run(QUERY, &gw, true).unwrap_err();
    assert_eq!(err.stage, Stage::Synthesize);
    assert!(matches!(err.kind, PipelineErrorKind::Generation(_)));
    assert!(err.to_string().starts_with("stage 5"));
}

#[test]
fn web_fixture_evidence_is_labelled_and_citable() {
    let h = Harness::new();
    let gw = h.gateway(7);
    let web = FixtureWeb::load(&fixtures().join("web.json")).unwrap();
    let (search, fetcher) = (web.search_provider(), web.fetcher());
    let live = LiveWebRetriever {
        search: &search,
        fetcher: &fetcher,
        gateway: &gw,
        encoder: h.encoder.clone(),
        extract: ExtractOptions::default(),
        clock: &h.clock,
        config: &h.config,
    };
    let ctx = PipelineContext {
        config: &h.config,
        gateway: &gw,
        agents: &h.agents,
        db: None,
        web: Some(&live),
        citation_encoder: h.encoder.as_ref(),
        clock: &h.clock,
        preprocess: None,
    };
    let run = run_pipeline("wheat mandi prices this week", &ctx).unwrap();
    assert!(run.bundle.db_chunks.is_empty());
    assert!(!run.bundle.web_chunks.is_empty());
    assert!(run.bundle.web_chunks.iter().all(|c| c.label().starts_with("WEB_")));
    // the heading must not merge into the first extracted sentence
    assert!(!run.draft.contains("prices Wheat arrivals"), "{}", run.draft);
    assert!(run.cited.citations.iter().all(|c| c.label.starts_with("WEB_")));
}

#[test]
fn preprocess_hook_runs_before_refinement() {
    let h = Harness::new();
    let gw = h.gateway(7);
    let db = StoreRetriever {
        store: &h.store,
        encoder: h.encoder.clone(),
    };
    let transliterate = |s: &str| s.replace("gehun", "wheat");
    let ctx = PipelineContext {
        config: &h.config,
        gateway: &gw,
        agents: &h.agents,
        db: Some(&db),
        web: None,
        citation_encoder: h.encoder.as_ref(),
        clock: &h.clock,
        preprocess: Some(&transliterate),
    };
    let run = run_pipeline("gehun msp", &ctx).unwrap();
    assert_eq!(run.envelope.raw, "wheat msp");
}
