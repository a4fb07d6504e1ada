//! Declarative engine configuration.
//!
//! The on-disk format is TOML. Every field has a default, so an empty file
//! is a complete configuration; unknown keys are rejected so a typo never
//! silently falls back to a default.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::corpus::collect::{CollectorKind, CollectorSpec};
use crate::corpus::dedup::DedupMethods;
use crate::corpus::quality::QualityHeuristics;
use crate::embeddings::EmbeddingProviderDescriptor;
use crate::gateway::{ModelDescriptor, ScaleTag};
use crate::stage::Endpoint;
use crate::store::AuthorityRules;

/// Environment variable consulted when no `--config` flag is given.
pub const CONFIG_ENV_VAR: &str = "FIELDRAG_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: `{field}` {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub stages: StagesConfig,
    pub retrieval: RetrievalConfig,
    pub citation: CitationConfig,
    pub scoring: ScoringConfig,
    pub embeddings: EmbeddingsConfig,
    pub generation: GenerationConfig,
    pub agents: AgentsConfig,
    pub web: WebConfig,
    pub corpus: CorpusConfig,
    pub telemetry: TelemetryConfig,
}

/// Stage temperatures, sub-query arity and synthesis length target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagesConfig {
    pub refine_temperature: f64,
    pub decompose_temperature: f64,
    pub synth_temperature: f64,
    /// Temperature for the article-selection call inside web retrieval.
    pub selection_temperature: f64,
    pub subquery_min: usize,
    pub subquery_max: usize,
    pub answer_word_min: usize,
    pub answer_word_max: usize,
    /// Apply agent keyword expansion before retrieval (true) or after it.
    pub enhance_before_retrieval: bool,
    pub max_workers: usize,
    pub refine_max_tokens: u32,
    pub decompose_max_tokens: u32,
    pub selection_max_tokens: u32,
    pub synth_max_tokens: u32,
}

impl Default for StagesConfig {
    fn default() -> Self {
        Self {
            refine_temperature: 0.1,
            decompose_temperature: 0.5,
            synth_temperature: 0.2,
            selection_temperature: 0.1,
            subquery_min: 3,
            subquery_max: 5,
            answer_word_min: 800,
            answer_word_max: 1200,
            enhance_before_retrieval: true,
            max_workers: 8,
            refine_max_tokens: 128,
            decompose_max_tokens: 512,
            selection_max_tokens: 64,
            synth_max_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub db_top_k: usize,
    pub web_top_n: usize,
    pub search_domain_suffix: String,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub boundary_slack: usize,
    /// Highest-similarity chunks kept per extracted web document.
    pub web_chunks_per_doc: usize,
    pub authority: AuthorityRules,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            db_top_k: 3,
            web_top_n: 5,
            search_domain_suffix: "agriculture site:.gov.in".to_string(),
            chunk_size: 1500,
            chunk_overlap: 200,
            boundary_slack: 100,
            web_chunks_per_doc: 3,
            authority: AuthorityRules::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CitationConfig {
    pub threshold: f64,
    /// 0 disables the cap.
    pub max_citations_per_sentence: usize,
    pub min_sentence_chars: usize,
}

impl Default for CitationConfig {
    fn default() -> Self {
        Self {
            threshold: 0.75,
            max_citations_per_sentence: 4,
            min_sentence_chars: 25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub lambda_weight: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { lambda_weight: 0.7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingsConfig {
    /// Preferred provider first.
    pub ranking: Vec<EmbeddingProviderDescriptor>,
    /// Encoder ranking for citation matching; falls back to `ranking`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub citation_ranking: Option<Vec<EmbeddingProviderDescriptor>>,
    pub fallback_dimension: usize,
    /// Overrides accelerator detection when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accelerator_present: Option<bool>,
    pub probe_timeout_secs: u64,
    pub request_timeout_secs: u64,
    pub batch_size: usize,
}

impl Default for EmbeddingsConfig {
    fn default() -> Self {
        Self {
            ranking: vec![EmbeddingProviderDescriptor {
                model_id: "hash-trigram".to_string(),
                rank: 1,
                endpoint: Endpoint::Mock,
                requires_accelerator: false,
            }],
            citation_ranking: None,
            fallback_dimension: 256,
            accelerator_present: None,
            probe_timeout_secs: 5,
            request_timeout_secs: 30,
            batch_size: 32,
        }
    }
}

impl EmbeddingsConfig {
    pub fn citation_ranking(&self) -> &[EmbeddingProviderDescriptor] {
        self.citation_ranking.as_deref().unwrap_or(&self.ranking)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub models: Vec<ModelDescriptor>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub max_in_flight: usize,
    /// Register words that route synthesis to the small model.
    pub technical_keywords: Vec<String>,
    /// Register words that route synthesis to the large model.
    pub policy_keywords: Vec<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let all: BTreeSet<_> = crate::stage::Stage::ALL.into_iter().collect();
        Self {
            models: vec![
                ModelDescriptor {
                    model_id: "mock-small".to_string(),
                    scale_tag: ScaleTag::Small,
                    endpoint: Endpoint::Mock,
                    capabilities: all.clone(),
                },
                ModelDescriptor {
                    model_id: "mock-large".to_string(),
                    scale_tag: ScaleTag::Large,
                    endpoint: Endpoint::Mock,
                    capabilities: all,
                },
            ],
            timeout_secs: 120,
            max_retries: 2,
            retry_backoff_ms: 500,
            max_in_flight: 4,
            technical_keywords: strings(&[
                "fertilizer", "dose", "dosage", "pest", "disease", "yield", "soil",
                "irrigation", "variety", "seed", "nitrogen", "nutrient", "spacing",
                "sowing", "harvest", "pesticide", "how to", "method", "technique",
            ]),
            policy_keywords: strings(&[
                "policy", "scheme", "subsidy", "regulation", "msp",
                "minimum support price", "act", "government", "ministry", "insurance",
                "loan", "credit", "reform", "export", "import", "budget", "market price",
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentsConfig {
    /// Agent catalogue file; relative paths resolve against the config file.
    /// The built-in four-agent catalogue is used when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalogue_path: Option<PathBuf>,
    pub default_agent: String,
    pub max_expansion_terms: usize,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            catalogue_path: None,
            default_agent: "crop_specialist".to_string(),
            max_expansion_terms: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WebConfig {
    /// Live meta-search endpoint (HTTP GET, JSON results).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search_endpoint: Option<Url>,
    pub search_query_param: String,
    pub fetch_timeout_secs: u64,
    pub user_agent: String,
    pub max_retries: u32,
    pub respect_robots: bool,
    pub ocr_enabled: bool,
    pub ocr_page_limit: usize,
    /// External OCR command; `{pdf}` and `{pages}` are substituted.
    pub ocr_command: Vec<String>,
}

impl Default for WebConfig {
    fn default() -> Self {
        Self {
            search_endpoint: None,
            search_query_param: "q".to_string(),
            fetch_timeout_secs: 10,
            user_agent: concat!("fieldrag/", env!("CARGO_PKG_VERSION"), " (+research retrieval)")
                .to_string(),
            max_retries: 2,
            respect_robots: true,
            ocr_enabled: false,
            ocr_page_limit: 20,
            ocr_command: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub quality: QualityHeuristics,
    /// Quality at or above this counts as a success for agent memory.
    pub success_cutoff: f64,
    /// Hosts whose mean quality reaches this get site-restricted queries.
    pub preferred_host_cutoff: f64,
    pub dedup: DedupMethods,
    pub lock_timeout_ms: u64,
    pub collectors: Vec<CollectorSpec>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            quality: QualityHeuristics::default(),
            success_cutoff: 0.5,
            preferred_host_cutoff: 0.7,
            dedup: DedupMethods::default(),
            lock_timeout_ms: 5000,
            collectors: vec![
                CollectorSpec {
                    name: "keyword_collector".to_string(),
                    kind: CollectorKind::Keyword,
                    topics: strings(&[
                        "minimum support price wheat",
                        "soil health card scheme",
                        "paddy irrigation practices",
                        "integrated pest management cotton",
                    ]),
                },
                CollectorSpec {
                    name: "autonomous_explorer".to_string(),
                    kind: CollectorKind::Autonomous,
                    topics: strings(&[
                        "crop insurance farmers",
                        "organic farming certification",
                        "drip irrigation subsidy",
                    ]),
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TelemetryConfig {
    /// Run-log file receiving one JSON line per stage and per model call.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = PipelineConfig::from_toml_str(&text)?;
    if let Some(base) = path.parent() {
        config.resolve_paths(base);
    }
    Ok(config)
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always serializable")
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.agents.catalogue_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = self.telemetry.path.as_mut() {
            resolve(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.stages;
        for (field, t) in [
            ("stages.refine_temperature", s.refine_temperature),
            ("stages.decompose_temperature", s.decompose_temperature),
            ("stages.synth_temperature", s.synth_temperature),
            ("stages.selection_temperature", s.selection_temperature),
        ] {
            if !(0.0..=2.0).contains(&t) {
                return Err(invalid(field, format!("must lie in [0, 2], got {t}")));
            }
        }
        if s.subquery_min == 0 {
            return Err(invalid("stages.subquery_min", "must be at least 1"));
        }
        if s.subquery_min > s.subquery_max {
            return Err(invalid(
                "stages.subquery_min",
                format!("({}) exceeds subquery_max ({})", s.subquery_min, s.subquery_max),
            ));
        }
        if s.answer_word_min == 0 || s.answer_word_min > s.answer_word_max {
            return Err(invalid(
                "stages.answer_word_min",
                "must be positive and not exceed answer_word_max",
            ));
        }
        if s.max_workers == 0 {
            return Err(invalid("stages.max_workers", "must be at least 1"));
        }
        for (field, v) in [
            ("stages.refine_max_tokens", s.refine_max_tokens),
            ("stages.decompose_max_tokens", s.decompose_max_tokens),
            ("stages.selection_max_tokens", s.selection_max_tokens),
            ("stages.synth_max_tokens", s.synth_max_tokens),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }

        let r = &self.retrieval;
        if r.db_top_k == 0 {
            return Err(invalid("retrieval.db_top_k", "must be at least 1"));
        }
        if r.web_top_n == 0 {
            return Err(invalid("retrieval.web_top_n", "must be at least 1"));
        }
        if r.chunk_size == 0 || r.chunk_overlap + r.boundary_slack >= r.chunk_size {
            return Err(invalid(
                "retrieval.chunk_size",
                "must exceed chunk_overlap + boundary_slack",
            ));
        }
        if r.web_chunks_per_doc == 0 {
            return Err(invalid("retrieval.web_chunks_per_doc", "must be at least 1"));
        }
        r.authority.validate().map_err(|e| invalid("retrieval.authority", e))?;

        let t = self.citation.threshold;
        if !(t > 0.0 && t < 1.0) {
            return Err(invalid("citation.threshold", format!("must lie in (0, 1), got {t}")));
        }

        let l = self.scoring.lambda_weight;
        if !(0.0..=1.0).contains(&l) {
            return Err(invalid("scoring.lambda_weight", format!("must lie in [0, 1], got {l}")));
        }

        let e = &self.embeddings;
        validate_ranking("embeddings.ranking", &e.ranking)?;
        if let Some(r) = &e.citation_ranking {
            validate_ranking("embeddings.citation_ranking", r)?;
        }
        if e.fallback_dimension == 0 {
            return Err(invalid("embeddings.fallback_dimension", "must be at least 1"));
        }
        if e.batch_size == 0 {
            return Err(invalid("embeddings.batch_size", "must be at least 1"));
        }

        let g = &self.generation;
        if g.models.is_empty() {
            return Err(invalid("generation.models", "must list at least one model"));
        }
        if !g.models.iter().any(|m| m.scale_tag == ScaleTag::Small) {
            return Err(invalid(
                "generation.models",
                "must contain at least one model with scale_tag = \"small\"",
            ));
        }
        let mut ids = BTreeSet::new();
        for m in &g.models {
            if m.model_id.trim().is_empty() {
                return Err(invalid("generation.models", "model_id must be non-empty"));
            }
            if !ids.insert(m.model_id.as_str()) {
                return Err(invalid(
                    "generation.models",
                    format!("duplicate model_id `{}`", m.model_id),
                ));
            }
        }
        if g.max_in_flight == 0 {
            return Err(invalid("generation.max_in_flight", "must be at least 1"));
        }
        if g.timeout_secs == 0 {
            return Err(invalid("generation.timeout_secs", "must be at least 1"));
        }

        if self.agents.default_agent.trim().is_empty() {
            return Err(invalid("agents.default_agent", "must be non-empty"));
        }

        if self.web.fetch_timeout_secs == 0 {
            return Err(invalid("web.fetch_timeout_secs", "must be at least 1"));
        }
        if self.web.ocr_enabled && self.web.ocr_command.is_empty() {
            return Err(invalid("web.ocr_command", "required when ocr_enabled = true"));
        }

        let c = &self.corpus;
        if !(0.0..=1.0).contains(&c.success_cutoff) {
            return Err(invalid("corpus.success_cutoff", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&c.preferred_host_cutoff) {
            return Err(invalid("corpus.preferred_host_cutoff", "must lie in [0, 1]"));
        }
        c.quality.validate().map_err(|e| invalid("corpus.quality", e))?;
        let mut names = BTreeSet::new();
        for spec in &c.collectors {
            if !names.insert(spec.name.as_str()) {
                return Err(invalid(
                    "corpus.collectors",
                    format!("duplicate collector name `{}`", spec.name),
                ));
            }
            if spec.topics.is_empty() {
                return Err(invalid(
                    "corpus.collectors",
                    format!("collector `{}` has no topics", spec.name),
                ));
            }
        }
        Ok(())
    }
}

fn validate_ranking(field: &str, ranking: &[EmbeddingProviderDescriptor]) -> Result<(), ConfigError> {
    if ranking.is_empty() {
        return Err(invalid(field, "must list at least one provider"));
    }
    let mut ranks = BTreeSet::new();
    for d in ranking {
        if d.rank == 0 {
            return Err(invalid(field, "ranks start at 1"));
        }
        if !ranks.insert(d.rank) {
            return Err(invalid(field, format!("duplicate rank {}", d.rank)));
        }
    }
    Ok(())
}
