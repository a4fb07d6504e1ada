//! Text encoders, ranked provider selection and cosine similarity.
//!
//! Every vector leaving an [`Encoder`] is L2-normalized, so retrieval and
//! citation matching reduce to dot products.

mod hashing;
mod http;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EmbeddingsConfig;
use crate::stage::Endpoint;

pub use hashing::HashingEncoder;
pub use http::HttpEncoder;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("cannot encode empty text")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value in embedding from `{0}`")]
    NonFinite(String),
    #[error("embedding transport error: {0}")]
    Transport(String),
    #[error("embedding provider returned {returned} vectors for {requested} inputs")]
    CountMismatch { requested: usize, returned: usize },
}

/// A dense vector tagged with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, EmbeddingError> {
        let model_id = model_id.into();
        if values.is_empty() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(model_id));
        }
        Ok(Self { values, model_id })
    }

    /// Builds a unit-length vector. A zero input stays zero.
    pub fn normalized(mut values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, EmbeddingError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self::new(values, model_id)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity, clamped to [-1, 1]. Zero vectors have similarity 0.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

pub trait Encoder: Send + Sync {
    fn model_id(&self) -> &str;

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError>;

    fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        let mut out = self.encode_batch(&[text])?;
        match out.pop() {
            Some(v) if out.is_empty() => Ok(v),
            _ => Err(EmbeddingError::CountMismatch {
                requested: 1,
                returned: out.len() + 1,
            }),
        }
    }
}

/// One entry of the ranked provider list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingProviderDescriptor {
    pub model_id: String,
    /// 1 is most preferred.
    pub rank: u32,
    pub endpoint: Endpoint,
    #[serde(default)]
    pub requires_accelerator: bool,
}

/// Descriptor of the built-in hashing encoder used when nothing else is live.
pub fn fallback_descriptor(dimension: usize) -> EmbeddingProviderDescriptor {
    EmbeddingProviderDescriptor {
        model_id: format!("fallback-hash-trigram-{dimension}"),
        rank: u32::MAX,
        endpoint: Endpoint::Mock,
        requires_accelerator: false,
    }
}

pub trait LivenessProbe {
    fn is_live(&self, provider: &EmbeddingProviderDescriptor) -> bool;
}

/// Probes HTTP providers by embedding a one-word input under a timeout.
/// Mock providers are always live.
#[derive(Debug, Clone)]
pub struct HttpProbe {
    pub timeout: Duration,
}

impl LivenessProbe for HttpProbe {
    fn is_live(&self, provider: &EmbeddingProviderDescriptor) -> bool {
        match &provider.endpoint {
            Endpoint::Mock => true,
            Endpoint::Http(url) => HttpEncoder::new(&provider.model_id, url.clone(), self.timeout, 1)
                .and_then(|enc| enc.encode("ping"))
                .is_ok(),
        }
    }
}

/// Accelerator presence: the configured override, else a device-node check.
pub fn detect_accelerator(overridden: Option<bool>) -> bool {
    overridden.unwrap_or_else(|| Path::new("/dev/nvidia0").exists())
}

/// Returns the most preferred provider that is live and whose accelerator
/// requirement is met; the hashing fallback when none qualifies.
pub fn select_embedding_provider(
    ranking: &[EmbeddingProviderDescriptor],
    accelerator_present: bool,
    fallback_dimension: usize,
    probe: &dyn LivenessProbe,
) -> EmbeddingProviderDescriptor {
    let mut ordered: Vec<&EmbeddingProviderDescriptor> = ranking.iter().collect();
    ordered.sort_by_key(|d| d.rank);
    ordered
        .into_iter()
        .filter(|d| accelerator_present || !d.requires_accelerator)
        .find(|d| probe.is_live(d))
        .cloned()
        .unwrap_or_else(|| {
            log::warn!("no ranked embedding provider available; using hashing fallback");
            fallback_descriptor(fallback_dimension)
        })
}

/// Instantiates the encoder behind a descriptor.
pub fn build_encoder(
    provider: &EmbeddingProviderDescriptor,
    config: &EmbeddingsConfig,
) -> Result<Arc<dyn Encoder>, EmbeddingError> {
    match &provider.endpoint {
        Endpoint::Mock => Ok(Arc::new(HashingEncoder::with_model_id(
            config.fallback_dimension,
            provider.model_id.clone(),
        ))),
        Endpoint::Http(url) => Ok(Arc::new(HttpEncoder::new(
            &provider.model_id,
            url.clone(),
            Duration::from_secs(config.request_timeout_secs),
            config.batch_size,
        )?)),
    }
}

/// Selection plus construction, as run once per pipeline invocation.
pub fn resolve_encoder(
    ranking: &[EmbeddingProviderDescriptor],
    config: &EmbeddingsConfig,
) -> Result<Arc<dyn Encoder>, EmbeddingError> {
    let probe = HttpProbe {
        timeout: Duration::from_secs(config.probe_timeout_secs),
    };
    let chosen = select_embedding_provider(
        ranking,
        detect_accelerator(config.accelerator_present),
        config.fallback_dimension,
        &probe,
    );
    build_encoder(&chosen, config)
}
