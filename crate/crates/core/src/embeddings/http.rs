use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use super::{EmbeddingError, EmbeddingVector, Encoder};

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

/// Client for `POST {model, input: [texts]} -> {embeddings: [[f64]]}`.
///
/// The first response fixes the session dimension; any later response with
/// a different width is an error.
#[derive(Debug)]
pub struct HttpEncoder {
    model_id: String,
    url: Url,
    client: reqwest::blocking::Client,
    batch_size: usize,
    dimension: OnceLock<usize>,
}

impl HttpEncoder {
    pub fn new(
        model_id: &str,
        url: Url,
        timeout: Duration,
        batch_size: usize,
    ) -> Result<Self, EmbeddingError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout)
            .build()
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        Ok(Self {
            model_id: model_id.to_string(),
            url,
            client,
            batch_size: batch_size.max(1),
            dimension: OnceLock::new(),
        })
    }

    fn post(&self, batch: &[&str]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let response = self
            .client
            .post(self.url.clone())
            .json(&EmbedRequest {
                model: &self.model_id,
                input: batch,
            })
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| EmbeddingError::Transport(e.to_string()))?;
        let body: EmbedResponse = response
            .json()
            .map_err(|e| EmbeddingError::Transport(format!("malformed response: {e}")))?;
        if body.embeddings.len() != batch.len() {
            return Err(EmbeddingError::CountMismatch {
                requested: batch.len(),
                returned: body.embeddings.len(),
            });
        }
        Ok(body.embeddings)
    }
}

impl Encoder for HttpEncoder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyText);
        }
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            for values in self.post(batch)? {
                let expected = *self.dimension.get_or_init(|| values.len());
                if values.len() != expected {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected,
                        actual: values.len(),
                    });
                }
                out.push(EmbeddingVector::normalized(values, self.model_id.clone())?);
            }
        }
        Ok(out)
    }
}
