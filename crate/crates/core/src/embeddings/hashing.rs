use super::{EmbeddingError, EmbeddingVector, Encoder};

const NGRAM: usize = 3;

/// Signed feature hashing of character trigrams, L2-normalized.
///
/// Text is lowercased and padded with one space on each side before the
/// trigrams are taken. Quality is far below a neural sentence encoder but
/// it needs nothing external and is fully deterministic.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    dimension: usize,
    model_id: String,
}

impl HashingEncoder {
    pub fn new(dimension: usize) -> Self {
        Self::with_model_id(dimension, format!("fallback-hash-trigram-{dimension}"))
    }

    pub fn with_model_id(dimension: usize, model_id: impl Into<String>) -> Self {
        assert!(dimension > 0, "hashing dimension must be positive");
        Self {
            dimension,
            model_id: model_id.into(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn features(&self, text: &str) -> Vec<f64> {
        let mut padded: Vec<char> = Vec::with_capacity(text.len() + 2);
        padded.push(' ');
        padded.extend(text.chars().flat_map(char::to_lowercase));
        padded.push(' ');

        let mut values = vec![0.0; self.dimension];
        let mut buf = [0u8; 4 * NGRAM];
        for window in padded.windows(NGRAM) {
            let mut len = 0;
            for c in window {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            let h = fnv1a(&buf[..len]);
            let slot = (h % self.dimension as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            values[slot] += sign;
        }
        values
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

impl Encoder for HashingEncoder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts
            .iter()
            .map(|text| {
                if text.trim().is_empty() {
                    return Err(EmbeddingError::EmptyText);
                }
                EmbeddingVector::normalized(self.features(text), self.model_id.clone())
            })
            .collect()
    }
}
