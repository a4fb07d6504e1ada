//! Chunked document store with exact dense top-k retrieval.

mod chunking;
mod persist;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::content_digest;
use crate::embeddings::{cosine_similarity, EmbeddingError, EmbeddingVector, Encoder};

pub use chunking::{chunk_text, ChunkGeometry, TextChunk};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding failed after {progress}: {source}")]
    Embedding {
        #[source]
        source: EmbeddingError,
        progress: IngestStats,
    },
    #[error("query dimension {actual} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("corrupt store file: {0}")]
    Corrupt(String),
}

/// Which retrieval arm produced a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    #[serde(rename = "DB")]
    Db,
    #[serde(rename = "WEB")]
    Web,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Db => "DB",
            Origin::Web => "WEB",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusChunk {
    pub doc_id: u32,
    pub chunk_id: u32,
    pub text: String,
    pub vector: EmbeddingVector,
    pub source_url: String,
    pub authority_score: f64,
    pub published_date: Option<NaiveDate>,
    pub title: String,
}

/// A scored evidence unit from either arm.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedChunk {
    pub chunk: Arc<CorpusChunk>,
    pub similarity: f64,
    pub origin: Origin,
    pub sub_query_index: usize,
}

impl RetrievedChunk {
    /// Citation label without brackets, e.g. `DB_3_1`.
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.origin, self.chunk.doc_id, self.chunk.chunk_id)
    }

    /// Identity used for deduplication and canonical ordering.
    pub fn key(&self) -> (Origin, u32, u32) {
        (self.origin, self.chunk.doc_id, self.chunk.chunk_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthorityRule {
    /// Host suffix such as `.gov.in`.
    pub suffix: String,
    pub score: f64,
}

/// Host-suffix credibility heuristic; first matching rule wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuthorityRules {
    pub rules: Vec<AuthorityRule>,
    pub default_score: f64,
}

impl Default for AuthorityRules {
    fn default() -> Self {
        let rule = |suffix: &str, score| AuthorityRule {
            suffix: suffix.to_string(),
            score,
        };
        Self {
            rules: vec![
                rule(".gov.in", 1.0),
                rule(".nic.in", 1.0),
                rule(".gov", 1.0),
                rule(".ac.in", 0.9),
                rule(".edu.in", 0.9),
                rule(".edu", 0.9),
                rule(".org.in", 0.7),
                rule(".org", 0.7),
            ],
            default_score: 0.5,
        }
    }
}

impl AuthorityRules {
    pub fn validate(&self) -> Result<(), String> {
        let bad = |s: f64| !(0.0..=1.0).contains(&s);
        if bad(self.default_score) {
            return Err("default_score must lie in [0, 1]".into());
        }
        if let Some(r) = self.rules.iter().find(|r| bad(r.score)) {
            return Err(format!("score for `{}` must lie in [0, 1]", r.suffix));
        }
        Ok(())
    }

    pub fn score_host(&self, host: &str) -> f64 {
        let host = host.to_ascii_lowercase();
        self.rules
            .iter()
            .find(|r| {
                let bare = r.suffix.trim_start_matches('.');
                host == bare || host.ends_with(&format!(".{bare}"))
            })
            .map_or(self.default_score, |r| r.score)
    }

    pub fn score_url(&self, url: &str) -> f64 {
        url::Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(|h| self.score_host(h)))
            .unwrap_or(self.default_score)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub docs: usize,
    pub chunks: usize,
    pub skipped: usize,
    pub duplicates: usize,
}

impl fmt::Display for IngestStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} docs, {} chunks, {} skipped, {} duplicates",
            self.docs, self.chunks, self.skipped, self.duplicates
        )
    }
}

/// The subset of a corpus JSONL record needed for ingestion.
#[derive(Debug, Deserialize)]
struct IngestRecord {
    url: String,
    #[serde(default)]
    title: String,
    content: String,
    #[serde(default)]
    published_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    pub geometry: ChunkGeometry,
    pub authority: AuthorityRules,
}

#[derive(Debug, Clone, Default)]
pub struct VectorStore {
    model_id: Option<String>,
    dimension: Option<usize>,
    chunks: Vec<Arc<CorpusChunk>>,
    content_hashes: BTreeSet<String>,
    next_doc_id: u32,
}

impl VectorStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    pub fn model_id(&self) -> Option<&str> {
        self.model_id.as_deref()
    }

    pub fn chunks(&self) -> &[Arc<CorpusChunk>] {
        &self.chunks
    }

    pub fn contains_content(&self, content: &str) -> bool {
        self.content_hashes.contains(&content_digest(content))
    }

    /// Chunks, encodes and inserts one document. Returns the number of new
    /// chunks (0 when the content hash is already present).
    pub fn insert_document(
        &mut self,
        title: &str,
        url: &str,
        content: &str,
        published_date: Option<NaiveDate>,
        encoder: &dyn Encoder,
        options: &IngestOptions,
    ) -> Result<usize, EmbeddingError> {
        let hash = content_digest(content);
        if self.content_hashes.contains(&hash) {
            return Ok(0);
        }
        let pieces = chunk_text(content, options.geometry);
        let texts: Vec<&str> = pieces
            .iter()
            .map(|c| c.text.as_str())
            .filter(|t| !t.trim().is_empty())
            .collect();
        if texts.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let vectors = encoder.encode_batch(&texts)?;
        if let Some(first) = vectors.first() {
            let expected = *self.dimension.get_or_insert(first.dimension());
            if let Some(bad) = vectors.iter().find(|v| v.dimension() != expected) {
                return Err(EmbeddingError::DimensionMismatch {
                    expected,
                    actual: bad.dimension(),
                });
            }
        }
        self.model_id.get_or_insert_with(|| encoder.model_id().to_string());

        self.next_doc_id += 1;
        let doc_id = self.next_doc_id;
        let authority = options.authority.score_url(url);
        for (j, (text, vector)) in texts.iter().zip(vectors).enumerate() {
            self.chunks.push(Arc::new(CorpusChunk {
                doc_id,
                chunk_id: j as u32 + 1,
                text: text.to_string(),
                vector,
                source_url: url.to_string(),
                authority_score: authority,
                published_date,
                title: title.to_string(),
            }));
        }
        self.content_hashes.insert(hash);
        Ok(texts.len())
    }

    /// Ingests a corpus JSONL file. Malformed lines are counted, not fatal;
    /// documents already present (by content hash) add nothing.
    pub fn ingest_jsonl(
        &mut self,
        path: &Path,
        encoder: &dyn Encoder,
        options: &IngestOptions,
    ) -> Result<IngestStats, StoreError> {
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut stats = IngestStats::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: IngestRecord = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("{}:{}: skipping malformed record: {e}", path.display(), lineno + 1);
                    stats.skipped += 1;
                    continue;
                }
            };
            if record.content.trim().is_empty() {
                stats.skipped += 1;
                continue;
            }
            if self.contains_content(&record.content) {
                stats.duplicates += 1;
                continue;
            }
            match self.insert_document(
                &record.title,
                &record.url,
                &record.content,
                record.published_date,
                encoder,
                options,
            ) {
                Ok(n) => {
                    stats.docs += 1;
                    stats.chunks += n;
                }
                Err(source) => {
                    return Err(StoreError::Embedding {
                        source,
                        progress: stats,
                    })
                }
            }
        }
        Ok(stats)
    }

    /// Exact top-k by cosine similarity; ties broken by (doc_id, chunk_id).
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievedChunk>, StoreError> {
        if k == 0 {
            return Err(StoreError::InvalidK);
        }
        let Some(dimension) = self.dimension else {
            return Ok(Vec::new());
        };
        if query.dimension() != dimension {
            return Err(StoreError::DimensionMismatch {
                expected: dimension,
                actual: query.dimension(),
            });
        }
        let mut scored: Vec<(f64, &Arc<CorpusChunk>)> = self
            .chunks
            .iter()
            .map(|c| {
                let sim = cosine_similarity(query, &c.vector).expect("dimensions checked above");
                (sim, c)
            })
            .collect();
        let order = |a: &(f64, &Arc<CorpusChunk>), b: &(f64, &Arc<CorpusChunk>)| {
            b.0.total_cmp(&a.0)
                .then(a.1.doc_id.cmp(&b.1.doc_id))
                .then(a.1.chunk_id.cmp(&b.1.chunk_id))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored
            .into_iter()
            .map(|(similarity, chunk)| RetrievedChunk {
                chunk: Arc::clone(chunk),
                similarity,
                origin: Origin::Db,
                sub_query_index: 0,
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        persist::save(self, path)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        persist::load(path)
    }

    /// Opens an existing store file, or an empty store when it does not exist.
    pub fn open_or_default(path: &Path) -> Result<Self, StoreError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }
}
