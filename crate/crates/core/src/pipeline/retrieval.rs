use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::EvidenceBundle;
use crate::clock::Clock;
use crate::config::PipelineConfig;
use crate::corpus::normalize_url;
use crate::embeddings::{cosine_similarity, Encoder};
use crate::gateway::Gateway;
use crate::stage::Stage;
use crate::store::{chunk_text, ChunkGeometry, CorpusChunk, Origin, RetrievedChunk, VectorStore};
use crate::web::{extract_content, select_articles, web_search, ExtractOptions, Fetcher, SearchProvider};

/// Failure of one retrieval arm for one sub-query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmError(pub String);

impl fmt::Display for ArmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub trait DatabaseRetriever: Send + Sync {
    fn retrieve(&self, sub_query: &str, k: usize) -> Result<Vec<RetrievedChunk>, ArmError>;
}

/// Web chunks come back with `doc_id` 0; ids are assigned during assembly.
pub trait WebRetriever: Send + Sync {
    fn retrieve(&self, sub_query: &str, top_n: usize) -> Result<Vec<RetrievedChunk>, ArmError>;
}

/// Dense search over a local store.
pub struct StoreRetriever<'a> {
    pub store: &'a VectorStore,
    pub encoder: Arc<dyn Encoder>,
}

impl DatabaseRetriever for StoreRetriever<'_> {
    fn retrieve(&self, sub_query: &str, k: usize) -> Result<Vec<RetrievedChunk>, ArmError> {
        if self.store.is_empty() {
            return Ok(Vec::new());
        }
        let q = self.encoder.encode(sub_query).map_err(|e| ArmError(e.to_string()))?;
        self.store.search(&q, k).map_err(|e| ArmError(e.to_string()))
    }
}

/// Search, model-guided article selection, extraction, then the best
/// chunks of each document by similarity to the sub-query.
pub struct LiveWebRetriever<'a> {
    pub search: &'a dyn SearchProvider,
    pub fetcher: &'a dyn Fetcher,
    pub gateway: &'a Gateway,
    pub encoder: Arc<dyn Encoder>,
    pub extract: ExtractOptions<'a>,
    pub clock: &'a dyn Clock,
    pub config: &'a PipelineConfig,
}

impl WebRetriever for LiveWebRetriever<'_> {
    fn retrieve(&self, sub_query: &str, top_n: usize) -> Result<Vec<RetrievedChunk>, ArmError> {
        let r = &self.config.retrieval;
        let candidates = web_search(sub_query, &r.search_domain_suffix, self.search).map_err(|e| ArmError(e.to_string()))?;
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let model = self.gateway.small_model(Stage::Retrieve).map_err(|e| ArmError(e.to_string()))?;
        let llm = self.gateway.invocation(
            model,
            Stage::Retrieve,
            self.config.stages.selection_temperature,
            self.config.stages.selection_max_tokens,
        );
        let selection = select_articles(&candidates, sub_query, top_n, &llm);
        let query_vec = self.encoder.encode(sub_query).map_err(|e| ArmError(e.to_string()))?;
        let geometry = ChunkGeometry {
            size: r.chunk_size,
            overlap: r.chunk_overlap,
            slack: r.boundary_slack,
        };
        let mut out = Vec::new();
        for candidate in &selection.chosen {
            let doc = match extract_content(candidate, self.fetcher, self.extract, self.clock) {
                Ok(d) => d,
                Err(e) => {
                    log::warn!("web arm: {e}");
                    continue;
                }
            };
            let pieces: Vec<_> = chunk_text(&doc.body_text, geometry)
                .into_iter()
                .enumerate()
                .filter(|(_, c)| !c.text.trim().is_empty())
                .collect();
            if pieces.is_empty() {
                continue;
            }
            let texts: Vec<&str> = pieces.iter().map(|(_, c)| c.text.as_str()).collect();
            let vectors = match self.encoder.encode_batch(&texts) {
                Ok(v) => v,
                Err(e) => {
                    log::warn!("web arm: cannot embed {}: {e}", doc.url);
                    continue;
                }
            };
            let mut scored: Vec<RetrievedChunk> = pieces
                .iter()
                .zip(vectors)
                .filter_map(|((j, piece), vector)| {
                    let similarity = cosine_similarity(&query_vec, &vector).ok()?;
                    Some(RetrievedChunk {
                        chunk: Arc::new(CorpusChunk {
                            doc_id: 0,
                            chunk_id: *j as u32 + 1,
                            text: piece.text.clone(),
                            vector,
                            source_url: doc.url.clone(),
                            authority_score: r.authority.score_url(&doc.url),
                            published_date: None,
                            title: doc.title.clone(),
                        }),
                        similarity,
                        origin: Origin::Web,
                        sub_query_index: 0,
                    })
                })
                .collect();
            scored.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.chunk.chunk_id.cmp(&b.chunk.chunk_id)));
            scored.truncate(r.web_chunks_per_doc.max(1));
            out.extend(scored);
        }
        Ok(out)
    }
}

/// What happened for one sub-query.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SubQueryReport {
    pub index: usize,
    pub query: String,
    pub db_hits: usize,
    pub web_hits: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalOutcome {
    pub bundle: EvidenceBundle,
    pub reports: Vec<SubQueryReport>,
    pub workers: usize,
}

#[derive(Clone, Copy)]
pub struct RetrievalArms<'a> {
    pub db: Option<&'a dyn DatabaseRetriever>,
    pub web: Option<&'a dyn WebRetriever>,
    pub db_top_k: usize,
    pub web_top_n: usize,
}

type ArmResult = Result<Vec<RetrievedChunk>, ArmError>;

fn run_db(arms: &RetrievalArms<'_>, q: &str) -> Option<ArmResult> {
    arms.db.map(|db| db.retrieve(q, arms.db_top_k))
}

fn run_web(arms: &RetrievalArms<'_>, q: &str) -> Option<ArmResult> {
    arms.web.map(|web| web.retrieve(q, arms.web_top_n))
}

/// Worker count for `n` sub-queries: two arms each, capped.
pub fn pool_size(n: usize, max_workers: usize) -> usize {
    (2 * n).min(max_workers).max(1)
}

/// Retrieves every sub-query concurrently on a bounded pool, each with its
/// database and web arms running side by side. The evidence equals
/// [`retrieve_sequential`] on the same inputs.
pub fn retrieve_parallel(
    sub_queries: &[String],
    arms: RetrievalArms<'_>,
    max_workers: usize,
) -> Result<RetrievalOutcome, ArmError> {
    let workers = pool_size(sub_queries.len(), max_workers);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .thread_name(|i| format!("retrieve-{i}"))
        .build()
        .map_err(|e| ArmError(format!("cannot start retrieval pool: {e}")))?;
    let results: Vec<(Option<ArmResult>, Option<ArmResult>)> = pool.install(|| {
        sub_queries
            .par_iter()
            .map(|q| rayon::join(|| run_db(&arms, q), || run_web(&arms, q)))
            .collect()
    });
    Ok(assemble(sub_queries, results, workers))
}

/// The same steps one at a time, in sub-query order.
pub fn retrieve_sequential(sub_queries: &[String], arms: RetrievalArms<'_>) -> RetrievalOutcome {
    let results = sub_queries
        .iter()
        .map(|q| (run_db(&arms, q), run_web(&arms, q)))
        .collect();
    assemble(sub_queries, results, 1)
}

/// Tags chunks with their sub-query, numbers web documents by first
/// appearance (sub-query order, then arm order) and keeps one copy of each
/// chunk: the most similar, earliest sub-query on ties.
fn assemble(
    sub_queries: &[String],
    results: Vec<(Option<ArmResult>, Option<ArmResult>)>,
    workers: usize,
) -> RetrievalOutcome {
    let mut reports = Vec::with_capacity(results.len());
    let mut web_ids: HashMap<String, u32> = HashMap::new();
    let mut best: BTreeMap<(Origin, u32, u32), RetrievedChunk> = BTreeMap::new();
    let mut keep = |c: RetrievedChunk| {
        match best.get(&c.key()) {
            Some(existing) if existing.similarity >= c.similarity => {}
            _ => {
                best.insert(c.key(), c);
            }
        }
    };
    for (index, (db, web)) in results.into_iter().enumerate() {
        let mut report = SubQueryReport {
            index,
            query: sub_queries[index].clone(),
            ..Default::default()
        };
        match db {
            Some(Ok(chunks)) => {
                report.db_hits = chunks.len();
                for mut c in chunks {
                    c.sub_query_index = index;
                    c.origin = Origin::Db;
                    keep(c);
                }
            }
            Some(Err(e)) => report.errors.push(format!("db: {e}")),
            None => {}
        }
        match web {
            Some(Ok(chunks)) => {
                report.web_hits = chunks.len();
                for c in chunks {
                    let url_key = normalize_url(&c.chunk.source_url).unwrap_or_else(|_| c.chunk.source_url.clone());
                    let next = web_ids.len() as u32 + 1;
                    let doc_id = *web_ids.entry(url_key).or_insert(next);
                    let chunk = Arc::new(CorpusChunk {
                        doc_id,
                        ..(*c.chunk).clone()
                    });
                    keep(RetrievedChunk {
                        chunk,
                        similarity: c.similarity,
                        origin: Origin::Web,
                        sub_query_index: index,
                    });
                }
            }
            Some(Err(e)) => report.errors.push(format!("web: {e}")),
            None => {}
        }
        for e in &report.errors {
            log::warn!("sub-query {index}: {e}");
        }
        reports.push(report);
    }
    let (db_chunks, web_chunks): (Vec<_>, Vec<_>) = best.into_values().partition(|c| c.origin == Origin::Db);
    RetrievalOutcome {
        bundle: EvidenceBundle { db_chunks, web_chunks },
        reports,
        workers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::EmbeddingVector;
    use std::thread::sleep;
    use std::time::{Duration, Instant};

    fn chunk(doc: u32, id: u32, url: &str, text: &str) -> Arc<CorpusChunk> {
        Arc::new(CorpusChunk {
            doc_id: doc,
            chunk_id: id,
            text: text.to_string(),
            vector: EmbeddingVector::normalized(vec![1.0, 0.0], "t").unwrap(),
            source_url: url.to_string(),
            authority_score: 0.5,
            published_date: None,
            title: String::new(),
        })
    }

    /// Per query: (doc, chunk, similarity) hits.
    type DbHits = Vec<(String, Vec<(u32, u32, f64)>)>;

    struct FixedDb(DbHits, Duration);

    impl DatabaseRetriever for FixedDb {
        fn retrieve(&self, q: &str, _k: usize) -> Result<Vec<RetrievedChunk>, ArmError> {
            sleep(self.1);
            let hits = self.0.iter().find(|(k, _)| k == q).map(|(_, v)| v.clone()).unwrap_or_default();
            Ok(hits
                .into_iter()
                .map(|(d, c, s)| RetrievedChunk {
                    chunk: chunk(d, c, "https://db.in", "x"),
                    similarity: s,
                    origin: Origin::Db,
                    sub_query_index: 0,
                })
                .collect())
        }
    }

    struct FixedWeb(Vec<(String, Vec<(&'static str, u32)>)>, Duration);

    impl WebRetriever for FixedWeb {
        fn retrieve(&self, q: &str, _n: usize) -> Result<Vec<RetrievedChunk>, ArmError> {
            sleep(self.1);
            if q == "fail" {
                return Err(ArmError("down".into()));
            }
            let hits = self.0.iter().find(|(k, _)| k == q).map(|(_, v)| v.clone()).unwrap_or_default();
            Ok(hits
                .into_iter()
                .map(|(url, c)| RetrievedChunk {
                    chunk: chunk(0, c, url, "w"),
                    similarity: 0.5,
                    origin: Origin::Web,
                    sub_query_index: 0,
                })
                .collect())
        }
    }

    fn qs(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn duplicate_chunk_keeps_higher_similarity() {
        let db = FixedDb(
            vec![("a".into(), vec![(1, 1, 0.4), (2, 1, 0.3)]), ("b".into(), vec![(1, 1, 0.9)])],
            Duration::ZERO,
        );
        let arms = RetrievalArms { db: Some(&db), web: None, db_top_k: 3, web_top_n: 5 };
        let out = retrieve_sequential(&qs(&["a", "b"]), arms);
        assert_eq!(out.bundle.db_chunks.len(), 2);
        let top = &out.bundle.db_chunks[0];
        assert_eq!((top.similarity, top.sub_query_index), (0.9, 1));
    }

    #[test]
    fn web_documents_numbered_by_first_appearance() {
        let web = FixedWeb(
            vec![
                ("a".into(), vec![("https://x.in/p", 2), ("https://y.in/q", 1)]),
                ("b".into(), vec![("https://y.in/q/", 1), ("https://z.in", 1)]),
            ],
            Duration::ZERO,
        );
        let arms = RetrievalArms { db: None, web: Some(&web), db_top_k: 3, web_top_n: 5 };
        let out = retrieve_sequential(&qs(&["a", "b"]), arms);
        let labels: Vec<String> = out.bundle.web_chunks.iter().map(RetrievedChunk::label).collect();
        assert_eq!(labels, ["WEB_1_2", "WEB_2_1", "WEB_3_1"]);
    }

    #[test]
    fn arm_failure_is_partial() {
        let web = FixedWeb(vec![("ok".into(), vec![("https://x.in", 1)])], Duration::ZERO);
        let arms = RetrievalArms { db: None, web: Some(&web), db_top_k: 3, web_top_n: 5 };
        let out = retrieve_parallel(&qs(&["fail", "ok"]), arms, 8).unwrap();
        assert_eq!(out.bundle.web_chunks.len(), 1);
        assert_eq!(out.reports[0].errors, ["web: down"]);
    }

    #[test]
    fn parallel_beats_sequential_and_matches_it() {
        let d = Duration::from_millis(200);
        let db = FixedDb((0..4).map(|i| (format!("q{i}"), vec![(i + 1, 1, 0.5)])).collect(), d);
        let web = FixedWeb(
            vec![
                ("q0".into(), vec![("https://a.in", 1)]),
                ("q2".into(), vec![("https://b.in", 1), ("https://a.in", 1)]),
            ],
            d,
        );
        let arms = RetrievalArms { db: Some(&db), web: Some(&web), db_top_k: 3, web_top_n: 5 };
        let q = qs(&["q0", "q1", "q2", "q3"]);
        let t = Instant::now();
        let par = retrieve_parallel(&q, arms, 8).unwrap();
        let elapsed = t.elapsed();
        assert!(elapsed < Duration::from_millis(450), "{elapsed:?}");
        assert_eq!(par.workers, 8);
        let seq = retrieve_sequential(&q, arms);
        assert_eq!(par.bundle, seq.bundle);
    }
}
