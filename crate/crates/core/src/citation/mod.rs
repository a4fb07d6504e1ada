//! Post-hoc citation: every answer sentence is matched against every evidence
//! chunk by embedding cosine, and chunks above the threshold are cited inline.

mod sentences;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::CitationConfig;
use crate::embeddings::{cosine_similarity, EmbeddingError, Encoder};
use crate::store::{Origin, RetrievedChunk};

pub use sentences::{split_sentences, Sentence, ABBREVIATIONS};

#[derive(Debug, Error)]
pub enum CitationError {
    #[error("citation threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
    #[error("citation encoder failed: {0}")]
    Embedding(#[from] EmbeddingError),
}

/// One citable chunk; the citation stage needs text and metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceItem {
    pub origin: Origin,
    pub doc_id: u32,
    pub chunk_id: u32,
    pub text: String,
    #[serde(rename = "url")]
    pub source_url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_date: Option<NaiveDate>,
}

impl EvidenceItem {
    pub fn label(&self) -> String {
        format!("{}_{}_{}", self.origin, self.doc_id, self.chunk_id)
    }

    pub fn key(&self) -> (Origin, u32, u32) {
        (self.origin, self.doc_id, self.chunk_id)
    }
}

impl From<&RetrievedChunk> for EvidenceItem {
    fn from(r: &RetrievedChunk) -> Self {
        Self {
            origin: r.origin,
            doc_id: r.chunk.doc_id,
            chunk_id: r.chunk.chunk_id,
            text: r.chunk.text.clone(),
            source_url: r.chunk.source_url.clone(),
            title: r.chunk.title.clone(),
            published_date: r.chunk.published_date,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationRecord {
    pub label: String,
    pub origin: Origin,
    pub doc_id: u32,
    pub chunk_id: u32,
    #[serde(rename = "url")]
    pub source_url: String,
    /// Highest similarity over the sentences citing this chunk.
    pub similarity: f64,
    pub title: String,
    pub published_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceMatch {
    pub label: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedSentence {
    /// Byte span in the original answer.
    pub start: usize,
    pub end: usize,
    /// Too short to be attributed.
    pub exempt: bool,
    /// Cited chunks in marker order.
    pub matches: Vec<SentenceMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitedAnswer {
    /// Answer with inline `[DB_i_j]` / `[WEB_i_j]` markers.
    pub text: String,
    /// One record per distinct label, in order of first appearance.
    pub citations: Vec<CitationRecord>,
    pub uncited_sentence_count: usize,
    pub sentences: Vec<AttributedSentence>,
}

fn check_threshold(t: f64) -> Result<(), CitationError> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(CitationError::InvalidThreshold(t))
    }
}

/// Cosine of every eligible sentence against every chunk, in input order.
/// Exempt sentences get an empty row.
struct SimilarityMatrix {
    sentences: Vec<Sentence>,
    exempt: Vec<bool>,
    rows: Vec<Vec<f64>>,
}

fn similarity_matrix(
    answer: &str,
    evidence: &[EvidenceItem],
    encoder: &dyn Encoder,
    min_sentence_chars: usize,
) -> Result<SimilarityMatrix, CitationError> {
    let sentences = split_sentences(answer);
    let exempt: Vec<bool> = sentences
        .iter()
        .map(|s| s.text.chars().count() < min_sentence_chars)
        .collect();
    let eligible: Vec<&str> = sentences
        .iter()
        .zip(&exempt)
        .filter(|(_, e)| !**e)
        .map(|(s, _)| s.text.as_str())
        .collect();
    let mut rows = vec![Vec::new(); sentences.len()];
    if eligible.is_empty() || evidence.is_empty() {
        return Ok(SimilarityMatrix { sentences, exempt, rows });
    }
    let chunk_texts: Vec<&str> = evidence.iter().map(|e| e.text.as_str()).collect();
    let chunk_vecs = encoder.encode_batch(&chunk_texts)?;
    let sent_vecs = encoder.encode_batch(&eligible)?;
    let mut next = sent_vecs.iter();
    for (row, _) in rows.iter_mut().zip(&exempt).filter(|(_, e)| !**e) {
        let v = next.next().expect("one vector per eligible sentence");
        *row = chunk_vecs
            .iter()
            .map(|c| cosine_similarity(v, c))
            .collect::<Result<_, _>>()?;
    }
    Ok(SimilarityMatrix { sentences, exempt, rows })
}

/// Indices of the chunks cited by one similarity row: strictly above
/// `threshold`, by similarity descending then evidence key, capped.
fn cited_indices(row: &[f64], evidence: &[EvidenceItem], threshold: f64, cap: usize) -> Vec<usize> {
    let mut hits: Vec<usize> = (0..row.len()).filter(|&i| row[i] > threshold).collect();
    hits.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(evidence[a].key().cmp(&evidence[b].key())));
    let mut seen = std::collections::BTreeSet::new();
    hits.retain(|&h| seen.insert(evidence[h].key()));
    if cap > 0 {
        hits.truncate(cap);
    }
    hits
}

/// Attributes each sentence of `answer` to the evidence it paraphrases.
///
/// Deterministic for a deterministic encoder. Sentences shorter than
/// `min_sentence_chars` are neither cited nor counted as uncited. Stripping
/// the markers with [`strip_markers`] restores `answer` exactly.
pub fn attribute(
    answer: &str,
    evidence: &[EvidenceItem],
    encoder: &dyn Encoder,
    config: &CitationConfig,
) -> Result<CitedAnswer, CitationError> {
    check_threshold(config.threshold)?;
    let m = similarity_matrix(answer, evidence, encoder, config.min_sentence_chars)?;

    let mut text = String::with_capacity(answer.len() + 16 * m.sentences.len());
    let mut from = 0;
    let mut records: Vec<CitationRecord> = Vec::new();
    let mut position: BTreeMap<String, usize> = BTreeMap::new();
    let mut uncited = 0;
    let mut attributed = Vec::with_capacity(m.sentences.len());
    for (idx, sentence) in m.sentences.iter().enumerate() {
        let exempt = m.exempt[idx];
        let hits = if exempt {
            Vec::new()
        } else {
            cited_indices(&m.rows[idx], evidence, config.threshold, config.max_citations_per_sentence)
        };
        if !exempt && hits.is_empty() {
            uncited += 1;
        }
        text.push_str(&answer[from..sentence.end]);
        from = sentence.end;
        let mut matches = Vec::with_capacity(hits.len());
        if !hits.is_empty() {
            text.push(' ');
        }
        for &h in &hits {
            let item = &evidence[h];
            let label = item.label();
            let sim = m.rows[idx][h];
            let _ = write!(text, "[{label}]");
            match position.get(&label) {
                Some(&p) => {
                    if sim > records[p].similarity {
                        records[p].similarity = sim;
                    }
                }
                None => {
                    position.insert(label.clone(), records.len());
                    records.push(CitationRecord {
                        label: label.clone(),
                        origin: item.origin,
                        doc_id: item.doc_id,
                        chunk_id: item.chunk_id,
                        source_url: item.source_url.clone(),
                        similarity: sim,
                        title: item.title.clone(),
                        published_date: item.published_date,
                    });
                }
            }
            matches.push(SentenceMatch { label, similarity: sim });
        }
        attributed.push(AttributedSentence {
            start: sentence.start,
            end: sentence.end,
            exempt,
            matches,
        });
    }
    text.push_str(&answer[from..]);
    Ok(CitedAnswer {
        text,
        citations: records,
        uncited_sentence_count: uncited,
        sentences: attributed,
    })
}

/// Length of the marker group (`[DB_1_2][WEB_3_1]...`) starting at `s`, if any.
fn marker_group_len(s: &str) -> Option<usize> {
    let mut len = 0;
    let mut rest = s;
    while let Some(body) = rest.strip_prefix('[') {
        let close = body.find(']')?;
        if !is_label(&body[..close]) {
            break;
        }
        len += close + 2;
        rest = &body[close + 1..];
    }
    (len > 0).then_some(len)
}

/// `DB_<n>_<n>` or `WEB_<n>_<n>`.
pub fn is_label(s: &str) -> bool {
    let Some(rest) = s.strip_prefix("DB_").or_else(|| s.strip_prefix("WEB_")) else {
        return false;
    };
    let mut parts = rest.split('_');
    let ok = |p: Option<&str>| p.is_some_and(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()));
    ok(parts.next()) && ok(parts.next()) && parts.next().is_none()
}

/// Removes every space-prefixed marker group inserted by [`attribute`].
pub fn strip_markers(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if let Some(after_space) = rest.strip_prefix(' ') {
            if let Some(n) = marker_group_len(after_space) {
                i += 1 + n;
                continue;
            }
        }
        let c = rest.chars().next().expect("in bounds");
        out.push(c);
        i += c.len_utf8();
    }
    out
}

/// Labels in order of first appearance in a marked-up text.
pub fn marker_labels(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        rest = &rest[open + 1..];
        if let Some(close) = rest.find(']') {
            let inner = &rest[..close];
            if is_label(inner) && !out.iter().any(|l| l == inner) {
                out.push(inner.to_string());
            }
        }
    }
    out
}

/// Plain-text source list, one line per label in order of first appearance.
pub fn render_citation_index(cited: &CitedAnswer) -> String {
    let mut out = String::from("Sources:\n");
    if cited.citations.is_empty() {
        out.push_str("  no sources matched\n");
        return out;
    }
    for r in &cited.citations {
        let date = r
            .published_date
            .map_or_else(|| "n.d.".to_string(), |d| d.format("%Y-%m-%d").to_string());
        let title = if r.title.is_empty() { "(untitled)" } else { &r.title };
        let _ = writeln!(
            out,
            "  [{}] {} | {} | similarity {:.3} | {} | {}",
            r.label, title, r.source_url, r.similarity, r.origin, date
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    /// Sentence-to-chunk markers emitted.
    pub citations: usize,
    pub cited_sentences: usize,
    pub distinct_sources: usize,
}

/// Citation counts across thresholds from a single similarity computation.
pub fn sweep(
    answer: &str,
    evidence: &[EvidenceItem],
    encoder: &dyn Encoder,
    thresholds: &[f64],
    config: &CitationConfig,
) -> Result<Vec<SweepPoint>, CitationError> {
    for &t in thresholds {
        check_threshold(t)?;
    }
    let m = similarity_matrix(answer, evidence, encoder, config.min_sentence_chars)?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let mut citations = 0;
            let mut cited_sentences = 0;
            let mut distinct = std::collections::BTreeSet::new();
            for (row, _) in m.rows.iter().zip(&m.exempt).filter(|(_, e)| !**e) {
                let hits = cited_indices(row, evidence, t, config.max_citations_per_sentence);
                citations += hits.len();
                cited_sentences += usize::from(!hits.is_empty());
                distinct.extend(hits.iter().map(|&h| evidence[h].key()));
            }
            SweepPoint {
                threshold: t,
                citations,
                cited_sentences,
                distinct_sources: distinct.len(),
            }
        })
        .collect())
}

/// Evenly spaced thresholds from `lo` to `hi` inclusive.
pub fn threshold_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![lo];
    }
    (0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{EmbeddingVector, HashingEncoder};

    fn item(origin: Origin, doc: u32, chunk: u32, text: &str) -> EvidenceItem {
        EvidenceItem {
            origin,
            doc_id: doc,
            chunk_id: chunk,
            text: text.to_string(),
            source_url: format!("https://s{doc}.gov.in/{chunk}"),
            title: format!("Doc {doc}"),
            published_date: None,
        }
    }

    fn cfg(threshold: f64) -> CitationConfig {
        CitationConfig {
            threshold,
            ..CitationConfig::default()
        }
    }

    /// Encoder with hand-set vectors for exact similarities.
    struct Table(Vec<(&'static str, Vec<f64>)>);

    impl Encoder for Table {
        fn model_id(&self) -> &str {
            "table"
        }

        fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
            texts
                .iter()
                .map(|t| {
                    let v = self.0.iter().find(|(k, _)| k == t).map(|(_, v)| v.clone()).unwrap();
                    EmbeddingVector::normalized(v, "table")
                })
                .collect()
        }
    }

    #[test]
    fn identical_sentence_is_cited() {
        let enc = HashingEncoder::new(256);
        let chunk = "Paddy fields need standing water during tillering.";
        let ev = [item(Origin::Db, 1, 2, chunk), item(Origin::Web, 3, 1, "Unrelated text about tractors and loans.")];
        let answer = format!("{chunk} Short one.");
        let cited = attribute(&answer, &ev, &enc, &cfg(0.75)).unwrap();
        assert_eq!(cited.text, format!("{chunk} [DB_1_2] Short one."));
        assert_eq!(cited.citations.len(), 1);
        assert!((cited.citations[0].similarity - 1.0).abs() < 1e-9);
        assert_eq!(cited.uncited_sentence_count, 0);
        assert_eq!(strip_markers(&cited.text), answer);
    }

    #[test]
    fn threshold_is_strict() {
        let s = "This sentence sits exactly on the boundary.";
        let enc = Table(vec![(s, vec![3.0, 4.0]), ("chunk", vec![1.0, 0.0])]);
        let ev = [item(Origin::Db, 1, 1, "chunk")];
        let sim = cosine_similarity(&enc.encode(s).unwrap(), &enc.encode("chunk").unwrap()).unwrap();
        assert!((sim - 0.6).abs() < 1e-12);
        let at = attribute(s, &ev, &enc, &cfg(sim)).unwrap();
        assert!(at.citations.is_empty());
        assert_eq!(at.uncited_sentence_count, 1);
        let below = attribute(s, &ev, &enc, &cfg(sim - 1e-9)).unwrap();
        assert_eq!(below.citations.len(), 1);
    }

    #[test]
    fn markers_ordered_by_similarity_then_label() {
        let s = "Drip irrigation saves water in sugarcane fields.";
        let a = vec![0.80, (1.0f64 - 0.64).sqrt(), 0.0];
        let b = vec![0.78, 0.0, (1.0f64 - 0.78 * 0.78).sqrt()];
        let enc = Table(vec![(s, vec![1.0, 0.0, 0.0]), ("a", a.clone()), ("b", b), ("a2", a)]);
        let ev = [
            item(Origin::Web, 2, 1, "b"),
            item(Origin::Web, 1, 1, "a2"),
            item(Origin::Db, 9, 9, "a"),
        ];
        let cited = attribute(s, &ev, &enc, &cfg(0.75)).unwrap();
        assert_eq!(cited.text, format!("{s} [DB_9_9][WEB_1_1][WEB_2_1]"));
        let labels: Vec<_> = cited.citations.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(labels, ["DB_9_9", "WEB_1_1", "WEB_2_1"]);

        let capped = attribute(s, &ev, &enc, &CitationConfig { max_citations_per_sentence: 1, ..cfg(0.75) }).unwrap();
        assert_eq!(capped.text, format!("{s} [DB_9_9]"));
    }

    #[test]
    fn index_rendering() {
        let enc = HashingEncoder::new(256);
        let c1 = "Soil testing every three years guides fertilizer doses.";
        let c2 = "Minimum support price for wheat was raised this season.";
        let ev = [item(Origin::Web, 3, 1, c2), item(Origin::Db, 1, 2, c1)];
        let answer = format!("{c2} {c1} {c2}");
        let cited = attribute(&answer, &ev, &enc, &cfg(0.75)).unwrap();
        let index = render_citation_index(&cited);
        let lines: Vec<&str> = index.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("  [WEB_3_1] Doc 3 | https://s3.gov.in/1 | similarity 1.000 | WEB | n.d."));
        assert!(lines[2].starts_with("  [DB_1_2]"));
        assert_eq!(marker_labels(&cited.text), ["WEB_3_1", "DB_1_2"]);

        let none = attribute("Nothing here matches any chunk at all.", &ev, &enc, &cfg(0.75)).unwrap();
        assert_eq!(render_citation_index(&none), "Sources:\n  no sources matched\n");
    }

    #[test]
    fn invalid_threshold_and_encoder_errors() {
        let enc = HashingEncoder::new(64);
        assert!(matches!(attribute("x", &[], &enc, &cfg(1.0)), Err(CitationError::InvalidThreshold(_))));
        let ev = [item(Origin::Db, 1, 1, "   ")];
        let err = attribute("A sentence long enough to be attributed here.", &ev, &enc, &cfg(0.75));
        assert!(matches!(err, Err(CitationError::Embedding(_))));
    }

    #[test]
    fn strip_only_touches_marker_groups() {
        assert_eq!(strip_markers("a. [DB_1_2][WEB_3_4] b. [x] c [DB_1]"), "a. b. [x] c [DB_1]");
        assert!(is_label("WEB_10_2"));
        assert!(!is_label("WEB_1_2_3"));
        assert!(!is_label("DB__1"));
    }

    #[test]
    fn sweep_is_monotone() {
        let enc = HashingEncoder::new(256);
        let ev = [
            item(Origin::Db, 1, 1, "Paddy needs standing water in the early weeks."),
            item(Origin::Db, 1, 2, "Wheat is sown in the rabi season across the plains."),
        ];
        let answer = "Paddy needs standing water in early weeks. Wheat is sown in rabi across the plains.";
        let pts = sweep(answer, &ev, &enc, &threshold_grid(0.05, 0.95, 10), &cfg(0.75)).unwrap();
        assert!(pts.windows(2).all(|w| w[0].citations >= w[1].citations));
        assert!(pts[0].citations >= 2);
    }
}
