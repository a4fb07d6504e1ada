use std::collections::BTreeSet;

use proptest::prelude::*;

use fieldrag::citation::{attribute, split_sentences, strip_markers, sweep, threshold_grid, EvidenceItem};
use fieldrag::config::CitationConfig;
use fieldrag::corpus::{normalize_url, QualityScore};
use fieldrag::embeddings::{EmbeddingError, EmbeddingVector, Encoder, HashingEncoder};
use fieldrag::eval::{cohens_kappa, composite_score, mann_whitney_u, students_t, welch_t};
use fieldrag::store::{IngestOptions, Origin, VectorStore};

const WORDS: &[&str] = &[
    "wheat", "rice", "soil", "nitrogen", "irrigation", "Punjab", "mandi", "price", "pest", "cotton", "farmers",
    "monsoon", "seed", "yield", "scheme", "subsidy",
];

fn sentence() -> impl Strategy<Value = String> {
    (prop::collection::vec(prop::sample::select(WORDS), 2..12), prop::sample::select(&[".", "!", "?"][..]))
        .prop_map(|(words, end)| {
            let mut s = words.join(" ");
            s[..1].make_ascii_uppercase();
            s + end
        })
}

fn answer() -> impl Strategy<Value = String> {
    prop::collection::vec(sentence(), 1..8).prop_map(|s| s.join(" "))
}

fn evidence() -> impl Strategy<Value = Vec<EvidenceItem>> {
    prop::collection::vec(sentence(), 1..6).prop_map(|texts| {
        texts
            .into_iter()
            .enumerate()
            .map(|(i, text)| EvidenceItem {
                origin: if i % 2 == 0 { Origin::Db } else { Origin::Web },
                doc_id: i as u32 + 1,
                chunk_id: 1,
                text,
                source_url: format!("https://s{i}.in"),
                title: String::new(),
                published_date: None,
            })
            .collect()
    })
}

fn pairs(
    answer: &str,
    evidence: &[EvidenceItem],
    threshold: f64,
) -> BTreeSet<(usize, String)> {
    let config = CitationConfig {
        threshold,
        max_citations_per_sentence: 0,
        min_sentence_chars: 10,
    };
    attribute(answer, evidence, &HashingEncoder::new(64), &config)
        .unwrap()
        .sentences
        .iter()
        .flat_map(|s| s.matches.iter().map(move |m| (s.start, m.label.clone())))
        .collect()
}

/// Encodes `v<i>` as the i-th vector of a fixed table.
struct TableEncoder(Vec<Vec<f64>>);

impl Encoder for TableEncoder {
    fn model_id(&self) -> &str {
        "table"
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
        texts
            .iter()
            .map(|t| EmbeddingVector::new(self.0[t[1..].parse::<usize>().unwrap()].clone(), "table"))
            .collect()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stripping_markers_restores_any_answer(answer in answer(), evidence in evidence(), t in 0.05f64..0.95) {
        let config = CitationConfig { threshold: t, ..CitationConfig::default() };
        let cited = attribute(&answer, &evidence, &HashingEncoder::new(64), &config).unwrap();
        prop_assert_eq!(strip_markers(&cited.text), answer);
    }

    #[test]
    fn higher_thresholds_never_add_citations(answer in answer(), evidence in evidence(), lo in 0.05f64..0.9, step in 0.0f64..0.09) {
        let strict = pairs(&answer, &evidence, lo + step);
        let loose = pairs(&answer, &evidence, lo);
        prop_assert!(strict.is_subset(&loose));
    }

    #[test]
    fn sweep_counts_fall_with_the_threshold(answer in answer(), evidence in evidence()) {
        let grid = threshold_grid(0.1, 0.9, 9);
        let config = CitationConfig { max_citations_per_sentence: 0, ..CitationConfig::default() };
        let points = sweep(&answer, &evidence, &HashingEncoder::new(64), &grid, &config).unwrap();
        for w in points.windows(2) {
            prop_assert!(w[1].citations <= w[0].citations);
            prop_assert!(w[1].distinct_sources <= w[0].distinct_sources);
        }
    }

    #[test]
    fn sentences_are_ordered_disjoint_spans(text in answer()) {
        let sentences = split_sentences(&text);
        let mut last = 0;
        for s in &sentences {
            prop_assert!(s.start >= last && s.end > s.start);
            prop_assert_eq!(&text[s.start..s.end], s.text.as_str());
            last = s.end;
        }
    }

    #[test]
    fn composite_stays_in_unit_interval(a in 0.0f64..=4.0, c in 0.0f64..=2.0, lambda in 0.0f64..=1.0) {
        let s = composite_score(a, Some(c), lambda).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(composite_score(a, None, lambda).unwrap() == a / 4.0);
    }

    #[test]
    fn out_of_range_scores_are_rejected(a in 4.0001f64..100.0) {
        prop_assert!(composite_score(a, None, 0.7).is_err());
        prop_assert!(composite_score(2.0, Some(a), 0.7).is_err());
    }

    #[test]
    fn test_statistics_are_antisymmetric(
        a in prop::collection::vec(0.0f64..4.0, 2..30),
        b in prop::collection::vec(0.0f64..4.0, 2..30),
    ) {
        let (ab, ba) = (students_t(&a, &b).unwrap(), students_t(&b, &a).unwrap());
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab.p));
        let (wab, wba) = (welch_t(&a, &b).unwrap(), welch_t(&b, &a).unwrap());
        prop_assert!((wab.p - wba.p).abs() < 1e-12);
        let (m, n) = (mann_whitney_u(&a, &b).unwrap(), mann_whitney_u(&b, &a).unwrap());
        prop_assert!((m.u + n.u - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!((m.p - n.p).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&m.p));
    }

    #[test]
    fn kappa_is_bounded_and_perfect_on_self(r in prop::collection::vec(0u8..4, 2..60), s in prop::collection::vec(0u8..4, 60)) {
        let other = &s[..r.len()];
        let k = cohens_kappa(&r, other).unwrap();
        prop_assert!((-1.0..=1.0).contains(&k));
        prop_assert!((cohens_kappa(&r, &r).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quality_total_is_bounded(c in prop::array::uniform5(-2.0f64..3.0)) {
        let q = QualityScore::from_components(c[0], c[1], c[2], c[3], c[4]);
        prop_assert!((0.0..=1.0).contains(&q.total));
    }

    #[test]
    fn url_normalization_is_idempotent(
        host in "[a-z]{1,8}\\.(gov\\.in|org|com)",
        path in "(/[a-z0-9]{1,6}){0,3}/?",
        www in any::<bool>(),
        upper in any::<bool>(),
    ) {
        let mut url = format!("https://{}{host}{path}?utm_source=x&id=3#frag", if www { "www." } else { "" });
        if upper {
            url = url.replacen("https://", "HTTPS://", 1);
        }
        let once = normalize_url(&url).unwrap();
        prop_assert_eq!(normalize_url(&once).unwrap(), once.clone());
        prop_assert!(!once.contains("utm_source") && !once.contains('#'));
    }

    #[test]
    fn store_search_matches_a_linear_scan(
        vectors in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..40),
        query in prop::collection::vec(-1.0f64..1.0, 4),
        k in 1usize..6,
    ) {
        prop_assume!(query.iter().any(|v| v.abs() > 1e-3));
        // duplicate the first vector to force ties
        let mut table = vectors.clone();
        table.push(vectors[0].clone());
        let encoder = TableEncoder(table.clone());
        let mut store = VectorStore::new();
        for i in 0..table.len() {
            store.insert_document("", "https://x.in", &format!("v{i}"), None, &encoder, &IngestOptions::default()).unwrap();
        }
        let q = EmbeddingVector::new(query.clone(), "table").unwrap();
        let got: Vec<u32> = store.search(&q, k).unwrap().iter().map(|r| r.chunk.doc_id).collect();
        let mut scan: Vec<(f64, u32)> = table
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let dot: f64 = v.iter().zip(&query).map(|(a, b)| a * b).sum();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt() * query.iter().map(|x| x * x).sum::<f64>().sqrt();
                (if norm == 0.0 { 0.0 } else { (dot / norm).clamp(-1.0, 1.0) }, i as u32 + 1)
            })
            .collect();
        scan.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let want: Vec<u32> = scan.iter().take(k).map(|x| x.1).collect();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn store_survives_a_save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.store");
    let encoder = HashingEncoder::new(32);
    let mut store = VectorStore::new();
    for (i, text) in ["Wheat needs four irrigations.", "Rice is transplanted in June.", "Cotton suffers from bollworm."]
        .iter()
        .enumerate()
    {
        store
            .insert_document(&format!("t{i}"), &format!("https://d{i}.in"), text, None, &encoder, &IngestOptions::default())
            .unwrap();
    }
    store.save(&path).unwrap();
    let loaded = VectorStore::load(&path).unwrap();
    assert_eq!(loaded.chunks(), store.chunks());
    assert_eq!(loaded.model_id(), store.model_id());
    let q = encoder.encode("irrigation of wheat").unwrap();
    let a: Vec<String> = store.search(&q, 2).unwrap().iter().map(|r| r.label()).collect();
    let b: Vec<String> = loaded.search(&q, 2).unwrap().iter().map(|r| r.label()).collect();
    assert_eq!(a, b);
}

#[test]
fn truncated_store_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.store");
    let encoder = HashingEncoder::new(16);
    let mut store = VectorStore::new();
    store
        .insert_document("t", "https://d.in", "Soil testing every two years.", None, &encoder, &IngestOptions::default())
        .unwrap();
    store.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [0, 4, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(VectorStore::load(&path).is_err(), "cut at {cut} loaded");
    }
}
