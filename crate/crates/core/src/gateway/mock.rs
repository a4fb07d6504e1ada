use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GatewayError, GenerationBackend, GenerationRequest};
use crate::citation::split_sentences;

/// Words the mock refinement drops.
pub const FILLER_WORDS: &[&str] = &[
    "please", "kindly", "could", "would", "can", "you", "tell", "me", "i", "just", "actually",
    "basically", "really", "um", "uh", "hey", "hi", "hello",
];

const PERSPECTIVES: &[&str] = &[
    "agronomic practices for",
    "soil, water and nutrient management for",
    "pest and disease risks in",
    "government schemes and market prices for",
    "regional and seasonal conditions affecting",
    "costs and farmer returns of",
    "sustainability and environmental impact of",
];

/// Deterministic stand-in for a generation model, keyed on prompt prefixes:
///
/// * `Refine: <q>` echoes `q` without filler words.
/// * `Decompose into <min>-<max> perspectives: <q>` lists `min` numbered
///   sub-queries built from templates chosen by a generator seeded from
///   (seed, prompt, temperature).
/// * `Select up to <n> of <m> candidates` answers `1,2,...` up to `min(n, m)`.
/// * `Synthesize from: <q>` joins the first sentence of at least five words (else the first
///   sentence) of every evidence line
///   (`[LABEL] text` after an `Evidence:` line).
///
/// Anything else is echoed back as its first line.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

fn fnv1a64(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn first_line(text: &str) -> &str {
    text.lines().next().unwrap_or("").trim()
}

fn refine(query: &str) -> String {
    let kept: Vec<&str> = query
        .split_whitespace()
        .filter(|w| {
            let bare: String = w.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
            !FILLER_WORDS.contains(&bare.as_str())
        })
        .collect();
    if kept.is_empty() {
        query.trim().to_string()
    } else {
        kept.join(" ")
    }
}

impl MockBackend {
    fn decompose(&self, request: &GenerationRequest, rest: &str) -> String {
        // rest = "<min>-<max> perspectives: <query>"
        let (range, query) = rest.split_once(" perspectives: ").unwrap_or(("3-5", rest));
        let n: usize = range.split('-').next().and_then(|v| v.trim().parse().ok()).unwrap_or(3);
        let n = n.clamp(1, PERSPECTIVES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ fnv1a64(&request.prompt) ^ request.temperature.to_bits(),
        );
        let mut picks = sample(&mut rng, PERSPECTIVES.len(), n).into_vec();
        picks.sort_unstable();
        picks
            .iter()
            .enumerate()
            .map(|(i, &p)| format!("{}. {} {}", i + 1, PERSPECTIVES[p], query.trim()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn select(rest: &str) -> String {
    // rest = "<n> of <m> candidates ..."
    let nums: Vec<usize> = rest
        .split_whitespace()
        .take(3)
        .filter_map(|t| t.parse().ok())
        .collect();
    let count = match nums.as_slice() {
        [n, m, ..] => (*n).min(*m),
        _ => 1,
    };
    (1..=count.max(1)).map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

/// Shorter leading sentences (usually headings) are passed over.
const MIN_SENTENCE_WORDS: usize = 5;

fn synthesize(prompt: &str) -> String {
    let mut in_evidence = false;
    let mut out = Vec::new();
    for line in prompt.lines() {
        if line.trim() == "Evidence:" {
            in_evidence = true;
            continue;
        }
        if !in_evidence || !line.starts_with('[') {
            continue;
        }
        let text = line.split_once("] ").map_or("", |(_, t)| t);
        let sentences = split_sentences(text);
        let substantive = sentences.iter().find(|s| s.text.split_whitespace().count() >= MIN_SENTENCE_WORDS);
        if let Some(pick) = substantive.or(sentences.first()) {
            out.push(pick.text.clone());
        }
    }
    if out.is_empty() {
        "The evidence provided does not contain usable text.".to_string()
    } else {
        out.join(" ")
    }
}

impl GenerationBackend for MockBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError> {
        let prompt = request.prompt.as_str();
        let head = first_line(prompt);
        let reply = if let Some(q) = head.strip_prefix("Refine: ") {
            refine(q)
        } else if let Some(rest) = head.strip_prefix("Decompose into ") {
            self.decompose(request, rest)
        } else if let Some(rest) = head.strip_prefix("Select up to ") {
            select(rest)
        } else if head.starts_with("Synthesize from: ") {
            synthesize(prompt)
        } else {
            head.to_string()
        };
        Ok(reply)
    }
}
