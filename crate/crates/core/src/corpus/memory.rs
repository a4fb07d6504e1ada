use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

const STOPWORDS: &[&str] = &[
    "and", "the", "for", "with", "from", "into", "how", "what", "which", "are", "was", "per",
    "this", "that", "about", "india",
];

/// Keyword boosts appended to the top-ranked query.
const MAX_BOOSTED_TERMS: usize = 3;

/// Lowercased query words worth learning from; `site:` restrictions are ignored.
pub fn query_keywords(query: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for token in query.split_whitespace().filter(|t| !t.starts_with("site:")) {
        for word in token.split(|c: char| !c.is_alphanumeric()) {
            let w = word.to_lowercase();
            if w.chars().count() >= 3 && !STOPWORDS.contains(&w.as_str()) && !out.contains(&w) {
                out.push(w);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HostStats {
    pub quality_sum: f64,
    pub count: u64,
}

impl HostStats {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.quality_sum / self.count as f64
        }
    }
}

/// What one collector has learned. Never shared between agents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentMemory {
    pub success_patterns: BTreeMap<String, u64>,
    pub failure_patterns: BTreeMap<String, u64>,
    pub domain_preferences: BTreeMap<String, HostStats>,
    pub queries_issued: u64,
}

impl AgentMemory {
    pub fn is_empty(&self) -> bool {
        self.success_patterns.is_empty() && self.failure_patterns.is_empty() && self.domain_preferences.is_empty()
    }

    /// Records the outcome of one written document. `quality` is clamped to [0, 1].
    pub fn record_outcome(&mut self, query: &str, host: Option<&str>, quality: f64, success_cutoff: f64) {
        let quality = if quality.is_nan() { 0.0 } else { quality.clamp(0.0, 1.0) };
        let patterns = if quality >= success_cutoff {
            &mut self.success_patterns
        } else {
            &mut self.failure_patterns
        };
        for k in query_keywords(query) {
            *patterns.entry(k).or_insert(0) += 1;
        }
        if let Some(host) = host {
            let stats = self.domain_preferences.entry(host.to_lowercase()).or_default();
            stats.quality_sum += quality;
            stats.count += 1;
        }
    }

    /// A fetch or extraction that produced nothing counts against the query.
    pub fn record_failure(&mut self, query: &str) {
        for k in query_keywords(query) {
            *self.failure_patterns.entry(k).or_insert(0) += 1;
        }
    }

    pub fn net_score(&self, keyword: &str) -> i64 {
        let s = self.success_patterns.get(keyword).copied().unwrap_or(0) as i64;
        let f = self.failure_patterns.get(keyword).copied().unwrap_or(0) as i64;
        s - f
    }

    pub fn preference(&self, host: &str) -> Option<f64> {
        self.domain_preferences.get(host).map(HostStats::mean)
    }
}

/// Next query batch from the base topics and what the agent has learned.
///
/// Topics are ordered by the summed net score of their keywords (stable for
/// ties), words with a negative net score are dropped unless that would empty
/// the query, the strongest positive keywords missing from the first query are
/// appended to it, and every host whose mean quality reaches
/// `preferred_host_cutoff` adds a site-restricted variant of the first query.
pub fn adapt_queries(memory: &AgentMemory, base_topics: &[String], preferred_host_cutoff: f64) -> Vec<String> {
    if memory.is_empty() || base_topics.is_empty() {
        return base_topics.to_vec();
    }
    let topic_score = |t: &str| -> i64 { query_keywords(t).iter().map(|k| memory.net_score(k)).sum() };
    let mut ranked: Vec<(i64, usize, &String)> =
        base_topics.iter().enumerate().map(|(i, t)| (topic_score(t), i, t)).collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let suppress = |topic: &str| -> String {
        let kept: Vec<&str> = topic
            .split_whitespace()
            .filter(|w| {
                let lw = w.to_lowercase();
                memory.net_score(&lw) >= 0
            })
            .collect();
        if kept.is_empty() {
            topic.to_string()
        } else {
            kept.join(" ")
        }
    };
    let mut queries: Vec<String> = ranked.iter().map(|(_, _, t)| suppress(t)).collect();

    let mut boosted: Vec<(&String, i64)> = memory
        .success_patterns
        .keys()
        .map(|k| (k, memory.net_score(k)))
        .filter(|(_, n)| *n > 0)
        .collect();
    boosted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let present = query_keywords(&queries[0]);
    let extra: Vec<&str> = boosted
        .iter()
        .map(|(k, _)| k.as_str())
        .filter(|k| !present.iter().any(|p| p == k))
        .take(MAX_BOOSTED_TERMS)
        .collect();
    if !extra.is_empty() {
        queries[0] = format!("{} {}", queries[0], extra.join(" "));
    }

    let mut hosts: Vec<(&String, f64)> = memory
        .domain_preferences
        .iter()
        .map(|(h, s)| (h, s.mean()))
        .filter(|(_, m)| *m >= preferred_host_cutoff)
        .collect();
    hosts.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let lead = suppress(ranked[0].2);
    for (host, _) in hosts {
        queries.push(format!("{lead} site:{host}"));
    }
    queries
}
