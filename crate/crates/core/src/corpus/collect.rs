//! Collection loop shared by keyword-driven and autonomous collectors.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

use serde::{Deserialize, Serialize};
use url::Url;

use super::memory::{adapt_queries, AgentMemory};
use super::quality::{score_quality, QualityHeuristics};
use super::sink::{AppendOutcome, CorpusSink};
use super::{normalize_url, CorpusEntry};
use crate::clock::Clock;
use crate::web::{extract_content, web_search, ExtractOptions, Fetcher, SearchProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectorKind {
    /// Issues its topics verbatim every round.
    Keyword,
    /// Rewrites its topics from what it has learned.
    Autonomous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectorSpec {
    pub name: String,
    pub kind: CollectorKind,
    pub topics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectorAgent {
    pub spec: CollectorSpec,
    pub memory: AgentMemory,
}

impl CollectorAgent {
    pub fn new(spec: CollectorSpec) -> Self {
        Self {
            spec,
            memory: AgentMemory::default(),
        }
    }

    fn queries(&self, preferred_host_cutoff: f64) -> Vec<String> {
        match self.spec.kind {
            CollectorKind::Keyword => self.spec.topics.clone(),
            CollectorKind::Autonomous => adapt_queries(&self.memory, &self.spec.topics, preferred_host_cutoff),
        }
    }
}

/// Providers and tunables shared by every collector of one run.
pub struct CollectionEnv<'a> {
    pub search: &'a dyn SearchProvider,
    pub fetcher: &'a dyn Fetcher,
    pub extract: ExtractOptions<'a>,
    pub heuristics: &'a QualityHeuristics,
    pub success_cutoff: f64,
    pub preferred_host_cutoff: f64,
    pub domain_suffix: &'a str,
    pub clock: &'a dyn Clock,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentReport {
    pub agent: String,
    pub written: usize,
    pub skipped: usize,
    pub failed: usize,
    pub searches: usize,
}

impl AgentReport {
    /// Candidates that consumed budget.
    pub fn attempts(&self) -> usize {
        self.written + self.skipped + self.failed
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionReport {
    pub agents: Vec<AgentReport>,
    pub budget: usize,
}

impl CollectionReport {
    pub fn written(&self) -> usize {
        self.agents.iter().map(|a| a.written).sum()
    }

    pub fn skipped(&self) -> usize {
        self.agents.iter().map(|a| a.skipped).sum()
    }

    pub fn failed(&self) -> usize {
        self.agents.iter().map(|a| a.failed).sum()
    }

    pub fn attempts(&self) -> usize {
        self.agents.iter().map(AgentReport::attempts).sum()
    }
}

/// Takes one unit from the shared budget; false once it is spent.
fn take_budget(budget: &AtomicUsize) -> bool {
    budget
        .fetch_update(Ordering::AcqRel, Ordering::Acquire, |b| b.checked_sub(1))
        .is_ok()
}

/// Runs every agent concurrently against one sink until `budget` candidates
/// have been processed or no agent finds anything new. Each candidate costs
/// one unit whether it ends written, skipped as a duplicate, or failed.
pub fn run_collection(
    agents: &mut [CollectorAgent],
    budget: usize,
    sink: &CorpusSink,
    env: &CollectionEnv<'_>,
) -> CollectionReport {
    let remaining = AtomicUsize::new(budget);
    let agents_reports = thread::scope(|scope| {
        let handles: Vec<_> = agents
            .iter_mut()
            .map(|agent| {
                let remaining = &remaining;
                scope.spawn(move || collect_one(agent, remaining, sink, env))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("collector thread panicked"))
            .collect()
    });
    CollectionReport {
        agents: agents_reports,
        budget,
    }
}

fn collect_one(
    agent: &mut CollectorAgent,
    remaining: &AtomicUsize,
    sink: &CorpusSink,
    env: &CollectionEnv<'_>,
) -> AgentReport {
    let mut report = AgentReport {
        agent: agent.spec.name.clone(),
        ..Default::default()
    };
    let mut seen: HashSet<String> = HashSet::new();
    loop {
        let mut fresh = 0;
        for query in agent.queries(env.preferred_host_cutoff) {
            if remaining.load(Ordering::Acquire) == 0 {
                return report;
            }
            agent.memory.queries_issued += 1;
            report.searches += 1;
            let candidates = match web_search(&query, env.domain_suffix, env.search) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("{}: search `{query}` failed: {e}", agent.spec.name);
                    agent.memory.record_failure(&query);
                    continue;
                }
            };
            for candidate in candidates {
                let Ok(normalized) = normalize_url(&candidate.url) else {
                    continue;
                };
                if !seen.insert(normalized.clone()) {
                    continue;
                }
                fresh += 1;
                if !take_budget(remaining) {
                    return report;
                }
                if let Some(method) = sink.check_url(&candidate.url) {
                    log::debug!("{}: skip {} ({method})", agent.spec.name, candidate.url);
                    report.skipped += 1;
                    continue;
                }
                let doc = match extract_content(&candidate, env.fetcher, env.extract, env.clock) {
                    Ok(d) => d,
                    Err(e) => {
                        log::warn!("{}: {} failed: {e}", agent.spec.name, candidate.url);
                        agent.memory.record_failure(&query);
                        report.failed += 1;
                        continue;
                    }
                };
                let quality = score_quality(&doc.body_text, doc.content_kind, env.heuristics);
                let entry = match CorpusEntry::new(
                    &doc.url,
                    &doc.title,
                    &doc.body_text,
                    doc.content_kind,
                    quality,
                    doc.fetched_at,
                    &agent.spec.name,
                    &query,
                ) {
                    Ok(e) => e,
                    Err(e) => {
                        log::warn!("{}: {e}", agent.spec.name);
                        report.failed += 1;
                        continue;
                    }
                };
                match sink.append(&entry) {
                    Ok(AppendOutcome::Written) => {
                        report.written += 1;
                        let host = Url::parse(&entry.normalized_url)
                            .ok()
                            .and_then(|u| u.host_str().map(str::to_string));
                        agent
                            .memory
                            .record_outcome(&query, host.as_deref(), quality.total, env.success_cutoff);
                    }
                    Ok(AppendOutcome::SkippedDuplicate(method)) => {
                        log::debug!("{}: duplicate {} ({method})", agent.spec.name, entry.url);
                        report.skipped += 1;
                    }
                    Err(e) => {
                        log::error!("{}: cannot persist {}: {e}", agent.spec.name, entry.url);
                        report.failed += 1;
                    }
                }
            }
        }
        if fresh == 0 {
            return report;
        }
    }
}
