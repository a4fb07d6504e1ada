//! Domain agents: named keyword vocabularies that route and expand sub-queries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{contains_phrase, normalize};

/// Four-agent catalogue used when no catalogue file is configured.
pub const BUILTIN_CATALOGUE: &str = include_str!("catalogue.toml");

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("cannot read agent catalogue {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid agent catalogue: {0}")]
    Parse(String),
    #[error("invalid agent catalogue: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainAgent {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Normalized phrases in catalogue order, without duplicates.
    #[serde(rename = "keywords")]
    pub domain_keywords: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogueFile {
    agent: Vec<DomainAgent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRegistry {
    agents: Vec<DomainAgent>,
    default_agent: usize,
}

impl AgentRegistry {
    /// Validates and normalizes `agents`. `default_agent` must name one of them.
    pub fn new(agents: Vec<DomainAgent>, default_agent: &str) -> Result<Self, AgentError> {
        if agents.is_empty() {
            return Err(AgentError::Invalid("at least one agent is required".into()));
        }
        let mut names = BTreeSet::new();
        let mut cleaned = Vec::with_capacity(agents.len());
        for mut agent in agents {
            if agent.name.trim().is_empty() {
                return Err(AgentError::Invalid("agent with empty name".into()));
            }
            if !names.insert(agent.name.clone()) {
                return Err(AgentError::Invalid(format!("duplicate agent name `{}`", agent.name)));
            }
            let mut seen = BTreeSet::new();
            agent.domain_keywords = agent
                .domain_keywords
                .iter()
                .map(|k| normalize(k))
                .filter(|k| !k.is_empty() && seen.insert(k.clone()))
                .collect();
            if agent.domain_keywords.is_empty() {
                return Err(AgentError::Invalid(format!("agent `{}` has no keywords", agent.name)));
            }
            cleaned.push(agent);
        }
        let default_agent = cleaned
            .iter()
            .position(|a| a.name == default_agent)
            .ok_or_else(|| AgentError::Invalid(format!("default agent `{default_agent}` is not in the catalogue")))?;
        Ok(Self {
            agents: cleaned,
            default_agent,
        })
    }

    pub fn from_toml_str(text: &str, default_agent: &str) -> Result<Self, AgentError> {
        let file: CatalogueFile = toml::from_str(text).map_err(|e| AgentError::Parse(e.to_string()))?;
        Self::new(file.agent, default_agent)
    }

    pub fn load(path: &Path, default_agent: &str) -> Result<Self, AgentError> {
        let text = fs::read_to_string(path).map_err(|source| AgentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, default_agent)
    }

    pub fn builtin(default_agent: &str) -> Result<Self, AgentError> {
        Self::from_toml_str(BUILTIN_CATALOGUE, default_agent)
    }

    pub fn agents(&self) -> &[DomainAgent] {
        &self.agents
    }

    pub fn default_agent(&self) -> &DomainAgent {
        &self.agents[self.default_agent]
    }

    pub fn get(&self, name: &str) -> Option<&DomainAgent> {
        self.agents.iter().find(|a| a.name == name)
    }
}

/// Fraction of the agent's keywords found in `sub_query` as whole phrases.
pub fn keyword_score(agent: &DomainAgent, sub_query: &str) -> f64 {
    if agent.domain_keywords.is_empty() {
        return 0.0;
    }
    let q = normalize(sub_query);
    let matched = agent
        .domain_keywords
        .iter()
        .filter(|k| contains_phrase(&q, &normalize(k)))
        .count();
    matched as f64 / agent.domain_keywords.len() as f64
}

/// Highest-scoring agent, ties to the smaller name; the registry default
/// when nothing matches. The score is returned alongside.
pub fn select_agent<'a>(registry: &'a AgentRegistry, sub_query: &str) -> (&'a DomainAgent, f64) {
    let mut best: Option<(&DomainAgent, f64)> = None;
    for agent in registry.agents() {
        let s = keyword_score(agent, sub_query);
        best = match best {
            Some((b, bs)) if bs > s || (bs == s && b.name <= agent.name) => Some((b, bs)),
            _ => Some((agent, s)),
        };
    }
    match best {
        Some((agent, s)) if s > 0.0 => (agent, s),
        _ => (registry.default_agent(), 0.0),
    }
}

/// Appends agent keywords missing from `sub_query`, in catalogue order.
///
/// At most `max_added` keywords of the agent may be present after expansion
/// from this call's perspective: keywords already in the query use up the
/// allowance, so enhancing an enhanced query adds nothing.
pub fn enhance_subquery(sub_query: &str, agent: &DomainAgent, max_added: usize) -> String {
    let q = normalize(sub_query);
    let (present, missing): (Vec<&String>, Vec<&String>) =
        agent.domain_keywords.iter().partition(|k| contains_phrase(&q, &normalize(k)));
    let room = max_added.saturating_sub(present.len());
    let mut out = sub_query.to_string();
    for k in missing.into_iter().take(room) {
        out.push(' ');
        out.push_str(k);
    }
    out
}

/// Agent routing recorded for one sub-query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMatch {
    pub sub_query_index: usize,
    pub agent: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LintReport {
    pub runs_scanned: usize,
    /// Sub-queries with a positive score, per agent (every agent listed).
    pub matches: BTreeMap<String, usize>,
    pub malformed_lines: usize,
}

impl LintReport {
    /// Agents that never matched a sub-query in the scanned log.
    pub fn unmatched(&self) -> Vec<&str> {
        self.matches
            .iter()
            .filter(|(_, n)| **n == 0)
            .map(|(a, _)| a.as_str())
            .collect()
    }
}

#[derive(Deserialize)]
struct LogLine {
    kind: String,
    #[serde(default)]
    stage: Option<String>,
    #[serde(default)]
    agents: Vec<AgentMatch>,
}

/// Scans a run log for enhancement records and counts positive agent matches.
pub fn lint_agents(registry: &AgentRegistry, log: impl BufRead) -> std::io::Result<LintReport> {
    let mut report = LintReport {
        matches: registry.agents().iter().map(|a| (a.name.clone(), 0)).collect(),
        ..Default::default()
    };
    for line in log.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(record) = serde_json::from_str::<LogLine>(&line) else {
            report.malformed_lines += 1;
            continue;
        };
        if record.kind != "stage" || record.stage.as_deref() != Some("enhance") {
            continue;
        }
        report.runs_scanned += 1;
        for m in record.agents.iter().filter(|m| m.score > 0.0) {
            if let Some(n) = report.matches.get_mut(&m.agent) {
                *n += 1;
            }
        }
    }
    Ok(report)
}
