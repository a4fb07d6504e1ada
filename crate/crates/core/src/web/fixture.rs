//! Fixture-backed search and fetch, used by tests and `--mock` runs.
//!
//! File format: a JSON object mapping a composed query string to a list of
//! candidates. The key `"*"` answers any query without its own entry.
//!
//! ```json
//! {
//!   "MSP wheat agriculture site:.gov.in": [
//!     {"url": "https://agri.gov.in/msp", "title": "MSP", "snippet": "...",
//!      "content": "<html>...</html>", "content_type": "text/html"}
//!   ]
//! }
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FetchedResource, Fetcher, RawResult, SearchProvider, WebError};
use crate::corpus::normalize_url;

pub const WILDCARD: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureCandidate {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
    /// Body served by the fixture fetcher for this URL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixtureWeb {
    pub queries: BTreeMap<String, Vec<FixtureCandidate>>,
}

impl FixtureWeb {
    pub fn load(path: &Path) -> Result<Self, WebError> {
        let text = fs::read_to_string(path)
            .map_err(|e| WebError::Provider(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| WebError::Provider(format!("{}: {e}", path.display())))
    }

    pub fn search_provider(&self) -> FixtureSearchProvider {
        FixtureSearchProvider {
            queries: self
                .queries
                .iter()
                .map(|(q, cs)| {
                    let results = cs
                        .iter()
                        .map(|c| RawResult {
                            url: c.url.clone(),
                            title: c.title.clone(),
                            snippet: c.snippet.clone(),
                        })
                        .collect();
                    (q.clone(), results)
                })
                .collect(),
        }
    }

    pub fn fetcher(&self) -> FixtureFetcher {
        let mut fetcher = FixtureFetcher::default();
        for c in self.queries.values().flatten() {
            if let Some(content) = &c.content {
                let ct = c.content_type.clone().unwrap_or_else(|| "text/html".to_string());
                fetcher.insert(&c.url, &ct, content.as_bytes().to_vec());
            }
        }
        fetcher
    }
}

#[derive(Debug, Clone, Default)]
pub struct FixtureSearchProvider {
    queries: BTreeMap<String, Vec<RawResult>>,
}

impl FixtureSearchProvider {
    pub fn new(queries: BTreeMap<String, Vec<RawResult>>) -> Self {
        Self { queries }
    }

    /// Answers every query with the same list.
    pub fn wildcard(results: Vec<RawResult>) -> Self {
        Self::new(BTreeMap::from([(WILDCARD.to_string(), results)]))
    }
}

impl SearchProvider for FixtureSearchProvider {
    fn search(&self, query: &str) -> Result<Vec<RawResult>, WebError> {
        Ok(self
            .queries
            .get(query)
            .or_else(|| self.queries.get(WILDCARD))
            .cloned()
            .unwrap_or_default())
    }
}

/// Serves fixture bodies keyed by normalized URL; unknown URLs are 404s.
#[derive(Debug, Clone, Default)]
pub struct FixtureFetcher {
    pages: HashMap<String, (String, Vec<u8>)>,
}

impl FixtureFetcher {
    pub fn insert(&mut self, url: &str, content_type: &str, body: Vec<u8>) {
        let key = normalize_url(url).unwrap_or_else(|_| url.to_string());
        self.pages.insert(key, (content_type.to_string(), body));
    }
}

impl Fetcher for FixtureFetcher {
    fn fetch(&self, url: &str) -> Result<FetchedResource, WebError> {
        let key = normalize_url(url).map_err(|e| WebError::InvalidUrl(e.to_string()))?;
        match self.pages.get(&key) {
            Some((ct, body)) => Ok(FetchedResource {
                url: url.to_string(),
                content_type: Some(ct.clone()),
                body: body.clone(),
            }),
            None => Err(WebError::Status {
                url: url.to_string(),
                status: 404,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_query_wins_over_wildcard() {
        let web: FixtureWeb = serde_json::from_str(
            r#"{"*": [{"url": "https://w.in/1"}],
                "rice x": [{"url": "https://r.in/1", "content": "<p>Rice</p>"}]}"#,
        )
        .unwrap();
        let p = web.search_provider();
        assert_eq!(p.search("rice x").unwrap()[0].url, "https://r.in/1");
        assert_eq!(p.search("other").unwrap()[0].url, "https://w.in/1");
        let f = web.fetcher();
        assert_eq!(f.fetch("https://r.in/1/").unwrap().body, b"<p>Rice</p>");
        assert!(matches!(f.fetch("https://w.in/1"), Err(WebError::Status { status: 404, .. })));
    }
}
