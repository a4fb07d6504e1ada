//! Web arm of retrieval: domain-constrained search, model-based candidate
//! selection and HTML / PDF / OCR content extraction.

mod extract;
mod fixture;
mod http;
mod robots;
mod select;

use std::collections::HashSet;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::normalize_url;

pub use extract::{extract_content, extract_html, extract_pdf_text, CommandOcr, ExtractOptions, OcrEngine};
pub use fixture::{FixtureCandidate, FixtureFetcher, FixtureSearchProvider, FixtureWeb};
pub use http::{HttpFetcher, HttpSearchProvider};
pub use robots::RobotsRules;
pub use select::{parse_index_list, select_articles, Selection};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WebError {
    #[error("web transport error: {0}")]
    Transport(String),
    #[error("rate limited{}", .retry_after.map(|d| format!(" (retry after {} s)", d.as_secs())).unwrap_or_default())]
    RateLimited { retry_after: Option<Duration> },
    #[error("HTTP {status} from {url}")]
    Status { url: String, status: u16 },
    #[error("invalid URL: {0}")]
    InvalidUrl(String),
    #[error("disallowed by robots.txt: {0}")]
    RobotsDisallowed(String),
    #[error("malformed provider response: {0}")]
    Provider(String),
    #[error("no extraction stage succeeded for {url}: {}", .reasons.join("; "))]
    AllFallbacksFailed { url: String, reasons: Vec<String> },
}

impl WebError {
    pub fn is_transport(&self) -> bool {
        matches!(self, WebError::Transport(_) | WebError::RateLimited { .. })
    }
}

/// Which extraction stage produced the body text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentKind {
    Html,
    PdfText,
    PdfOcr,
}

/// One result as returned by a search provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResult {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchCandidate {
    pub url: String,
    pub title: String,
    pub snippet: String,
    /// 1-based position in the provider's result list.
    pub source_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedDocument {
    pub url: String,
    pub title: String,
    pub body_text: String,
    pub content_kind: ContentKind,
    pub fetched_at: DateTime<Utc>,
}

pub trait SearchProvider: Send + Sync {
    fn search(&self, query: &str) -> Result<Vec<RawResult>, WebError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedResource {
    pub url: String,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl FetchedResource {
    pub fn is_pdf(&self) -> bool {
        self.content_type
            .as_deref()
            .is_some_and(|c| c.to_ascii_lowercase().contains("pdf"))
            || self.body.starts_with(b"%PDF")
    }
}

pub trait Fetcher: Send + Sync {
    fn fetch(&self, url: &str) -> Result<FetchedResource, WebError>;
}

/// The exact string sent to the search provider.
pub fn compose_query(sub_query: &str, domain_suffix: &str) -> String {
    format!("{sub_query} {domain_suffix}")
}

/// Searches for `sub_query` restricted by `domain_suffix`. Invalid URLs are
/// dropped; duplicates (by normalized URL) keep their first occurrence; each
/// candidate keeps its original 1-based provider position.
pub fn web_search(
    sub_query: &str,
    domain_suffix: &str,
    provider: &dyn SearchProvider,
) -> Result<Vec<SearchCandidate>, WebError> {
    if sub_query.trim().is_empty() {
        return Err(WebError::Provider("empty sub-query".into()));
    }
    let results = provider.search(&compose_query(sub_query, domain_suffix))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let Ok(norm) = normalize_url(&r.url) else {
            log::debug!("dropping search result with invalid URL `{}`", r.url);
            continue;
        };
        if seen.insert(norm) {
            out.push(SearchCandidate {
                url: r.url,
                title: r.title,
                snippet: r.snippet,
                source_rank: i + 1,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(url: &str) -> RawResult {
        RawResult {
            url: url.to_string(),
            title: format!("t {url}"),
            snippet: String::new(),
        }
    }

    #[test]
    fn composed_query_matches_default_suffix() {
        assert_eq!(compose_query("MSP wheat", "agriculture site:.gov.in"), "MSP wheat agriculture site:.gov.in");
    }

    #[test]
    fn fixtures_pass_through_in_order() {
        let results: Vec<RawResult> = (1..=10).map(|i| raw(&format!("https://a{i}.gov.in/p"))).collect();
        let provider = FixtureSearchProvider::wildcard(results.clone());
        let got = web_search("wheat", "agriculture site:.gov.in", &provider).unwrap();
        assert_eq!(got.len(), 10);
        for (i, c) in got.iter().enumerate() {
            assert_eq!(c.url, results[i].url);
            assert_eq!(c.source_rank, i + 1);
        }
    }

    #[test]
    fn duplicate_urls_keep_first_occurrence() {
        let provider = FixtureSearchProvider::wildcard(vec![
            raw("https://a.gov.in/p"),
            raw("https://b.gov.in/q"),
            raw("https://A.gov.in/p/?utm_source=x"),
            raw("not a url"),
        ]);
        let got = web_search("wheat", "", &provider).unwrap();
        let ranks: Vec<usize> = got.iter().map(|c| c.source_rank).collect();
        assert_eq!(ranks, vec![1, 2]);
    }

    #[test]
    fn zero_results_is_not_an_error() {
        let provider = FixtureSearchProvider::default();
        assert!(web_search("wheat", "x", &provider).unwrap().is_empty());
    }
}
