//! Agentic corpus builder: deduplicated, crash-safe JSONL collection with
//! quality scoring and per-agent pattern learning.

pub mod collect;
pub mod dedup;
pub mod memory;
pub mod quality;
pub mod sink;

use chrono::{DateTime, Utc};
use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::web::ContentKind;

pub use collect::{run_collection, CollectionReport, CollectorAgent};
pub use dedup::{DedupLedger, DedupMethod, DedupMethods};
pub use memory::{adapt_queries, AgentMemory};
pub use quality::{score_quality, QualityHeuristics, QualityScore};
pub use sink::{load_entries, AppendOutcome, CorpusSink, LoadReport, SinkError};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid URL `{url}`: {reason}")]
pub struct UrlError {
    pub url: String,
    pub reason: String,
}

/// Query parameters dropped during normalization (plus any `utm_*`).
pub const TRACKING_PARAMS: &[&str] = &["fbclid", "gclid"];

fn is_tracking(key: &str) -> bool {
    key.starts_with("utm_") || TRACKING_PARAMS.contains(&key)
}

/// Canonical URL form used for duplicate detection.
///
/// Scheme and host are lowercased, default ports, fragments and tracking
/// parameters dropped, a trailing path slash removed and the remaining query
/// parameters sorted by key (stable for repeated keys).
pub fn normalize_url(raw: &str) -> Result<String, UrlError> {
    let mut url = Url::parse(raw.trim()).map_err(|e| UrlError {
        url: raw.to_string(),
        reason: e.to_string(),
    })?;
    if url.cannot_be_a_base() || url.host_str().is_none() {
        return Err(UrlError {
            url: raw.to_string(),
            reason: "not an absolute hierarchical URL".into(),
        });
    }
    url.set_fragment(None);

    let mut pairs: Vec<(String, String)> = url
        .query_pairs()
        .filter(|(k, _)| !is_tracking(k))
        .map(|(k, v)| (k.into_owned(), v.into_owned()))
        .collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    if pairs.is_empty() {
        url.set_query(None);
    } else {
        url.query_pairs_mut().clear().extend_pairs(&pairs);
    }

    let path = url.path().to_string();
    if path.len() > 1 && path.ends_with('/') {
        url.set_path(path.trim_end_matches('/'));
    }
    let mut out = url.to_string();
    // The URL type always renders an empty path as "/"; keep the bare origin.
    if url.path() == "/" && url.query().is_none() && out.ends_with('/') {
        out.pop();
    }
    Ok(out)
}

/// Lowercase, whitespace runs collapsed, trimmed.
pub fn canonicalize_content(content: &str) -> String {
    crate::text::normalize(content)
}

fn md5_hex(bytes: &[u8]) -> String {
    let digest = Md5::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// 128-bit hex digest of the canonicalized content.
pub fn content_digest(content: &str) -> String {
    md5_hex(canonicalize_content(content).as_bytes())
}

/// Digest of the URL as found, with scheme, a leading `www.`, the fragment
/// and a trailing slash removed, so http/https and www/bare mirrors of one
/// page collide. Query strings are kept verbatim; reordered or tracking
/// parameters are the normalized-URL check's job.
pub fn url_digest(raw_url: &str) -> String {
    let raw = raw_url.trim();
    let without_scheme = raw.split_once("://").map_or(raw, |(_, rest)| rest);
    let without_fragment = without_scheme.split('#').next().unwrap_or("");
    let (host_path, query) = match without_fragment.split_once('?') {
        Some((hp, q)) => (hp, Some(q)),
        None => (without_fragment, None),
    };
    let (host, path) = host_path.split_once('/').map_or((host_path, ""), |(h, p)| (h, p));
    let host = host.to_ascii_lowercase();
    let mut key = host.strip_prefix("www.").unwrap_or(&host).to_string();
    let path = path.trim_end_matches('/');
    if !path.is_empty() {
        key.push('/');
        key.push_str(path);
    }
    if let Some(q) = query.filter(|q| !q.is_empty()) {
        key.push('?');
        key.push_str(q);
    }
    md5_hex(key.as_bytes())
}

/// Lowercased alphanumeric words joined by single spaces.
pub fn normalize_title(title: &str) -> String {
    title
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// One curated record; field names and order are the JSONL schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub url: String,
    pub normalized_url: String,
    pub title: String,
    pub content: String,
    pub content_hash: String,
    pub quality: QualityScore,
    pub content_kind: ContentKind,
    pub collected_at: DateTime<Utc>,
    pub agent_name: String,
    pub source_query: String,
}

impl CorpusEntry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        url: &str,
        title: &str,
        content: &str,
        content_kind: ContentKind,
        quality: QualityScore,
        collected_at: DateTime<Utc>,
        agent_name: &str,
        source_query: &str,
    ) -> Result<Self, UrlError> {
        Ok(Self {
            url: url.to_string(),
            normalized_url: normalize_url(url)?,
            title: title.to_string(),
            content: content.to_string(),
            content_hash: content_digest(content),
            quality,
            content_kind,
            collected_at,
            agent_name: agent_name.to_string(),
            source_query: source_query.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(
            normalize_url("HTTPS://Agri.GOV.in:443/msp/?utm_source=x").unwrap(),
            "https://agri.gov.in/msp"
        );
        assert_eq!(normalize_url("http://a.in/p?b=2&a=1").unwrap(), "http://a.in/p?a=1&b=2");
        assert_eq!(
            normalize_url("http://a.in:8080/x#frag?").unwrap(),
            "http://a.in:8080/x"
        );
        assert_eq!(
            normalize_url("https://a.in/p?gclid=1&fbclid=2&utm_medium=m&id=7").unwrap(),
            "https://a.in/p?id=7"
        );
        assert_eq!(normalize_url("https://A.in/").unwrap(), "https://a.in");
        assert!(normalize_url("not a url").is_err());
        assert!(normalize_url("mailto:x@y.in").is_err());
    }

    #[test]
    fn normalization_is_idempotent_on_fixtures() {
        for u in [
            "HTTPS://Agri.GOV.in:443/msp/?utm_source=x",
            "http://a.in/p?b=2&a=1&b=1",
            "https://www.example.org/a/b/?q=rice%20yield#top",
            "https://a.in",
            "http://x.y.z:80/",
            "https://a.in/?z=1",
        ] {
            let once = normalize_url(u).unwrap();
            assert_eq!(normalize_url(&once).unwrap(), once, "{u}");
        }
    }

    #[test]
    fn digests() {
        assert_eq!(content_digest(""), "d41d8cd98f00b204e9800998ecf8427e");
        assert_eq!(content_digest("  Rice\n\tYield "), content_digest("rice yield"));
        assert_eq!(url_digest("https://www.a.in/x"), url_digest("http://a.in/x"));
        assert_ne!(url_digest("https://a.in/x"), url_digest("https://a.in/y"));
        assert_eq!(url_digest("https://WWW.a.in/x/#top"), url_digest("http://a.in/x"));
        assert_ne!(url_digest("https://a.in/x?utm_source=f"), url_digest("https://a.in/x"));
        assert_eq!(normalize_title("  MSP: Wheat — 2024! "), "msp wheat 2024");
    }
}
