use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize_title, url_digest, CorpusEntry};

/// Detection methods, in the order they are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupMethod {
    NormalizedUrl,
    UrlHash,
    ContentHash,
    Title,
}

impl fmt::Display for DedupMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DedupMethod::NormalizedUrl => "normalized_url",
            DedupMethod::UrlHash => "url_hash",
            DedupMethod::ContentHash => "content_hash",
            DedupMethod::Title => "title",
        })
    }
}

/// Per-method switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupMethods {
    pub normalized_url: bool,
    pub url_hash: bool,
    pub content_hash: bool,
    pub title: bool,
}

impl Default for DedupMethods {
    fn default() -> Self {
        Self {
            normalized_url: true,
            url_hash: true,
            content_hash: true,
            title: true,
        }
    }
}

impl DedupMethods {
    pub fn without(mut self, method: DedupMethod) -> Self {
        match method {
            DedupMethod::NormalizedUrl => self.normalized_url = false,
            DedupMethod::UrlHash => self.url_hash = false,
            DedupMethod::ContentHash => self.content_hash = false,
            DedupMethod::Title => self.title = false,
        }
        self
    }
}

/// Persistent record of everything already written.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DedupLedger {
    pub urls: BTreeSet<String>,
    pub url_hashes: BTreeSet<String>,
    pub content_hashes: BTreeSet<String>,
    pub titles: BTreeSet<String>,
}

impl DedupLedger {
    pub fn is_empty(&self) -> bool {
        self.urls.is_empty() && self.content_hashes.is_empty()
    }

    /// First matching method, if any.
    pub fn is_duplicate(&self, entry: &CorpusEntry, methods: &DedupMethods) -> Option<DedupMethod> {
        if let Some(m) = self.check_url(&entry.url, &entry.normalized_url, methods) {
            return Some(m);
        }
        if methods.content_hash && self.content_hashes.contains(&entry.content_hash) {
            return Some(DedupMethod::ContentHash);
        }
        let title = normalize_title(&entry.title);
        if methods.title && !title.is_empty() && self.titles.contains(&title) {
            return Some(DedupMethod::Title);
        }
        None
    }

    /// The URL-only methods, usable before a document is fetched.
    pub fn check_url(&self, url: &str, normalized_url: &str, methods: &DedupMethods) -> Option<DedupMethod> {
        if methods.normalized_url && self.urls.contains(normalized_url) {
            return Some(DedupMethod::NormalizedUrl);
        }
        if methods.url_hash && self.url_hashes.contains(&url_digest(url)) {
            return Some(DedupMethod::UrlHash);
        }
        None
    }

    /// Returns true when the entry added anything new.
    pub fn record(&mut self, entry: &CorpusEntry) -> bool {
        let mut changed = self.urls.insert(entry.normalized_url.clone());
        changed |= self.url_hashes.insert(url_digest(&entry.url));
        changed |= self.content_hashes.insert(entry.content_hash.clone());
        let title = normalize_title(&entry.title);
        if !title.is_empty() {
            changed |= self.titles.insert(title);
        }
        changed
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e),
        }
    }

    /// Write-to-temp, fsync, rename. The caller holds the sink lock.
    pub fn persist(&self, path: &Path) -> io::Result<()> {
        let tmp = path.with_extension("tmp");
        let mut file = File::create(&tmp)?;
        file.write_all(&serde_json::to_vec(self).map_err(io::Error::other)?)?;
        file.sync_all()?;
        drop(file);
        fs::rename(&tmp, path)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            // Directory fsync makes the rename durable; not supported everywhere.
            if let Ok(d) = File::open(dir) {
                let _ = d.sync_all();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::QualityScore;
    use crate::web::ContentKind;

    fn entry(url: &str, title: &str, content: &str) -> CorpusEntry {
        CorpusEntry::new(
            url,
            title,
            content,
            ContentKind::Html,
            QualityScore::from_components(0.5, 0.5, 0.5, 0.5, 0.0),
            chrono::DateTime::UNIX_EPOCH,
            "test",
            "q",
        )
        .unwrap()
    }

    #[test]
    fn fresh_entry_is_not_duplicate() {
        let ledger = DedupLedger::default();
        assert_eq!(ledger.is_duplicate(&entry("https://a.in/x", "T", "c"), &DedupMethods::default()), None);
    }

    #[test]
    fn methods_detect_in_fixed_order() {
        let mut ledger = DedupLedger::default();
        ledger.record(&entry("https://a.in/msp", "Wheat MSP notice", "Original body text."));
        let all = DedupMethods::default();

        let tracking = entry("https://a.in/msp?utm_source=feed", "Other", "Other body.");
        assert_eq!(ledger.is_duplicate(&tracking, &all), Some(DedupMethod::NormalizedUrl));

        let mirrored = entry("http://www.a.in/msp", "Other", "Other body.");
        assert_eq!(ledger.is_duplicate(&mirrored, &all), Some(DedupMethod::UrlHash));

        let copied = entry("https://b.in/copy", "Other", "  ORIGINAL body   text. ");
        assert_eq!(ledger.is_duplicate(&copied, &all), Some(DedupMethod::ContentHash));

        let retitled = entry("https://c.in/z", "wheat  MSP notice!", "Different body.");
        assert_eq!(ledger.is_duplicate(&retitled, &all), Some(DedupMethod::Title));
    }

    #[test]
    fn disabling_any_method_strictly_weakens_detection() {
        let mut ledger = DedupLedger::default();
        ledger.record(&entry("https://a.in/msp", "Wheat MSP notice", "Original body text."));
        // Each probe is caught by exactly one method.
        let probes = [
            (DedupMethod::NormalizedUrl, entry("https://a.in/msp?utm_source=feed", "x1", "b1")),
            (DedupMethod::UrlHash, entry("http://www.a.in/msp", "x2", "b2")),
            (DedupMethod::ContentHash, entry("https://b.in/copy", "x3", "original body text.")),
            (DedupMethod::Title, entry("https://c.in/z", "Wheat MSP Notice", "b4")),
        ];
        let detected = |methods: DedupMethods| {
            probes
                .iter()
                .filter(|(_, e)| ledger.is_duplicate(e, &methods).is_some())
                .count()
        };
        let full = detected(DedupMethods::default());
        assert_eq!(full, 4);
        for (method, probe) in &probes {
            let weakened = DedupMethods::default().without(*method);
            assert!(detected(weakened) < full, "{method}");
            assert_eq!(ledger.is_duplicate(probe, &weakened), None, "{method}");
        }
    }

    #[test]
    fn empty_titles_never_match() {
        let mut ledger = DedupLedger::default();
        ledger.record(&entry("https://a.in/1", "", "one"));
        assert_eq!(ledger.is_duplicate(&entry("https://a.in/2", "", "two"), &DedupMethods::default()), None);
    }

    #[test]
    fn persist_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.json");
        assert!(DedupLedger::load(&path).unwrap().is_empty());
        let mut ledger = DedupLedger::default();
        ledger.record(&entry("https://a.in/1", "One", "body"));
        ledger.persist(&path).unwrap();
        assert_eq!(DedupLedger::load(&path).unwrap(), ledger);
    }
}
