//! Phrase matching shared by agents, quality scoring and model routing.

/// Lowercases and collapses every whitespace run to a single space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Whole-phrase containment: `phrase` occurs in `haystack` delimited by
/// non-alphanumeric characters or the string ends. Both inputs must already
/// be [`normalize`]d.
pub fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    if phrase.is_empty() {
        return false;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(phrase) {
        let start = from + pos;
        let end = start + phrase.len();
        let before_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Number of distinct phrases from `phrases` contained in `text`.
pub fn count_matches<'a>(text: &str, phrases: impl IntoIterator<Item = &'a String>) -> usize {
    let text = normalize(text);
    let mut seen = std::collections::BTreeSet::new();
    phrases
        .into_iter()
        .map(|p| normalize(p))
        .filter(|p| !p.is_empty() && seen.insert(p.clone()))
        .filter(|p| contains_phrase(&text, p))
        .count()
}
