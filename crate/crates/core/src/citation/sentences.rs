use serde::Serialize;

/// Lowercase tokens (without the final dot) that never end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "vs", "etc", "e.g", "i.e", "cf", "al", "approx",
    "no", "nos", "fig", "figs", "eq", "vol", "ed", "govt", "dept", "est", "min", "max", "inc", "ltd",
    "co", "corp", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec",
    "ha", "kg", "qtl", "rs", "sq", "viz", "hon", "shri", "smt",
];

/// A sentence as a byte span of the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Sentence {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201c}', '\u{2018}'];

/// Splits `text` into sentences.
///
/// A boundary is `.`, `!` or `?` (plus any closing quotes or brackets)
/// followed by whitespace and then an uppercase letter, a digit or an
/// opening quote, or by the end of the text. A `.` does not end a sentence
/// after a listed abbreviation or an initialism (`I.C.A.R.`, `S.`), and never
/// inside a number since no whitespace follows it. Blank lines and lines
/// starting a list item or heading also separate sentences.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    let mut cuts = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c == '\n' && line_break_is_boundary(text, pos) {
            cuts.push(pos);
        } else if matches!(c, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && (matches!(chars[j].1, '.' | '!' | '?') || CLOSERS.contains(&chars[j].1)) {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
            let boundary = if j == chars.len() {
                true
            } else if chars[j].1.is_whitespace() {
                let next = chars[j..].iter().find(|(_, ch)| !ch.is_whitespace()).map(|&(_, ch)| ch);
                next.is_none_or(|n| n.is_uppercase() || n.is_ascii_digit() || OPENERS.contains(&n))
            } else {
                false
            };
            let exempt = c == '.' && j == i + 1 && (is_abbreviation(&text[..pos]) || is_list_number(&text[..pos]));
            if boundary && !exempt {
                cuts.push(end);
            }
            i = j;
            continue;
        }
        i += 1;
    }
    cuts.push(text.len());

    let mut out = Vec::new();
    let mut from = 0;
    for cut in cuts {
        if cut <= from {
            continue;
        }
        let piece = &text[from..cut];
        let lead = piece.len() - piece.trim_start().len();
        let trimmed = piece.trim();
        if !trimmed.is_empty() {
            let start = from + lead;
            out.push(Sentence {
                start,
                end: start + trimmed.len(),
                text: trimmed.to_string(),
            });
        }
        from = cut;
    }
    out
}

/// The token ending right before a `.` at the end of `before`.
fn is_abbreviation(before: &str) -> bool {
    let token = before
        .rsplit(|c: char| c.is_whitespace() || OPENERS.contains(&c))
        .next()
        .unwrap_or("");
    if token.is_empty() {
        return false;
    }
    let lower = token.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // Initialisms: single letters joined by dots, e.g. "I.C.A.R" or "S".
    token
        .split('.')
        .all(|part| part.chars().count() == 1 && part.chars().all(char::is_alphabetic))
        && token.chars().next().is_some_and(char::is_uppercase)
}

/// `before` ends a line-leading item number such as the `2` of `2. Sow`.
fn is_list_number(before: &str) -> bool {
    let line = before.rsplit('\n').next().unwrap_or("").trim_start();
    !line.is_empty() && line.chars().all(|c| c.is_ascii_digit())
}

fn line_break_is_boundary(text: &str, newline_at: usize) -> bool {
    let current = text[..newline_at].rsplit('\n').next().unwrap_or("").trim_start();
    if current.starts_with('#') {
        return true;
    }
    let rest = &text[newline_at + 1..];
    let line = rest.split('\n').next().unwrap_or("");
    if line.trim().is_empty() {
        return true;
    }
    let t = line.trim_start();
    if t.starts_with(['#', '-', '*', '\u{2022}', '>']) {
        return true;
    }
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    digits > 0 && t[digits..].starts_with(['.', ')'])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        split_sentences(s).into_iter().map(|x| x.text).collect()
    }

    #[test]
    fn basic_examples() {
        assert_eq!(texts("Rice needs water. Wheat needs less."), ["Rice needs water.", "Wheat needs less."]);
        assert_eq!(texts("Yield rose 3.5 per cent in 2023."), ["Yield rose 3.5 per cent in 2023."]);
        assert_eq!(
            texts("Dr. Singh visited I.C.A.R. today. He left."),
            ["Dr. Singh visited I.C.A.R. today.", "He left."]
        );
        assert!(texts("").is_empty());
        assert!(texts("  \n ").is_empty());
    }

    #[test]
    fn other_rules() {
        assert_eq!(texts("Is it kharif? Yes! Sow now."), ["Is it kharif?", "Yes!", "Sow now."]);
        assert_eq!(texts("He said \"wait.\" Then left."), ["He said \"wait.\"", "Then left."]);
        assert_eq!(texts("Use e.g. neem oil. Apply weekly."), ["Use e.g. neem oil.", "Apply weekly."]);
        assert_eq!(texts("see page 4. 20 farmers agreed."), ["see page 4.", "20 farmers agreed."]);
        assert_eq!(texts("lower case. continues here"), ["lower case. continues here"]);
        assert_eq!(texts("## Overview\nRice is grown widely."), ["## Overview", "Rice is grown widely."]);
        assert_eq!(texts("Intro\n\nBody text"), ["Intro", "Body text"]);
        assert_eq!(texts("Steps:\n1. Plough\n2. Sow"), ["Steps:", "1. Plough", "2. Sow"]);
    }

    #[test]
    fn spans_cover_all_content() {
        let s = "  First one.  Second one!\n\nThird (really). ";
        let parts = split_sentences(s);
        for p in &parts {
            assert_eq!(&s[p.start..p.end], p.text);
        }
        let joined: String = parts.iter().map(|p| p.text.as_str()).collect::<Vec<_>>().join("");
        let squeezed: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        assert_eq!(joined.chars().filter(|c| !c.is_whitespace()).collect::<String>(), squeezed);
        assert!(parts.windows(2).all(|w| w[0].end <= w[1].start));
    }
}
