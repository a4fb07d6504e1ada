//! Sliding-window chunking over characters.

/// A chunk as a half-open character range plus its text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextChunk {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkGeometry {
    pub size: usize,
    pub overlap: usize,
    /// How far back from the window end a sentence boundary may be taken.
    pub slack: usize,
}

impl Default for ChunkGeometry {
    fn default() -> Self {
        Self {
            size: 1500,
            overlap: 200,
            slack: 100,
        }
    }
}

/// Splits `text` into windows of `size` characters overlapping by `overlap`.
///
/// A window ends early at the last sentence boundary (terminal punctuation
/// followed by whitespace) found within `slack` characters of its nominal
/// end. The final window runs to the end of the text.
pub fn chunk_text(text: &str, geometry: ChunkGeometry) -> Vec<TextChunk> {
    assert!(
        geometry.overlap + geometry.slack < geometry.size,
        "chunk overlap + slack must be smaller than the chunk size"
    );
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let total = chars.len();
    if total == 0 {
        return Vec::new();
    }
    let byte_at = |i: usize| if i == total { text.len() } else { chars[i].0 };

    let mut out = Vec::new();
    let mut start = 0;
    loop {
        if total - start <= geometry.size {
            out.push(make(text, start, total, byte_at(start), byte_at(total)));
            break;
        }
        let nominal = start + geometry.size;
        let end = sentence_boundary(&chars, nominal, geometry.slack).unwrap_or(nominal);
        out.push(make(text, start, end, byte_at(start), byte_at(end)));
        start = end - geometry.overlap;
    }
    out
}

fn make(text: &str, start: usize, end: usize, b0: usize, b1: usize) -> TextChunk {
    TextChunk {
        start,
        end,
        text: text[b0..b1].to_string(),
    }
}

/// Largest `p` in `[nominal - slack, nominal]` where `chars[p-1]` is terminal
/// punctuation and `chars[p]` is whitespace.
fn sentence_boundary(chars: &[(usize, char)], nominal: usize, slack: usize) -> Option<usize> {
    let lo = nominal.saturating_sub(slack).max(1);
    (lo..=nominal).rev().find(|&p| {
        p < chars.len() && matches!(chars[p - 1].1, '.' | '!' | '?') && chars[p].1.is_whitespace()
    })
}
