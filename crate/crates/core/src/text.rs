//! Text utilities shared by entity extraction, reply parsing and metrics.

use std::collections::HashMap;

/// Folds a character for case-insensitive comparison.
///
/// Characters whose lowercase form is a single codepoint are lowercased;
/// everything else (uncased scripts, multi-char expansions) is kept as is,
/// so folded text has exactly one char per input char.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn fold(text: &str) -> Vec<char> {
    text.chars().map(fold_char).collect()
}

pub fn fold_string(text: &str) -> String {
    text.chars().map(fold_char).collect()
}

/// A match of needle `id` covering `len` chars starting at char offset `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
    pub id: usize,
}

impl Span {
    fn end(&self) -> usize {
        self.start + self.len
    }

    fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end() && other.start < self.end()
    }
}

/// Case-insensitive multi-needle substring matcher.
///
/// Needles are bucketed by their first folded char; each bucket is sorted
/// longest first so that candidate enumeration per position is cheap.
#[derive(Debug, Clone, Default)]
pub struct SurfaceMatcher {
    buckets: HashMap<char, Vec<(Vec<char>, usize)>>,
}

impl SurfaceMatcher {
    pub fn new<'a, I>(needles: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut buckets: HashMap<char, Vec<(Vec<char>, usize)>> = HashMap::new();
        for (id, needle) in needles.into_iter().enumerate() {
            let folded = fold(needle);
            if let Some(&first) = folded.first() {
                buckets.entry(first).or_default().push((folded, id));
            }
        }
        for bucket in buckets.values_mut() {
            bucket.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        }
        Self { buckets }
    }

    /// Every occurrence of every needle, in no particular order.
    pub fn all_matches(&self, text: &str) -> Vec<Span> {
        let hay = fold(text);
        let mut out = Vec::new();
        for start in 0..hay.len() {
            let Some(bucket) = self.buckets.get(&hay[start]) else {
                continue;
            };
            for (needle, id) in bucket {
                if hay[start..].starts_with(needle) {
                    out.push(Span {
                        start,
                        len: needle.len(),
                        id: *id,
                    });
                }
            }
        }
        out
    }

    /// Non-overlapping matches chosen longest first, then leftmost, returned
    /// in position order.
    pub fn find(&self, text: &str) -> Vec<Span> {
        select_longest_leftmost(self.all_matches(text))
    }
}

pub fn select_longest_leftmost(mut matches: Vec<Span>) -> Vec<Span> {
    matches.sort_by(|a, b| {
        b.len
            .cmp(&a.len)
            .then(a.start.cmp(&b.start))
            .then(a.id.cmp(&b.id))
    });
    let mut kept: Vec<Span> = Vec::new();
    for m in matches {
        if kept.iter().all(|k| !k.overlaps(&m)) {
            kept.push(m);
        }
    }
    kept.sort_by_key(|s| (s.start, s.id));
    kept
}

/// True for ideographs, kana, hangul and CJK punctuation, which are
/// segmented one codepoint per token.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x2E80..=0x2FDF
        | 0x3000..=0x303F
        | 0x3040..=0x30FF
        | 0x3100..=0x31FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xA960..=0xA97F
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0xFE30..=0xFE4F
        | 0xFF00..=0xFFEF
        | 0x20000..=0x2FA1F)
}

/// Identifier recorded in evaluation fingerprints.
pub const TOKENIZER_ID: &str = "ws-punct-cjk-lower/v1";

/// Whitespace tokenization with punctuation detached and CJK text split per
/// codepoint. Cased letters are lowercased.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
        }
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if is_cjk(c) || !c.is_alphanumeric() {
            flush(&mut current, &mut tokens);
            tokens.push(fold_char(c).to_string());
        } else {
            current.push(fold_char(c));
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}
