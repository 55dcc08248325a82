//! Inline notation for knowledge triples inside prompts and replies.
//!
//! `('Jiong He', 'zodiac sign', 'Taurus')` for a factual triple,
//! `('Cecilia', 'Star in', ['movie 1', 'movie 2'])` for an item-based one,
//! several triples joined by `; `. Quotes and backslashes inside values are
//! backslash-escaped.

use std::iter::Peekable;
use std::str::Chars;

use crate::kb::KnowledgeTriple;

fn quote(value: &str, out: &mut String) {
    out.push('\'');
    for c in value.chars() {
        if c == '\'' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('\'');
}

/// Renders triples, or `none` when the list is empty.
pub fn format_knowledge(triples: &[KnowledgeTriple], none: &str) -> String {
    if triples.is_empty() {
        return none.to_string();
    }
    let mut out = String::new();
    for (i, t) in triples.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        out.push('(');
        quote(t.subject().as_str(), &mut out);
        out.push_str(", ");
        quote(t.relation().as_str(), &mut out);
        out.push_str(", ");
        match t.objects() {
            [single] => quote(single.as_str(), &mut out),
            many => {
                out.push('[');
                for (j, o) in many.iter().enumerate() {
                    if j > 0 {
                        out.push_str(", ");
                    }
                    quote(o.as_str(), &mut out);
                }
                out.push(']');
            }
        }
        out.push(')');
    }
    out
}

struct Cursor<'a> {
    chars: Peekable<Chars<'a>>,
}

impl Cursor<'_> {
    fn skip_ws(&mut self) {
        while self.chars.next_if(|c| c.is_whitespace()).is_some() {}
    }

    fn eat(&mut self, want: char) -> Option<()> {
        self.skip_ws();
        self.chars.next_if_eq(&want).map(|_| ())
    }

    fn value(&mut self) -> Option<String> {
        self.skip_ws();
        let q = self.chars.next_if(|c| *c == '\'' || *c == '"')?;
        let mut out = String::new();
        loop {
            match self.chars.next()? {
                '\\' => out.push(self.chars.next()?),
                c if c == q => return Some(out),
                c => out.push(c),
            }
        }
    }

    fn objects(&mut self) -> Option<Vec<String>> {
        self.skip_ws();
        if self.eat('[').is_none() {
            return Some(vec![self.value()?]);
        }
        let mut out = vec![self.value()?];
        while self.eat(',').is_some() {
            out.push(self.value()?);
        }
        self.eat(']')?;
        Some(out)
    }

    fn triple(&mut self) -> Option<KnowledgeTriple> {
        self.eat('(')?;
        let s = self.value()?;
        self.eat(',')?;
        let r = self.value()?;
        self.eat(',')?;
        let o = self.objects()?;
        self.eat(')')?;
        KnowledgeTriple::new(s, r, o).ok()
    }
}

/// Inverse of [`format_knowledge`]. `None` (any case) or blank text parses
/// to an empty list; anything that is not well-formed yields `None`.
pub fn parse_knowledge(text: &str, none: &str) -> Option<Vec<KnowledgeTriple>> {
    let trimmed = text.trim();
    if trimmed.is_empty() || trimmed.eq_ignore_ascii_case(none) || trimmed.eq_ignore_ascii_case("none") {
        return Some(Vec::new());
    }
    let mut cur = Cursor {
        chars: trimmed.chars().peekable(),
    };
    let mut out = vec![cur.triple()?];
    loop {
        cur.skip_ws();
        if cur.chars.peek().is_none() {
            return Some(out);
        }
        if cur.eat(';').is_none() {
            cur.eat(',')?;
        }
        out.push(cur.triple()?);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factual_triple_notation() {
        let t = KnowledgeTriple::new("Jiong He", "zodiac sign", ["Taurus"]).unwrap();
        assert_eq!(
            format_knowledge(&[t], "None"),
            "('Jiong He', 'zodiac sign', 'Taurus')"
        );
    }

    #[test]
    fn item_based_and_escapes_round_trip() {
        let ts = vec![
            KnowledgeTriple::new("Cecilia", "Star in", ["movie 1", "movie 2"]).unwrap(),
            KnowledgeTriple::new("Cecilia Cheung's", "Intro", ["a \\ b"]).unwrap(),
        ];
        let text = format_knowledge(&ts, "None");
        assert_eq!(parse_knowledge(&text, "None").unwrap(), ts);
    }

    #[test]
    fn none_and_garbage() {
        assert_eq!(parse_knowledge(" None ", "None"), Some(vec![]));
        assert_eq!(parse_knowledge("Jimmy Lin stars in it", "None"), None);
        assert_eq!(format_knowledge(&[], "None"), "None");
    }

    #[test]
    fn double_quotes_accepted() {
        let got = parse_knowledge(r#"("a", "b", "c"), ('d', 'e', 'f')"#, "None").unwrap();
        assert_eq!(got.len(), 2);
    }
}
