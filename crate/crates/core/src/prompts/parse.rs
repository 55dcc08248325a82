use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Goal;
use crate::kb::RelationId;
use crate::text::{fold, fold_string, SurfaceMatcher};

use super::notation::parse_knowledge;
use super::pack::{SlotKind, TaskTemplate, TemplatePack};
use super::{GenerationMode, ParsedReply, PromptError, TaskKind, MAX_RECOMMENDATIONS};

/// How to treat a response reply that does not follow its template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    /// Fail with an unparsable-reply error.
    Strict,
    /// Use the whole reply as the response text.
    #[default]
    Lenient,
}

fn find_from(hay: &[char], needle: &[char], from: usize) -> Option<usize> {
    if needle.is_empty() {
        return Some(from.min(hay.len()));
    }
    if hay.len() < needle.len() {
        return None;
    }
    (from..=hay.len() - needle.len()).find(|&i| hay[i..].starts_with(needle))
}

fn collect(chars: &[char]) -> String {
    chars.iter().collect::<String>().trim().to_string()
}

/// Extracts the slot values of `template` from `raw`. Literal text is
/// matched case-insensitively; the last slot runs to the final `]`, so
/// values may themselves contain brackets.
fn match_template(raw: &str, template: &TaskTemplate) -> Option<Vec<String>> {
    let chars: Vec<char> = raw.chars().collect();
    let hay = fold(raw);
    let segs: Vec<Vec<char>> = template.segments().iter().map(|s| fold(s.trim_end())).collect();
    let n_slots = segs.len() - 1;
    let delims: Vec<Vec<char>> = template.segments()[1..n_slots]
        .iter()
        .map(|s| {
            let mut d = vec![']'];
            d.extend(fold(s));
            d.push('[');
            d
        })
        .collect();

    let mut search = 0;
    while let Some(at) = find_from(&hay, &segs[0], search) {
        search = at + 1;
        let mut pos = at + segs[0].len();
        while pos < chars.len() && chars[pos].is_whitespace() {
            pos += 1;
        }
        if chars.get(pos) != Some(&'[') {
            continue;
        }
        let mut start = pos + 1;
        let mut values = Vec::with_capacity(n_slots);
        let mut ok = true;
        for d in &delims {
            match find_from(&hay, d, start) {
                Some(end) => {
                    values.push(collect(&chars[start..end]));
                    start = end + d.len();
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        if let Some(close) = chars[start..].iter().rposition(|&c| c == ']') {
            values.push(collect(&chars[start..start + close]));
            return Some(values);
        }
    }
    None
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}

fn split_items(list: &str) -> Vec<String> {
    list.split([',', '，'])
        .map(strip_quotes)
        .filter(|s| !s.is_empty())
        .take(MAX_RECOMMENDATIONS)
        .map(str::to_string)
        .collect()
}

fn split_goals(text: &str, none: &str) -> Vec<Goal> {
    let t = text.trim();
    if t.is_empty() || t.eq_ignore_ascii_case(none) {
        return Vec::new();
    }
    t.split(',')
        .map(strip_quotes)
        .filter(|s| !s.is_empty())
        .map(Goal::new)
        .collect()
}

/// Text following `prefix` (case-insensitive) up to the end of that line.
fn answer_after(raw: &str, prefix: &str) -> Option<String> {
    let chars: Vec<char> = raw.chars().collect();
    let at = find_from(&fold(raw), &fold(prefix), 0)?;
    let rest: String = chars[at + prefix.chars().count()..].iter().collect();
    Some(rest.lines().next().unwrap_or("").trim().to_string())
}

fn trim_answer<'a>(s: &'a str, suffix: &str) -> &'a str {
    let s = s.trim();
    let s = if !suffix.is_empty() {
        s.strip_suffix(suffix).unwrap_or(s)
    } else {
        s
    };
    strip_quotes(s.trim_end_matches(['.', '。', '"', '”', '\'']))
}

impl TemplatePack {
    /// Parses a response-task reply for `mode`.
    pub fn parse_response_reply(
        &self,
        raw: &str,
        mode: GenerationMode,
        strictness: Strictness,
    ) -> Result<ParsedReply, PromptError> {
        let template = self.template(mode, TaskKind::ResponseGeneration)?;
        let mut reply = ParsedReply {
            raw: raw.to_string(),
            ..ParsedReply::default()
        };
        match match_template(raw, template) {
            Some(values) => {
                for (slot, value) in template.slots.iter().zip(values) {
                    match slot {
                        SlotKind::Goal => reply.predicted_goal = Some(split_goals(&value, &self.none)),
                        SlotKind::Knowledge => reply.predicted_knowledge = parse_knowledge(&value, &self.none),
                        SlotKind::Response => reply.response = Some(value),
                        SlotKind::Items => reply.recommendations = Some(split_items(&value)),
                    }
                }
            }
            None if strictness == Strictness::Lenient && !raw.trim().is_empty() => {
                reply.response = Some(raw.trim().to_string());
            }
            None => return Err(PromptError::unparsable(raw)),
        }
        Ok(reply)
    }

    /// Parses a recommendation-task reply for `mode`, including any
    /// knowledge the template asks the model to repeat.
    pub fn parse_recommendation_full(
        &self,
        raw: &str,
        mode: GenerationMode,
    ) -> Result<ParsedReply, PromptError> {
        let template = self.template(mode, TaskKind::Recommendation)?;
        let mut reply = ParsedReply {
            raw: raw.to_string(),
            ..ParsedReply::default()
        };
        if let Some(values) = match_template(raw, template) {
            for (slot, value) in template.slots.iter().zip(values) {
                if *slot == SlotKind::Knowledge {
                    reply.predicted_knowledge = parse_knowledge(&value, &self.none);
                }
            }
        }
        reply.recommendations = Some(self.parse_recommendation_reply(raw)?);
        Ok(reply)
    }

    /// Items of the bracketed list following the recommendation marker, or
    /// of the last bracketed list in the reply when the marker is absent.
    pub fn parse_recommendation_reply(&self, raw: &str) -> Result<Vec<String>, PromptError> {
        let chars: Vec<char> = raw.chars().collect();
        let hay = fold(raw);
        let marker = fold(&self.recommendation_marker);
        let mut last_marker = None;
        let mut from = 0;
        while let Some(at) = find_from(&hay, &marker, from) {
            last_marker = Some(at);
            from = at + 1;
        }
        if let Some(at) = last_marker {
            let mut pos = at + marker.len();
            while pos < chars.len() && (chars[pos].is_whitespace() || chars[pos] == ':') {
                pos += 1;
            }
            if chars.get(pos) == Some(&'[') {
                let end = chars[pos + 1..]
                    .iter()
                    .position(|&c| c == ']')
                    .map(|e| pos + 1 + e)
                    .unwrap_or(chars.len());
                return Ok(split_items(&collect(&chars[pos + 1..end])));
            }
            let line: String = chars[pos..].iter().take_while(|&&c| c != '\n').collect();
            return Ok(split_items(line.trim().trim_end_matches(['.', '。'])));
        }
        let close = chars.iter().rposition(|&c| c == ']');
        let open = close.and_then(|c| chars[..c].iter().rposition(|&o| o == '['));
        match (open, close) {
            (Some(o), Some(c)) => Ok(split_items(&collect(&chars[o + 1..c]))),
            _ => Err(PromptError::unparsable(raw)),
        }
    }

    /// The selected relation. Falls back to the single candidate mentioned
    /// anywhere in the reply when the answer sentence is missing or names
    /// no candidate.
    pub fn parse_relation_reply(
        &self,
        raw: &str,
        candidates: &[RelationId],
    ) -> Result<RelationId, PromptError> {
        if let Some(answer) = answer_after(raw, &self.relation.answer_prefix) {
            let want = fold_string(trim_answer(&answer, &self.relation.answer_suffix));
            if let Some(c) = candidates.iter().find(|c| fold_string(c.as_str()) == want) {
                return Ok(c.clone());
            }
        }
        let matcher = SurfaceMatcher::new(candidates.iter().map(RelationId::as_str));
        let found: HashSet<usize> = matcher.find(raw).into_iter().map(|s| s.id).collect();
        if found.len() == 1 {
            let id = *found.iter().next().expect("one element");
            return Ok(candidates[id].clone());
        }
        Err(PromptError::unparsable(raw))
    }

    /// Goals named by a goal-planning reply, validated against the inventory.
    pub fn parse_goal_reply(&self, raw: &str, goal_inventory: &[Goal]) -> Result<Vec<Goal>, PromptError> {
        let scope = answer_after(raw, &self.goal.answer_prefix).unwrap_or_else(|| raw.to_string());
        let answer = trim_answer(&scope, &self.goal.answer_suffix);
        let want = fold_string(answer);
        if let Some(g) = goal_inventory.iter().find(|g| fold_string(g.as_str()) == want) {
            return Ok(vec![g.clone()]);
        }
        let matcher = SurfaceMatcher::new(goal_inventory.iter().map(Goal::as_str));
        let mut seen = HashSet::new();
        let goals: Vec<Goal> = matcher
            .find(answer)
            .into_iter()
            .filter(|s| seen.insert(s.id))
            .map(|s| goal_inventory[s.id].clone())
            .collect();
        if goals.is_empty() {
            return Err(PromptError::unparsable(raw));
        }
        Ok(goals)
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;

    fn rels(names: &[&str]) -> Vec<RelationId> {
        names.iter().map(|n| RelationId::new(*n).unwrap()).collect()
    }

    fn kwok() -> Vec<RelationId> {
        rels(&[
            "Intro",
            "Achievement",
            "Stars",
            "Awards",
            "Height",
            "Star sign",
            "Comments",
            "Birthplace",
            "Sings",
            "Birthday",
        ])
    }

    #[test]
    fn relation_from_template() {
        assert_eq!(
            parse_relation_reply("The relation is Intro.", &kwok()).unwrap().as_str(),
            "Intro"
        );
        assert_eq!(
            parse_relation_reply("the relation is \"star sign\"", &kwok()).unwrap().as_str(),
            "Star sign"
        );
    }

    #[test]
    fn relation_fallback_scan() {
        assert_eq!(
            parse_relation_reply("I think Stars fits best", &kwok()).unwrap().as_str(),
            "Stars"
        );
        assert!(parse_relation_reply("none of these", &kwok()).is_err());
        assert!(parse_relation_reply("either Intro or Awards", &kwok()).is_err());
    }

    #[test]
    fn recommendation_lists() {
        assert_eq!(
            parse_recommendation_reply("The recommendation list is [A, B, C].").unwrap(),
            ["A", "B", "C"]
        );
        assert!(parse_recommendation_reply("The recommendation list is [].")
            .unwrap()
            .is_empty());
        assert_eq!(parse_recommendation_reply("maybe [X , , Y]").unwrap(), ["X", "Y"]);
        assert!(parse_recommendation_reply("I have no idea").is_err());
    }

    #[test]
    fn recommendation_truncates_at_fifty() {
        let items: Vec<String> = (0..60).map(|i| format!("item{i}")).collect();
        let raw = format!("The recommendation list is [{}].", items.join(", "));
        let got = parse_recommendation_reply(&raw).unwrap();
        assert_eq!(got.len(), 50);
        assert_eq!(got[49], "item49");
    }

    #[test]
    fn dg_response() {
        let r = parse_response_reply(
            "The system response is [Of course, Taurus]",
            GenerationMode::Dg,
            Strictness::Strict,
        )
        .unwrap();
        assert_eq!(r.response.as_deref(), Some("Of course, Taurus"));
    }

    #[test]
    fn cot_g_response_fields() {
        let r = parse_response_reply(
            "The predicted dialogue goal is [Movie recommendation] and the system response is [How about Left Right...Destiny?]",
            GenerationMode::CotG,
            Strictness::Strict,
        )
        .unwrap();
        assert_eq!(r.predicted_goal, Some(vec![Goal::new("Movie recommendation")]));
        assert_eq!(r.response.as_deref(), Some("How about Left Right...Destiny?"));
    }

    #[test]
    fn knowledge_slot_may_contain_brackets() {
        let r = parse_response_reply(
            "The predicted knowledge triples is [('Cecilia', 'Star in', ['m1', 'm2'])] and the system response is [Try m2 [2004].].",
            GenerationMode::CotK,
            Strictness::Strict,
        )
        .unwrap();
        assert_eq!(r.predicted_knowledge.unwrap()[0].objects().len(), 2);
        assert_eq!(r.response.as_deref(), Some("Try m2 [2004]."));
    }

    #[test]
    fn strict_free_text_fails_lenient_keeps_it() {
        assert!(parse_response_reply("Sure, Taurus!", GenerationMode::Dg, Strictness::Strict).is_err());
        let r = parse_response_reply("Sure, Taurus!", GenerationMode::Dg, Strictness::Lenient).unwrap();
        assert_eq!(r.response.as_deref(), Some("Sure, Taurus!"));
    }

    #[test]
    fn goal_reply() {
        let inv = vec![Goal::new("Movie recommendation"), Goal::new("Chat about stars")];
        assert_eq!(
            parse_goal_reply("The dialogue goal is Movie recommendation", &inv).unwrap(),
            vec![inv[0].clone()]
        );
        assert_eq!(
            parse_goal_reply("The dialogue goal is Chat about stars and Movie recommendation.", &inv).unwrap(),
            vec![inv[1].clone(), inv[0].clone()]
        );
        assert!(parse_goal_reply("The dialogue goal is Dancing", &inv).is_err());
    }
}
