use std::path::Path;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Completion, LanguageModel, LlmError};

#[derive(Debug, Clone)]
pub enum Matcher {
    Contains(String),
    Pattern(Regex),
}

impl Matcher {
    fn is_match(&self, prompt: &str) -> bool {
        match self {
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub matcher: Matcher,
    pub reply: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct RuleFile {
    #[serde(default = "default_name")]
    name: String,
    rules: Vec<RawRule>,
    default_reply: String,
}

fn default_name() -> String {
    "scripted".into()
}

#[derive(Debug, Deserialize, Serialize)]
struct RawRule {
    #[serde(default)]
    contains: Option<String>,
    #[serde(default)]
    pattern: Option<String>,
    reply: String,
}

/// Replies from an ordered rule list; the first rule whose matcher fits the
/// prompt wins, otherwise `default_reply`.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    name: String,
    rules: Vec<ScriptRule>,
    default_reply: String,
}

impl ScriptedModel {
    pub fn new(default_reply: impl Into<String>) -> Self {
        Self {
            name: default_name(),
            rules: Vec::new(),
            default_reply: default_reply.into(),
        }
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn when_contains(mut self, needle: impl Into<String>, reply: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            matcher: Matcher::Contains(needle.into()),
            reply: reply.into(),
        });
        self
    }

    pub fn when_matches(mut self, pattern: &str, reply: impl Into<String>) -> Result<Self, LlmError> {
        let re = Regex::new(pattern).map_err(|e| LlmError::Config(e.to_string()))?;
        self.rules.push(ScriptRule {
            matcher: Matcher::Pattern(re),
            reply: reply.into(),
        });
        Ok(self)
    }

    /// Rule file: `{"name"?, "rules": [{"contains"|"pattern", "reply"}], "default_reply"}`.
    pub fn from_json(source: &str) -> Result<Self, LlmError> {
        let file: RuleFile =
            serde_json::from_str(source).map_err(|e| LlmError::Config(e.to_string()))?;
        let mut model = ScriptedModel::new(file.default_reply).named(file.name);
        for rule in file.rules {
            model = match (rule.contains, rule.pattern) {
                (Some(c), None) => model.when_contains(c, rule.reply),
                (None, Some(p)) => model.when_matches(&p, rule.reply)?,
                _ => {
                    return Err(LlmError::Config(
                        "each rule needs exactly one of `contains` or `pattern`".into(),
                    ))
                }
            };
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&src)
    }

    pub fn reply_for(&self, prompt: &str) -> &str {
        self.rules
            .iter()
            .find(|r| r.matcher.is_match(prompt))
            .map(|r| r.reply.as_str())
            .unwrap_or(&self.default_reply)
    }
}

impl LanguageModel for ScriptedModel {
    fn complete(&self, prompt: &str) -> Result<Completion, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let text = self.reply_for(prompt);
        if text.trim().is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        Ok(Completion {
            text: text.to_string(),
            latency: Duration::ZERO,
            attempt: 1,
        })
    }

    fn name(&self) -> &str {
        &self.name
    }
}
