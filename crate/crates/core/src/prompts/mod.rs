//! In-context-learning prompts and reply parsing.
//!
//! Every prompt is a sequence of blocks separated by a blank line. Each
//! few-shot block repeats the task instruction, shows a numbered dialogue
//! history with any gold inputs the mode needs, and ends with the output
//! template filled from the gold continuation. The final test block has the
//! same shape without numbering and ends with the empty output template.
//!
//! Instruction wording and output templates live in a [`TemplatePack`]; the
//! default English pack is bundled.

mod notation;
mod pack;
mod parse;
mod render;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DialogueHistory, FewShotExample, Goal, Turn};
use crate::kb::{EntityId, KnowledgeTriple, RelationId};

pub use notation::{format_knowledge, parse_knowledge};
pub use pack::{Labels, SlotKind, TaskTemplate, TemplatePack};
pub use parse::Strictness;

/// Upper bound on the length of a parsed recommendation list.
pub const MAX_RECOMMENDATIONS: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("mode {mode} does not support the {task} task")]
    Unsupported { mode: GenerationMode, task: TaskKind },
    #[error("mode {mode} requires gold {field}")]
    MissingGold {
        mode: GenerationMode,
        field: &'static str,
    },
    #[error("mode {0} requires a goal inventory")]
    MissingInventory(GenerationMode),
    #[error("empty goal inventory")]
    EmptyInventory,
    #[error("empty candidate relation list")]
    NoCandidates,
    #[error("empty dialogue history")]
    EmptyHistory,
    #[error("unparsable reply: {raw:?}")]
    Unparsable { raw: String },
    #[error("invalid template pack: {0}")]
    Pack(String),
}

impl PromptError {
    pub(crate) fn unparsable(raw: &str) -> Self {
        Self::Unparsable {
            raw: raw.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GenerationMode {
    /// Direct generation from the history alone.
    #[serde(rename = "DG")]
    Dg,
    /// The model predicts a goal from the inventory before responding.
    #[serde(rename = "COT_G")]
    CotG,
    /// The model writes out knowledge triples before responding.
    #[serde(rename = "COT_K")]
    CotK,
    /// Gold goal supplied.
    #[serde(rename = "ORACLE_G")]
    OracleG,
    /// Gold knowledge supplied.
    #[serde(rename = "ORACLE_K")]
    OracleK,
    /// Gold goal and knowledge supplied.
    #[serde(rename = "ORACLE_BOTH")]
    OracleBoth,
}

impl GenerationMode {
    pub const ALL: [GenerationMode; 6] = [
        GenerationMode::Dg,
        GenerationMode::CotG,
        GenerationMode::CotK,
        GenerationMode::OracleG,
        GenerationMode::OracleK,
        GenerationMode::OracleBoth,
    ];

    pub fn needs_gold_goal(self) -> bool {
        matches!(self, GenerationMode::OracleG | GenerationMode::OracleBoth)
    }

    pub fn needs_gold_knowledge(self) -> bool {
        matches!(self, GenerationMode::OracleK | GenerationMode::OracleBoth)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenerationMode::Dg => "dg",
            GenerationMode::CotG => "cot-g",
            GenerationMode::CotK => "cot-k",
            GenerationMode::OracleG => "oracle-g",
            GenerationMode::OracleK => "oracle-k",
            GenerationMode::OracleBoth => "oracle-both",
        }
    }
}

impl fmt::Display for GenerationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenerationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        GenerationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| format!("unknown generation mode {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[serde(rename = "response")]
    ResponseGeneration,
    Recommendation,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::ResponseGeneration => "response",
            TaskKind::Recommendation => "recommendation",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "response" | "resp" | "response-generation" => Ok(TaskKind::ResponseGeneration),
            "rec" | "recommendation" => Ok(TaskKind::Recommendation),
            _ => Err(format!("unknown task {s:?}")),
        }
    }
}

/// Everything needed to render one prompt.
#[derive(Debug, Clone)]
pub struct PromptSpec {
    pub mode: GenerationMode,
    pub task: TaskKind,
    pub shots: Vec<FewShotExample>,
    pub history: DialogueHistory,
    pub gold_goal: Option<Vec<Goal>>,
    /// `Some(vec![])` renders as the pack's "None" marker.
    pub gold_knowledge: Option<Vec<KnowledgeTriple>>,
    pub goal_inventory: Option<Vec<Goal>>,
    pub max_turns: Option<usize>,
}

impl PromptSpec {
    pub fn new(mode: GenerationMode, task: TaskKind, history: DialogueHistory) -> Self {
        Self {
            mode,
            task,
            shots: Vec::new(),
            history,
            gold_goal: None,
            gold_knowledge: None,
            goal_inventory: None,
            max_turns: None,
        }
    }

    /// Fills the oracle inputs the mode needs from `history.gold_next`.
    pub fn with_gold_from_history(mut self) -> Self {
        if let Some(gold) = &self.history.gold_next {
            if self.mode.needs_gold_goal() && !gold.goals.is_empty() {
                self.gold_goal = Some(gold.goals.clone());
            }
            if self.mode.needs_gold_knowledge() && !gold.knowledge.is_empty() {
                self.gold_knowledge = Some(gold.knowledge.clone());
            }
        }
        self
    }
}

/// A solved relation-selection example for the knowledge retrieval prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationShot {
    pub history: Vec<Turn>,
    pub entity: EntityId,
    pub candidates: Vec<RelationId>,
    pub relation: RelationId,
}

/// Fields recovered from a model reply.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParsedReply {
    pub response: Option<String>,
    pub recommendations: Option<Vec<String>>,
    pub predicted_goal: Option<Vec<Goal>>,
    pub predicted_knowledge: Option<Vec<KnowledgeTriple>>,
    pub raw: String,
}

impl ParsedReply {
    pub fn has_content(&self) -> bool {
        self.response.is_some()
            || self.recommendations.is_some()
            || self.predicted_goal.is_some()
            || self.predicted_knowledge.is_some()
    }
}

pub fn render_prompt(spec: &PromptSpec) -> Result<String, PromptError> {
    TemplatePack::default_pack().render_prompt(spec)
}

pub fn render_relation_prompt(
    entity: &EntityId,
    candidates: &[RelationId],
    history: &DialogueHistory,
    shots: &[RelationShot],
) -> Result<String, PromptError> {
    TemplatePack::default_pack().render_relation_prompt(entity, candidates, history, shots)
}

pub fn render_goal_prompt(
    history: &DialogueHistory,
    goal_inventory: &[Goal],
) -> Result<String, PromptError> {
    TemplatePack::default_pack().render_goal_prompt(history, goal_inventory)
}

pub fn parse_relation_reply(raw: &str, candidates: &[RelationId]) -> Result<RelationId, PromptError> {
    TemplatePack::default_pack().parse_relation_reply(raw, candidates)
}

pub fn parse_recommendation_reply(raw: &str) -> Result<Vec<String>, PromptError> {
    TemplatePack::default_pack().parse_recommendation_reply(raw)
}

pub fn parse_response_reply(
    raw: &str,
    mode: GenerationMode,
    strictness: Strictness,
) -> Result<ParsedReply, PromptError> {
    TemplatePack::default_pack().parse_response_reply(raw, mode, strictness)
}

pub fn parse_goal_reply(raw: &str, goal_inventory: &[Goal]) -> Result<Vec<Goal>, PromptError> {
    TemplatePack::default_pack().parse_goal_reply(raw, goal_inventory)
}
