//! The three cooperating agents.
//!
//! [`retrieve_knowledge`] grounds the latest utterance in the KB,
//! [`plan_goal`] predicts the goal of the next system turn, and [`converse`]
//! composes both into a single prompt for the conversational model.

mod converse;
mod goal;
mod retrieval;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Goal;
use crate::kb::{EntityId, KbError, KnowledgeTriple, RelationId};
use crate::llm::LlmError;
use crate::prompts::{PromptError, MAX_RECOMMENDATIONS};

pub use crate::prompts::RelationShot;
pub use converse::{converse, AgentConfig, AgentDeps, ConverseMode, TurnOutput};
pub use goal::{
    plan_goal, train_goal_baseline, GoalBackend, GoalModel, GoalTrainingConfig, GoalTrainingReport,
};
pub use retrieval::{relation_shots_from_examples, retrieve_knowledge};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error("mode {mode} requires {what}")]
    MissingDependency { mode: String, what: &'static str },
    #[error("reply could not be parsed: {raw:?}")]
    Unparsable {
        raw: String,
        /// Everything produced before parsing failed; the payload is empty.
        partial: Box<TurnOutput>,
    },
    #[error("training corpus has no goal annotations")]
    NoGoalAnnotations,
    #[error("goal inventory has {0} goal(s); at least 2 are required")]
    InventoryTooSmall(usize),
    #[error("empty dialogue history")]
    EmptyHistory,
    #[error("invalid goal model: {0}")]
    GoalModel(String),
}

/// What happened for one entity of the latest utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityTrace {
    pub entity: EntityId,
    pub candidates: Vec<RelationId>,
    pub selected: Option<RelationId>,
    pub triple: Option<KnowledgeTriple>,
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_reply: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub per_entity: Vec<EntityTrace>,
}

impl RetrievalTrace {
    pub fn is_empty(&self) -> bool {
        self.per_entity.is_empty()
    }

    /// `(entity, relation)` pairs the selector chose.
    pub fn selections(&self) -> impl Iterator<Item = (&EntityId, &RelationId)> {
        self.per_entity
            .iter()
            .filter_map(|e| e.selected.as_ref().map(|r| (&e.entity, r)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalPrediction {
    pub goals: Vec<Goal>,
    /// Log-probability (single-goal models), positive-class probability
    /// (multi-goal models) or 1.0 for goals named by a remote model.
    pub scores: BTreeMap<Goal, f64>,
}

/// Rank-ordered, duplicate-free, at most [`MAX_RECOMMENDATIONS`] long.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedRecommendation {
    items: Vec<String>,
}

impl RankedRecommendation {
    pub fn new<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for item in items {
            let item = item.as_ref().trim();
            if item.is_empty() || out.iter().any(|o| o == item) {
                continue;
            }
            out.push(item.to_string());
            if out.len() == MAX_RECOMMENDATIONS {
                break;
            }
        }
        Self { items: out }
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranked_recommendation_dedups_and_caps() {
        let r = RankedRecommendation::new(["a", " a", "b", "", "c"]);
        assert_eq!(r.items(), ["a", "b", "c"]);
        let many = RankedRecommendation::new((0..80).map(|i| format!("m{i}")));
        assert_eq!(many.len(), MAX_RECOMMENDATIONS);
        assert_eq!(many.items()[0], "m0");
    }
}
