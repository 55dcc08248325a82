//! Automatic evaluation: generation, ranking and classification metrics and
//! the batch runner that scores an agent over a test corpus.

mod metrics;
mod runner;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::AgentError;
use crate::corpus::Split;
use crate::prompts::TaskKind;

pub use metrics::{bleu_n, classification_prf, dist_n, mrr_at_k, ndcg_at_k, token_f1, Prf};
pub use runner::{run_eval, run_eval_detailed, EvalConfig, TurnRecord};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("n-gram order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("cutoff k must be at least 1")]
    InvalidCutoff,
    #[error("reference is empty")]
    EmptyReference,
    #[error("gold set is empty")]
    EmptyGold,
    #[error("no {0}-grams in any candidate")]
    NoNgrams(usize),
    #[error("{predictions} predictions for {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("no examples")]
    NoExamples,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("expected a {expected} corpus, found {found}")]
    WrongSplit { expected: Split, found: Split },
    #[error("no evaluable turns")]
    NoEvaluableTurns,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Column order of the response-generation table.
pub const RESPONSE_COLUMNS: [&str; 4] = ["bleu1", "bleu2", "dist2", "f1"];
/// Column order of the recommendation table.
pub const RECOMMENDATION_COLUMNS: [&str; 4] = ["ndcg@10", "ndcg@50", "mrr@10", "mrr@50"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskKind,
    pub per_metric: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
    pub config_fingerprint: String,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn columns(&self) -> &'static [&'static str] {
        match self.task {
            TaskKind::ResponseGeneration => &RESPONSE_COLUMNS,
            TaskKind::Recommendation => &RECOMMENDATION_COLUMNS,
        }
    }

    pub fn csv_header(&self) -> String {
        self.columns().join(",")
    }

    pub fn csv_row(&self) -> String {
        self.columns()
            .iter()
            .map(|c| self.per_metric.get(*c).map_or(String::new(), |v| format!("{v:.6}")))
            .collect::<Vec<_>>()
            .join(",")
    }

    /// `name value` pairs in table order, three decimals.
    pub fn table_row(&self) -> String {
        self.columns()
            .iter()
            .map(|c| match self.per_metric.get(*c) {
                Some(v) => format!("{c}={v:.3}"),
                None => format!("{c}=-"),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}
