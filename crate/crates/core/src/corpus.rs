//! Normalized dialogue corpora.
//!
//! A corpus is a JSONL file (one dialogue per line) plus a small JSON header
//! declaring its name, split and goal inventory. Every goal label on every
//! turn must belong to the inventory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::KnowledgeTriple;
use crate::prompts::TaskKind;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: invalid dialogue record: {message}")]
    Json { line: usize, message: String },
    #[error("invalid corpus header: {0}")]
    Header(String),
    #[error("dialogue {dialogue}, turn {turn}: unknown goal label \"{label}\"")]
    UnknownGoal {
        label: String,
        dialogue: String,
        turn: usize,
    },
    #[error("dialogue {dialogue}, turn {turn}: duplicate goal label \"{label}\"")]
    DuplicateGoal {
        label: String,
        dialogue: String,
        turn: usize,
    },
    #[error("dialogue {0} has no turns")]
    EmptyDialogue(String),
    #[error("dialogue {dialogue}, turn {turn}: empty text")]
    EmptyText { dialogue: String, turn: usize },
    #[error("duplicate dialogue id {0}")]
    DuplicateId(String),
    #[error("{eligible} eligible < {requested} requested")]
    InsufficientShots { eligible: usize, requested: usize },
    #[error("expected a {expected} corpus, found {found}")]
    WrongSplit { expected: Split, found: Split },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// A dialogue-goal label, e.g. `"Movie recommendation"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Goal(String);

impl Goal {
    pub fn new(label: impl Into<String>) -> Self {
        Self(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Goal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Goal {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::User => f.write_str("user"),
            Speaker::System => f.write_str("system"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default)]
    pub goals: Vec<Goal>,
    #[serde(default)]
    pub knowledge: Vec<KnowledgeTriple>,
    #[serde(default)]
    pub gold_items: Vec<String>,
}

impl Turn {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self {
            speaker,
            text: text.into(),
            goals: Vec::new(),
            knowledge: Vec::new(),
            gold_items: Vec::new(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Speaker::User, text)
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::new(Speaker::System, text)
    }

    pub fn with_goals<I: IntoIterator<Item = G>, G: Into<Goal>>(mut self, goals: I) -> Self {
        self.goals = goals.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_knowledge(mut self, knowledge: Vec<KnowledgeTriple>) -> Self {
        self.knowledge = knowledge;
        self
    }

    pub fn with_items<I: IntoIterator<Item = S>, S: Into<String>>(mut self, items: I) -> Self {
        self.gold_items = items.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Dev => f.write_str("dev"),
            Split::Test => f.write_str("test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub name: String,
    pub split: Split,
    pub goal_inventory: Vec<Goal>,
}

impl CorpusHeader {
    pub fn from_json(source: &str) -> Result<Self, CorpusError> {
        serde_json::from_str(source).map_err(|e| CorpusError::Header(e.to_string()))
    }
}

/// The turns preceding a target utterance, optionally paired with the gold
/// annotation of that target (used by oracle prompting and evaluation).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DialogueHistory {
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_next: Option<Turn>,
}

impl DialogueHistory {
    pub fn new(turns: Vec<Turn>) -> Self {
        Self {
            turns,
            gold_next: None,
        }
    }

    pub fn with_gold(turns: Vec<Turn>, gold_next: Turn) -> Self {
        Self {
            turns,
            gold_next: Some(gold_next),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn latest(&self) -> Option<&Turn> {
        self.turns.last()
    }

    /// The last `max_turns` turns (all of them when `None`).
    pub fn window(&self, max_turns: Option<usize>) -> &[Turn] {
        match max_turns {
            Some(m) if m < self.turns.len() => &self.turns[self.turns.len() - m..],
            _ => &self.turns,
        }
    }
}

/// A solved in-context example: a history prefix and its gold continuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub context: Vec<Turn>,
    pub gold: Turn,
}

impl FewShotExample {
    pub fn history(&self) -> DialogueHistory {
        DialogueHistory::with_gold(self.context.clone(), self.gold.clone())
    }
}

/// Which speakers contribute to knowledge-ratio counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SpeakerScope {
    #[default]
    All,
    SystemOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalKnowledgeStats {
    pub n_with_knowledge: usize,
    pub n_total: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeRatioReport {
    pub per_goal: BTreeMap<Goal, GoalKnowledgeStats>,
}

impl KnowledgeRatioReport {
    /// Rows sorted by descending ratio, ties broken by label.
    pub fn sorted(&self) -> Vec<(&Goal, &GoalKnowledgeStats)> {
        let mut rows: Vec<_> = self.per_goal.iter().collect();
        rows.sort_by(|a, b| b.1.ratio.total_cmp(&a.1.ratio).then_with(|| a.0.cmp(b.0)));
        rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    name: String,
    split: Split,
    goal_inventory: Vec<Goal>,
    dialogues: Vec<Dialogue>,
}

impl Corpus {
    /// Validates and assembles a corpus from already-parsed dialogues.
    pub fn new(header: CorpusHeader, dialogues: Vec<Dialogue>) -> Result<Self, CorpusError> {
        let inventory: HashSet<&Goal> = header.goal_inventory.iter().collect();
        let mut ids = HashSet::new();
        for d in &dialogues {
            if !ids.insert(d.id.as_str()) {
                return Err(CorpusError::DuplicateId(d.id.clone()));
            }
            if d.turns.is_empty() {
                return Err(CorpusError::EmptyDialogue(d.id.clone()));
            }
            for (ti, turn) in d.turns.iter().enumerate() {
                if turn.text.trim().is_empty() {
                    return Err(CorpusError::EmptyText {
                        dialogue: d.id.clone(),
                        turn: ti,
                    });
                }
                let mut seen = HashSet::new();
                for g in &turn.goals {
                    if !inventory.contains(g) {
                        return Err(CorpusError::UnknownGoal {
                            label: g.0.clone(),
                            dialogue: d.id.clone(),
                            turn: ti,
                        });
                    }
                    if !seen.insert(g) {
                        return Err(CorpusError::DuplicateGoal {
                            label: g.0.clone(),
                            dialogue: d.id.clone(),
                            turn: ti,
                        });
                    }
                }
            }
        }
        Ok(Self {
            name: header.name,
            split: header.split,
            goal_inventory: header.goal_inventory,
            dialogues,
        })
    }

    /// Parses corpus JSONL against `header`. Blank lines are skipped.
    pub fn load(source: &str, header: CorpusHeader) -> Result<Self, CorpusError> {
        let mut dialogues = Vec::new();
        for (i, line) in source.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let d: Dialogue = serde_json::from_str(line).map_err(|e| CorpusError::Json {
                line: i + 1,
                message: e.to_string(),
            })?;
            dialogues.push(d);
        }
        Self::new(header, dialogues)
    }

    pub fn load_files(data: &Path, header: &Path) -> Result<Self, CorpusError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| CorpusError::Io {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        };
        let header = CorpusHeader::from_json(&read(header)?)?;
        Self::load(&read(data)?, header)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.dialogues {
            out.push_str(&serde_json::to_string(d).expect("dialogue serializes"));
            out.push('\n');
        }
        out
    }

    pub fn header(&self) -> CorpusHeader {
        CorpusHeader {
            name: self.name.clone(),
            split: self.split,
            goal_inventory: self.goal_inventory.clone(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn goal_inventory(&self) -> &[Goal] {
        &self.goal_inventory
    }

    pub fn dialogues(&self) -> &[Dialogue] {
        &self.dialogues
    }

    pub fn turn_count(&self) -> usize {
        self.dialogues.iter().map(|d| d.turns.len()).sum()
    }

    pub fn has_goal_annotations(&self) -> bool {
        self.turns().any(|t| !t.goals.is_empty())
    }

    fn turns(&self) -> impl Iterator<Item = &Turn> {
        self.dialogues.iter().flat_map(|d| d.turns.iter())
    }

    /// Every system turn that has at least one preceding turn, as
    /// `(dialogue, turn index, history-with-gold)`.
    pub fn system_targets(&self) -> impl Iterator<Item = (&Dialogue, usize, DialogueHistory)> {
        self.dialogues.iter().flat_map(|d| {
            d.turns
                .iter()
                .enumerate()
                .filter(|(j, t)| *j >= 1 && t.speaker == Speaker::System)
                .map(move |(j, t)| (d, j, DialogueHistory::with_gold(d.turns[..j].to_vec(), t.clone())))
        })
    }

    /// Per-goal share of turns that carry knowledge annotations. Multi-goal
    /// turns count once under each of their goals.
    pub fn knowledge_ratio(&self, scope: SpeakerScope) -> KnowledgeRatioReport {
        let mut counts: BTreeMap<Goal, (usize, usize)> = BTreeMap::new();
        for turn in self.turns() {
            if scope == SpeakerScope::SystemOnly && turn.speaker != Speaker::System {
                continue;
            }
            let has_k = !turn.knowledge.is_empty();
            for g in &turn.goals {
                let c = counts.entry(g.clone()).or_default();
                c.1 += 1;
                if has_k {
                    c.0 += 1;
                }
            }
        }
        KnowledgeRatioReport {
            per_goal: counts
                .into_iter()
                .map(|(g, (k, n))| {
                    (
                        g,
                        GoalKnowledgeStats {
                            n_with_knowledge: k,
                            n_total: n,
                            ratio: k as f64 / n as f64,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Goal occurrence counts over turns, once per carried goal.
    pub fn goal_distribution(&self) -> BTreeMap<Goal, usize> {
        let mut out = BTreeMap::new();
        for g in self.turns().flat_map(|t| t.goals.iter()) {
            *out.entry(g.clone()).or_insert(0) += 1;
        }
        out
    }

    /// Draws `n` few-shot examples for `task` from distinct dialogues,
    /// uniformly without replacement.
    pub fn sample_shots(
        &self,
        n: usize,
        seed: u64,
        task: TaskKind,
    ) -> Result<Vec<FewShotExample>, CorpusError> {
        self.sample_shots_where(n, seed, |_, gold| match task {
            TaskKind::ResponseGeneration => true,
            TaskKind::Recommendation => !gold.gold_items.is_empty(),
        })
    }

    /// Like [`Corpus::sample_shots`] with a caller-supplied eligibility test
    /// over `(context, gold system turn)`. A dialogue is eligible when any of
    /// its system turns passes; one passing turn per sampled dialogue is then
    /// chosen with the same seeded generator.
    pub fn sample_shots_where<F>(
        &self,
        n: usize,
        seed: u64,
        eligible: F,
    ) -> Result<Vec<FewShotExample>, CorpusError>
    where
        F: Fn(&[Turn], &Turn) -> bool,
    {
        if self.split != Split::Train {
            return Err(CorpusError::WrongSplit {
                expected: Split::Train,
                found: self.split,
            });
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let candidates: Vec<(&Dialogue, Vec<usize>)> = self
            .dialogues
            .iter()
            .filter_map(|d| {
                let turns: Vec<usize> = (1..d.turns.len())
                    .filter(|&j| {
                        d.turns[j].speaker == Speaker::System && eligible(&d.turns[..j], &d.turns[j])
                    })
                    .collect();
                (!turns.is_empty()).then_some((d, turns))
            })
            .collect();
        if candidates.len() < n {
            return Err(CorpusError::InsufficientShots {
                eligible: candidates.len(),
                requested: n,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked = index::sample(&mut rng, candidates.len(), n);
        Ok(picked
            .into_iter()
            .map(|i| {
                let (d, turns) = &candidates[i];
                let j = turns[rng.random_range(0..turns.len())];
                FewShotExample {
                    dialogue_id: d.id.clone(),
                    turn_index: j,
                    context: d.turns[..j].to_vec(),
                    gold: d.turns[j].clone(),
                }
            })
            .collect())
    }
}
