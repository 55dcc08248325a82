use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueHistory, FewShotExample, Goal};
use crate::kb::{KnowledgeBase, KnowledgeTriple, DEFAULT_OBJECT_CAP};
use crate::llm::LanguageModel;
use crate::prompts::{
    GenerationMode, ParsedReply, PromptError, PromptSpec, RelationShot, Strictness, TaskKind,
    TemplatePack,
};

use super::goal::{plan_goal, GoalBackend};
use super::retrieval::retrieve_knowledge;
use super::{AgentError, GoalPrediction, RankedRecommendation, RetrievalTrace};

/// An analysis mode, or the full agent pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConverseMode {
    Generation(GenerationMode),
    /// Retrieved knowledge and planned goal fed through the oracle templates.
    ChatCrs,
}

impl ConverseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConverseMode::Generation(m) => m.as_str(),
            ConverseMode::ChatCrs => "chatcrs",
        }
    }

    /// The template set used to render prompts for `task`.
    pub fn template_mode(self, task: TaskKind) -> GenerationMode {
        match (self, task) {
            (ConverseMode::Generation(m), _) => m,
            (ConverseMode::ChatCrs, TaskKind::ResponseGeneration) => GenerationMode::OracleBoth,
            (ConverseMode::ChatCrs, TaskKind::Recommendation) => GenerationMode::OracleK,
        }
    }
}

impl fmt::Display for ConverseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConverseMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "chatcrs" | "chat-crs" => Ok(ConverseMode::ChatCrs),
            _ => s.parse().map(ConverseMode::Generation),
        }
    }
}

impl From<GenerationMode> for ConverseMode {
    fn from(m: GenerationMode) -> Self {
        ConverseMode::Generation(m)
    }
}

impl Serialize for ConverseMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ConverseMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Object cap applied when fetching item-based triples.
    pub object_cap: usize,
    pub seed: u64,
    /// Offered to goal-aware prompts and remote goal planners.
    pub goal_inventory: Vec<Goal>,
    pub max_turns: Option<usize>,
    pub strictness: Strictness,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            object_cap: DEFAULT_OBJECT_CAP,
            seed: 0,
            goal_inventory: Vec::new(),
            max_turns: None,
            strictness: Strictness::default(),
        }
    }
}

#[derive(Clone)]
pub struct AgentDeps {
    pub kb: Option<Arc<KnowledgeBase>>,
    pub model: Arc<dyn LanguageModel>,
    pub goal_backend: Option<GoalBackend>,
    pub shots: Vec<FewShotExample>,
    pub relation_shots: Vec<RelationShot>,
    pub pack: Arc<TemplatePack>,
    pub config: AgentConfig,
}

impl AgentDeps {
    pub fn new(model: Arc<dyn LanguageModel>) -> Self {
        Self {
            kb: None,
            model,
            goal_backend: None,
            shots: Vec::new(),
            relation_shots: Vec::new(),
            pack: Arc::new(TemplatePack::default_pack().clone()),
            config: AgentConfig::default(),
        }
    }
}

/// One system turn with its full provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnOutput {
    pub kind: TaskKind,
    pub response: Option<String>,
    pub recommendations: Option<RankedRecommendation>,
    pub used_goal: Option<GoalPrediction>,
    pub used_knowledge: Vec<KnowledgeTriple>,
    /// Goals or triples the model wrote out itself (COT modes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_goal: Option<Vec<Goal>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_knowledge: Option<Vec<KnowledgeTriple>>,
    pub trace: RetrievalTrace,
    pub prompt: String,
    pub raw_reply: String,
}

fn gold_prediction(goals: &[Goal]) -> GoalPrediction {
    GoalPrediction {
        goals: goals.to_vec(),
        scores: goals.iter().map(|g| (g.clone(), 1.0)).collect(),
    }
}

/// Produces the next system turn for `task`.
///
/// Analysis modes render their prompt directly (oracle inputs come from
/// `history.gold_next`). [`ConverseMode::ChatCrs`] first retrieves knowledge
/// for the latest utterance and, for responses, plans the next goal, then
/// renders the oracle template with those in place of gold annotations.
pub fn converse(
    history: &DialogueHistory,
    task: TaskKind,
    mode: ConverseMode,
    deps: &AgentDeps,
) -> Result<TurnOutput, AgentError> {
    if history.is_empty() {
        return Err(AgentError::EmptyHistory);
    }
    let cfg = &deps.config;
    let template_mode = mode.template_mode(task);
    let mut spec = PromptSpec::new(template_mode, task, history.clone());
    spec.shots = deps.shots.clone();
    spec.max_turns = cfg.max_turns;
    if !cfg.goal_inventory.is_empty() {
        spec.goal_inventory = Some(cfg.goal_inventory.clone());
    }

    let mut trace = RetrievalTrace::default();
    let mut used_goal = None;
    let used_knowledge;
    match mode {
        ConverseMode::ChatCrs => {
            let kb = deps.kb.as_deref().ok_or(AgentError::MissingDependency {
                mode: mode.to_string(),
                what: "a knowledge base",
            })?;
            let goal_backend = match task {
                TaskKind::ResponseGeneration => {
                    Some(deps.goal_backend.as_ref().ok_or(AgentError::MissingDependency {
                        mode: mode.to_string(),
                        what: "a goal backend",
                    })?)
                }
                TaskKind::Recommendation => None,
            };
            let (triples, t) = retrieve_knowledge(
                kb,
                history,
                deps.model.as_ref(),
                &deps.pack,
                &deps.relation_shots,
                cfg.object_cap,
                cfg.seed,
            );
            trace = t;
            if let Some(backend) = goal_backend {
                let prediction = plan_goal(history, backend, &cfg.goal_inventory, &deps.pack)?;
                spec.gold_goal = Some(prediction.goals.clone());
                used_goal = Some(prediction);
            }
            spec.gold_knowledge = Some(triples.clone());
            used_knowledge = triples;
        }
        ConverseMode::Generation(m) => {
            spec = spec.with_gold_from_history();
            if m.needs_gold_goal() {
                used_goal = spec.gold_goal.as_deref().map(gold_prediction);
            }
            used_knowledge = if m.needs_gold_knowledge() {
                spec.gold_knowledge.clone().unwrap_or_default()
            } else {
                Vec::new()
            };
        }
    }

    let prompt = deps.pack.render_prompt(&spec)?;
    let raw = deps.model.complete(&prompt)?.text;
    let mut out = TurnOutput {
        kind: task,
        response: None,
        recommendations: None,
        used_goal,
        used_knowledge,
        predicted_goal: None,
        predicted_knowledge: None,
        trace,
        prompt,
        raw_reply: raw.clone(),
    };
    let parsed: Result<ParsedReply, PromptError> = match task {
        TaskKind::ResponseGeneration => deps.pack.parse_response_reply(&raw, template_mode, cfg.strictness),
        TaskKind::Recommendation => deps.pack.parse_recommendation_full(&raw, template_mode),
    };
    let parsed = match parsed {
        Ok(p) => p,
        Err(PromptError::Unparsable { raw }) => {
            return Err(AgentError::Unparsable {
                raw,
                partial: Box::new(out),
            })
        }
        Err(e) => return Err(e.into()),
    };
    if matches!(mode, ConverseMode::Generation(m) if !m.needs_gold_goal()) {
        out.predicted_goal = parsed.predicted_goal;
    }
    if matches!(mode, ConverseMode::Generation(m) if !m.needs_gold_knowledge()) {
        out.predicted_knowledge = parsed.predicted_knowledge;
    }
    match task {
        TaskKind::ResponseGeneration => out.response = Some(parsed.response.unwrap_or_default()),
        TaskKind::Recommendation => {
            out.recommendations = Some(RankedRecommendation::new(
                parsed.recommendations.unwrap_or_default(),
            ))
        }
    }
    Ok(out)
}
