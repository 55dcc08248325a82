//! Knowledge-grounded, goal-directed conversational recommendation.
//!
//! The crate is organised around the three cooperating agents and the
//! offline harness used to score them:
//!
//! * [`kb`]: immutable triple store with the candidate-relation and
//!   triple-fetch primitives used by knowledge retrieval.
//! * [`corpus`]: normalized dialogue corpora, few-shot sampling and corpus
//!   analytics (knowledge ratio, goal distribution).
//! * [`prompts`]: in-context-learning prompt rendering and reply parsing.
//! * [`llm`]: model clients (chat-completions over HTTP, scripted backend).
//! * [`agents`]: knowledge retrieval, goal planning and the conversational
//!   agent that composes them.
//! * [`eval`]: generation, ranking and classification metrics plus the batch
//!   evaluation runner.

pub mod agents;
pub mod corpus;
pub mod eval;
pub mod kb;
pub mod llm;
pub mod prompts;
pub mod text;

pub use agents::{
    converse, plan_goal, retrieve_knowledge, train_goal_baseline, AgentConfig, AgentDeps,
    AgentError, ConverseMode, EntityTrace, GoalBackend, GoalModel, GoalPrediction,
    GoalTrainingConfig, GoalTrainingReport, RankedRecommendation, RetrievalTrace, TurnOutput,
};
pub use corpus::{
    Corpus, CorpusError, CorpusHeader, Dialogue, DialogueHistory, FewShotExample, Goal,
    KnowledgeRatioReport, Speaker, Split, Turn,
};
pub use eval::{run_eval, EvalConfig, EvalError, MetricReport};
pub use kb::{EntityId, KbError, KnowledgeBase, KnowledgeKind, KnowledgeTriple, RelationId};
pub use llm::{Completion, LanguageModel, LlmError, ModelEndpointConfig, ScriptedModel};
pub use prompts::{
    GenerationMode, ParsedReply, PromptError, PromptSpec, RelationShot, Strictness, TaskKind,
    TemplatePack,
};
