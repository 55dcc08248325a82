//! Turns an [`AppConfig`] into loaded resources.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crs_core::llm::HttpModel;
use crs_core::{
    AgentConfig, AgentDeps, Corpus, GoalBackend, GoalModel, KnowledgeBase, LanguageModel,
    ScriptedModel, Strictness, TemplatePack,
};

use crate::config::{AppConfig, ConfigError, CorpusFiles, GoalConfig, ModelConfig};

/// Failures split by the exit-code contract: bad invocations and unusable
/// configuration exit 2, anything that goes wrong while running exits 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn usage(msg: impl std::fmt::Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn load_kb(path: &Path) -> Result<KnowledgeBase, CliError> {
    KnowledgeBase::load(&read_file(path)?)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn load_corpus(files: &CorpusFiles) -> Result<Corpus, CliError> {
    Corpus::load_files(&files.data, &files.header).map_err(CliError::usage)
}

pub fn build_model(config: &ModelConfig) -> Result<Arc<dyn LanguageModel>, CliError> {
    match config {
        ModelConfig::Http(endpoint) => Ok(Arc::new(
            HttpModel::new(endpoint.clone()).map_err(CliError::usage)?,
        )),
        ModelConfig::Scripted { script } => Ok(Arc::new(
            ScriptedModel::load(script).map_err(CliError::usage)?,
        )),
    }
}

pub fn load_pack(name_or_path: &str) -> Result<TemplatePack, CliError> {
    TemplatePack::resolve(name_or_path).map_err(CliError::usage)
}

/// Resolved resources shared by every subcommand.
pub struct App {
    pub config: AppConfig,
    /// Replaces the configured model (`--script`).
    pub script_override: Option<PathBuf>,
}

impl App {
    pub fn new(config: AppConfig, script_override: Option<PathBuf>) -> Self {
        Self {
            config,
            script_override,
        }
    }

    pub fn model(&self) -> Result<Arc<dyn LanguageModel>, CliError> {
        match &self.script_override {
            Some(script) => build_model(&ModelConfig::Scripted {
                script: script.clone(),
            }),
            None => build_model(&self.config.model),
        }
    }

    pub fn kb(&self, override_path: Option<&Path>) -> Result<Option<KnowledgeBase>, CliError> {
        override_path
            .or(self.config.kb_path.as_deref())
            .map(load_kb)
            .transpose()
    }

    pub fn goal_backend(
        &self,
        model: &Arc<dyn LanguageModel>,
    ) -> Result<Option<GoalBackend>, CliError> {
        Ok(match &self.config.goal {
            GoalConfig::None => None,
            GoalConfig::Local { model_path } => Some(GoalBackend::Local(Arc::new(
                GoalModel::load(model_path).map_err(CliError::usage)?,
            ))),
            GoalConfig::Remote { model: None } => Some(GoalBackend::Remote(Arc::clone(model))),
            GoalConfig::Remote { model: Some(m) } => Some(GoalBackend::Remote(build_model(m)?)),
        })
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            object_cap: self.config.retrieval.cap,
            seed: self.config.seed,
            goal_inventory: self.config.goal_inventory.clone(),
            max_turns: self.config.max_turns,
            strictness: if self.config.strict_parsing {
                Strictness::Strict
            } else {
                Strictness::Lenient
            },
        }
    }

    /// Model, KB, goal backend, pack and agent settings; no shots.
    pub fn deps(&self, kb_override: Option<&Path>) -> Result<AgentDeps, CliError> {
        let model = self.model()?;
        let mut deps = AgentDeps::new(Arc::clone(&model));
        deps.kb = self.kb(kb_override)?.map(Arc::new);
        deps.goal_backend = self.goal_backend(&model)?;
        deps.pack = Arc::new(load_pack(&self.config.template_pack)?);
        deps.config = self.agent_config();
        Ok(deps)
    }
}
