//! Declarative TOML configuration.
//!
//! ```toml
//! seed = 42
//! n_shots = 3
//! mode = "chatcrs"            # dg | cot-g | cot-k | oracle-g | oracle-k | oracle-both | chatcrs
//! task = "response"           # response | recommendation
//! kb_path = "data/kb.tsv"
//! template_pack = "en"        # en | zh | path to a pack JSON
//!
//! [corpus.train]
//! data = "data/train.jsonl"
//! header = "data/train.header.json"
//!
//! [corpus.test]
//! data = "data/test.jsonl"
//! header = "data/test.header.json"
//!
//! [model]
//! kind = "http"               # or "scripted" with `script = "rules.json"`
//! base_url = "https://api.openai.com/v1"
//! model_name = "gpt-3.5-turbo-1106"
//!
//! [goal]
//! backend = "local"           # local (model_path) | remote ([goal.model]) | none
//! model_path = "goal_model.json"
//!
//! [retrieval]
//! cap = 50
//!
//! [eval]
//! max_in_flight = 4
//!
//! [service]
//! bind = "127.0.0.1:8080"
//! sessions_dir = "sessions"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crs_core::eval::EvalConfig;
use crs_core::llm::ModelEndpointConfig;
use crs_core::Goal;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusFiles {
    pub data: PathBuf,
    pub header: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusPaths {
    pub train: Option<CorpusFiles>,
    pub test: Option<CorpusFiles>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Http(ModelEndpointConfig),
    Scripted { script: PathBuf },
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Http(ModelEndpointConfig::default())
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum GoalConfig {
    #[default]
    None,
    Local { model_path: PathBuf },
    /// A goal model behind the goal-planning prompt; the main model when
    /// no `[goal.model]` table is given.
    Remote {
        #[serde(default)]
        model: Option<ModelConfig>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub cap: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            cap: crs_core::kb::DEFAULT_OBJECT_CAP,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    /// Per-session JSONL logs are appended here when set.
    pub sessions_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            sessions_dir: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub seed: u64,
    pub n_shots: usize,
    pub mode: Option<String>,
    pub task: Option<String>,
    pub kb_path: Option<PathBuf>,
    pub template_pack: String,
    pub max_turns: Option<usize>,
    /// Overrides the inventory declared by the corpus header.
    pub goal_inventory: Vec<Goal>,
    /// Fail on replies that ignore the output template instead of keeping
    /// the raw text as the response.
    pub strict_parsing: bool,
    pub corpus: CorpusPaths,
    pub model: ModelConfig,
    pub goal: GoalConfig,
    pub retrieval: RetrievalConfig,
    pub eval: EvalConfig,
    pub service: ServiceConfig,
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_shots: 0,
            mode: None,
            task: None,
            kb_path: None,
            template_pack: "en".into(),
            max_turns: None,
            goal_inventory: Vec::new(),
            strict_parsing: false,
            corpus: CorpusPaths::default(),
            model: ModelConfig::default(),
            goal: GoalConfig::default(),
            retrieval: RetrievalConfig::default(),
            eval: EvalConfig::default(),
            service: ServiceConfig::default(),
            source: None,
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn rebase_model(base: &Path, m: &mut ModelConfig) {
    if let ModelConfig::Scripted { script } = m {
        rebase(base, script);
    }
}

impl AppConfig {
    pub fn from_toml(source: &str) -> Result<Self, ConfigError> {
        toml::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads, rebases relative paths onto the file's directory and checks
    /// that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&src)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        cfg.source = Some(path.to_path_buf());
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        if let Some(p) = &mut self.kb_path {
            rebase(base, p);
        }
        for files in [&mut self.corpus.train, &mut self.corpus.test].into_iter().flatten() {
            rebase(base, &mut files.data);
            rebase(base, &mut files.header);
        }
        rebase_model(base, &mut self.model);
        match &mut self.goal {
            GoalConfig::Local { model_path } => rebase(base, model_path),
            GoalConfig::Remote { model: Some(m) } => rebase_model(base, m),
            _ => {}
        }
        if let Some(dir) = &mut self.service.sessions_dir {
            rebase(base, dir);
        }
        if !matches!(self.template_pack.as_str(), "en" | "zh") {
            let mut p = PathBuf::from(&self.template_pack);
            rebase(base, &mut p);
            self.template_pack = p.display().to_string();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut files: Vec<&Path> = Vec::new();
        files.extend(self.kb_path.as_deref());
        for f in [&self.corpus.train, &self.corpus.test].into_iter().flatten() {
            files.push(&f.data);
            files.push(&f.header);
        }
        if let ModelConfig::Scripted { script } = &self.model {
            files.push(script);
        }
        match &self.goal {
            GoalConfig::Local { model_path } => files.push(model_path),
            GoalConfig::Remote {
                model: Some(ModelConfig::Scripted { script }),
            } => files.push(script),
            _ => {}
        }
        if let Some(missing) = files.into_iter().find(|p| !p.is_file()) {
            return Err(ConfigError::Missing(format!(
                "referenced file does not exist: {}",
                missing.display()
            )));
        }
        if self.retrieval.cap == 0 {
            return Err(ConfigError::Invalid("retrieval.cap must be positive".into()));
        }
        if self.eval.max_in_flight == 0 {
            return Err(ConfigError::Invalid("eval.max_in_flight must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_parses() {
        let cfg = AppConfig::from_toml(
            r#"
seed = 7
n_shots = 3
mode = "chatcrs"
kb_path = "kb.tsv"

[corpus.test]
data = "t.jsonl"
header = "t.json"

[model]
kind = "http"
base_url = "http://localhost:9/v1"
max_retries = 1

[goal]
backend = "remote"

[goal.model]
kind = "scripted"
script = "goal.json"

[service]
bind = "0.0.0.0:9000"
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        match &cfg.model {
            ModelConfig::Http(e) => {
                assert_eq!(e.max_retries, 1);
                assert_eq!(e.backoff.base_ms, 500);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            cfg.goal,
            GoalConfig::Remote {
                model: Some(ModelConfig::Scripted { .. })
            }
        ));
        assert_eq!(cfg.service.bind, "0.0.0.0:9000");
    }

    #[test]
    fn defaults_and_unknown_keys() {
        let cfg = AppConfig::from_toml("").unwrap();
        assert_eq!(cfg.template_pack, "en");
        assert_eq!(cfg.retrieval.cap, 50);
        assert!(matches!(cfg.goal, GoalConfig::None));
        assert!(AppConfig::from_toml("sed = 1").is_err());
    }

    #[test]
    fn missing_files_rejected_and_paths_rebased() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("crs.toml");
        std::fs::write(&path, "kb_path = \"kb.tsv\"\n").unwrap();
        assert!(matches!(AppConfig::load(&path), Err(ConfigError::Missing(_))));
        std::fs::write(dir.path().join("kb.tsv"), "a\tb\tc\n").unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.kb_path.unwrap(), dir.path().join("kb.tsv"));
    }
}
