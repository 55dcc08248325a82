use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{GenerationMode, PromptError, TaskKind};

const EN_PACK: &str = include_str!("../../templates/en.json");
const ZH_PACK: &str = include_str!("../../templates/zh.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Goal,
    Knowledge,
    Response,
    Items,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub history: String,
    pub goal: String,
    pub knowledge: String,
    pub output: String,
    pub entity: String,
    pub candidates: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub mode: GenerationMode,
    pub task: TaskKind,
    /// May contain `{goal_list}`.
    pub instruction: String,
    /// Literal text with one `[]` per entry of `slots`.
    pub output_template: String,
    pub slots: Vec<SlotKind>,
}

impl TaskTemplate {
    /// Literal pieces around the `[]` slots; always `slots.len() + 1` long.
    pub fn segments(&self) -> Vec<&str> {
        self.output_template.split("[]").collect()
    }

    /// The output template with each slot replaced by `[value]`.
    pub fn fill(&self, values: &[String]) -> String {
        let segs = self.segments();
        let mut out = String::from(segs[0]);
        for (value, seg) in values.iter().zip(&segs[1..]) {
            out.push('[');
            out.push_str(value);
            out.push(']');
            out.push_str(seg);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTemplate {
    /// May contain `{goal_list}`.
    pub instruction: String,
    pub answer_prefix: String,
    #[serde(default)]
    pub answer_suffix: String,
}

/// Instruction wording and output templates for every supported
/// (mode, task) pair plus the relation-selection and goal-planning prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplatePack {
    pub id: String,
    /// False for packs whose wording is not taken from a published source.
    pub canonical: bool,
    pub labels: Labels,
    pub none: String,
    pub recommendation_marker: String,
    pub tasks: Vec<TaskTemplate>,
    pub relation: AgentTemplate,
    pub goal: AgentTemplate,
}

impl TemplatePack {
    pub fn from_json(source: &str) -> Result<Self, PromptError> {
        let pack: TemplatePack =
            serde_json::from_str(source).map_err(|e| PromptError::Pack(e.to_string()))?;
        pack.validate()?;
        Ok(pack)
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| PromptError::Pack(format!("{}: {e}", path.display())))?;
        Self::from_json(&src)
    }

    /// `"en"` or `"zh"` for the bundled packs, otherwise a file path.
    pub fn resolve(name_or_path: &str) -> Result<Self, PromptError> {
        match name_or_path {
            "en" => Ok(Self::default_pack().clone()),
            "zh" => Self::from_json(ZH_PACK),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn default_pack() -> &'static TemplatePack {
        static PACK: OnceLock<TemplatePack> = OnceLock::new();
        PACK.get_or_init(|| TemplatePack::from_json(EN_PACK).expect("bundled pack is valid"))
    }

    fn validate(&self) -> Result<(), PromptError> {
        for t in &self.tasks {
            let n = t.output_template.matches("[]").count();
            if n != t.slots.len() {
                return Err(PromptError::Pack(format!(
                    "{}/{}: template has {n} slots, {} declared",
                    t.mode,
                    t.task,
                    t.slots.len()
                )));
            }
            let payload = match t.task {
                TaskKind::ResponseGeneration => SlotKind::Response,
                TaskKind::Recommendation => SlotKind::Items,
            };
            if t.slots.last() != Some(&payload) {
                return Err(PromptError::Pack(format!(
                    "{}/{}: last slot must be {payload:?}",
                    t.mode, t.task
                )));
            }
        }
        Ok(())
    }

    pub fn template(&self, mode: GenerationMode, task: TaskKind) -> Result<&TaskTemplate, PromptError> {
        self.tasks
            .iter()
            .find(|t| t.mode == mode && t.task == task)
            .ok_or(PromptError::Unsupported { mode, task })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_packs_validate() {
        let en = TemplatePack::default_pack();
        assert!(en.canonical);
        assert_eq!(en.tasks.len(), 9);
        let zh = TemplatePack::resolve("zh").unwrap();
        assert!(!zh.canonical);
        assert_eq!(zh.tasks.len(), 9);
    }

    #[test]
    fn goal_modes_have_no_recommendation_template() {
        let en = TemplatePack::default_pack();
        for mode in [GenerationMode::CotG, GenerationMode::OracleG, GenerationMode::OracleBoth] {
            assert_eq!(
                en.template(mode, TaskKind::Recommendation).unwrap_err(),
                PromptError::Unsupported {
                    mode,
                    task: TaskKind::Recommendation
                }
            );
        }
    }

    #[test]
    fn slot_count_mismatch_rejected() {
        let mut pack = TemplatePack::default_pack().clone();
        pack.tasks[0].output_template = "no slots here".into();
        let json = serde_json::to_string(&pack).unwrap();
        assert!(TemplatePack::from_json(&json).is_err());
    }

    #[test]
    fn fill_places_values_in_order() {
        let en = TemplatePack::default_pack();
        let t = en.template(GenerationMode::OracleBoth, TaskKind::ResponseGeneration).unwrap();
        assert_eq!(
            t.fill(&["G".into(), "K".into(), "R".into()]),
            "The predicted dialogue goal is [G], the predicted knowledge is [K] and the system response is [R]"
        );
    }
}
