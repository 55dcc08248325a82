use crate::corpus::{DialogueHistory, Goal, Turn};
use crate::kb::{EntityId, RelationId};

use super::notation::format_knowledge;
use super::pack::{SlotKind, TaskTemplate, TemplatePack};
use super::{PromptError, PromptSpec, RelationShot};

const BLOCK_SEPARATOR: &str = "\n\n";

fn label(base: &str, index: Option<usize>) -> String {
    match index {
        Some(i) => format!("{base} {i}:"),
        None => format!("{base}:"),
    }
}

fn push_history(out: &mut String, turns: &[Turn]) {
    for t in turns {
        out.push_str(&format!("[{}]: {}\n", t.speaker, t.text));
    }
}

fn window(turns: &[Turn], max_turns: Option<usize>) -> &[Turn] {
    match max_turns {
        Some(m) if m < turns.len() => &turns[turns.len() - m..],
        _ => turns,
    }
}

pub(crate) fn goal_list(goals: &[Goal]) -> String {
    let quoted: Vec<String> = goals.iter().map(|g| format!("\"{g}\"")).collect();
    format!("[{}]", quoted.join(", "))
}

fn join_goals(goals: &[Goal], none: &str) -> String {
    if goals.is_empty() {
        return none.to_string();
    }
    goals.iter().map(Goal::as_str).collect::<Vec<_>>().join(", ")
}

struct BlockInputs<'a> {
    turns: &'a [Turn],
    goal: Option<String>,
    knowledge: Option<String>,
    output: String,
}

impl TemplatePack {
    fn instruction(&self, template: &TaskTemplate, spec: &PromptSpec) -> Result<String, PromptError> {
        if !template.instruction.contains("{goal_list}") {
            return Ok(template.instruction.clone());
        }
        let inventory = spec
            .goal_inventory
            .as_deref()
            .ok_or(PromptError::MissingInventory(spec.mode))?;
        if inventory.is_empty() {
            return Err(PromptError::EmptyInventory);
        }
        Ok(template.instruction.replace("{goal_list}", &goal_list(inventory)))
    }

    fn push_block(&self, out: &mut String, instruction: &str, index: Option<usize>, b: BlockInputs<'_>) {
        let l = &self.labels;
        out.push_str(instruction);
        out.push('\n');
        out.push_str(&label(&l.history, index));
        out.push('\n');
        push_history(out, b.turns);
        out.push_str("[system]: \n");
        if let Some(goal) = b.goal {
            out.push_str(&format!("{} {goal}\n", label(&l.goal, index)));
        }
        if let Some(knowledge) = b.knowledge {
            out.push_str(&format!("{} {knowledge}\n", label(&l.knowledge, index)));
        }
        out.push_str(&format!("{} {}", label(&l.output, index), b.output));
    }

    /// Renders the full N-shot prompt for a response or recommendation task.
    pub fn render_prompt(&self, spec: &PromptSpec) -> Result<String, PromptError> {
        let template = self.template(spec.mode, spec.task)?;
        if spec.history.is_empty() {
            return Err(PromptError::EmptyHistory);
        }
        let gold_goal = if spec.mode.needs_gold_goal() {
            match spec.gold_goal.as_deref() {
                Some(g) if !g.is_empty() => Some(join_goals(g, &self.none)),
                _ => {
                    return Err(PromptError::MissingGold {
                        mode: spec.mode,
                        field: "goal",
                    })
                }
            }
        } else {
            None
        };
        let gold_knowledge = if spec.mode.needs_gold_knowledge() {
            match spec.gold_knowledge.as_deref() {
                Some(k) => Some(format_knowledge(k, &self.none)),
                None => {
                    return Err(PromptError::MissingGold {
                        mode: spec.mode,
                        field: "knowledge",
                    })
                }
            }
        } else {
            None
        };
        let instruction = self.instruction(template, spec)?;
        let oracle_goal = spec.mode.needs_gold_goal();
        let oracle_knowledge = spec.mode.needs_gold_knowledge();

        let mut out = String::new();
        for (i, shot) in spec.shots.iter().enumerate() {
            let gold = &shot.gold;
            let values: Vec<String> = template
                .slots
                .iter()
                .map(|slot| match slot {
                    SlotKind::Goal => join_goals(&gold.goals, &self.none),
                    SlotKind::Knowledge => format_knowledge(&gold.knowledge, &self.none),
                    SlotKind::Response => gold.text.clone(),
                    SlotKind::Items => gold.gold_items.join(", "),
                })
                .collect();
            self.push_block(
                &mut out,
                &instruction,
                Some(i + 1),
                BlockInputs {
                    turns: window(&shot.context, spec.max_turns),
                    goal: oracle_goal.then(|| join_goals(&gold.goals, &self.none)),
                    knowledge: oracle_knowledge.then(|| format_knowledge(&gold.knowledge, &self.none)),
                    output: template.fill(&values),
                },
            );
            out.push_str(BLOCK_SEPARATOR);
        }
        let empty = vec![String::new(); template.slots.len()];
        self.push_block(
            &mut out,
            &instruction,
            None,
            BlockInputs {
                turns: spec.history.window(spec.max_turns),
                goal: gold_goal,
                knowledge: gold_knowledge,
                output: template.fill(&empty),
            },
        );
        Ok(out)
    }

    pub fn relation_answer(&self, relation: &RelationId) -> String {
        format!(
            "{} {}{}",
            self.relation.answer_prefix, relation, self.relation.answer_suffix
        )
    }

    pub fn goal_answer(&self, goals: &[Goal]) -> String {
        format!(
            "{} {}{}",
            self.goal.answer_prefix,
            join_goals(goals, &self.none),
            self.goal.answer_suffix
        )
    }

    /// Relation-selection prompt for one entity of the latest utterance.
    pub fn render_relation_prompt(
        &self,
        entity: &EntityId,
        candidates: &[RelationId],
        history: &DialogueHistory,
        shots: &[RelationShot],
    ) -> Result<String, PromptError> {
        if candidates.is_empty() {
            return Err(PromptError::NoCandidates);
        }
        let l = &self.labels;
        let cand_list = |cands: &[RelationId]| {
            let q: Vec<String> = cands
                .iter()
                .map(|c| format!("'{}'", c.as_str().replace('\'', "\\'")))
                .collect();
            format!("[{}]", q.join(", "))
        };
        let mut out = String::new();
        let block = |out: &mut String, index: Option<usize>, turns: &[Turn], e: &EntityId, c: &[RelationId]| {
            out.push_str(&self.relation.instruction);
            out.push('\n');
            out.push_str(&label(&l.history, index));
            out.push('\n');
            push_history(out, turns);
            out.push_str(&format!("{} {e}\n", label(&l.entity, index)));
            out.push_str(&format!("{} {}\n", label(&l.candidates, index), cand_list(c)));
            out.push_str(&label(&l.output, index));
        };
        for (i, shot) in shots.iter().enumerate() {
            block(&mut out, Some(i + 1), &shot.history, &shot.entity, &shot.candidates);
            out.push(' ');
            out.push_str(&self.relation_answer(&shot.relation));
            out.push_str(BLOCK_SEPARATOR);
        }
        block(&mut out, None, &history.turns, entity, candidates);
        Ok(out)
    }

    /// Next-goal planning prompt listing the whole inventory.
    pub fn render_goal_prompt(
        &self,
        history: &DialogueHistory,
        goal_inventory: &[Goal],
    ) -> Result<String, PromptError> {
        if goal_inventory.is_empty() {
            return Err(PromptError::EmptyInventory);
        }
        if history.is_empty() {
            return Err(PromptError::EmptyHistory);
        }
        let mut out = self.goal.instruction.replace("{goal_list}", &goal_list(goal_inventory));
        out.push('\n');
        out.push_str(&label(&self.labels.history, None));
        out.push('\n');
        push_history(&mut out, &history.turns);
        out.push_str(&label(&self.labels.output, None));
        Ok(out)
    }
}
