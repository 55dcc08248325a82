use crate::corpus::{DialogueHistory, FewShotExample};
use crate::kb::{KnowledgeBase, KnowledgeTriple};
use crate::llm::LanguageModel;
use crate::prompts::{RelationShot, TemplatePack};

use super::{EntityTrace, RetrievalTrace};

/// Grounds the latest utterance of `history` in `kb`.
///
/// Entities are handled one at a time in order of mention: candidate
/// relations are listed, the model picks one, and the matching triple is
/// fetched with the object cap applied. Any failure is recorded against its
/// entity and the remaining entities are still processed.
pub fn retrieve_knowledge(
    kb: &KnowledgeBase,
    history: &DialogueHistory,
    model: &dyn LanguageModel,
    pack: &TemplatePack,
    shots: &[RelationShot],
    cap: usize,
    seed: u64,
) -> (Vec<KnowledgeTriple>, RetrievalTrace) {
    let mut triples = Vec::new();
    let mut trace = RetrievalTrace::default();
    let Some(latest) = history.latest() else {
        return (triples, trace);
    };
    for entity in kb.extract_entities(&latest.text) {
        let candidates = kb.candidate_relations(&entity);
        let mut step = EntityTrace {
            entity: entity.clone(),
            candidates: candidates.clone(),
            selected: None,
            triple: None,
            failure: None,
            raw_reply: None,
        };
        if candidates.is_empty() {
            step.failure = Some("no candidate relations".into());
            trace.per_entity.push(step);
            continue;
        }
        let outcome = pack
            .render_relation_prompt(&entity, &candidates, history, shots)
            .map_err(|e| e.to_string())
            .and_then(|prompt| model.complete(&prompt).map_err(|e| format!("model: {e}")))
            .and_then(|completion| {
                step.raw_reply = Some(completion.text.clone());
                pack.parse_relation_reply(&completion.text, &candidates)
                    .map_err(|e| e.to_string())
            })
            .and_then(|relation| {
                step.selected = Some(relation.clone());
                kb.fetch_triples(&entity, &relation, cap, seed)
                    .map_err(|e| e.to_string())
            });
        match outcome {
            Ok(triple) => {
                step.triple = Some(triple.clone());
                triples.push(triple);
            }
            Err(reason) => step.failure = Some(reason),
        }
        trace.per_entity.push(step);
    }
    (triples, trace)
}

/// Relation-selection shots from solved examples whose gold knowledge is
/// keyed in `kb`; the first usable triple of each example is used.
pub fn relation_shots_from_examples(examples: &[FewShotExample], kb: &KnowledgeBase) -> Vec<RelationShot> {
    examples
        .iter()
        .filter_map(|ex| {
            ex.gold.knowledge.iter().find_map(|t| {
                kb.lookup(t.subject(), t.relation())?;
                Some(RelationShot {
                    history: ex.context.clone(),
                    entity: t.subject().clone(),
                    candidates: kb.candidate_relations(t.subject()),
                    relation: t.relation().clone(),
                })
            })
        })
        .collect()
}
