use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{converse, AgentDeps, AgentError, ConverseMode, TurnOutput};
use crate::corpus::{Corpus, DialogueHistory, Split, Turn};
use crate::prompts::{GenerationMode, TaskKind};
use crate::text::{tokenize, TOKENIZER_ID};

use super::metrics::{bleu_n, classification_prf, dist_n, mrr_at_k, ndcg_at_k, token_f1, Prf};
use super::{EvalError, MetricReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Turns scored concurrently; match the model client's in-flight limit.
    pub max_in_flight: usize,
    /// Score only the first `limit` evaluable turns.
    pub limit: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            limit: None,
        }
    }
}

/// One scored turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub parse_failed: bool,
    /// On parse failure, everything but the payload.
    pub output: TurnOutput,
}

fn evaluable(gold: &Turn, mode: ConverseMode, task: TaskKind) -> bool {
    if task == TaskKind::Recommendation && gold.gold_items.is_empty() {
        return false;
    }
    match mode {
        ConverseMode::Generation(m) => {
            (!m.needs_gold_goal() || !gold.goals.is_empty())
                && (!m.needs_gold_knowledge() || !gold.knowledge.is_empty())
        }
        ConverseMode::ChatCrs => true,
    }
}

fn fingerprint(mode: ConverseMode, task: TaskKind, deps: &AgentDeps) -> String {
    format!(
        "mode={mode};task={task};shots={};seed={};pack={};model={};tokenizer={TOKENIZER_ID}",
        deps.shots.len(),
        deps.config.seed,
        deps.pack.id,
        deps.model.name(),
    )
}

/// Scores `mode` on every system turn of `corpus` that carries the gold the
/// task and mode need. See [`run_eval_detailed`].
pub fn run_eval(
    corpus: &Corpus,
    mode: ConverseMode,
    task: TaskKind,
    deps: &AgentDeps,
    config: &EvalConfig,
) -> Result<MetricReport, EvalError> {
    run_eval_detailed(corpus, mode, task, deps, config).map(|(report, _)| report)
}

/// Like [`run_eval`], also returning every turn's output.
///
/// Means are taken over all evaluated turns; a reply that cannot be parsed
/// is scored as an empty response or list. Model transport errors abort the
/// run. Relation-selection metrics are reported for the full pipeline on
/// turns with gold knowledge, goal metrics wherever a goal was predicted.
pub fn run_eval_detailed(
    corpus: &Corpus,
    mode: ConverseMode,
    task: TaskKind,
    deps: &AgentDeps,
    config: &EvalConfig,
) -> Result<(MetricReport, Vec<TurnRecord>), EvalError> {
    if corpus.split() != Split::Test {
        return Err(EvalError::WrongSplit {
            expected: Split::Test,
            found: corpus.split(),
        });
    }
    deps.pack
        .template(mode.template_mode(task), task)
        .map_err(AgentError::from)?;
    let targets: Vec<(String, usize, DialogueHistory)> = corpus
        .system_targets()
        .filter(|(_, _, h)| h.gold_next.as_ref().is_some_and(|g| evaluable(g, mode, task)))
        .map(|(d, j, h)| (d.id.clone(), j, h))
        .take(config.limit.unwrap_or(usize::MAX))
        .collect();
    if targets.is_empty() {
        return Err(EvalError::NoEvaluableTurns);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_in_flight.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let records: Vec<TurnRecord> = pool.install(|| {
        targets
            .par_iter()
            .map(|(id, j, history)| {
                let (output, parse_failed) = match converse(history, task, mode, deps) {
                    Ok(out) => (out, false),
                    Err(AgentError::Unparsable { partial, .. }) => (*partial, true),
                    Err(e) => return Err(EvalError::Agent(e)),
                };
                Ok(TurnRecord {
                    dialogue_id: id.clone(),
                    turn_index: *j,
                    parse_failed,
                    output,
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let golds: Vec<&Turn> = targets
        .iter()
        .map(|(_, _, h)| h.gold_next.as_ref().expect("filtered on gold"))
        .collect();
    let mut per_metric = match task {
        TaskKind::ResponseGeneration => response_metrics(&records, &golds)?,
        TaskKind::Recommendation => recommendation_metrics(&records, &golds)?,
    };
    let mut counts = BTreeMap::new();
    let n_failed = records.iter().filter(|r| r.parse_failed).count() as u64;
    counts.insert("n_total".to_string(), records.len() as u64);
    counts.insert("n_evaluated".to_string(), records.len() as u64 - n_failed);
    counts.insert("n_parse_failed".to_string(), n_failed);

    if mode == ConverseMode::ChatCrs {
        let (preds, gold): (Vec<_>, Vec<_>) = records
            .iter()
            .zip(&golds)
            .filter(|(_, g)| !g.knowledge.is_empty())
            .map(|(r, g)| {
                let pred: BTreeSet<String> = r
                    .output
                    .trace
                    .selections()
                    .map(|(e, rel)| format!("{e} | {rel}"))
                    .collect();
                let gold: BTreeSet<String> = g
                    .knowledge
                    .iter()
                    .map(|t| format!("{} | {}", t.subject(), t.relation()))
                    .collect();
                (pred, gold)
            })
            .unzip();
        counts.insert("n_relation".to_string(), gold.len() as u64);
        if !gold.is_empty() {
            insert_prf(&mut per_metric, "rel", classification_prf(&preds, &gold)?);
        }
    }
    let goal_predicted = matches!(
        (mode, task),
        (ConverseMode::ChatCrs, TaskKind::ResponseGeneration)
            | (ConverseMode::Generation(GenerationMode::CotG), _)
    );
    if goal_predicted {
        let (preds, gold): (Vec<_>, Vec<_>) = records
            .iter()
            .zip(&golds)
            .filter(|(_, g)| !g.goals.is_empty())
            .map(|(r, g)| {
                let predicted = match &r.output.used_goal {
                    Some(p) => p.goals.clone(),
                    None => r.output.predicted_goal.clone().unwrap_or_default(),
                };
                (
                    predicted.into_iter().collect::<BTreeSet<_>>(),
                    g.goals.iter().cloned().collect::<BTreeSet<_>>(),
                )
            })
            .unzip();
        counts.insert("n_goal".to_string(), gold.len() as u64);
        if !gold.is_empty() {
            insert_prf(&mut per_metric, "goal", classification_prf(&preds, &gold)?);
        }
    }

    let report = MetricReport {
        task,
        per_metric,
        counts,
        config_fingerprint: fingerprint(mode, task, deps),
    };
    Ok((report, records))
}

fn insert_prf(out: &mut BTreeMap<String, f64>, prefix: &str, prf: Prf) {
    out.insert(format!("{prefix}_acc"), prf.accuracy);
    out.insert(format!("{prefix}_p"), prf.precision);
    out.insert(format!("{prefix}_r"), prf.recall);
    out.insert(format!("{prefix}_f1"), prf.f1);
}

fn response_metrics(records: &[TurnRecord], golds: &[&Turn]) -> Result<BTreeMap<String, f64>, EvalError> {
    let n = records.len() as f64;
    let mut sums = [0.0f64; 4];
    let mut candidates = Vec::with_capacity(records.len());
    for (r, g) in records.iter().zip(golds) {
        let cand = tokenize(r.output.response.as_deref().unwrap_or(""));
        let reference = tokenize(&g.text);
        sums[0] += bleu_n(&cand, &reference, 1)?;
        sums[1] += bleu_n(&cand, &reference, 2)?;
        sums[2] += bleu_n(&cand, &reference, 4)?;
        sums[3] += token_f1(&cand, &reference)?;
        candidates.push(cand);
    }
    let mut out = BTreeMap::new();
    for (key, sum) in ["bleu1", "bleu2", "bleu", "f1"].into_iter().zip(sums) {
        out.insert(key.to_string(), sum / n);
    }
    // A run whose replies are all empty has no diversity to speak of.
    out.insert("dist1".into(), dist_n(&candidates, 1).unwrap_or(0.0));
    out.insert("dist2".into(), dist_n(&candidates, 2).unwrap_or(0.0));
    Ok(out)
}

fn recommendation_metrics(
    records: &[TurnRecord],
    golds: &[&Turn],
) -> Result<BTreeMap<String, f64>, EvalError> {
    let n = records.len() as f64;
    let mut sums = [0.0f64; 4];
    for (r, g) in records.iter().zip(golds) {
        let items: &[String] = r.output.recommendations.as_ref().map_or(&[], |x| x.items());
        sums[0] += ndcg_at_k(items, &g.gold_items, 10)?;
        sums[1] += ndcg_at_k(items, &g.gold_items, 50)?;
        sums[2] += mrr_at_k(items, &g.gold_items, 10)?;
        sums[3] += mrr_at_k(items, &g.gold_items, 50)?;
    }
    Ok(["ndcg@10", "ndcg@50", "mrr@10", "mrr@50"]
        .into_iter()
        .zip(sums)
        .map(|(k, s)| (k.to_string(), s / n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::corpus::{CorpusHeader, Dialogue, Goal};
    use crate::llm::{FnModel, ScriptedModel};

    fn corpus(split: Split) -> Corpus {
        let dialogues = (0..2)
            .map(|i| Dialogue {
                id: format!("d{i}"),
                turns: vec![
                    Turn::user(format!("Recommend a movie {i}")),
                    Turn::system(format!("Watch Movie {i} tonight"))
                        .with_goals(["Movie recommendation"])
                        .with_items([format!("Movie {i}")]),
                ],
            })
            .collect();
        Corpus::new(
            CorpusHeader {
                name: "fx".into(),
                split,
                goal_inventory: vec![Goal::new("Movie recommendation"), Goal::new("Say goodbye")],
            },
            dialogues,
        )
        .unwrap()
    }

    /// Replies with the gold of whichever fixture dialogue the prompt ends on.
    fn echo() -> AgentDeps {
        AgentDeps::new(Arc::new(FnModel::new("echo", |p: &str| {
            let i = if p.contains("movie 1") { 1 } else { 0 };
            if p.ends_with("The recommendation list is [].") {
                format!("The recommendation list is [Movie {i}].")
            } else {
                format!("The system response is [Watch Movie {i} tonight]")
            }
        })))
    }

    #[test]
    fn echo_oracle_scores_one() {
        let c = corpus(Split::Test);
        let deps = echo();
        let dg = ConverseMode::Generation(GenerationMode::Dg);
        let r = run_eval(&c, dg, TaskKind::ResponseGeneration, &deps, &EvalConfig::default()).unwrap();
        assert_eq!(r.per_metric["bleu1"], 1.0);
        assert_eq!(r.per_metric["f1"], 1.0);
        assert_eq!(r.counts["n_total"], 2);
        let r = run_eval(&c, dg, TaskKind::Recommendation, &deps, &EvalConfig::default()).unwrap();
        assert_eq!(r.per_metric["ndcg@10"], 1.0);
        assert_eq!(r.per_metric["mrr@50"], 1.0);
    }

    #[test]
    fn empty_lists_score_zero() {
        let deps = AgentDeps::new(Arc::new(ScriptedModel::new("The recommendation list is [].")));
        let r = run_eval(
            &corpus(Split::Test),
            GenerationMode::Dg.into(),
            TaskKind::Recommendation,
            &deps,
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(r.per_metric["ndcg@10"], 0.0);
        assert_eq!(r.per_metric["mrr@10"], 0.0);
    }

    #[test]
    fn rank_three_gives_half() {
        let deps = AgentDeps::new(Arc::new(ScriptedModel::new(
            "The recommendation list is [A, B, Movie 0, Movie 1].",
        )));
        let mut c = corpus(Split::Test);
        let mut d: Vec<Dialogue> = c.dialogues().to_vec();
        d.truncate(1);
        c = Corpus::new(c.header(), d).unwrap();
        let r = run_eval(&c, GenerationMode::Dg.into(), TaskKind::Recommendation, &deps, &EvalConfig::default())
            .unwrap();
        assert_eq!(r.per_metric["ndcg@10"], 0.5);
    }

    #[test]
    fn deterministic_and_split_checked() {
        let c = corpus(Split::Test);
        let deps = echo();
        let cfg = EvalConfig {
            max_in_flight: 3,
            limit: None,
        };
        let a = run_eval(&c, GenerationMode::Dg.into(), TaskKind::ResponseGeneration, &deps, &cfg).unwrap();
        let b = run_eval(&c, GenerationMode::Dg.into(), TaskKind::ResponseGeneration, &deps, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.config_fingerprint.contains("model=echo"));
        assert!(matches!(
            run_eval(&corpus(Split::Train), GenerationMode::Dg.into(), TaskKind::ResponseGeneration, &deps, &cfg),
            Err(EvalError::WrongSplit { .. })
        ));
    }

    #[test]
    fn oracle_mode_without_gold_has_nothing_to_score() {
        let r = run_eval(
            &corpus(Split::Test),
            GenerationMode::OracleK.into(),
            TaskKind::ResponseGeneration,
            &echo(),
            &EvalConfig::default(),
        );
        assert!(matches!(r, Err(EvalError::NoEvaluableTurns)));
    }

    #[test]
    fn parse_failures_counted() {
        let mut deps = AgentDeps::new(Arc::new(ScriptedModel::new("gibberish")));
        deps.config.strictness = crate::prompts::Strictness::Strict;
        let r = run_eval(
            &corpus(Split::Test),
            GenerationMode::Dg.into(),
            TaskKind::ResponseGeneration,
            &deps,
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(r.counts["n_parse_failed"], 2);
        assert_eq!(r.counts["n_evaluated"], 0);
        assert_eq!(r.per_metric["bleu1"], 0.0);
        assert!(r.per_metric.values().all(|v| v.is_finite()));
    }
}
