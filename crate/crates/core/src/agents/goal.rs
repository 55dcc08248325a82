use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DialogueHistory, Goal, Turn};
use crate::llm::LanguageModel;
use crate::prompts::{PromptError, TemplatePack};
use crate::text::tokenize;

use super::{AgentError, GoalPrediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GoalTrainingConfig {
    /// Number of preceding turns whose tokens form the features.
    pub context_window: usize,
    pub l2: f64,
    pub max_epochs: usize,
    pub initial_step: f64,
    /// Sufficient-decrease constant of the backtracking line search.
    pub armijo_c: f64,
    /// Training stops once the gradient norm falls below this.
    pub tolerance: f64,
    pub threshold: f64,
}

impl Default for GoalTrainingConfig {
    fn default() -> Self {
        Self {
            context_window: 4,
            l2: 1e-4,
            max_epochs: 300,
            initial_step: 1.0,
            armijo_c: 1e-4,
            tolerance: 1e-6,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalTrainingReport {
    pub n_examples: usize,
    pub epochs: usize,
    /// Mean negative log-likelihood before the first step and after each epoch.
    pub nll_history: Vec<f64>,
    /// `nll_history` plus the L2 penalty; this is what the optimizer minimizes.
    pub objective_history: Vec<f64>,
    pub final_nll: f64,
}

/// Linear goal classifier over binary bag-of-token features.
///
/// Single-goal corpora get a softmax over the inventory; corpora with
/// multi-goal turns get one logistic classifier per goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalModel {
    pub inventory: Vec<Goal>,
    pub feature_vocab: Vec<String>,
    /// One row per inventory goal, one column per vocabulary entry.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub threshold: f64,
    pub context_window: usize,
    #[serde(default)]
    pub multi_label: bool,
}

impl GoalModel {
    pub fn from_json(source: &str) -> Result<Self, AgentError> {
        let model: GoalModel =
            serde_json::from_str(source).map_err(|e| AgentError::GoalModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("goal model serializes")
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| AgentError::GoalModel(format!("{}: {e}", path.display())))?;
        Self::from_json(&src)
    }

    fn validate(&self) -> Result<(), AgentError> {
        let k = self.inventory.len();
        let v = self.feature_vocab.len();
        if k < 2 {
            return Err(AgentError::InventoryTooSmall(k));
        }
        if self.bias.len() != k || self.weights.len() != k || self.weights.iter().any(|r| r.len() != v) {
            return Err(AgentError::GoalModel(format!(
                "weights must be {k}x{v} with {k} biases"
            )));
        }
        if !self.feature_vocab.windows(2).all(|w| w[0] < w[1]) {
            return Err(AgentError::GoalModel("feature_vocab must be sorted and unique".into()));
        }
        if self.context_window == 0 {
            return Err(AgentError::GoalModel("context_window must be positive".into()));
        }
        Ok(())
    }

    fn features(&self, turns: &[Turn]) -> Vec<usize> {
        featurize(turns, self.context_window, |tok| {
            self.feature_vocab.binary_search_by(|v| v.as_str().cmp(tok)).ok()
        })
    }

    /// Raw class scores for the goal of the turn following `turns`.
    pub fn logits(&self, turns: &[Turn]) -> Vec<f64> {
        let x = self.features(turns);
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + x.iter().map(|&f| row[f]).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, history: &DialogueHistory) -> GoalPrediction {
        let z = self.logits(&history.turns);
        let top = argmax(&z);
        let (goals, scores): (Vec<usize>, Vec<f64>) = if self.multi_label {
            let p: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
            let mut picked: Vec<usize> = (0..p.len()).filter(|&k| p[k] > self.threshold).collect();
            if picked.is_empty() {
                picked.push(top);
            }
            (picked, p)
        } else {
            let lse = log_sum_exp(&z);
            (vec![top], z.iter().map(|v| v - lse).collect())
        };
        GoalPrediction {
            goals: goals.iter().map(|&k| self.inventory[k].clone()).collect(),
            scores: goals
                .iter()
                .map(|&k| (self.inventory[k].clone(), scores[k]))
                .collect(),
        }
    }
}

fn featurize(turns: &[Turn], window: usize, index: impl Fn(&str) -> Option<usize>) -> Vec<usize> {
    let start = turns.len().saturating_sub(window);
    let set: BTreeSet<usize> = turns[start..]
        .iter()
        .flat_map(|t| tokenize(&t.text))
        .filter_map(|tok| index(&tok))
        .collect();
    set.into_iter().collect()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = k;
        }
    }
    best
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

struct Problem {
    xs: Vec<Vec<usize>>,
    ys: Vec<Vec<usize>>,
    k: usize,
    v: usize,
    multi: bool,
    l2: f64,
}

impl Problem {
    fn stride(&self) -> usize {
        self.v + 1
    }

    fn logits(&self, theta: &[f64], x: &[usize]) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let row = &theta[c * self.stride()..(c + 1) * self.stride()];
                row[self.v] + x.iter().map(|&f| row[f]).sum::<f64>()
            })
            .collect()
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        let s = self.stride();
        0.5 * self.l2
            * theta
                .iter()
                .enumerate()
                .filter(|(i, _)| i % s != self.v)
                .map(|(_, w)| w * w)
                .sum::<f64>()
    }

    /// Mean NLL, and optionally its gradient with the L2 term included.
    fn evaluate(&self, theta: &[f64], grad: Option<&mut Vec<f64>>) -> f64 {
        let n = self.xs.len() as f64;
        let s = self.stride();
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut nll = 0.0;
        for (x, y) in self.xs.iter().zip(&self.ys) {
            let z = self.logits(theta, x);
            let dz: Vec<f64> = if self.multi {
                let mut d = vec![0.0; self.k];
                for c in 0..self.k {
                    let target = if y.contains(&c) { 1.0 } else { 0.0 };
                    nll += softplus(z[c]) - target * z[c];
                    d[c] = sigmoid(z[c]) - target;
                }
                d
            } else {
                let lse = log_sum_exp(&z);
                nll += lse - z[y[0]];
                let mut d: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
                d[y[0]] -= 1.0;
                d
            };
            if let Some(g) = g.as_deref_mut() {
                for (c, d) in dz.iter().enumerate() {
                    let d = d / n;
                    g[c * s + self.v] += d;
                    for &f in x {
                        g[c * s + f] += d;
                    }
                }
            }
        }
        if let Some(g) = g {
            for (i, w) in theta.iter().enumerate() {
                if i % s != self.v {
                    g[i] += self.l2 * w;
                }
            }
        }
        nll / n
    }
}

/// Fits a [`GoalModel`] predicting each annotated turn's goals from the
/// preceding `context_window` turns.
///
/// Full-batch gradient descent with backtracking line search from a zero
/// start, so the run is fully deterministic and the regularized objective
/// never increases between epochs.
pub fn train_goal_baseline(
    corpus: &Corpus,
    config: &GoalTrainingConfig,
) -> Result<(GoalModel, GoalTrainingReport), AgentError> {
    if config.context_window == 0 {
        return Err(AgentError::GoalModel("context_window must be positive".into()));
    }
    let inventory = corpus.goal_inventory().to_vec();
    if inventory.len() < 2 {
        return Err(AgentError::InventoryTooSmall(inventory.len()));
    }
    if !corpus.has_goal_annotations() {
        return Err(AgentError::NoGoalAnnotations);
    }
    let goal_index: BTreeMap<&Goal, usize> = inventory.iter().enumerate().map(|(i, g)| (g, i)).collect();

    let mut contexts: Vec<&[Turn]> = Vec::new();
    let mut ys: Vec<Vec<usize>> = Vec::new();
    for d in corpus.dialogues() {
        for j in 1..d.turns.len() {
            let goals = &d.turns[j].goals;
            if goals.is_empty() {
                continue;
            }
            contexts.push(&d.turns[..j]);
            ys.push(goals.iter().filter_map(|g| goal_index.get(g).copied()).collect());
        }
    }
    if contexts.is_empty() {
        return Err(AgentError::NoGoalAnnotations);
    }
    let multi = ys.iter().any(|y| y.len() > 1);

    let vocab: Vec<String> = contexts
        .iter()
        .flat_map(|c| {
            let start = c.len().saturating_sub(config.context_window);
            c[start..].iter().flat_map(|t| tokenize(&t.text))
        })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let xs: Vec<Vec<usize>> = contexts
        .iter()
        .map(|c| {
            featurize(c, config.context_window, |tok| {
                vocab.binary_search_by(|v| v.as_str().cmp(tok)).ok()
            })
        })
        .collect();

    let problem = Problem {
        k: inventory.len(),
        v: vocab.len(),
        xs,
        ys,
        multi,
        l2: config.l2,
    };
    let dim = problem.k * problem.stride();
    let mut theta = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut nll = problem.evaluate(&theta, Some(&mut grad));
    let mut objective = nll + problem.penalty(&theta);
    let mut nll_history = vec![nll];
    let mut objective_history = vec![objective];
    let mut step = config.initial_step;
    let mut epochs = 0;

    'epochs: for _ in 0..config.max_epochs {
        let gn2: f64 = grad.iter().map(|g| g * g).sum();
        if gn2.sqrt() < config.tolerance {
            break;
        }
        let mut candidate = vec![0.0; dim];
        loop {
            for i in 0..dim {
                candidate[i] = theta[i] - step * grad[i];
            }
            let c_nll = problem.evaluate(&candidate, None);
            let c_obj = c_nll + problem.penalty(&candidate);
            if c_obj <= objective - config.armijo_c * step * gn2 {
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                break 'epochs;
            }
        }
        theta = candidate;
        nll = problem.evaluate(&theta, Some(&mut grad));
        objective = nll + problem.penalty(&theta);
        nll_history.push(nll);
        objective_history.push(objective);
        epochs += 1;
        step = (step * 2.0).min(config.initial_step * 64.0);
    }

    let s = problem.stride();
    let model = GoalModel {
        weights: (0..problem.k)
            .map(|c| theta[c * s..c * s + problem.v].to_vec())
            .collect(),
        bias: (0..problem.k).map(|c| theta[c * s + problem.v]).collect(),
        inventory,
        feature_vocab: vocab,
        threshold: config.threshold,
        context_window: config.context_window,
        multi_label: multi,
    };
    let report = GoalTrainingReport {
        n_examples: problem.xs.len(),
        epochs,
        nll_history,
        objective_history,
        final_nll: nll,
    };
    Ok((model, report))
}

/// Where goal predictions come from.
#[derive(Clone)]
pub enum GoalBackend {
    Local(Arc<GoalModel>),
    /// A model answering the goal-planning prompt.
    Remote(Arc<dyn LanguageModel>),
}

impl std::fmt::Debug for GoalBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GoalBackend::Local(_) => f.write_str("GoalBackend::Local"),
            GoalBackend::Remote(m) => write!(f, "GoalBackend::Remote({})", m.name()),
        }
    }
}

/// Predicts the goal(s) of the next system turn. A local model predicts over
/// its own inventory; a remote model is offered `inventory` and its reply
/// must name one of those goals.
pub fn plan_goal(
    history: &DialogueHistory,
    backend: &GoalBackend,
    inventory: &[Goal],
    pack: &TemplatePack,
) -> Result<GoalPrediction, AgentError> {
    if history.is_empty() {
        return Err(AgentError::EmptyHistory);
    }
    match backend {
        GoalBackend::Local(model) => Ok(model.predict(history)),
        GoalBackend::Remote(model) => {
            if inventory.is_empty() {
                return Err(PromptError::EmptyInventory.into());
            }
            let prompt = pack.render_goal_prompt(history, inventory)?;
            let reply = model.complete(&prompt)?;
            let goals = pack.parse_goal_reply(&reply.text, inventory)?;
            Ok(GoalPrediction {
                scores: goals.iter().map(|g| (g.clone(), 1.0)).collect(),
                goals,
            })
        }
    }
}
