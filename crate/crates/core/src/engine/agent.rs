//! The act-observe-learn loop.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::HistoryBuffer;
use super::learner::Predictor;
use super::policy::{distify, normalize_map, sample_index, subsample_actions, var_argmax, DistFamily};
use crate::backbone::EncodingCache;
use crate::diffcore::{sigmoid, sigmoid_cross_entropy_value, Pick};
use crate::env::{ActionPoint, InstancePool, ScheduledStream, Screen, Split, TaskSpec, TouchStream};
use crate::error::{Error, Result};
use crate::seed;
use crate::zoo::ModuleInput;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub candidates: usize,
    pub family: DistFamily,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Environment steps per optimiser update.
    pub batch: usize,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            candidates: 512,
            family: DistFamily::Identity,
            tie_break: TieBreak::LowestIndex,
            batch: 32,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates < 2 {
            return Err(Error::Config(format!("need at least 2 candidates, got {}", self.candidates)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        self.family.validate()
    }
}

/// Everything needed to re-evaluate one executed action later.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredInput {
    pub scene: Vec<f64>,
    pub spatial: Vec<f64>,
    pub action: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RewardMapSample {
    pub candidates: Vec<ActionPoint>,
    /// `candidates × k_f`, row-major.
    pub logits: Vec<f64>,
    /// One distribution over the candidates per horizon offset.
    pub probabilities: Vec<Vec<f64>>,
    pub chosen_map: usize,
    /// Offsets whose map had zero mass and fell back to uniform.
    pub uniform_fallbacks: Vec<usize>,
}

impl RewardMapSample {
    /// Predicted reward `σ(logit)` of every candidate for offset `j`.
    pub fn map(&self, j: usize) -> Vec<f64> {
        let k_f = self.probabilities.len();
        self.logits.iter().skip(j).step_by(k_f).map(|&z| sigmoid(z)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct PendingPrediction {
    pub step: u64,
    pub action: ActionPoint,
    pub logits: Vec<f64>,
    pub input: Arc<StoredInput>,
    retired: usize,
}

impl PendingPrediction {
    pub fn retired(&self) -> usize {
        self.retired
    }
}

/// One supervised logit: the reward seen `offset` steps after `step`.
#[derive(Clone, Debug)]
pub struct LossTerm {
    pub step: u64,
    pub offset: usize,
    pub target: f64,
    /// Cross-entropy of the logit as it was when the action was chosen.
    pub loss: f64,
    pub input: Arc<StoredInput>,
}

/// Builds the candidate batch for the current history.
pub fn candidate_input(history: &HistoryBuffer, candidates: &[ActionPoint], screen: Screen) -> ModuleInput {
    let mut actions = Vec::with_capacity(candidates.len() * (3 * history.k_b() + 2));
    for c in candidates {
        history.action_row(c.normalized(screen), &mut actions);
    }
    ModuleInput {
        scene: history.scene_vector(),
        spatial: history.spatial(),
        scene_rows: 1,
        actions,
        rows: candidates.len(),
    }
}

/// Samples candidates, predicts their maps, and draws an action from the
/// highest-variance map.
pub fn choose_action<P: Predictor + ?Sized>(
    predictor: &P,
    history: &HistoryBuffer,
    policy: &PolicyConfig,
    screen: Screen,
    rng: &mut ChaCha8Rng,
    step: u64,
) -> Result<(ActionPoint, RewardMapSample, PendingPrediction)> {
    let candidates = subsample_actions(screen, policy.candidates, rng)?;
    let input = candidate_input(history, &candidates, screen);
    let logits = predictor.predict(&input)?;
    let k_f = predictor.k_f();
    if logits.len() != candidates.len() * k_f {
        return Err(Error::Input(format!(
            "predictor returned {} logits for {} candidates × {k_f}",
            logits.len(),
            candidates.len()
        )));
    }
    let mut probabilities = Vec::with_capacity(k_f);
    let mut uniform_fallbacks = Vec::new();
    for j in 0..k_f {
        let m: Vec<f64> = logits.iter().skip(j).step_by(k_f).map(|&z| sigmoid(z)).collect();
        let (p, fell_back) = distify(&normalize_map(&m), policy.family);
        if fell_back {
            uniform_fallbacks.push(j);
        }
        probabilities.push(p);
    }
    let chosen_map = var_argmax(&probabilities);
    let c = sample_index(&probabilities[chosen_map], rng);
    let action = candidates[c];
    let width = input.actions.len() / candidates.len();
    let pending = PendingPrediction {
        step,
        action,
        logits: logits[c * k_f..(c + 1) * k_f].to_vec(),
        input: Arc::new(StoredInput {
            scene: input.scene,
            spatial: input.spatial,
            action: input.actions[c * width..(c + 1) * width].to_vec(),
        }),
        retired: 0,
    };
    let sample = RewardMapSample {
        candidates,
        logits,
        probabilities,
        chosen_map,
        uniform_fallbacks,
    };
    Ok((action, sample, pending))
}

/// Pairs the reward of the newest pending prediction's step with offset `j`
/// of the prediction issued `j` steps earlier. `pending` is ordered oldest
/// first; fully retired predictions are dropped.
pub fn record_reward(r: f64, pending: &mut VecDeque<PendingPrediction>, k_f: usize) -> Result<Vec<LossTerm>> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Environment(format!("reward {r} outside [0, 1]")));
    }
    let Some(now) = pending.back().map(|p| p.step) else {
        return Ok(Vec::new());
    };
    let mut terms = Vec::new();
    for p in pending.iter_mut().rev() {
        let offset = (now - p.step) as usize;
        if offset >= k_f {
            break;
        }
        if p.retired != offset {
            return Err(Error::Input(format!(
                "prediction from step {} already retired {} offsets, expected {offset}",
                p.step, p.retired
            )));
        }
        p.retired += 1;
        terms.push(LossTerm {
            step: p.step,
            offset,
            target: r,
            loss: sigmoid_cross_entropy_value(p.logits[offset], r)?,
            input: p.input.clone(),
        });
    }
    while pending.front().is_some_and(|p| p.retired >= k_f) {
        pending.pop_front();
    }
    Ok(terms)
}

/// Groups loss terms into one batched input; each distinct step becomes a row.
pub fn batch_terms(terms: &[LossTerm]) -> (ModuleInput, Vec<Pick>) {
    let mut rows: Vec<&Arc<StoredInput>> = Vec::new();
    let mut row_of_step: Vec<(u64, usize)> = Vec::new();
    let mut picks = Vec::with_capacity(terms.len());
    for t in terms {
        let row = match row_of_step.iter().find(|(s, _)| *s == t.step) {
            Some(&(_, r)) => r,
            None => {
                rows.push(&t.input);
                row_of_step.push((t.step, rows.len() - 1));
                rows.len() - 1
            }
        };
        picks.push(Pick {
            row,
            col: t.offset,
            target: t.target,
        });
    }
    let mut input = ModuleInput {
        scene_rows: rows.len(),
        rows: rows.len(),
        ..ModuleInput::default()
    };
    for r in rows {
        input.scene.extend_from_slice(&r.scene);
        input.spatial.extend_from_slice(&r.spatial);
        input.actions.extend_from_slice(&r.action);
    }
    (input, picks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub every: u64,
    /// Scored actions per evaluation.
    pub trials: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { every: 500, trials: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub steps: u64,
    pub policy: PolicyConfig,
    pub validation: Option<ValidationConfig>,
    /// Steps whose reward maps are kept for rendering.
    #[serde(default)]
    pub capture_maps: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub task: String,
    pub x: u32,
    pub y: u32,
    pub reward: f64,
    /// Mean cross-entropy of the terms this reward produced, from the logits
    /// at decision time.
    pub loss: f64,
    pub map: usize,
}

#[derive(Clone, Debug, Default)]
pub struct RunResult {
    pub steps: Vec<StepLog>,
    /// `(step, mean reward)` on held-out instances.
    pub validation: Vec<(u64, f64)>,
    pub update_losses: Vec<f64>,
    pub update_terms: Vec<usize>,
    pub maps: Vec<(u64, RewardMapSample)>,
}

impl RunResult {
    pub fn mean_reward(&self, from: usize, to: usize) -> f64 {
        let s = &self.steps[from.min(self.steps.len())..to.min(self.steps.len())];
        if s.is_empty() {
            return 0.0;
        }
        s.iter().map(|l| l.reward).sum::<f64>() / s.len() as f64
    }
}

/// Stream-time state of an agent: history, outstanding predictions, and
/// loss terms awaiting the next update.
pub struct Agent {
    pub history: HistoryBuffer,
    pub pending: VecDeque<PendingPrediction>,
    pub terms: Vec<LossTerm>,
    rng: ChaCha8Rng,
    step: u64,
}

impl Agent {
    pub fn new<P: Predictor + ?Sized>(predictor: &P, seed: u64) -> Self {
        Self {
            history: HistoryBuffer::new(predictor.k_b(), predictor.frame_width(), predictor.spatial_width()),
            pending: VecDeque::new(),
            terms: Vec::new(),
            rng: seed::stream(seed, "actions"),
            step: 0,
        }
    }
}

/// Mean reward over `trials` scored actions on held-out instances, with no
/// learning and fresh buffers.
pub fn validate<P: Predictor + ?Sized>(
    predictor: &P,
    task: &TaskSpec,
    pool: Arc<InstancePool>,
    cache: &mut EncodingCache,
    policy: &PolicyConfig,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let mut env = TouchStream::new(task, pool, Split::Validation, seed::derive_seed(seed, "env"))?;
    let mut history = HistoryBuffer::new(predictor.k_b(), predictor.frame_width(), predictor.spatial_width());
    let mut rng = seed::stream(seed, "actions");
    let (mut total, mut scored, mut step) = (0.0, 0, 0);
    while scored < trials {
        history.push_frame(cache.get(&env.frame().image)?)?;
        let is_scored = env.scored();
        let (action, _, _) = choose_action(predictor, &history, policy, env.screen(), &mut rng, step)?;
        let out = env.step(action)?;
        history.push_action(action.normalized(env.screen()));
        if is_scored {
            total += out.reward;
            scored += 1;
        }
        step += 1;
    }
    Ok(total / trials.max(1) as f64)
}

/// Runs the act-observe-learn loop for `config.steps` actions.
pub fn run_stream<P: Predictor + ?Sized>(
    stream: &mut ScheduledStream,
    cache: &mut EncodingCache,
    predictor: &mut P,
    config: &RunConfig,
) -> Result<RunResult> {
    config.policy.validate()?;
    let mut agent = Agent::new(predictor, config.policy.seed);
    let mut result = RunResult::default();
    let k_f = predictor.k_f();
    let batch = config.policy.batch as u64;
    for _ in 0..config.steps {
        let t = agent.step;
        let screen = stream.current().screen();
        let task = stream.current().spec().id();
        agent.history.push_frame(cache.get(&stream.frame().image)?)?;
        let (action, sample, pending) =
            choose_action(&*predictor, &agent.history, &config.policy, screen, &mut agent.rng, t)?;
        agent.pending.push_back(pending);
        let (out, cue) = stream.step(action)?;
        let terms = record_reward(out.reward, &mut agent.pending, k_f)?;
        let loss = terms.iter().map(|t| t.loss).sum::<f64>() / terms.len().max(1) as f64;
        agent.terms.extend(terms);
        agent.history.push_action(action.normalized(screen));
        result.steps.push(StepLog {
            step: t,
            task,
            x: action.x,
            y: action.y,
            reward: out.reward,
            loss,
            map: sample.chosen_map,
        });
        if config.capture_maps.contains(&t) {
            result.maps.push((t, sample));
        }
        agent.step += 1;
        if agent.step % batch == 0 && !agent.terms.is_empty() {
            let (input, picks) = batch_terms(&agent.terms);
            let n = picks.len();
            let l = predictor.update(&input, picks, t).map_err(|e| snapshot(e, t, &agent))?;
            if !l.is_finite() {
                return Err(snapshot(
                    Error::Training {
                        param: "loss".into(),
                        message: format!("non-finite loss {l}"),
                    },
                    t,
                    &agent,
                ));
            }
            result.update_losses.push(l);
            result.update_terms.push(n);
            agent.terms.clear();
        }
        if let Some(cue) = &cue {
            predictor.on_cue(cue)?;
        }
        if let Some(v) = &config.validation {
            if agent.step % v.every == 0 {
                let seed = seed::derive_seed(config.policy.seed, &format!("validation/{}", agent.step));
                let task = stream.current().spec().clone();
                let value = validate(&*predictor, &task, stream.pool().clone(), cache, &config.policy, v.trials, seed)?;
                result.validation.push((agent.step, value));
            }
        }
    }
    Ok(result)
}

fn snapshot(e: Error, step: u64, agent: &Agent) -> Error {
    match e {
        Error::Training { param, message } => {
            let recent: Vec<String> = agent
                .terms
                .iter()
                .rev()
                .take(4)
                .map(|t| format!("(step {}, offset {}, target {}, loss {})", t.step, t.offset, t.target, t.loss))
                .collect();
            Error::Training {
                param,
                message: format!(
                    "{message}; at step {step} with {} pending terms, latest {}",
                    agent.terms.len(),
                    recent.join(", ")
                ),
            }
        }
        other => other,
    }
}

/// Draws a uniformly random action; used by baselines and tests.
pub fn random_action(screen: Screen, rng: &mut ChaCha8Rng) -> ActionPoint {
    ActionPoint::new(rng.random_range(0..screen.width), rng.random_range(0..screen.height))
}
