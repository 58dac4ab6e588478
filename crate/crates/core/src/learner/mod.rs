//! Successor-feature deep Q-learning.
//!
//! The approximator maps `(ψ(S), φ(A), ξ(T))` to a predicted successor
//! feature image Ψ(S, A, T); action values are `Q = Ψᵀρ(T)`.

pub mod adam;
pub mod checkpoint;
pub mod nn;
pub mod replay;
pub mod train;
pub mod unet;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rayon::prelude::*;

use crate::env::{Assembly, PoseKey, Task, Terminal};
use crate::error::{Error, Result};
use crate::features::{rasterize_action, reward, reward_field, state_features, task_features, FeatureImage, RewardField, RewardParams, TaskImage};
use crate::geometry::Placement;
use crate::ActionSpaceConfig;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, CheckpointHeader};
pub use nn::{Map, Real};
pub use replay::{ReplayBuffer, Transition};
pub use train::{evaluate, summarize, train, train_with, EpisodeMetrics, MetricsLog, TrainOutcome, TrainingConfig};
pub use unet::{Architecture, ParamEntry, UNet};

/// Two q-values closer than this are treated as equal by the argmax.
pub const Q_TIE_TOL: f64 = 1e-12;

/// Network parameters together with the architecture that interprets them.
#[derive(Clone, Debug)]
pub struct ApproximatorParams {
    net: UNet,
    values: Vec<f32>,
}

impl PartialEq for ApproximatorParams {
    fn eq(&self, other: &Self) -> bool {
        self.net.arch() == other.net.arch() && self.values == other.values
    }
}

impl ApproximatorParams {
    pub fn from_values(arch: Architecture, values: Vec<f32>) -> Result<Self> {
        let net = UNet::new(arch);
        if values.len() != net.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                net.num_params(),
                values.len()
            )));
        }
        Ok(Self { net, values })
    }

    pub fn arch(&self) -> &Architecture {
        self.net.arch()
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn manifest(&self) -> &[ParamEntry] {
        self.net.manifest()
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        let e = self.manifest().iter().find(|e| e.name == name)?;
        Some(&self.values[e.offset..e.offset + e.len()])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn init_params(seed: u64, arch: &Architecture) -> ApproximatorParams {
    let net = UNet::new(arch.clone());
    let values = net.init(seed);
    ApproximatorParams { net, values }
}

/// Stacks `[ψ, φ, obstacles, targets]` into a network input.
pub fn stack_input<T: Real>(psi: &FeatureImage, phi: &FeatureImage, task: &TaskImage) -> Result<Map<T>> {
    let d = psi.d();
    let parts = [psi, phi, &task.obstacles, &task.targets];
    if parts.iter().any(|p| p.d() != d) {
        return Err(Error::Shape(format!(
            "input resolutions differ: {:?}",
            parts.iter().map(|p| p.d()).collect::<Vec<_>>()
        )));
    }
    let mut data = Vec::with_capacity(4 * d * d);
    for p in parts {
        data.extend(p.data().iter().map(|&v| T::from_f64(v)));
    }
    Ok(Map::from_vec(4, d, d, data))
}

pub fn map_to_image<T: Real>(m: &Map<T>) -> FeatureImage {
    FeatureImage::from_data(m.h, m.data.iter().map(|v| v.to_f64()).collect())
}

pub fn image_to_map<T: Real>(img: &FeatureImage) -> Map<T> {
    let d = img.d();
    Map::from_vec(1, d, d, img.data().iter().map(|&v| T::from_f64(v)).collect())
}

/// Ψ_θ(S, A, T) for one stacked input.
pub fn forward_psi(params: &ApproximatorParams, psi: &FeatureImage, phi: &FeatureImage, task: &TaskImage) -> Result<FeatureImage> {
    let x = stack_input::<f32>(psi, phi, task)?;
    params.net.check_input(&x)?;
    Ok(map_to_image(&params.net.forward(&params.values, &x)))
}

/// Ψ_θ for many inputs, evaluated in parallel; identical to single calls.
pub fn forward_psi_batch(params: &ApproximatorParams, inputs: &[Map<f32>]) -> Result<Vec<FeatureImage>> {
    for x in inputs {
        params.net.check_input(x)?;
    }
    Ok(params
        .net
        .forward_batch(&params.values, inputs)
        .iter()
        .map(map_to_image)
        .collect())
}

/// Q = Ψᵀρ.
pub fn q_value(psi_out: &FeatureImage, rho: &RewardField) -> f64 {
    psi_out.dot(&rho.field)
}

/// Lowest index among the maximal values (ties within [`Q_TIE_TOL`]).
pub fn argmax(qs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &q) in qs.iter().enumerate() {
        match best {
            Some(b) if q <= qs[b] + Q_TIE_TOL => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Precomputed per-task images.
#[derive(Clone, Debug)]
pub struct TaskContext {
    pub task: Task,
    pub image: TaskImage,
    pub rho: RewardField,
}

impl TaskContext {
    pub fn new(task: Task, reward_params: &RewardParams) -> Self {
        let RewardParams { d, sigma_px, c } = *reward_params;
        let image = task_features(&task, d);
        let rho = reward_field(&task, sigma_px, c, d);
        Self { task, image, rho }
    }

    pub fn d(&self) -> usize {
        self.rho.field.d()
    }
}

/// Q-values of every candidate action in `state`, in the given order.
pub fn action_values(params: &ApproximatorParams, ctx: &TaskContext, state: &Assembly, actions: &[Placement]) -> Result<Vec<f64>> {
    let d = ctx.d();
    let psi = state_features(state, d);
    let probe = stack_input::<f32>(&psi, &FeatureImage::zeros(d), &ctx.image)?;
    params.net.check_input(&probe)?;
    Ok(actions
        .par_iter()
        .map(|a| {
            let x = stack_input::<f32>(&psi, &rasterize_action(a, d), &ctx.image).expect("resolution checked");
            let out = params.net.forward(&params.values, &x);
            out.data.iter().zip(ctx.rho.field.data()).map(|(&p, &r)| p as f64 * r).sum()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub index: usize,
    /// Q-value of the chosen action when it was picked greedily.
    pub q: Option<f64>,
    pub explored: bool,
}

/// ε-greedy choice among `actions`; an empty list is a dead end.
pub fn select_action<R: Rng + ?Sized>(
    params: &ApproximatorParams,
    ctx: &TaskContext,
    state: &Assembly,
    actions: &[Placement],
    epsilon: f64,
    rng: &mut R,
) -> Result<Selection> {
    if actions.is_empty() {
        return Err(Error::DeadEnd);
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(Selection {
            index: rng.random_range(0..actions.len()),
            q: None,
            explored: true,
        });
    }
    let qs = action_values(params, ctx, state, actions)?;
    let index = argmax(&qs).expect("non-empty");
    Ok(Selection {
        index,
        q: Some(qs[index]),
        explored: false,
    })
}

type StateKey = (usize, Vec<PoseKey>);

/// Memoized feasible action sets keyed by (task index, assembly).
#[derive(Debug)]
pub struct ActionCache {
    cfg: ActionSpaceConfig,
    map: Mutex<HashMap<StateKey, Arc<Vec<Placement>>>>,
}

impl ActionCache {
    pub fn new(cfg: ActionSpaceConfig) -> Self {
        Self {
            cfg,
            map: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &ActionSpaceConfig {
        &self.cfg
    }

    pub fn key(&self, task: usize, state: &Assembly) -> StateKey {
        (task, state.key(self.cfg.dedupe_resolution))
    }

    pub fn actions(&self, task_index: usize, task: &Task, state: &Assembly) -> Arc<Vec<Placement>> {
        let key = self.key(task_index, state);
        if let Some(v) = self.map.lock().expect("cache lock").get(&key) {
            return v.clone();
        }
        let v = Arc::new(crate::env::enumerate_actions(state, task, &self.cfg));
        self.map.lock().expect("cache lock").entry(key).or_insert(v).clone()
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Terminal classification of a state reached by placing a block.
pub fn classify(task: &Task, state: &Assembly, actions: &[Placement]) -> Terminal {
    if task.is_solved(state) {
        Terminal::Success
    } else if state.len() >= task.max_actions {
        Terminal::MaxActions
    } else if actions.is_empty() {
        Terminal::DeadEnd
    } else {
        Terminal::None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub state: Assembly,
    pub action: Placement,
    pub next_state: Assembly,
    pub reward: f64,
    pub q: Option<f64>,
    pub explored: bool,
    pub terminal: Terminal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub task: usize,
    pub steps: Vec<StepRecord>,
    pub terminal: Terminal,
}

impl EpisodeRecord {
    pub fn solved(&self) -> bool {
        self.terminal == Terminal::Success
    }

    pub fn blocks(&self) -> usize {
        self.steps.len()
    }

    /// Undiscounted sum of rewards.
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps.iter().rev().fold(0.0, |acc, s| s.reward + gamma * acc)
    }

    pub fn final_state(&self) -> Assembly {
        self.steps.last().map(|s| s.next_state.clone()).unwrap_or_default()
    }

    pub fn transitions(&self) -> impl Iterator<Item = Transition> + '_ {
        self.steps.iter().map(|s| Transition {
            state: s.state.clone(),
            action: s.action,
            next_state: s.next_state.clone(),
            task: self.task,
            terminal: s.terminal.is_terminal(),
        })
    }

    /// Monte-Carlo successor features `Σ_k γ^k φ(A_{t+k})` for every step.
    pub fn empirical_successor_features(&self, gamma: f64, d: usize) -> Vec<FeatureImage> {
        let mut out = vec![FeatureImage::zeros(d); self.steps.len()];
        let mut acc = FeatureImage::zeros(d);
        for (t, s) in self.steps.iter().enumerate().rev() {
            let mut next = rasterize_action(&s.action, d);
            next.scaled_add(gamma, &acc);
            acc = next;
            out[t] = acc.clone();
        }
        out
    }
}

/// Runs one episode from the empty assembly.
pub fn run_episode<R: Rng + ?Sized>(
    params: &ApproximatorParams,
    ctx: &TaskContext,
    task_index: usize,
    cache: &ActionCache,
    epsilon: f64,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let task = &ctx.task;
    let mut state = Assembly::new();
    let mut actions = cache.actions(task_index, task, &state);
    let mut steps = Vec::new();
    let mut terminal = if actions.is_empty() { Terminal::DeadEnd } else { Terminal::None };
    while terminal == Terminal::None {
        let sel = select_action(params, ctx, &state, &actions, epsilon, rng)?;
        let action = actions[sel.index];
        let next_state = state.with(action);
        actions = cache.actions(task_index, task, &next_state);
        terminal = classify(task, &next_state, &actions);
        steps.push(StepRecord {
            state: std::mem::replace(&mut state, next_state.clone()),
            action,
            next_state,
            reward: reward(&action, &ctx.rho),
            q: sel.q,
            explored: sel.explored,
            terminal,
        });
    }
    Ok(EpisodeRecord {
        task: task_index,
        steps,
        terminal,
    })
}

/// Per-policy-iteration memo of A′ choices made with the target parameters.
pub type NextActionCache = HashMap<StateKey, Option<Placement>>;

/// Regression targets `Y = φ(A) + γ·Ψ_θ(S′, A′)` with
/// `A′ = argmax Ψ_θ̄(S′, ·)ᵀρ`; `Y = φ(A)` for terminal transitions and
/// dead-end next states.
#[allow(clippy::too_many_arguments)]
pub fn bellman_targets(
    batch: &[&Transition],
    target: &ApproximatorParams,
    params: &ApproximatorParams,
    gamma: f64,
    contexts: &[TaskContext],
    actions: &ActionCache,
    next_cache: &mut NextActionCache,
) -> Result<Vec<FeatureImage>> {
    for t in batch {
        if t.task >= contexts.len() {
            return Err(Error::Config(format!("transition refers to unknown task {}", t.task)));
        }
    }
    let bootstrap = |t: &Transition| gamma != 0.0 && !t.terminal;
    for t in batch.iter().filter(|t| bootstrap(t)) {
        let key = actions.key(t.task, &t.next_state);
        if next_cache.contains_key(&key) {
            continue;
        }
        let ctx = &contexts[t.task];
        let cands = actions.actions(t.task, &ctx.task, &t.next_state);
        let choice = if cands.is_empty() {
            None
        } else {
            let qs = action_values(target, ctx, &t.next_state, &cands)?;
            Some(cands[argmax(&qs).expect("non-empty")])
        };
        next_cache.insert(key, choice);
    }
    batch
        .par_iter()
        .map(|t| {
            let ctx = &contexts[t.task];
            let d = ctx.d();
            let mut y = rasterize_action(&t.action, d);
            if !bootstrap(t) {
                return Ok(y);
            }
            if let Some(next) = next_cache[&actions.key(t.task, &t.next_state)] {
                let psi = state_features(&t.next_state, d);
                let x = stack_input::<f32>(&psi, &rasterize_action(&next, d), &ctx.image)?;
                let out = params.net.forward(&params.values, &x);
                for (yv, &o) in y.data_mut().iter_mut().zip(&out.data) {
                    *yv += gamma * o as f64;
                }
            }
            Ok(y)
        })
        .collect()
}

/// Network input for `(S, A, T)`.
pub fn transition_input(t: &Transition, ctx: &TaskContext) -> Result<Map<f32>> {
    let d = ctx.d();
    stack_input(&state_features(&t.state, d), &rasterize_action(&t.action, d), &ctx.image)
}

/// `L = (1/B) Σ ‖Y − Ψ‖²` and its parameter gradient.
///
/// Samples are processed in fixed-size chunks whose partial gradients are
/// summed in order, so the result does not depend on the thread count.
pub fn loss_and_grad<T: Real>(net: &UNet, p: &[T], inputs: &[Map<T>], targets: &[Map<T>]) -> Result<(f64, Vec<T>)> {
    const CHUNK: usize = 4;
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::Shape(format!("{} inputs for {} targets", inputs.len(), targets.len())));
    }
    for (x, y) in inputs.iter().zip(targets) {
        net.check_input(x)?;
        if (y.c, y.h, y.w) != (1, x.h, x.w) {
            return Err(Error::Shape(format!("target {}x{}x{} for input {}x{}", y.c, y.h, y.w, x.h, x.w)));
        }
    }
    let scale = 1.0 / inputs.len() as f64;
    let partials: Vec<(f64, Vec<T>)> = inputs
        .par_chunks(CHUNK)
        .zip(targets.par_chunks(CHUNK))
        .map(|(xs, ys)| {
            let mut grad = vec![T::ZERO; p.len()];
            let mut loss = 0.0;
            for (x, y) in xs.iter().zip(ys) {
                let (out, tape) = net.forward_tape(p, x);
                let mut dout = out.clone();
                for (g, (&o, &t)) in dout.data.iter_mut().zip(out.data.iter().zip(&y.data)) {
                    let r = o.to_f64() - t.to_f64();
                    loss += r * r;
                    *g = T::from_f64(2.0 * scale * r);
                }
                net.backward(p, &tape, &dout, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![T::ZERO; p.len()];
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok((loss * scale, grad))
}

/// One Adam step on the batch loss; returns the loss before the step.
pub fn optimize_step(
    params: &mut ApproximatorParams,
    inputs: &[Map<f32>],
    targets: &[Map<f32>],
    lr: f64,
    adam: &mut AdamState,
) -> Result<f64> {
    let (loss, grad) = loss_and_grad(&params.net, &params.values, inputs, targets)?;
    if !loss.is_finite() {
        return Err(Error::NumericalDivergence(format!("loss is {loss}")));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NumericalDivergence(format!("gradient entry {i} is {}", grad[i])));
    }
    adam.step(&mut params.values, &grad, lr);
    Ok(loss)
}
