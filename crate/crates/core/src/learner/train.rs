//! The outer training loop: roll out, store, regress, refresh the target.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    bellman_targets, init_params, optimize_step, run_episode, transition_input, ActionCache, AdamConfig, AdamState,
    ApproximatorParams, Architecture, EpisodeRecord, NextActionCache, ReplayBuffer, TaskContext,
};
use crate::env::{ActionSpaceConfig, Task};
use crate::error::{Error, Result};
use crate::features::RewardParams;
use crate::rng::sub_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub episodes: usize,
    pub batch_size: usize,
    pub n_policy_iter: usize,
    pub n_optim_iter: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which ε decays linearly from start to end.
    pub epsilon_decay_episodes: usize,
    pub seed: u64,
    pub capacity: usize,
    pub reward: RewardParams,
    pub action_space: ActionSpaceConfig,
    pub arch: Architecture,
    pub adam: AdamConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            learning_rate: 5e-4,
            episodes: 50,
            batch_size: 64,
            n_policy_iter: 2,
            n_optim_iter: 10,
            epsilon_start: 0.2,
            epsilon_end: 0.02,
            epsilon_decay_episodes: 25,
            seed: 0,
            capacity: 50_000,
            reward: RewardParams::default(),
            action_space: ActionSpaceConfig::default(),
            arch: Architecture::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be a non-negative number, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.capacity == 0 {
            return bad("batch size and replay capacity must be positive".into());
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} must lie in [0, 1], got {e}"));
            }
        }
        if !(self.reward.sigma_px > 0.0 && self.reward.c > 0.0) {
            return bad("sigma_px and reward C must be positive".into());
        }
        if !self.arch.supports(self.reward.d) {
            return bad(format!(
                "d = {} is not divisible by 2^{} required by the network",
                self.reward.d,
                self.arch.levels - 1
            ));
        }
        self.action_space.validate()
    }

    /// Exploration rate for the 0-based `episode`.
    pub fn epsilon(&self, episode: usize) -> f64 {
        if episode >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let f = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// 1-based.
    pub episode: usize,
    pub solved_count: usize,
    /// Mean undiscounted cumulative reward of the greedy policy.
    pub mean_return: f64,
    pub mean_blocks: f64,
    pub mean_loss: f64,
    pub epsilon: f64,
    pub solved: Vec<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub rows: Vec<EpisodeMetrics>,
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("episode,solved_count,mean_return,mean_blocks\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.episode, r.solved_count, r.mean_return, r.mean_blocks).expect("string write");
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn best(&self) -> Option<&EpisodeMetrics> {
        self.rows.iter().fold(None, |best: Option<&EpisodeMetrics>, r| match best {
            Some(b) if !is_better(r, b) => Some(b),
            _ => Some(r),
        })
    }
}

fn is_better(a: &EpisodeMetrics, b: &EpisodeMetrics) -> bool {
    (a.solved_count, a.mean_return) > (b.solved_count, b.mean_return)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ApproximatorParams,
    /// Parameters after the best-scoring episode (initial if none ran).
    pub best_params: ApproximatorParams,
    pub best_episode: Option<usize>,
    pub log: MetricsLog,
}

pub fn train(tasks: &[Task], cfg: &TrainingConfig) -> Result<TrainOutcome> {
    train_with(tasks, cfg, &mut |_| {})
}

/// Greedy evaluation of every task, run in parallel and returned in task order.
pub fn evaluate(params: &ApproximatorParams, contexts: &[TaskContext], cache: &ActionCache) -> Result<Vec<EpisodeRecord>> {
    contexts
        .par_iter()
        .enumerate()
        .map(|(i, ctx)| run_episode(params, ctx, i, cache, 0.0, &mut sub_rng(0, "greedy", &[])))
        .collect()
}

/// Summary of a set of episodes in task order.
pub fn summarize(episode: usize, records: &[EpisodeRecord], mean_loss: f64, epsilon: f64) -> EpisodeMetrics {
    let n = records.len().max(1) as f64;
    EpisodeMetrics {
        episode,
        solved_count: records.iter().filter(|r| r.solved()).count(),
        mean_return: records.iter().map(|r| r.total_reward()).sum::<f64>() / n,
        mean_blocks: records.iter().map(|r| r.blocks() as f64).sum::<f64>() / n,
        mean_loss,
        epsilon,
        solved: records.iter().map(|r| r.solved()).collect(),
    }
}

/// Trains on `tasks`, calling `on_episode` after each episode's evaluation.
pub fn train_with(tasks: &[Task], cfg: &TrainingConfig, on_episode: &mut dyn FnMut(&EpisodeMetrics)) -> Result<TrainOutcome> {
    if tasks.is_empty() {
        return Err(Error::Config("at least one task is required".into()));
    }
    cfg.validate()?;
    let contexts: Vec<TaskContext> = tasks.iter().map(|t| TaskContext::new(t.clone(), &cfg.reward)).collect();
    let cache = ActionCache::new(cfg.action_space);
    let mut params = init_params(cfg.seed, &cfg.arch);
    let mut target = params.clone();
    let mut best_params = params.clone();
    let mut best_episode = None;
    let mut adam = AdamState::new(params.values().len(), cfg.adam);
    let mut buffer = ReplayBuffer::new(cfg.capacity);
    let mut replay_rng = sub_rng(cfg.seed, "replay", &[]);
    let mut log = MetricsLog::default();

    for e in 0..cfg.episodes {
        let epsilon = cfg.epsilon(e);
        let episodes: Vec<EpisodeRecord> = contexts
            .par_iter()
            .enumerate()
            .map(|(i, ctx)| {
                let mut rng = sub_rng(cfg.seed, "rollout", &[e as u64, i as u64]);
                run_episode(&params, ctx, i, &cache, epsilon, &mut rng)
            })
            .collect::<Result<_>>()?;
        for ep in &episodes {
            for t in ep.transitions() {
                buffer.push(t);
            }
        }

        let mut losses = Vec::new();
        if !buffer.is_empty() {
            for _ in 0..cfg.n_policy_iter {
                let mut next_cache = NextActionCache::new();
                for _ in 0..cfg.n_optim_iter {
                    let batch = buffer.sample(cfg.batch_size, &mut replay_rng);
                    let ys = bellman_targets(&batch, &target, &params, cfg.gamma, &contexts, &cache, &mut next_cache)?;
                    let inputs = batch
                        .iter()
                        .map(|t| transition_input(t, &contexts[t.task]))
                        .collect::<Result<Vec<_>>>()?;
                    let targets: Vec<_> = ys.iter().map(super::image_to_map).collect();
                    let loss = optimize_step(&mut params, &inputs, &targets, cfg.learning_rate, &mut adam)
                        .map_err(|err| divergence_context(err, e + 1, buffer.len()))?;
                    losses.push(loss);
                }
                target = params.clone();
            }
        }

        let evals = evaluate(&params, &contexts, &cache)?;
        let mean_loss = if losses.is_empty() {
            0.0
        } else {
            losses.iter().sum::<f64>() / losses.len() as f64
        };
        let m = summarize(e + 1, &evals, mean_loss, epsilon);
        log::info!(
            "episode {}: solved {}/{} return {:.4} blocks {:.2} loss {:.5}",
            m.episode,
            m.solved_count,
            tasks.len(),
            m.mean_return,
            m.mean_blocks,
            m.mean_loss
        );
        if log.best().is_none_or(|b| is_better(&m, b)) {
            best_params = params.clone();
            best_episode = Some(m.episode);
        }
        on_episode(&m);
        log.rows.push(m);
    }
    Ok(TrainOutcome {
        params,
        best_params,
        best_episode,
        log,
    })
}

fn divergence_context(err: Error, episode: usize, buffer_len: usize) -> Error {
    match err {
        Error::NumericalDivergence(m) => {
            Error::NumericalDivergence(format!("{m} (episode {episode}, {buffer_len} transitions in replay)"))
        }
        other => other,
    }
}
