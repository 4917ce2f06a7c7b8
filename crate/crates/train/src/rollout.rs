//! Experience collection: independent environment instances stepped under the
//! current policy and interleaved round-robin into one window.

use graphprune_core::observation::TokenSequence;
use graphprune_core::{derive_seed, ExplorationEnv, PruneDecision, SimConfig, TerminalCause};
use graphprune_policy::{sample_action, to_gmm, token_matrix, ActorCritic, EpisodicMemory, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};
use crate::gae::compute_gae;

/// How raw action vectors become mixtures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeSpec {
    pub components: usize,
    pub gated: bool,
    pub sigma_min: f64,
}

impl DecodeSpec {
    pub fn decode(&self, raw: &[f64], bounds: (usize, usize)) -> graphprune_core::GmmAction {
        to_gmm(raw, bounds, self.components, self.gated, self.sigma_min)
    }
}

/// Observation tokens stored as `2 * value`; pixels only take the values
/// 0, 0.5 and 1 so the encoding is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompactTokens {
    pub n_tokens: usize,
    pub token_len: usize,
    pub data: Vec<u8>,
}

impl CompactTokens {
    pub fn encode(tokens: &TokenSequence) -> Self {
        let data = tokens
            .data
            .iter()
            .map(|&v| {
                let q = (v * 2.0).round();
                debug_assert!(q == v * 2.0 && (0.0..=255.0).contains(&q), "token value {v} not representable");
                q as u8
            })
            .collect();
        Self {
            n_tokens: tokens.len(),
            token_len: tokens.token_len(),
            data,
        }
    }

    pub fn matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.n_tokens,
            self.token_len,
            self.data.iter().map(|&q| q as f64 * 0.5).collect(),
        )
    }
}

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub worker: usize,
    pub episode: u64,
    pub episode_seed: u64,
    pub step: u32,
    pub tokens: CompactTokens,
    /// Memory the policy saw when acting.
    pub memory: EpisodicMemory,
    pub raw_action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    pub cause: Option<TerminalCause>,
    pub coverage: f64,
    pub tree_size: usize,
    pub pruned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEnd {
    pub worker: usize,
    pub episode: u64,
    pub episode_seed: u64,
    pub length: u32,
    pub total_reward: f64,
    pub final_coverage: f64,
    pub final_tree_size: usize,
    pub cause: TerminalCause,
}

impl EpisodeEnd {
    pub fn mean_reward(&self) -> f64 {
        self.total_reward / self.length.max(1) as f64
    }
}

/// Seed of episode `episode` on worker `worker`.
pub fn episode_seed(run_seed: u64, worker: usize, episode: u64) -> u64 {
    derive_seed(derive_seed(run_seed, 100 + worker as u64), episode)
}

/// One environment instance with its recurrent state and action stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub index: usize,
    pub run_seed: u64,
    pub episode: u64,
    pub env: ExplorationEnv,
    pub memory: EpisodicMemory,
    rng: ChaCha8Rng,
    episode_reward: f64,
}

impl Worker {
    pub fn new(index: usize, run_seed: u64, sim: &SimConfig, memory: EpisodicMemory) -> Result<Self> {
        Ok(Self {
            index,
            run_seed,
            episode: 0,
            env: ExplorationEnv::new(sim.clone(), episode_seed(run_seed, index, 0))?,
            memory,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(run_seed, 200 + index as u64)),
            episode_reward: 0.0,
        })
    }

    /// Grow, act, prune, move and score once. On a terminal step the
    /// environment is reset with the next episode seed and memory cleared.
    pub fn step(&mut self, model: &ActorCritic, decode: &DecodeSpec) -> Result<(Transition, Option<EpisodeEnd>)> {
        let obs = self.env.observe();
        let tokens = CompactTokens::encode(&obs);
        let out = model.forward(&token_matrix(&obs), &self.memory)?;
        if !out.is_finite() {
            return Err(TrainError::NonFinite(format!(
                "policy output on worker {} episode {} step {}",
                self.index,
                self.episode,
                self.env.steps()
            )));
        }
        let (raw, log_prob) = sample_action(&out, &mut self.rng);
        let bounds = (self.env.map.width(), self.env.map.height());
        let gmm = decode.decode(&raw, bounds);
        let outcome = self.env.step(PruneDecision::Gmm(&gmm))?;
        let reward = outcome.reward.total;
        if !reward.is_finite() {
            return Err(TrainError::NonFinite(format!("reward on worker {} step {}", self.index, outcome.step)));
        }
        self.episode_reward += reward;
        let transition = Transition {
            worker: self.index,
            episode: self.episode,
            episode_seed: self.env.episode_seed(),
            step: outcome.step,
            tokens,
            memory: std::mem::replace(&mut self.memory, out.new_memory),
            raw_action: raw,
            log_prob,
            value: out.value,
            reward,
            done: outcome.done,
            cause: outcome.cause,
            coverage: outcome.coverage,
            tree_size: outcome.tree_size,
            pruned: outcome.pruned.len(),
        };
        let mut end = None;
        if let Some(cause) = outcome.cause {
            end = Some(EpisodeEnd {
                worker: self.index,
                episode: self.episode,
                episode_seed: self.env.episode_seed(),
                length: outcome.step + 1,
                total_reward: self.episode_reward,
                final_coverage: outcome.coverage,
                final_tree_size: outcome.tree_size,
                cause,
            });
            self.reset()?;
        }
        Ok((transition, end))
    }

    fn reset(&mut self) -> Result<()> {
        self.episode += 1;
        let sim = self.env.config().clone();
        self.env = ExplorationEnv::new(sim, episode_seed(self.run_seed, self.index, self.episode))?;
        self.memory.clear();
        self.episode_reward = 0.0;
        Ok(())
    }

    /// Critic value of the current state.
    pub fn value(&self, model: &ActorCritic) -> Result<f64> {
        Ok(model.forward(&token_matrix(&self.env.observe()), &self.memory)?.value)
    }
}

/// A filled rollout window in interleave order.
#[derive(Debug, Clone)]
pub struct Window {
    pub transitions: Vec<Transition>,
    /// Episodes that finished inside the window, in interleave order.
    pub episodes: Vec<EpisodeEnd>,
    /// Critic value of each worker's state after its last transition.
    pub bootstrap: Vec<f64>,
}

/// Collects `len` transitions, slot `i` coming from worker `i % workers.len()`.
/// Workers step in parallel; the result does not depend on thread count.
pub fn collect_window(workers: &mut [Worker], model: &ActorCritic, decode: &DecodeSpec, len: usize) -> Result<Window> {
    let k = workers.len();
    let per_worker: Vec<Result<(Vec<(Transition, Option<EpisodeEnd>)>, f64)>> = workers
        .par_iter_mut()
        .enumerate()
        .map(|(w, worker)| {
            let n = len / k + usize::from(w < len % k);
            let mut steps = Vec::with_capacity(n);
            for _ in 0..n {
                steps.push(worker.step(model, decode)?);
            }
            let bootstrap = match steps.last() {
                Some((t, _)) if !t.done => worker.value(model)?,
                _ => 0.0,
            };
            Ok((steps, bootstrap))
        })
        .collect();
    let mut streams = Vec::with_capacity(k);
    let mut bootstrap = Vec::with_capacity(k);
    for r in per_worker {
        let (steps, b) = r?;
        streams.push(steps.into_iter());
        bootstrap.push(b);
    }
    let mut transitions = Vec::with_capacity(len);
    let mut episodes = Vec::new();
    for i in 0..len {
        let (t, end) = streams[i % k].next().expect("worker produced its share");
        transitions.push(t);
        episodes.extend(end);
    }
    Ok(Window {
        transitions,
        episodes,
        bootstrap,
    })
}

/// Advantages and returns for an interleaved window, computed along each
/// worker's own sequence.
pub fn window_advantages(window: &Window, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = window.transitions.len();
    let mut adv = vec![0.0; n];
    let mut ret = vec![0.0; n];
    for (w, &boot) in window.bootstrap.iter().enumerate() {
        let idx: Vec<usize> = (0..n).filter(|&i| window.transitions[i].worker == w).collect();
        let pick = |f: &dyn Fn(&Transition) -> f64| idx.iter().map(|&i| f(&window.transitions[i])).collect::<Vec<_>>();
        let rewards = pick(&|t| t.reward);
        let values = pick(&|t| t.value);
        let dones: Vec<bool> = idx.iter().map(|&i| window.transitions[i].done).collect();
        let (a, r) = compute_gae(&rewards, &values, &dones, boot, gamma, lambda);
        for (j, &i) in idx.iter().enumerate() {
            adv[i] = a[j];
            ret[i] = r[j];
        }
    }
    (adv, ret)
}
