//! Collect, estimate advantages, update; repeat until the step budget is
//! spent. Checkpoints capture every piece of state so a resumed run continues
//! exactly as an uninterrupted one would.

use std::path::{Path, PathBuf};

use graphprune_core::derive_seed;
use graphprune_policy::{ActorCritic, Adam, PolicyCheckpoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Result, TrainError};
use crate::log::{Decision, EpisodeRecord, Header, LogWriter, Record, StepRecord, UpdateRecord, LOG_FORMAT};
use crate::ppo::ppo_update;
use crate::rollout::{collect_window, window_advantages, DecodeSpec, Worker};

pub const TRAIN_CHECKPOINT_VERSION: u32 = 1;
pub const LOG_FILE: &str = "train.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCheckpoint {
    pub version: u32,
    pub compat_hash: String,
    pub config: TrainConfig,
    pub policy: PolicyCheckpoint,
    pub workers: Vec<Worker>,
    shuffle_rng: ChaCha8Rng,
    pub global_step: u64,
    pub update_idx: u64,
    /// Log bytes after the header at the time of the checkpoint.
    pub log_body_len: u64,
}

impl TrainCheckpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
        let ck: Self = serde_json::from_slice(&bytes).map_err(|e| TrainError::Corrupt {
            path: path.to_path_buf(),
            message: format!("unreadable checkpoint: {e}"),
        })?;
        if ck.version != TRAIN_CHECKPOINT_VERSION {
            return Err(TrainError::Corrupt {
                path: path.to_path_buf(),
                message: format!("unsupported checkpoint version {}", ck.version),
            });
        }
        ck.policy.verify(None)?;
        Ok(ck)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self).expect("checkpoint serialises");
        graphprune_policy::checkpoint::write_atomic(path, &bytes)?;
        Ok(())
    }
}

pub fn checkpoint_path(dir: &Path, global_step: u64) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("step-{global_step:09}.json"))
}

/// Newest checkpoint in a run directory, by step.
pub fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir.join(CHECKPOINT_DIR))
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    found.sort();
    found.pop()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub updates: u64,
    pub global_step: u64,
    pub log_path: PathBuf,
    pub final_checkpoint: PathBuf,
}

pub struct Trainer {
    config: TrainConfig,
    dir: PathBuf,
    model: ActorCritic,
    opt: Adam,
    workers: Vec<Worker>,
    shuffle_rng: ChaCha8Rng,
    decode: DecodeSpec,
    log: LogWriter,
    global_step: u64,
    update_idx: u64,
}

impl Trainer {
    /// Fresh run writing into `dir`.
    pub fn new(config: TrainConfig, dir: &Path) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(|e| TrainError::io(dir, e))?;
        let model = ActorCritic::init(config.policy_config(), derive_seed(config.seed, 1))?;
        let mut opt = Adam::new(&model.params, config.learning_rate, config.max_grad_norm);
        opt.eps = config.adam_epsilon;
        let sim = config.sim_config();
        let workers = (0..config.n_envs)
            .map(|w| Worker::new(w, config.seed, &sim, model.empty_memory()))
            .collect::<Result<Vec<_>>>()?;
        let log = LogWriter::create(&dir.join(LOG_FILE), &header(&config))?;
        Ok(Self {
            shuffle_rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 3)),
            decode: decode_spec(&config),
            dir: dir.to_path_buf(),
            config,
            model,
            opt,
            workers,
            log,
            global_step: 0,
            update_idx: 0,
        })
    }

    /// Continues from `checkpoint` under `config`, which may differ from the
    /// checkpointed one only in run length and checkpoint schedule. The log
    /// in `dir` is cut back to the checkpoint.
    pub fn resume(config: TrainConfig, dir: &Path, checkpoint: &Path) -> Result<Self> {
        config.validate()?;
        let ck = TrainCheckpoint::load(checkpoint)?;
        if ck.compat_hash != config.compat_hash() {
            return Err(TrainError::Config(format!(
                "{} was written by an incompatible configuration",
                checkpoint.display()
            )));
        }
        std::fs::create_dir_all(dir.join(CHECKPOINT_DIR)).map_err(|e| TrainError::io(dir, e))?;
        let (model, opt) = ck.policy.into_model()?;
        let opt = opt.ok_or_else(|| TrainError::Corrupt {
            path: checkpoint.to_path_buf(),
            message: "checkpoint has no optimizer state".into(),
        })?;
        let log = LogWriter::resume(&dir.join(LOG_FILE), &header(&config), ck.log_body_len)?;
        Ok(Self {
            decode: decode_spec(&config),
            dir: dir.to_path_buf(),
            config,
            model,
            opt,
            workers: ck.workers,
            shuffle_rng: ck.shuffle_rng,
            log,
            global_step: ck.global_step,
            update_idx: ck.update_idx,
        })
    }

    pub fn model(&self) -> &ActorCritic {
        &self.model
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn is_finished(&self) -> bool {
        self.update_idx >= self.config.n_updates()
    }

    /// One collect-and-update cycle.
    pub fn run_update(&mut self) -> Result<UpdateRecord> {
        let cfg = self.config.ppo_config();
        let window = collect_window(&mut self.workers, &self.model, &self.decode, cfg.update_every)?;
        let start = self.global_step;
        let mut ends = window.episodes.iter().peekable();
        for (i, t) in window.transitions.iter().enumerate() {
            let global_step = start + i as u64;
            self.log.write(&Record::Step(StepRecord {
                global_step,
                worker: t.worker,
                episode: t.episode,
                episode_seed: t.episode_seed,
                step: t.step,
                decision: Decision::Gmm,
                raw_action: Some(t.raw_action.clone()),
                reward: t.reward,
                coverage: t.coverage,
                tree_size: t.tree_size,
                pruned: t.pruned,
                done: t.done,
                cause: t.cause,
            }))?;
            if t.done {
                let e = ends.next().expect("episode end for every terminal step");
                self.log.write(&Record::Episode(EpisodeRecord {
                    global_step,
                    worker: e.worker,
                    episode: e.episode,
                    episode_seed: e.episode_seed,
                    length: e.length,
                    total_reward: e.total_reward,
                    mean_reward: e.mean_reward(),
                    final_coverage: e.final_coverage,
                    final_tree_size: e.final_tree_size,
                    cause: e.cause,
                }))?;
            }
        }
        self.global_step += window.transitions.len() as u64;

        let (adv, ret) = window_advantages(&window, cfg.gamma, cfg.gae_lambda);
        let stats = ppo_update(
            &mut self.model,
            &mut self.opt,
            &window.transitions,
            &adv,
            &ret,
            &cfg,
            &mut self.shuffle_rng,
        )
        .map_err(|e| match e {
            TrainError::NonFinite(m) => TrainError::NonFinite(format!("update {}: {m}", self.update_idx)),
            other => other,
        })?;

        let n = window.transitions.len() as f64;
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let record = UpdateRecord {
            global_step: self.global_step,
            update_idx: self.update_idx,
            value_loss: stats.value_loss,
            policy_loss: stats.policy_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
            epochs: stats.epochs,
            steps_applied: stats.steps_applied,
            early_stopped: stats.early_stopped,
            grad_norm: stats.grad_norm,
            mean_episode_reward: mean(window.episodes.iter().map(|e| e.mean_reward()).collect()),
            mean_coverage: mean(window.episodes.iter().map(|e| e.final_coverage).collect()),
            episodes: window.episodes.len(),
            tree_size_mean: window.transitions.iter().map(|t| t.tree_size as f64).sum::<f64>() / n,
            prune_count_mean: window.transitions.iter().map(|t| t.pruned as f64).sum::<f64>() / n,
        };
        self.log.write(&Record::Update(record.clone()))?;
        self.update_idx += 1;

        let every = self.config.checkpoint_every;
        if every > 0 && self.global_step % every == 0 {
            self.checkpoint()?;
        }
        Ok(record)
    }

    /// Writes a checkpoint for the current state and returns its path.
    pub fn checkpoint(&mut self) -> Result<PathBuf> {
        let log_body_len = self.log.flush()?;
        let path = checkpoint_path(&self.dir, self.global_step);
        TrainCheckpoint {
            version: TRAIN_CHECKPOINT_VERSION,
            compat_hash: self.config.compat_hash(),
            config: self.config.clone(),
            policy: PolicyCheckpoint::new(&self.model, Some(&self.opt)),
            workers: self.workers.clone(),
            shuffle_rng: self.shuffle_rng.clone(),
            global_step: self.global_step,
            update_idx: self.update_idx,
            log_body_len,
        }
        .save(&path)?;
        Ok(path)
    }

    /// Runs the remaining updates, reporting each one, and saves a final
    /// checkpoint.
    pub fn run(mut self, mut on_update: impl FnMut(&UpdateRecord)) -> Result<TrainSummary> {
        while !self.is_finished() {
            let r = self.run_update()?;
            on_update(&r);
        }
        let path = checkpoint_path(&self.dir, self.global_step);
        let final_checkpoint = if path.exists() { path } else { self.checkpoint()? };
        self.log.flush()?;
        Ok(TrainSummary {
            updates: self.update_idx,
            global_step: self.global_step,
            log_path: self.dir.join(LOG_FILE),
            final_checkpoint,
        })
    }
}

fn decode_spec(config: &TrainConfig) -> DecodeSpec {
    DecodeSpec {
        components: config.num_gmm_components,
        gated: config.noise_variant,
        sigma_min: config.sigma_min,
    }
}

fn header(config: &TrainConfig) -> Header {
    Header {
        format: LOG_FORMAT,
        source: "train".into(),
        sim: config.sim_config(),
        decode: decode_spec(config),
        settings: serde_json::to_value(config).expect("config serialises"),
    }
}

/// Trains from scratch, or from `resume` when given.
pub fn train(
    config: TrainConfig,
    dir: &Path,
    resume: Option<&Path>,
    on_update: impl FnMut(&UpdateRecord),
) -> Result<TrainSummary> {
    let trainer = match resume {
        Some(ck) => Trainer::resume(config, dir, ck)?,
        None => Trainer::new(config, dir)?,
    };
    trainer.run(on_update)
}
