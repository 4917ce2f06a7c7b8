//! Paired evaluation of pruning strategies: every strategy runs the same
//! episode seeds for the same step budget.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use graphprune_core::{derive_seed, ExplorationEnv, PruneDecision, SimConfig, TerminalCause};
use graphprune_policy::{mean_action, token_matrix, ActorCritic, PolicyCheckpoint};
use graphprune_train::log::{Decision, Header, LogWriter, Record, StepRecord, LOG_FORMAT};
use graphprune_train::{DecodeSpec, TrainCheckpoint, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, Summary};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// No pruning at all.
    None,
    /// Uniformly random prune sets at the configured rate.
    Random,
    /// Mixture from the policy's mean action.
    Learned,
    /// As `Learned`, with component gates and trigonometric noise.
    LearnedNoisy,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::None, Strategy::Random, Strategy::Learned, Strategy::LearnedNoisy];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::None => "none",
            Strategy::Random => "random",
            Strategy::Learned => "learned",
            Strategy::LearnedNoisy => "learned-noisy",
        }
    }

    pub fn needs_policy(self) -> bool {
        matches!(self, Strategy::Learned | Strategy::LearnedNoisy)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub strategies: Vec<Strategy>,
    pub n_simulations: usize,
    /// Steps per simulation; episodes that terminate earlier stop there.
    pub step_budget: u32,
    pub checkpoint: Option<PathBuf>,
    pub seed_base: u64,
    /// Simulator and decoding settings.
    pub config: TrainConfig,
}

impl EvalSpec {
    /// Defaults: every strategy that needs no checkpoint, a budget of the
    /// move cap.
    pub fn new(config: TrainConfig, n_simulations: usize, seed_base: u64) -> Self {
        Self {
            strategies: vec![Strategy::None, Strategy::Random],
            n_simulations,
            step_budget: config.max_robot_moves,
            checkpoint: None,
            seed_base,
            config,
        }
    }

    pub fn episode_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed_base, index as u64)
    }

    fn check(&self) -> Result<()> {
        if self.n_simulations == 0 {
            return Err(HarnessError::Invalid("n_simulations: must be >= 1".into()));
        }
        if self.step_budget == 0 {
            return Err(HarnessError::Invalid("step_budget: must be >= 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(HarnessError::Invalid("strategies: none selected".into()));
        }
        for s in &self.strategies {
            if s.needs_policy() && self.checkpoint.is_none() {
                return Err(HarnessError::MissingCheckpoint(s.to_string()));
            }
        }
        let mut seen = HashMap::new();
        for i in 0..self.n_simulations {
            if let Some(first) = seen.insert(self.episode_seed(i), i) {
                return Err(HarnessError::SeedCollision {
                    first,
                    second: i,
                    seed: self.episode_seed(i),
                });
            }
        }
        self.config.validate()?;
        Ok(())
    }

    /// Simulator settings for `strategy`; only the noisy variant turns noise on.
    pub fn sim_config(&self, strategy: Strategy) -> SimConfig {
        let mut sim = self.config.sim_config();
        sim.pruner.noise_enabled = strategy == Strategy::LearnedNoisy;
        sim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub index: usize,
    pub episode_seed: u64,
    pub steps: u32,
    pub final_coverage: f64,
    pub final_tree_size: usize,
    /// Nodes grown over the whole episode.
    pub nodes_grown: usize,
    pub nodes_pruned: usize,
    pub total_reward: f64,
    /// Absent when the step budget ran out first.
    pub cause: Option<TerminalCause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    /// Final coverage in percent.
    pub coverage_pct: Summary,
    pub tree_size: Summary,
    /// `1 - final_tree_size / (nodes_grown + 1)`: the share of the tree this
    /// episode's pruning removed.
    pub size_reduction: Summary,
    /// `1 - final_tree_size / final_tree_size(none)` on the paired episode,
    /// when the unpruned strategy was evaluated.
    pub size_reduction_vs_unpruned: Option<Summary>,
    pub episodes: Vec<EpisodeResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_simulations: usize,
    pub step_budget: u32,
    pub seed_base: u64,
    pub prune_fraction: f64,
    pub map_size: (usize, usize),
    pub checkpoint: Option<PathBuf>,
    pub strategies: Vec<StrategyReport>,
}

impl EvalReport {
    pub fn strategy(&self, s: Strategy) -> Option<&StrategyReport> {
        self.strategies.iter().find(|r| r.strategy == s)
    }

    /// Canonical JSON; identical inputs give identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

/// Loads a policy from a training checkpoint or a bare policy checkpoint.
pub fn load_policy(path: &Path) -> Result<ActorCritic> {
    if !path.exists() {
        return Err(HarnessError::MissingCheckpoint(path.display().to_string()));
    }
    let policy = match TrainCheckpoint::load(path) {
        Ok(ck) => ck.policy,
        Err(_) => PolicyCheckpoint::load(path, None)?,
    };
    Ok(policy.into_model()?.0)
}

struct Policy<'a> {
    model: &'a ActorCritic,
    decode: DecodeSpec,
}

fn run_episode(
    strategy: Strategy,
    sim: &SimConfig,
    seed: u64,
    index: usize,
    budget: u32,
    policy: Option<&Policy>,
) -> Result<(EpisodeResult, Vec<StepRecord>)> {
    let mut env = ExplorationEnv::new(sim.clone(), seed)?;
    let mut memory = policy.map(|p| p.model.empty_memory());
    let mut records = Vec::new();
    let mut total_reward = 0.0;
    let mut pruned = 0;
    let mut cause = None;
    while env.steps() < budget && !env.is_done() {
        let mut raw = None;
        let gmm;
        let decision = match (strategy, policy) {
            (Strategy::None, _) => PruneDecision::Skip,
            (Strategy::Random, _) => PruneDecision::Random,
            (_, Some(p)) => {
                let mem = memory.as_mut().expect("policy memory");
                let out = p.model.forward(&token_matrix(&env.observe()), mem)?;
                let a = mean_action(&out);
                gmm = p.decode.decode(&a, (env.map.width(), env.map.height()));
                *mem = out.new_memory;
                raw = Some(a);
                PruneDecision::Gmm(&gmm)
            }
            (_, None) => return Err(HarnessError::MissingCheckpoint(strategy.to_string())),
        };
        let out = env.step(decision)?;
        total_reward += out.reward.total;
        pruned += out.pruned.len();
        cause = out.cause;
        records.push(StepRecord {
            global_step: 0,
            worker: 0,
            episode: index as u64,
            episode_seed: seed,
            step: out.step,
            decision: match strategy {
                Strategy::None => Decision::Skip,
                Strategy::Random => Decision::Random,
                _ => Decision::Gmm,
            },
            raw_action: raw,
            reward: out.reward.total,
            coverage: out.coverage,
            tree_size: out.tree_size,
            pruned: out.pruned.len(),
            done: out.done,
            cause: out.cause,
        });
    }
    Ok((
        EpisodeResult {
            index,
            episode_seed: seed,
            steps: env.steps(),
            final_coverage: env.coverage(),
            final_tree_size: env.tree.len(),
            nodes_grown: env.total_added(),
            nodes_pruned: pruned,
            total_reward,
            cause,
        },
        records,
    ))
}

/// Runs every strategy on the shared seeds. With `log_dir`, each strategy's
/// steps go to `eval-<strategy>.jsonl` there, replayable like training logs.
pub fn run_eval(spec: &EvalSpec, log_dir: Option<&Path>) -> Result<EvalReport> {
    spec.check()?;
    let model = match spec.strategies.iter().any(|s| s.needs_policy()) {
        true => {
            let m = load_policy(spec.checkpoint.as_deref().expect("checked"))?;
            let c = m.config();
            if c.embed_width != spec.config.token_width() || c.n_tokens != spec.config.n_tokens() {
                return Err(HarnessError::Invalid(format!(
                    "checkpoint expects {} tokens of width {}, the map gives {} of width {}",
                    c.n_tokens,
                    c.embed_width,
                    spec.config.n_tokens(),
                    spec.config.token_width()
                )));
            }
            Some(m)
        }
        false => None,
    };
    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }

    let mut reports: Vec<StrategyReport> = Vec::new();
    for &strategy in &spec.strategies {
        let sim = spec.sim_config(strategy);
        let policy = model.as_ref().filter(|_| strategy.needs_policy()).map(|m| Policy {
            model: m,
            decode: DecodeSpec {
                components: m.config().gmm_components,
                gated: m.config().gated_actions,
                sigma_min: spec.config.sigma_min,
            },
        });
        let runs: Vec<(EpisodeResult, Vec<StepRecord>)> = (0..spec.n_simulations)
            .into_par_iter()
            .map(|i| run_episode(strategy, &sim, spec.episode_seed(i), i, spec.step_budget, policy.as_ref()))
            .collect::<Result<_>>()?;

        if let Some(dir) = log_dir {
            let header = Header {
                format: LOG_FORMAT,
                source: format!("eval:{strategy}"),
                sim: sim.clone(),
                decode: policy.as_ref().map_or(
                    DecodeSpec {
                        components: spec.config.num_gmm_components,
                        gated: false,
                        sigma_min: spec.config.sigma_min,
                    },
                    |p| p.decode,
                ),
                settings: serde_json::to_value(spec).expect("spec serialises"),
            };
            let mut log = LogWriter::create(&dir.join(format!("eval-{strategy}.jsonl")), &header)?;
            let mut global_step = 0;
            for (_, steps) in &runs {
                for s in steps {
                    let mut s = s.clone();
                    s.global_step = global_step;
                    global_step += 1;
                    log.write(&Record::Step(s))?;
                }
            }
            log.flush()?;
        }

        let episodes: Vec<EpisodeResult> = runs.into_iter().map(|r| r.0).collect();
        reports.push(summarise(strategy, episodes)?);
    }

    if let Some(base) = reports.iter().find(|r| r.strategy == Strategy::None).cloned() {
        for r in &mut reports {
            let xs: Vec<f64> = r
                .episodes
                .iter()
                .zip(&base.episodes)
                .map(|(e, b)| 1.0 - e.final_tree_size as f64 / b.final_tree_size as f64)
                .collect();
            r.size_reduction_vs_unpruned = Some(aggregate(&xs)?);
        }
    }

    Ok(EvalReport {
        n_simulations: spec.n_simulations,
        step_budget: spec.step_budget,
        seed_base: spec.seed_base,
        prune_fraction: spec.config.prune_fraction,
        map_size: (spec.config.env_width, spec.config.env_height),
        checkpoint: spec.checkpoint.clone(),
        strategies: reports,
    })
}

/// Aggregates for one strategy, computed from its per-episode records.
pub fn summarise(strategy: Strategy, episodes: Vec<EpisodeResult>) -> Result<StrategyReport> {
    let pick = |f: &dyn Fn(&EpisodeResult) -> f64| episodes.iter().map(f).collect::<Vec<_>>();
    Ok(StrategyReport {
        strategy,
        coverage_pct: aggregate(&pick(&|e| e.final_coverage * 100.0))?,
        tree_size: aggregate(&pick(&|e| e.final_tree_size as f64))?,
        size_reduction: aggregate(&pick(&|e| 1.0 - e.final_tree_size as f64 / (e.nodes_grown + 1) as f64))?,
        size_reduction_vs_unpruned: None,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use graphprune_policy::Profile;

    use super::*;

    fn spec(n: usize) -> EvalSpec {
        EvalSpec::new(TrainConfig::profile(Profile::Tiny), n, 7)
    }

    #[test]
    fn strategies_share_maps() {
        let s = spec(6);
        let r = run_eval(&s, None).unwrap();
        let none = r.strategy(Strategy::None).unwrap();
        let random = r.strategy(Strategy::Random).unwrap();
        for (a, b) in none.episodes.iter().zip(&random.episodes) {
            assert_eq!(a.episode_seed, b.episode_seed);
            let ea = ExplorationEnv::new(s.sim_config(Strategy::None), a.episode_seed).unwrap();
            let eb = ExplorationEnv::new(s.sim_config(Strategy::Random), b.episode_seed).unwrap();
            assert_eq!((ea.map, ea.robot), (eb.map, eb.robot));
        }
        assert!(none.episodes.iter().all(|e| e.nodes_pruned == 0));
        assert!(random.episodes.iter().any(|e| e.nodes_pruned > 0));
    }

    #[test]
    fn report_is_recomputable_from_records() {
        let r = run_eval(&spec(5), None).unwrap();
        for s in &r.strategies {
            let again = summarise(s.strategy, s.episodes.clone()).unwrap();
            assert_eq!(again.coverage_pct, s.coverage_pct);
            assert_eq!(again.tree_size, s.tree_size);
        }
    }

    #[test]
    fn unlimited_budget_explores_open_map() {
        let mut s = spec(2);
        s.strategies = vec![Strategy::None];
        s.config.obstacle_count = [0, 0];
        s.config.max_robot_moves = 10_000;
        s.config.max_rrt_growth_attempts = 10_000;
        s.step_budget = u32::MAX;
        let r = run_eval(&s, None).unwrap();
        for e in &r.strategies[0].episodes {
            assert_eq!(e.final_coverage, 1.0, "{e:?}");
            assert_eq!(e.cause, Some(TerminalCause::Coverage));
        }
    }

    #[test]
    fn misconfigurations_are_reported() {
        let mut s = spec(2);
        s.strategies = vec![Strategy::Learned];
        assert!(matches!(run_eval(&s, None), Err(HarnessError::MissingCheckpoint(_))));
        s.checkpoint = Some("/nonexistent/ck.json".into());
        assert!(matches!(run_eval(&s, None), Err(HarnessError::MissingCheckpoint(_))));
        let mut s = spec(0);
        assert!(run_eval(&s, None).is_err());
        s.n_simulations = 1;
        s.step_budget = 0;
        assert!(run_eval(&s, None).is_err());
    }
}
