//! Re-executes logged episodes from their seeds and recorded decisions and
//! compares every reward, coverage and tree size bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use graphprune_core::{ExplorationEnv, PruneDecision};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};
use crate::log::{read_log, Decision, Record, StepRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub global_step: u64,
    pub field: String,
    pub logged: f64,
    pub replayed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub episodes: usize,
    pub steps: usize,
    pub divergences: Vec<Divergence>,
}

impl ReplayReport {
    pub fn is_exact(&self) -> bool {
        self.divergences.is_empty()
    }
}

pub fn replay_log(path: &Path) -> Result<ReplayReport> {
    let (header, records) = read_log(path)?;
    // Each (worker, episode) stream replays independently.
    let mut episodes: BTreeMap<(usize, u64), Vec<&StepRecord>> = BTreeMap::new();
    for r in &records {
        if let Record::Step(s) = r {
            episodes.entry((s.worker, s.episode)).or_default().push(s);
        }
    }
    let mut report = ReplayReport {
        episodes: episodes.len(),
        steps: 0,
        divergences: Vec::new(),
    };
    for steps in episodes.values() {
        let mut env = ExplorationEnv::new(header.sim.clone(), steps[0].episode_seed)?;
        for s in steps {
            if s.episode_seed != env.episode_seed() || s.step != env.steps() || env.is_done() {
                return Err(TrainError::Corrupt {
                    path: path.to_path_buf(),
                    message: format!("step record {} is out of sequence", s.global_step),
                });
            }
            let gmm;
            let decision = match s.decision {
                Decision::Skip => PruneDecision::Skip,
                Decision::Random => PruneDecision::Random,
                Decision::Gmm => {
                    let raw = s.raw_action.as_ref().ok_or_else(|| TrainError::Corrupt {
                        path: path.to_path_buf(),
                        message: format!("step record {} lacks its action", s.global_step),
                    })?;
                    gmm = header.decode.decode(raw, (env.map.width(), env.map.height()));
                    PruneDecision::Gmm(&gmm)
                }
            };
            let out = env.step(decision)?;
            report.steps += 1;
            let mut check = |field: &str, logged: f64, replayed: f64| {
                if logged.to_bits() != replayed.to_bits() {
                    report.divergences.push(Divergence {
                        global_step: s.global_step,
                        field: field.into(),
                        logged,
                        replayed,
                    });
                }
            };
            check("reward", s.reward, out.reward.total);
            check("coverage", s.coverage, out.coverage);
            check("tree_size", s.tree_size as f64, out.tree_size as f64);
            check("pruned", s.pruned as f64, out.pruned.len() as f64);
            check("done", s.done as u8 as f64, out.done as u8 as f64);
        }
    }
    Ok(report)
}
