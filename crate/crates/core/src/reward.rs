//! Shaped reward: per-node structure/frontier terms, a move-search penalty and
//! an exponential bonus on final coverage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::NodeClass;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConstants {
    /// Attempt penalty scale.
    pub attempt_penalty: f64,
    /// Maximum robot moves per episode.
    pub max_moves: u32,
    /// Terminal bonus scale.
    pub terminal_scale: f64,
    pub discount: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        Self {
            attempt_penalty: 5.0,
            max_moves: 100,
            terminal_scale: 8.0,
            discount: 0.99,
        }
    }
}

impl RewardConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.attempt_penalty > 0.0 && self.terminal_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "attempt_penalty, terminal_scale: must be > 0".into(),
            ));
        }
        if self.max_moves == 0 {
            return Err(Error::InvalidConfig("max_robot_moves: must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidConfig("discount_factor: must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// `(frontier term, structure term)`, each -1 when the node is a frontier
/// node (resp. leaf or split) and +1 otherwise.
pub fn node_reward(class: NodeClass) -> (f64, f64) {
    let indicator = |b: bool| if b { 1.0 } else { 0.0 };
    let r_f = 1.0 - 2.0 * indicator(class.is_frontier);
    let r_c = 1.0 - 2.0 * indicator(class.is_leaf || class.is_split);
    (r_f, r_c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRewardInput {
    /// Classes of the pruned nodes, captured before the prune round.
    pub pruned: Vec<NodeClass>,
    pub attempts: usize,
    pub terminal: bool,
    pub coverage: f64,
}

/// Mean per-node reward minus the attempt penalty. Empty prune sets are
/// rejected.
pub fn timestep_reward(input: &StepRewardInput, k: &RewardConstants) -> Result<f64> {
    if input.pruned.is_empty() {
        return Err(Error::EmptyPruneSet);
    }
    let sum: f64 = input
        .pruned
        .iter()
        .map(|&c| {
            let (f, s) = node_reward(c);
            f + s
        })
        .sum();
    Ok(sum / input.pruned.len() as f64 - attempt_penalty(input.attempts, k))
}

pub fn attempt_penalty(attempts: usize, k: &RewardConstants) -> f64 {
    k.attempt_penalty * attempts as f64 / (2.0 * k.max_moves as f64)
}

pub fn terminal_bonus(coverage: f64, k: &RewardConstants) -> f64 {
    k.terminal_scale * (coverage.exp() - 1.0)
}

pub fn total_reward(input: &StepRewardInput, k: &RewardConstants) -> Result<f64> {
    let r_t = timestep_reward(input, k)?;
    Ok(r_t + bonus_if_terminal(input, k))
}

fn bonus_if_terminal(input: &StepRewardInput, k: &RewardConstants) -> f64 {
    if input.terminal {
        terminal_bonus(input.coverage, k)
    } else {
        0.0
    }
}

/// Logged decomposition of one step's reward.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub mean_frontier: f64,
    pub mean_structure: f64,
    pub penalty: f64,
    pub bonus: f64,
    pub total: f64,
}

/// Reward for an environment step. A step that pruned nothing earns only the
/// terminal bonus (if any).
pub fn step_reward(input: &StepRewardInput, k: &RewardConstants) -> RewardBreakdown {
    let bonus = bonus_if_terminal(input, k);
    if input.pruned.is_empty() {
        return RewardBreakdown {
            bonus,
            total: bonus,
            ..RewardBreakdown::default()
        };
    }
    let n = input.pruned.len() as f64;
    let (sf, sc) = input.pruned.iter().fold((0.0, 0.0), |(a, b), &c| {
        let (f, s) = node_reward(c);
        (a + f, b + s)
    });
    let total = total_reward(input, k).expect("prune set is non-empty");
    RewardBreakdown {
        mean_frontier: sf / n,
        mean_structure: sc / n,
        penalty: attempt_penalty(input.attempts, k),
        bonus,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class(f: bool, children: usize) -> NodeClass {
        NodeClass {
            is_frontier: f,
            is_leaf: children == 0,
            is_split: children >= 2,
        }
    }

    fn input(pruned: Vec<NodeClass>, attempts: usize) -> StepRewardInput {
        StepRewardInput {
            pruned,
            attempts,
            terminal: false,
            coverage: 0.0,
        }
    }

    #[test]
    fn node_reward_table() {
        let table = [
            (true, 0, (-1.0, -1.0)),
            (true, 1, (-1.0, 1.0)),
            (true, 3, (-1.0, -1.0)),
            (false, 0, (1.0, -1.0)),
            (false, 1, (1.0, 1.0)),
            (false, 2, (1.0, -1.0)),
        ];
        for (f, kids, want) in table {
            assert_eq!(node_reward(class(f, kids)), want, "frontier={f} children={kids}");
        }
    }

    #[test]
    fn timestep_examples() {
        let k = RewardConstants::default();
        let r = timestep_reward(&input(vec![class(true, 0), class(false, 1)], 0), &k).unwrap();
        assert_eq!(r, 0.0);
        let r = timestep_reward(&input(vec![class(false, 1)], 4), &k).unwrap();
        assert!((r - 1.9).abs() < 1e-12);
        let r = timestep_reward(&input(vec![class(true, 0)], 100), &k).unwrap();
        assert!((r + 4.5).abs() < 1e-12);
        assert_eq!(timestep_reward(&input(vec![], 0), &k), Err(Error::EmptyPruneSet));
    }

    #[test]
    fn terminal_bonus_examples() {
        let k = RewardConstants::default();
        assert_eq!(terminal_bonus(0.0, &k), 0.0);
        assert!((terminal_bonus(1.0, &k) - 8.0 * (std::f64::consts::E - 1.0)).abs() < 1e-12);
        assert!((terminal_bonus(1.0, &k) - 13.7463).abs() < 1e-4);
        assert!((terminal_bonus(0.45, &k) - 4.546_497_484).abs() < 1e-8);
    }

    #[test]
    fn total_reward_examples() {
        let k = RewardConstants::default();
        // R_t = 0 from a cancelling pair
        let mut inp = input(vec![class(true, 0), class(false, 1)], 0);
        inp.terminal = true;
        inp.coverage = 1.0;
        assert!((total_reward(&inp, &k).unwrap() - 13.7463).abs() < 1e-4);
        // cancelling pair with four rejected candidates: R_t = -0.1
        let mut inp = input(vec![class(true, 0), class(false, 1)], 4);
        inp.terminal = true;
        inp.coverage = 0.45;
        let r_t = timestep_reward(&inp, &k).unwrap();
        assert!((r_t + 0.1).abs() < 1e-12);
        assert!((total_reward(&inp, &k).unwrap() - 4.446_497_484).abs() < 1e-8);
        let inp = input(vec![class(false, 1), class(false, 1), class(true, 1)], 0);
        assert!((total_reward(&inp, &k).unwrap() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_prune_earns_only_bonus() {
        let k = RewardConstants::default();
        let mut inp = input(vec![], 7);
        assert_eq!(step_reward(&inp, &k).total, 0.0);
        inp.terminal = true;
        inp.coverage = 1.0;
        assert_eq!(step_reward(&inp, &k).total, terminal_bonus(1.0, &k));
    }

    #[test]
    fn bonus_is_monotone_and_convex() {
        let k = RewardConstants::default();
        let xs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let b: Vec<f64> = xs.iter().map(|&c| terminal_bonus(c, &k)).collect();
        for w in b.windows(3) {
            assert!(w[1] > w[0] && w[2] > w[1]);
            assert!(w[2] - w[1] >= w[1] - w[0] - 1e-12);
        }
    }
}
