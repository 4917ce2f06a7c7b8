//! Turns a mixture action into a concrete set of nodes to remove.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GmmAction;
use crate::tree::{ExplorationTree, NodeId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunerConfig {
    /// Fraction of freshly grown nodes removed each prune round.
    pub prune_fraction: f64,
    pub sigma_min: f64,
    pub noise_enabled: bool,
    /// Noise amplitude relative to the largest mixture density on the map.
    pub noise_scale: f64,
    /// Angular frequencies of the noise pattern; `None` means one period
    /// across the map in each axis.
    pub noise_frequencies: Option<[f64; 2]>,
}

impl Default for PrunerConfig {
    fn default() -> Self {
        Self {
            prune_fraction: 0.96,
            sigma_min: 1.0,
            noise_enabled: false,
            noise_scale: 1e-3,
            noise_frequencies: None,
        }
    }
}

impl PrunerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.prune_fraction) {
            return Err(Error::InvalidConfig(format!(
                "prune_fraction: {} not in [0, 1)",
                self.prune_fraction
            )));
        }
        if !(self.sigma_min > 0.0) {
            return Err(Error::InvalidConfig("sigma_min: must be > 0".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidConfig("noise_scale: must be >= 0".into()));
        }
        Ok(())
    }

    pub fn frequencies(&self, width: usize, height: usize) -> [f64; 2] {
        self.noise_frequencies
            .unwrap_or([2.0 * PI / width as f64, 2.0 * PI / height as f64])
    }
}

/// Spatial noise pattern in `[0, 1]`.
pub fn noise_pattern(x: [f64; 2], freq: [f64; 2]) -> f64 {
    ((freq[0] * x[0]).sin() * (freq[1] * x[1]).cos() + 1.0) / 2.0
}

/// Adds the trigonometric noise term to a base density.
pub fn apply_noise(
    base_density: f64,
    x: [f64; 2],
    global_max_density: f64,
    noise_scale: f64,
    freq: [f64; 2],
) -> f64 {
    base_density + noise_scale * global_max_density * noise_pattern(x, freq)
}

/// Number of nodes to prune after `nodes_added` were grown, keeping at least
/// two nodes in a tree of `tree_len`.
pub fn prune_count(nodes_added: usize, prune_fraction: f64, tree_len: usize) -> usize {
    // the epsilon keeps e.g. 0.96 * 100 from flooring to 95
    let n = (prune_fraction * nodes_added as f64 + 1e-9).floor() as usize;
    n.min(tree_len.saturating_sub(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredNode {
    pub id: NodeId,
    pub score: f64,
}

/// Every node except the root and the robot anchor, ascending by id.
pub fn prunable(tree: &ExplorationTree, anchor: NodeId) -> Vec<NodeId> {
    tree.ids()
        .filter(|&id| id != tree.root() && id != anchor)
        .collect()
}

/// Scores every prunable node with the (optionally noised) mixture density and
/// returns the `n` highest. Ties go to the higher noise pattern value, then to
/// the lower id.
pub fn select_prune_set(
    tree: &ExplorationTree,
    anchor: NodeId,
    action: &GmmAction,
    n: usize,
    config: &PrunerConfig,
    map_size: (usize, usize),
) -> Vec<ScoredNode> {
    if n == 0 {
        return Vec::new();
    }
    let noise = (config.noise_enabled && config.noise_scale > 0.0).then(|| {
        (
            action.max_density_on_grid(map_size.0, map_size.1),
            config.frequencies(map_size.0, map_size.1),
        )
    });
    // (node, noise pattern value); the pattern breaks score ties before ids
    let mut scored: Vec<(ScoredNode, f64)> = prunable(tree, anchor)
        .into_iter()
        .map(|id| {
            let p = tree.pos(id);
            let x = [p.x as f64, p.y as f64];
            let base = action.density(x);
            let (score, eta) = match noise {
                Some((max, freq)) => (
                    apply_noise(base, x, max, config.noise_scale, freq),
                    noise_pattern(x, freq),
                ),
                None => (base, 0.0),
            };
            (ScoredNode { id, score }, eta)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.score
            .total_cmp(&a.0.score)
            .then(b.1.total_cmp(&a.1))
            .then(a.0.id.cmp(&b.0.id))
    });
    scored.into_iter().take(n).map(|s| s.0).collect()
}

/// Uniform sample of `n` prunable nodes without replacement.
pub fn random_prune_set<R: Rng + ?Sized>(
    tree: &ExplorationTree,
    anchor: NodeId,
    n: usize,
    rng: &mut R,
) -> Vec<NodeId> {
    let pool = prunable(tree, anchor);
    let n = n.min(pool.len());
    let mut picked: Vec<NodeId> = rand::seq::index::sample(rng, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort();
    picked
}

/// Removes the given nodes one after another.
pub fn apply_prune(tree: &mut ExplorationTree, anchor: NodeId, ids: &[NodeId]) -> Result<()> {
    for &id in ids {
        tree.remove_node(id, anchor)?;
    }
    Ok(())
}
