//! Diagonal-covariance Gaussian mixture over map coordinates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    /// `(x, y)` in cell coordinates.
    pub mean: [f64; 2],
    pub std: [f64; 2],
    /// Gated-off components contribute nothing to the density.
    pub active: bool,
}

impl GmmComponent {
    pub fn density(&self, x: [f64; 2]) -> f64 {
        let zx = (x[0] - self.mean[0]) / self.std[0];
        let zy = (x[1] - self.mean[1]) / self.std[1];
        (-0.5 * (zx * zx + zy * zy)).exp() / (2.0 * PI * self.std[0] * self.std[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmAction {
    pub components: Vec<GmmComponent>,
}

impl GmmAction {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Mixture density. Inactive components are dropped without renormalising
    /// the remaining weights.
    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.components
            .iter()
            .filter(|c| c.active)
            .map(|c| c.weight * c.density(x))
            .sum()
    }

    /// Density with every component counted, gates ignored.
    pub fn ungated_density(&self, x: [f64; 2]) -> f64 {
        self.components.iter().map(|c| c.weight * c.density(x)).sum()
    }

    /// Largest ungated density over all cell centres of a `width x height`
    /// map. Gates are ignored so the noise amplitude stays tied to the
    /// predicted mixture even when every component is switched off.
    pub fn max_density_on_grid(&self, width: usize, height: usize) -> f64 {
        let mut best = 0.0f64;
        for y in 0..height {
            for x in 0..width {
                best = best.max(self.ungated_density([x as f64, y as f64]));
            }
        }
        best
    }

    /// Checks the simplex, `sigma_min` and bounds invariants. Returns a
    /// description of the first violation.
    pub fn check_invariants(&self, sigma_min: f64, width: f64, height: f64) -> Result<(), String> {
        let mut sum = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            if !(c.weight >= 0.0) {
                return Err(format!("component {k}: weight {} negative or NaN", c.weight));
            }
            sum += c.weight;
            if !(c.std[0] >= sigma_min && c.std[1] >= sigma_min) || !c.std.iter().all(|s| s.is_finite()) {
                return Err(format!("component {k}: std {:?} below {sigma_min}", c.std));
            }
            let in_x = (0.0..=width).contains(&c.mean[0]);
            let in_y = (0.0..=height).contains(&c.mean[1]);
            if !(in_x && in_y) {
                return Err(format!("component {k}: mean {:?} out of bounds", c.mean));
            }
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("weights sum to {sum}"));
        }
        Ok(())
    }
}
