//! Diagonal-Gaussian distribution over the raw action vector and its
//! decoding into a mixture.

use std::f64::consts::PI;

use graphprune_core::{GmmAction, GmmComponent};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::PolicyOutput;
use crate::tape::{sigmoid, Tape, Var};

/// Default std at a zero logit is `sigma_min + ln 2 * STD_SCALE * max(w, h)`.
pub const STD_SCALE: f64 = 0.1;
/// Std logits are capped here so huge inputs still decode to finite stds.
pub const STD_LOGIT_CAP: f64 = 50.0;

fn half_log_two_pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

/// Draws `raw ~ N(mean, exp(log_std)^2)` and returns it with its log-density.
pub fn sample_action<R: Rng + ?Sized>(out: &PolicyOutput, rng: &mut R) -> (Vec<f64>, f64) {
    let raw: Vec<f64> = out
        .action_mean
        .iter()
        .zip(&out.action_log_std)
        .map(|(&m, &s)| {
            let eps: f64 = rng.sample(StandardNormal);
            m + s.exp() * eps
        })
        .collect();
    let lp = log_prob(&out.action_mean, &out.action_log_std, &raw);
    (raw, lp)
}

/// Deterministic mode of the distribution.
pub fn mean_action(out: &PolicyOutput) -> Vec<f64> {
    out.action_mean.clone()
}

/// Joint log-density. Evaluated in the same operation order as
/// [`log_prob_tape`] so both agree bit for bit.
pub fn log_prob(mean: &[f64], log_std: &[f64], raw: &[f64]) -> f64 {
    let quad: f64 = raw
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&x, &m), &s)| {
            let z = (x - m) * (s * -1.0).exp();
            z * z
        })
        .sum();
    let log_norm: f64 = log_std.iter().sum();
    (quad * -0.5 + log_norm * -1.0) + -(raw.len() as f64) * half_log_two_pi()
}

pub fn entropy(log_std: &[f64]) -> f64 {
    let s: f64 = log_std.iter().sum();
    s + log_std.len() as f64 * (0.5 + half_log_two_pi())
}

/// Row-wise log-density of `raw` (B x D) under means (B x D) and a shared
/// log-std row (1 x D); returns a B x 1 column.
pub fn log_prob_tape(t: &mut Tape, mean: Var, log_std: Var, raw: Var) -> Var {
    let d = t.value(raw).cols as f64;
    let diff = t.sub(raw, mean);
    let neg = t.scale(log_std, -1.0);
    let inv_std = t.exp(neg);
    let z = t.mul_row(diff, inv_std);
    let z2 = t.square(z);
    let quad = t.sum_cols(z2);
    let quad = t.scale(quad, -0.5);
    let log_norm = t.sum_all(log_std);
    let log_norm = t.scale(log_norm, -1.0);
    let lp = t.add_scalar_var(quad, log_norm);
    t.add_scalar(lp, -d * half_log_two_pi())
}

/// 1 x 1 entropy of the shared log-std row.
pub fn entropy_tape(t: &mut Tape, log_std: Var) -> Var {
    let d = t.value(log_std).len() as f64;
    let s = t.sum_all(log_std);
    t.add_scalar(s, d * (0.5 + half_log_two_pi()))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Decodes a raw action of layout `[weights K | means 2K | stds 2K | gates K]`
/// (gates only when `gated`) into a mixture on a `width x height` map.
///
/// Weights are a softmax, means squash into `[0, width-1] x [0, height-1]`,
/// stds are `sigma_min` plus a scaled softplus and a gate is on when its
/// sigmoid reaches 0.5.
pub fn to_gmm(raw: &[f64], bounds: (usize, usize), components: usize, gated: bool, sigma_min: f64) -> GmmAction {
    let k = components;
    let want = k * if gated { 6 } else { 5 };
    assert_eq!(raw.len(), want, "raw action length");
    let (w, h) = bounds;
    let extent = [(w.max(1) - 1) as f64, (h.max(1) - 1) as f64];
    let std_scale = STD_SCALE * w.max(h) as f64;
    let logits = &raw[..k];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let components = (0..k)
        .map(|i| {
            let mean = [0, 1].map(|a| sigmoid(raw[k + 2 * i + a]) * extent[a]);
            let std = [0, 1].map(|a| {
                let l = raw[3 * k + 2 * i + a].min(STD_LOGIT_CAP);
                sigma_min + softplus(l) * std_scale
            });
            let active = !gated || sigmoid(raw[5 * k + i]) >= 0.5;
            GmmComponent {
                weight: exps[i] / total,
                mean,
                std,
                active,
            }
        })
        .collect();
    GmmAction { components }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EpisodicMemory;
    use crate::tape::{Matrix, ParamStore};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn output(mean: Vec<f64>, log_std: Vec<f64>) -> PolicyOutput {
        PolicyOutput {
            action_mean: mean,
            action_log_std: log_std,
            value: 0.0,
            new_memory: EpisodicMemory { layers: vec![] },
        }
    }

    #[test]
    fn zero_raw_decodes_symmetric() {
        let g = to_gmm(&[0.0; 40], (100, 60), 8, false, 1.0);
        for c in &g.components {
            assert!((c.weight - 0.125).abs() < 1e-15);
            assert_eq!(c.mean, [49.5, 29.5]);
            let s = 1.0 + 2f64.ln() * 10.0;
            assert!((c.std[0] - s).abs() < 1e-12 && (c.std[1] - s).abs() < 1e-12);
            assert!(c.active);
        }
    }

    #[test]
    fn weight_logit_example() {
        let mut raw = vec![0.0; 40];
        raw[0] = 2f64.ln();
        let g = to_gmm(&raw, (10, 10), 8, false, 1.0);
        assert!((g.components[0].weight - 2.0 / 9.0).abs() < 1e-15);
        for c in &g.components[1..] {
            assert!((c.weight - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn means_saturate_at_edges() {
        let mut raw = vec![0.0; 10];
        raw[2] = 1e6;
        raw[3] = -1e6;
        let g = to_gmm(&raw, (50, 40), 2, false, 1.0);
        assert_eq!(g.components[0].mean, [49.0, 0.0]);
    }

    #[test]
    fn gates_threshold_at_zero_logit() {
        let mut raw = vec![0.0; 12];
        raw[10] = -1e-9;
        raw[11] = 0.0;
        let g = to_gmm(&raw, (10, 10), 2, true, 1.0);
        assert!(!g.components[0].active);
        assert!(g.components[1].active);
    }

    proptest! {
        #[test]
        fn decoded_actions_are_valid(raw in prop::collection::vec(
            prop_oneof![-1e300..1e300f64, -50.0..50.0f64, Just(0.0)], 18)) {
            let g = to_gmm(&raw, (100, 100), 3, true, 1.0);
            prop_assert!(g.check_invariants(1.0, 100.0, 100.0).is_ok(), "{:?}", g);
        }
    }

    #[test]
    fn zero_variance_limit_returns_mean() {
        let out = output(vec![0.3, -2.0, 7.0], vec![-60.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (raw, _) = sample_action(&out, &mut rng);
        for (r, m) in raw.iter().zip(&out.action_mean) {
            assert!((r - m).abs() < 1e-20);
        }
        assert_eq!(mean_action(&out), out.action_mean);
    }

    #[test]
    fn log_prob_of_mean_unit_std() {
        let d = 7;
        let lp = log_prob(&vec![1.5; d], &vec![0.0; d], &vec![1.5; d]);
        assert!((lp + d as f64 / 2.0 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn sample_mean_within_three_standard_errors() {
        let out = output(vec![0.5, -1.0, 3.0], vec![0.0, -1.0, 0.7]);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            let (raw, _) = sample_action(&out, &mut rng);
            for (s, r) in sums.iter_mut().zip(&raw) {
                *s += r;
            }
        }
        for i in 0..3 {
            let se = out.action_log_std[i].exp() / (n as f64).sqrt();
            assert!((sums[i] / n as f64 - out.action_mean[i]).abs() < 3.0 * se, "dim {i}");
        }
    }

    #[test]
    fn entropy_examples() {
        let e = entropy(&[0.0]);
        assert!((e - 0.5 * (2.0 * PI * std::f64::consts::E).ln()).abs() < 1e-12);
        assert!((e - 1.41894).abs() < 1e-5);
        let ls = vec![-0.3, 0.2, 1.1, -2.0];
        let doubled: Vec<f64> = ls.iter().map(|s| s + 2f64.ln()).collect();
        assert!((entropy(&doubled) - entropy(&ls) - 4.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_prob_round_trip_and_tape_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let store = ParamStore::default();
        for _ in 0..200 {
            let d = rng.random_range(1..12);
            let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let ls: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..1.0)).collect();
            let out = output(mean.clone(), ls.clone());
            let (raw, lp) = sample_action(&out, &mut rng);
            assert!((log_prob(&mean, &ls, &raw) - lp).abs() < 1e-12);
            let mut t = Tape::new(&store);
            let m = t.constant(Matrix::row_vector(mean));
            let s = t.constant(Matrix::row_vector(ls.clone()));
            let x = t.constant(Matrix::row_vector(raw));
            let v = log_prob_tape(&mut t, m, s, x);
            assert_eq!(t.value(v).item(), lp);
            let e = entropy_tape(&mut t, s);
            assert_eq!(t.value(e).item(), entropy(&ls));
        }
    }
}
