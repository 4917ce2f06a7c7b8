//! Clipped-surrogate policy optimisation over one rollout window.

use graphprune_policy::action::{entropy_tape, log_prob_tape};
use graphprune_policy::{gradients, ActorCritic, Adam, Gradients, Matrix, Tape};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};
use crate::gae::normalize;
use crate::rollout::Transition;

/// Samples per parallel gradient chunk. Chunks are summed in a fixed order so
/// results do not depend on thread count.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
    pub update_every: usize,
    pub k_epochs: usize,
    pub n_minibatch: usize,
    pub target_kl: f64,
    pub total_timesteps: u64,
    pub normalize_advantages: bool,
}

/// Loss terms averaged over a minibatch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MinibatchStats {
    pub loss: f64,
    pub policy_loss: f64,
    /// Mean squared error of the critic.
    pub value_loss: f64,
    pub entropy: f64,
    /// `mean(logp_old - logp_new)`.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Largest `|ratio - 1|` in the minibatch.
    pub max_ratio_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Means over the minibatches evaluated, including one that triggered
    /// the early stop.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Stats of the very first minibatch, evaluated at the collection
    /// parameters.
    pub first: MinibatchStats,
    pub epochs: usize,
    /// Minibatch steps actually applied.
    pub steps_applied: usize,
    pub early_stopped: bool,
    pub grad_norm: f64,
}

/// One sample's view of the data needed by the loss.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub transition: &'a Transition,
    pub advantage: f64,
    pub ret: f64,
}

struct SampleTerms {
    grads: Gradients,
    stats: MinibatchStats,
}

fn sample_terms(model: &ActorCritic, s: &Sample, cfg: &PpoConfig, batch: f64) -> Result<SampleTerms> {
    let tr = s.transition;
    let mut tape = Tape::new(&model.params);
    let out = model.forward_tape(&mut tape, &tr.tokens.matrix(), &tr.memory)?;
    let raw = tape.constant(Matrix::row_vector(tr.raw_action.clone()));
    let lp = log_prob_tape(&mut tape, out.action_mean, out.action_log_std, raw);
    let log_ratio = tape.add_scalar(lp, -tr.log_prob);
    let ratio = tape.exp(log_ratio);
    let surr = tape.scale(ratio, s.advantage);
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let clipped = tape.scale(clipped, s.advantage);
    let surr = tape.minimum(surr, clipped);
    let pg = tape.scale(surr, -1.0);
    let err = tape.add_scalar(out.value, -s.ret);
    let sq = tape.square(err);
    let vl = tape.scale(sq, cfg.value_coeff);
    let ent = entropy_tape(&mut tape, out.action_log_std);
    let ent_term = tape.scale(ent, -cfg.entropy_coeff);
    let total = tape.add(pg, vl);
    let total = tape.add(total, ent_term);
    let loss = tape.scale(total, 1.0 / batch);

    let grads = gradients(&tape, loss).map_err(|e| {
        TrainError::NonFinite(format!(
            "{e} (worker {} episode {} step {}, advantage {}, return {})",
            tr.worker, tr.episode, tr.step, s.advantage, s.ret
        ))
    })?;
    let rho = tape.value(ratio).item();
    Ok(SampleTerms {
        grads,
        stats: MinibatchStats {
            loss: tape.value(total).item(),
            policy_loss: tape.value(pg).item(),
            value_loss: tape.value(sq).item(),
            entropy: tape.value(ent).item(),
            approx_kl: tr.log_prob - tape.value(lp).item(),
            clip_fraction: if (rho - 1.0).abs() > cfg.clip { 1.0 } else { 0.0 },
            max_ratio_deviation: (rho - 1.0).abs(),
        },
    })
}

fn accumulate(acc: &mut Option<Gradients>, g: Gradients) {
    match acc {
        None => *acc = Some(g),
        Some(a) => {
            for (x, y) in a.grads.iter_mut().zip(g.grads) {
                match (x.as_mut(), y) {
                    (Some(x), Some(y)) => x.data.iter_mut().zip(&y.data).for_each(|(p, q)| *p += q),
                    (None, Some(y)) => *x = Some(y),
                    _ => {}
                }
            }
        }
    }
}

fn add_stats(acc: &mut MinibatchStats, s: &MinibatchStats) {
    acc.loss += s.loss;
    acc.policy_loss += s.policy_loss;
    acc.value_loss += s.value_loss;
    acc.entropy += s.entropy;
    acc.approx_kl += s.approx_kl;
    acc.clip_fraction += s.clip_fraction;
    acc.max_ratio_deviation = acc.max_ratio_deviation.max(s.max_ratio_deviation);
}

/// Summed gradient of the mean minibatch loss and the averaged loss terms.
pub fn minibatch_gradient(model: &ActorCritic, batch: &[Sample], cfg: &PpoConfig) -> Result<(Gradients, MinibatchStats)> {
    let b = batch.len() as f64;
    let chunks: Vec<Result<(Option<Gradients>, MinibatchStats)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = None;
            let mut st = MinibatchStats::default();
            for s in chunk {
                let t = sample_terms(model, s, cfg, b)?;
                accumulate(&mut g, t.grads);
                add_stats(&mut st, &t.stats);
            }
            Ok((g, st))
        })
        .collect();
    let mut grads = None;
    let mut stats = MinibatchStats::default();
    for c in chunks {
        let (g, st) = c?;
        if let Some(g) = g {
            accumulate(&mut grads, g);
        }
        add_stats(&mut stats, &st);
    }
    for v in [
        &mut stats.loss,
        &mut stats.policy_loss,
        &mut stats.value_loss,
        &mut stats.entropy,
        &mut stats.approx_kl,
        &mut stats.clip_fraction,
    ] {
        *v /= b;
    }
    Ok((grads.expect("non-empty minibatch"), stats))
}

/// Runs `k_epochs` passes over `n_minibatch` shuffled minibatches, stopping
/// as soon as a minibatch's approximate KL exceeds `target_kl` (that
/// minibatch's step is not applied). The window itself is never modified.
pub fn ppo_update(
    model: &mut ActorCritic,
    opt: &mut Adam,
    window: &[Transition],
    advantages: &[f64],
    returns: &[f64],
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let n = window.len();
    assert!(n > 0 && advantages.len() == n && returns.len() == n, "mismatched update inputs");
    let adv = if cfg.normalize_advantages {
        normalize(advantages)
    } else {
        advantages.to_vec()
    };
    let n_mb = cfg.n_minibatch.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut totals = MinibatchStats::default();
    let mut first = None;
    let mut evaluated = 0usize;
    let mut steps_applied = 0usize;
    let mut epochs = 0usize;
    let mut early_stopped = false;
    let mut grad_norm = 0.0;
    'epochs: for _ in 0..cfg.k_epochs {
        epochs += 1;
        order.shuffle(rng);
        for m in 0..n_mb {
            let (lo, hi) = (m * n / n_mb, (m + 1) * n / n_mb);
            let batch: Vec<Sample> = order[lo..hi]
                .iter()
                .map(|&i| Sample {
                    transition: &window[i],
                    advantage: adv[i],
                    ret: returns[i],
                })
                .collect();
            let (grads, stats) = minibatch_gradient(model, &batch, cfg)?;
            first.get_or_insert(stats);
            evaluated += 1;
            add_stats(&mut totals, &stats);
            if stats.approx_kl > cfg.target_kl {
                early_stopped = true;
                break 'epochs;
            }
            grad_norm = opt.apply(&mut model.params, &grads);
            steps_applied += 1;
        }
    }
    let e = evaluated as f64;
    Ok(UpdateStats {
        policy_loss: totals.policy_loss / e,
        value_loss: totals.value_loss / e,
        entropy: totals.entropy / e,
        approx_kl: totals.approx_kl / e,
        clip_fraction: totals.clip_fraction / e,
        first: first.expect("at least one minibatch"),
        epochs,
        steps_applied,
        early_stopped,
        grad_norm,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use graphprune_policy::{log_prob, ParamStore};
    use rand::SeedableRng;

    use super::*;
    use crate::rollout::tests::{tiny, workers};
    use crate::rollout::{collect_window, window_advantages};

    fn window(n: usize) -> (crate::config::TrainConfig, ActorCritic, Vec<Transition>, Vec<f64>, Vec<f64>) {
        let (cfg, model, decode) = tiny();
        let mut ws = workers(&cfg, &model, 2);
        let w = collect_window(&mut ws, &model, &decode, n).unwrap();
        let (a, r) = window_advantages(&w, 0.99, 0.95);
        (cfg, model, w.transitions, a, r)
    }

    fn bits(p: &ParamStore) -> Vec<u64> {
        p.params.iter().flat_map(|p| p.value.data.iter().map(|x| x.to_bits())).collect()
    }

    #[test]
    fn first_minibatch_has_unit_ratio() {
        let (cfg, mut model, buf, adv, ret) = window(64);
        let mut opt = Adam::new(&model.params, cfg.learning_rate, cfg.max_grad_norm);
        let snapshot = buf.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stats = ppo_update(&mut model, &mut opt, &buf, &adv, &ret, &cfg.ppo_config(), &mut rng).unwrap();
        assert_eq!(stats.first.max_ratio_deviation, 0.0);
        assert_eq!(stats.first.clip_fraction, 0.0);
        assert!(stats.first.approx_kl.abs() <= 1e-10);
        assert!(stats.steps_applied >= 1);
        assert_eq!(buf, snapshot);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bitwise() {
        let (cfg, mut model, buf, adv, ret) = window(48);
        let before = bits(&model.params);
        let mut opt = Adam::new(&model.params, 0.0, cfg.max_grad_norm);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stats = ppo_update(&mut model, &mut opt, &buf, &adv, &ret, &cfg.ppo_config(), &mut rng).unwrap();
        assert_eq!(bits(&model.params), before);
        assert_eq!(stats.steps_applied, cfg.k_epochs * cfg.num_minibatch);
        assert!(stats.value_loss > 0.0 && stats.entropy.is_finite());
    }

    fn ppo(clip: f64, value_coeff: f64, entropy_coeff: f64) -> PpoConfig {
        PpoConfig {
            learning_rate: 0.0,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip,
            value_coeff,
            entropy_coeff,
            update_every: 1,
            k_epochs: 1,
            n_minibatch: 1,
            target_kl: 0.03,
            total_timesteps: 1,
            normalize_advantages: false,
        }
    }

    /// The transition with its stored log-probability shifted so the ratio
    /// under the current parameters is `rho`.
    fn with_ratio(t: &Transition, rho: f64) -> Transition {
        let mut t = t.clone();
        t.log_prob -= rho.ln();
        t
    }

    fn loss_at(model: &ActorCritic, s: &Sample, cfg: &PpoConfig) -> f64 {
        minibatch_gradient(model, std::slice::from_ref(s), cfg).unwrap().1.loss
    }

    fn central_difference(model: &mut ActorCritic, p: usize, k: usize, s: &Sample, cfg: &PpoConfig) -> f64 {
        let h = 1e-5;
        let orig = model.params.params[p].value.data[k];
        model.params.params[p].value.data[k] = orig + h;
        let up = loss_at(model, s, cfg);
        model.params.params[p].value.data[k] = orig - h;
        let down = loss_at(model, s, cfg);
        model.params.params[p].value.data[k] = orig;
        (up - down) / (2.0 * h)
    }

    #[test]
    fn clipped_sample_has_no_gradient_through_ratio() {
        let (_, mut model, buf, _, _) = window(4);
        let cfg = ppo(0.1, 0.0, 0.0);
        let t = with_ratio(&buf[1], 1.5);
        let s = Sample {
            transition: &t,
            advantage: 2.0,
            ret: 0.0,
        };
        let (g, stats) = minibatch_gradient(&model, &[s], &cfg).unwrap();
        assert!((stats.policy_loss + 1.1 * 2.0).abs() < 1e-12);
        assert_eq!(stats.clip_fraction, 1.0);
        assert!(g.grads.iter().flatten().all(|m| m.data.iter().all(|&x| x == 0.0)));
        // The loss is flat in every direction that moves the mean or std.
        let mean_bias = model.params.params.iter().position(|p| p.name == "actor.out.b").unwrap();
        let log_std = model.log_std_param().0;
        for (p, k) in [(mean_bias, 0), (mean_bias, 3), (log_std, 1)] {
            assert!(central_difference(&mut model, p, k, &s, &cfg).abs() < 1e-9);
        }

        // Inside the trust region the same sample does carry gradient, and it
        // agrees with finite differences.
        let t = with_ratio(&buf[1], 1.05);
        let s = Sample {
            transition: &t,
            advantage: 2.0,
            ret: 0.0,
        };
        let (g, _) = minibatch_gradient(&model, &[s], &cfg).unwrap();
        for (p, k) in [(mean_bias, 0), (log_std, 1)] {
            let an = g.grads[p].as_ref().unwrap().data[k];
            let fd = central_difference(&mut model, p, k, &s, &cfg);
            assert!(an != 0.0 && (an - fd).abs() <= 1e-6 * an.abs().max(1e-3), "{an} vs {fd}");
        }
    }

    #[test]
    fn loss_matches_hand_computed_fixture() {
        let (_, model, buf, _, _) = window(4);
        let cfg = ppo(0.1, 0.5, 0.01);
        let rho = [1.0, 1.5, 0.5, 1.05];
        let adv = [1.0, 2.0, -1.0, -3.0];
        let err = [0.5, -1.0, 2.0, 0.0];
        let ts: Vec<Transition> = buf.iter().zip(rho).map(|(t, r)| with_ratio(t, r)).collect();
        let samples: Vec<Sample> = ts
            .iter()
            .zip(adv)
            .zip(err)
            .map(|((t, a), e)| Sample {
                transition: t,
                advantage: a,
                ret: t.value + e,
            })
            .collect();
        let (_, stats) = minibatch_gradient(&model, &samples, &cfg).unwrap();

        // -min(rho A, clip(rho) A) per sample: -1, -2.2, 0.9, 3.15.
        let policy = (-1.0 - 2.2 + 0.9 + 3.15) / 4.0;
        // Squared critic errors 0.25, 1, 4, 0.
        let value = (0.25 + 1.0 + 4.0 + 0.0) / 4.0;
        let d = model.config().action_dim() as f64;
        let entropy = d * model.config().action_log_std_init + d * 0.5 * (1.0 + (2.0 * PI).ln());
        let expected = policy + 0.5 * value - 0.01 * entropy;
        assert!((stats.policy_loss - policy).abs() < 1e-10, "{}", stats.policy_loss);
        assert!((stats.value_loss - value).abs() < 1e-10);
        assert!((stats.entropy - entropy).abs() < 1e-10);
        assert!((stats.loss - expected).abs() < 1e-10, "{} vs {expected}", stats.loss);
        assert_eq!(stats.clip_fraction, 0.5);
    }

    #[test]
    fn stored_log_probs_reproduce_exactly() {
        let (_, model, buf, _, _) = window(6);
        for t in &buf {
            let out = model.forward(&t.tokens.matrix(), &t.memory).unwrap();
            let lp = log_prob(&out.action_mean, &out.action_log_std, &t.raw_action);
            assert_eq!(lp.to_bits(), t.log_prob.to_bits());
        }
    }

    #[test]
    fn kl_early_stop_skips_the_offending_step() {
        let (cfg, mut model, buf, adv, ret) = window(32);
        let mut shifted = buf.clone();
        for t in &mut shifted {
            t.log_prob += 1.0;
        }
        let before = bits(&model.params);
        let mut opt = Adam::new(&model.params, 1e-3, None);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stats = ppo_update(&mut model, &mut opt, &shifted, &adv, &ret, &cfg.ppo_config(), &mut rng).unwrap();
        assert!(stats.early_stopped);
        assert_eq!(stats.steps_applied, 0);
        assert!((stats.first.approx_kl - 1.0).abs() < 1e-12);
        assert_eq!(bits(&model.params), before);
    }
}
