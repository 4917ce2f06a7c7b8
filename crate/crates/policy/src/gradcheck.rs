//! Central finite-difference verification of the full actor-critic backward
//! pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::action::{entropy_tape, log_prob_tape, sample_action};
use crate::error::Result;
use crate::model::{gradients, ActorCritic, EpisodicMemory};
use crate::tape::{Matrix, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Entries whose step was reduced to stay clear of a ReLU kink.
    pub refined: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    /// Analytic and finite-difference values at the worst entry.
    pub worst_values: (f64, f64),
}

/// Composite scalar touching every head: `-1.3 logp(raw) + 0.5 (V - y)^2 -
/// 0.01 H`, evaluated with two timesteps of memory.
struct Probe {
    tokens: Matrix,
    memory: EpisodicMemory,
    raw: Vec<f64>,
    target: f64,
}

impl Probe {
    fn new(model: &ActorCritic, seed: u64) -> Result<Self> {
        let cfg = model.config();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rand_tokens = |rng: &mut ChaCha8Rng| {
            let n = cfg.n_tokens * cfg.embed_width;
            Matrix::from_vec(cfg.n_tokens, cfg.embed_width, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
        };
        let mut memory = model.empty_memory();
        for _ in 0..2 {
            let t = rand_tokens(&mut rng);
            memory = model.forward(&t, &memory)?.new_memory;
        }
        let tokens = rand_tokens(&mut rng);
        let out = model.forward(&tokens, &memory)?;
        let (raw, _) = sample_action(&out, &mut rng);
        Ok(Self {
            tokens,
            memory,
            raw,
            target: rng.random_range(-1.0..1.0),
        })
    }

    fn loss<'p>(&self, model: &ActorCritic, tape: &mut Tape<'p>) -> Result<crate::tape::Var> {
        let out = model.forward_tape(tape, &self.tokens, &self.memory)?;
        let raw = tape.constant(Matrix::row_vector(self.raw.clone()));
        let lp = log_prob_tape(tape, out.action_mean, out.action_log_std, raw);
        let pg = tape.scale(lp, -1.3);
        let pg = tape.sum_all(pg);
        let diff = tape.add_scalar(out.value, -self.target);
        let sq = tape.square(diff);
        let vl = tape.scale(sq, 0.5);
        let ent = entropy_tape(tape, out.action_log_std);
        let ent = tape.scale(ent, -0.01);
        let l = tape.add(pg, vl);
        Ok(tape.add(l, ent))
    }

    fn value(&self, model: &ActorCritic) -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new(&model.params);
        let l = self.loss(model, &mut tape)?;
        Ok((tape.value(l).item(), tape.relu_pattern()))
    }
}

/// Smallest step tried when a stencil straddles a ReLU kink.
const MIN_STEP: f64 = 1e-8;

/// Compares analytic gradients of the probe loss against the fourth-order
/// central difference for every scalar parameter. Relative error is
/// `|a - f| / max(|a|, |f|, floor)`.
///
/// The difference starts with step `h`. When any stencil point switches a ReLU
/// input's sign relative to the unperturbed parameters the stencil spans a
/// kink, so the step is quartered until it no longer does (or reaches
/// [`MIN_STEP`]).
pub fn check_model(model: &mut ActorCritic, seed: u64, h: f64, floor: f64) -> Result<GradCheckReport> {
    let probe = Probe::new(model, seed)?;
    let grads = {
        let mut tape = Tape::new(&model.params);
        let l = probe.loss(model, &mut tape)?;
        gradients(&tape, l)?
    };
    let centre = probe.value(model)?.1;
    let mut report = GradCheckReport {
        checked: 0,
        refined: 0,
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        worst_values: (0.0, 0.0),
    };
    for p in 0..model.params.len() {
        for k in 0..model.params.params[p].value.len() {
            let orig = model.params.params[p].value.data[k];
            let mut step = h;
            let fd = loop {
                let mut smooth = true;
                let mut at = |x: f64| -> Result<f64> {
                    model.params.params[p].value.data[k] = x;
                    let (v, pattern) = probe.value(model)?;
                    smooth &= pattern == centre;
                    Ok(v)
                };
                let (u2, u1, d1, d2) = (
                    at(orig + 2.0 * step)?,
                    at(orig + step)?,
                    at(orig - step)?,
                    at(orig - 2.0 * step)?,
                );
                model.params.params[p].value.data[k] = orig;
                let fd = (-u2 + 8.0 * u1 - 8.0 * d1 + d2) / (12.0 * step);
                if smooth || step / 4.0 < MIN_STEP {
                    break fd;
                }
                step /= 4.0;
            };
            if step < h {
                report.refined += 1;
            }
            let an = grads.grads[p].as_ref().map_or(0.0, |g| g.data[k]);
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (model.params.params[p].name.clone(), k);
                report.worst_values = (an, fd);
            }
        }
    }
    Ok(report)
}
