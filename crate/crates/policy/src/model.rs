//! Gated Transformer-XL encoder with actor and critic heads.
//!
//! Each block: pre-norm relative-position attention over `[memory; tokens]`,
//! a GRU-style gate, a pre-norm position-wise feed-forward net and a second
//! gate. The memory holds one pooled vector per past timestep and layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PolicyConfig;
use crate::error::{PolicyError, Result};
use crate::tape::{Gradients, Matrix, ParamId, ParamStore, Tape, Var};

const LN_EPS: f64 = 1e-5;
const POS_INIT: f64 = 0.02;
const ACTOR_OUT_GAIN: f64 = 0.01;

/// Per-layer summaries of past timesteps, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodicMemory {
    pub layers: Vec<Matrix>,
}

impl EpisodicMemory {
    pub fn empty(config: &PolicyConfig) -> Self {
        Self {
            layers: vec![Matrix::zeros(0, config.layer_size); config.n_layers],
        }
    }

    /// Timesteps currently held.
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, |m| m.rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        for m in &mut self.layers {
            *m = Matrix::zeros(0, m.cols);
        }
    }

    /// Appends one summary row per layer, dropping the oldest rows beyond
    /// `capacity`.
    fn pushed(&self, summaries: &[Vec<f64>], capacity: usize) -> Self {
        let layers = self
            .layers
            .iter()
            .zip(summaries)
            .map(|(m, s)| {
                let total = m.rows + 1;
                let keep = total.min(capacity);
                let mut data = Vec::with_capacity(keep * m.cols);
                let skip = total - keep;
                if skip < m.rows {
                    data.extend_from_slice(&m.data[skip * m.cols..]);
                }
                if keep > 0 {
                    data.extend_from_slice(s);
                }
                Matrix::from_vec(keep, m.cols, data)
            })
            .collect();
        Self { layers }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub action_mean: Vec<f64>,
    pub action_log_std: Vec<f64>,
    pub value: f64,
    pub new_memory: EpisodicMemory,
}

impl PolicyOutput {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.action_mean.iter().all(|v| v.is_finite())
            && self.action_log_std.iter().all(|v| v.is_finite())
    }
}

/// Tape handles for one forward pass.
pub struct TapeOutput {
    pub action_mean: Var,
    pub action_log_std: Var,
    pub value: Var,
    /// Mean input row of every layer, the next memory entry.
    pub summaries: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Gate {
    wr: ParamId,
    ur: ParamId,
    wz: ParamId,
    uz: ParamId,
    wg: ParamId,
    ug: ParamId,
    bg: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: Norm,
    q: ParamId,
    k: ParamId,
    v: ParamId,
    o: ParamId,
    rel: ParamId,
    gate1: Gate,
    ln2: Norm,
    ff1: Linear,
    ff2: Linear,
    gate2: Gate,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: Linear,
    pos: ParamId,
    blocks: Vec<Block>,
    ln_f: Norm,
    actor: Vec<Linear>,
    actor_out: Linear,
    log_std: ParamId,
    critic: Vec<Linear>,
    critic_out: Linear,
}

enum Init {
    Glorot(f64),
    Uniform(f64),
    Const(f64),
}

struct Builder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        let data = match init {
            Init::Glorot(gain) => {
                let a = gain * (6.0 / (rows + cols) as f64).sqrt();
                (0..rows * cols).map(|_| self.rng.random_range(-a..=a)).collect()
            }
            Init::Uniform(a) => (0..rows * cols).map(|_| self.rng.random_range(-a..=a)).collect(),
            Init::Const(c) => vec![c; rows * cols],
        };
        self.store.add(name, Matrix::from_vec(rows, cols, data))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Linear {
        Linear {
            w: self.add(format!("{name}.w"), fan_in, fan_out, Init::Glorot(gain)),
            b: self.add(format!("{name}.b"), 1, fan_out, Init::Const(0.0)),
        }
    }

    fn norm(&mut self, name: &str, width: usize) -> Norm {
        Norm {
            gain: self.add(format!("{name}.gain"), 1, width, Init::Const(1.0)),
            bias: self.add(format!("{name}.bias"), 1, width, Init::Const(0.0)),
        }
    }

    fn gate(&mut self, name: &str, width: usize, bias: f64) -> Gate {
        let mut m = |s: &str| self.add(format!("{name}.{s}"), width, width, Init::Glorot(1.0));
        let (wr, ur, wz, uz, wg, ug) = (m("wr"), m("ur"), m("wz"), m("uz"), m("wg"), m("ug"));
        let bg = self.add(format!("{name}.bg"), 1, width, Init::Const(bias));
        Gate { wr, ur, wz, uz, wg, ug, bg }
    }

    fn mlp(&mut self, name: &str, input: usize, hidden: &[usize]) -> (Vec<Linear>, usize) {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(self.linear(&format!("{name}.{i}"), width, h, 1.0));
            width = h;
        }
        (layers, width)
    }
}

#[derive(Debug, Clone)]
pub struct ActorCritic {
    config: PolicyConfig,
    pub params: ParamStore,
    layout: Layout,
}

impl ActorCritic {
    /// Seeded initialisation.
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (l, aw) = (c.layer_size, c.attention_width());
        let mut b = Builder {
            store: ParamStore::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let embed = b.linear("embed", c.embed_width, l, 1.0);
        let pos = b.add("pos".into(), c.n_tokens, l, Init::Uniform(POS_INIT));
        let blocks = (0..c.n_layers)
            .map(|i| {
                let p = format!("block{i}");
                Block {
                    ln1: b.norm(&format!("{p}.ln1"), l),
                    q: b.add(format!("{p}.attn.q"), l, aw, Init::Glorot(1.0)),
                    k: b.add(format!("{p}.attn.k"), l, aw, Init::Glorot(1.0)),
                    v: b.add(format!("{p}.attn.v"), l, aw, Init::Glorot(1.0)),
                    o: b.add(format!("{p}.attn.o"), aw, l, Init::Glorot(1.0)),
                    rel: b.add(format!("{p}.attn.rel"), c.n_heads, c.relative_positions(), Init::Const(0.0)),
                    gate1: b.gate(&format!("{p}.gate1"), l, c.gate_bias_init),
                    ln2: b.norm(&format!("{p}.ln2"), l),
                    ff1: b.linear(&format!("{p}.ff1"), l, c.pwff_size, 1.0),
                    ff2: b.linear(&format!("{p}.ff2"), c.pwff_size, l, 1.0),
                    gate2: b.gate(&format!("{p}.gate2"), l, c.gate_bias_init),
                }
            })
            .collect();
        let ln_f = b.norm("ln_f", l);
        let (actor, aw_last) = b.mlp("actor", l, &c.actor_hidden);
        let actor_out = b.linear("actor.out", aw_last, c.action_dim(), ACTOR_OUT_GAIN);
        let log_std = b.add("log_std".into(), 1, c.action_dim(), Init::Const(c.action_log_std_init));
        let (critic, cw_last) = b.mlp("critic", l, &c.critic_hidden);
        let critic_out = b.linear("critic.out", cw_last, 1, 1.0);
        let layout = Layout {
            embed,
            pos,
            blocks,
            ln_f,
            actor,
            actor_out,
            log_std,
            critic,
            critic_out,
        };
        Ok(Self {
            config,
            params: b.store,
            layout,
        })
    }

    /// Rebuilds a model from stored parameters, checking names and shapes.
    pub fn from_params(config: PolicyConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::init(config, 0)?;
        if model.params.len() != params.len() {
            return Err(PolicyError::Corrupt(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (want, got) in model.params.params.iter().zip(&params.params) {
            if want.name != got.name || (want.value.rows, want.value.cols) != (got.value.rows, got.value.cols) {
                return Err(PolicyError::Corrupt(format!(
                    "parameter {} ({}x{}) does not match {} ({}x{})",
                    got.name, got.value.rows, got.value.cols, want.name, want.value.rows, want.value.cols
                )));
            }
            if got.value.data.len() != got.value.rows * got.value.cols {
                return Err(PolicyError::Corrupt(format!("parameter {} has a truncated blob", got.name)));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn empty_memory(&self) -> EpisodicMemory {
        EpisodicMemory::empty(&self.config)
    }

    pub fn log_std_param(&self) -> ParamId {
        self.layout.log_std
    }

    pub fn critic_bias_param(&self) -> ParamId {
        self.layout.critic_out.b
    }

    pub fn check_inputs(&self, tokens: &Matrix, memory: &EpisodicMemory) -> Result<()> {
        let c = &self.config;
        if (tokens.rows, tokens.cols) != (c.n_tokens, c.embed_width) {
            return Err(PolicyError::Shape {
                what: "tokens",
                expected: format!("{}x{}", c.n_tokens, c.embed_width),
                got: format!("{}x{}", tokens.rows, tokens.cols),
            });
        }
        let ok = memory.layers.len() == c.n_layers
            && memory
                .layers
                .iter()
                .all(|m| m.cols == c.layer_size && m.rows <= c.memory_len && m.rows == memory.len());
        if !ok {
            return Err(PolicyError::Shape {
                what: "memory",
                expected: format!("{} layers of <= {}x{}", c.n_layers, c.memory_len, c.layer_size),
                got: format!(
                    "{:?}",
                    memory.layers.iter().map(|m| (m.rows, m.cols)).collect::<Vec<_>>()
                ),
            });
        }
        Ok(())
    }

    /// Inference pass without keeping the tape.
    pub fn forward(&self, tokens: &Matrix, memory: &EpisodicMemory) -> Result<PolicyOutput> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward_tape(&mut tape, tokens, memory)?;
        Ok(PolicyOutput {
            action_mean: tape.value(out.action_mean).data.clone(),
            action_log_std: tape.value(out.action_log_std).data.clone(),
            value: tape.value(out.value).item(),
            new_memory: memory.pushed(&out.summaries, self.config.memory_len),
        })
    }

    /// Records a forward pass on `tape`, whose store must share this model's
    /// parameter layout. Memory enters as constants, so no gradient reaches
    /// past timesteps.
    pub fn forward_tape(&self, tape: &mut Tape, tokens: &Matrix, memory: &EpisodicMemory) -> Result<TapeOutput> {
        self.check_inputs(tokens, memory)?;
        let ly = &self.layout;
        let input = tape.constant(tokens.clone());
        let x = self.linear(tape, &ly.embed, input);
        let pos = tape.param(ly.pos);
        let mut x = tape.add(x, pos);
        let mut summaries = Vec::with_capacity(ly.blocks.len());
        for (block, mem) in ly.blocks.iter().zip(&memory.layers) {
            summaries.push(column_means(tape.value(x)));
            x = self.block(tape, block, x, mem);
        }
        let x = self.norm(tape, &ly.ln_f, x);
        let features = tape.mean_rows(x);

        let mut h = features;
        for layer in &ly.actor {
            let z = self.linear(tape, layer, h);
            h = tape.tanh(z);
        }
        let action_mean = self.linear(tape, &ly.actor_out, h);
        let action_log_std = tape.param(ly.log_std);

        let mut h = features;
        for layer in &ly.critic {
            let z = self.linear(tape, layer, h);
            h = tape.tanh(z);
        }
        let value = self.linear(tape, &ly.critic_out, h);
        Ok(TapeOutput {
            action_mean,
            action_log_std,
            value,
            summaries,
        })
    }

    /// Output of block `layer` alone, for inspection.
    pub fn block_output(&self, layer: usize, x: &Matrix, memory: &Matrix) -> Matrix {
        let mut tape = Tape::new(&self.params);
        let xv = tape.constant(x.clone());
        let y = self.block(&mut tape, &self.layout.blocks[layer], xv, memory);
        tape.value(y).clone()
    }

    fn linear(&self, t: &mut Tape, l: &Linear, x: Var) -> Var {
        let w = t.param(l.w);
        let b = t.param(l.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }

    fn norm(&self, t: &mut Tape, n: &Norm, x: Var) -> Var {
        let g = t.param(n.gain);
        let b = t.param(n.bias);
        let y = t.layer_norm(x, LN_EPS);
        let y = t.mul_row(y, g);
        t.add_row(y, b)
    }

    /// `r = σ(yW_r + xU_r)`, `z = σ(yW_z + xU_z - b_g)`,
    /// `h = tanh(yW_g + (r ⊙ x)U_g)`, output `(1 - z) ⊙ x + z ⊙ h`.
    fn gate(&self, t: &mut Tape, g: &Gate, x: Var, y: Var) -> Var {
        let mm = |t: &mut Tape, a: Var, p: ParamId| {
            let w = t.param(p);
            t.matmul(a, w)
        };
        let yr = mm(t, y, g.wr);
        let xr = mm(t, x, g.ur);
        let r = t.add(yr, xr);
        let r = t.sigmoid(r);
        let yz = mm(t, y, g.wz);
        let xz = mm(t, x, g.uz);
        let z = t.add(yz, xz);
        let bg = t.param(g.bg);
        let neg_bg = t.scale(bg, -1.0);
        let z = t.add_row(z, neg_bg);
        let z = t.sigmoid(z);
        let yg = mm(t, y, g.wg);
        let rx = t.mul(r, x);
        let rxu = mm(t, rx, g.ug);
        let h = t.add(yg, rxu);
        let h = t.tanh(h);
        let d = t.sub(h, x);
        let zd = t.mul(z, d);
        t.add(x, zd)
    }

    fn block(&self, t: &mut Tape, b: &Block, x: Var, memory: &Matrix) -> Var {
        let c = &self.config;
        let (n_tok, d) = (c.n_tokens, c.head_size);
        let m = memory.rows;
        let xn = self.norm(t, &b.ln1, x);
        let kv = if m > 0 {
            let mem = t.constant(memory.clone());
            let mn = self.norm(t, &b.ln1, mem);
            t.concat_rows(&[mn, xn])
        } else {
            xn
        };
        let (wq, wk, wv, wo, rel) = (t.param(b.q), t.param(b.k), t.param(b.v), t.param(b.o), t.param(b.rel));
        let q = t.matmul(xn, wq);
        let k = t.matmul(kv, wk);
        let v = t.matmul(kv, wv);
        let n_rel = c.relative_positions();
        let span = m + n_tok;
        let mut heads = Vec::with_capacity(c.n_heads);
        for h in 0..c.n_heads {
            let qh = t.slice_cols(q, h * d, d);
            let kh = t.slice_cols(k, h * d, d);
            let vh = t.slice_cols(v, h * d, d);
            let kt = t.transpose(kh);
            let s = t.matmul(qh, kt);
            let s = t.scale(s, 1.0 / (d as f64).sqrt());
            let idx = (0..n_tok)
                .flat_map(|i| (0..span).map(move |j| h * n_rel + relative_index(i, j, m, n_tok)))
                .collect();
            let bias = t.gather(rel, idx, n_tok, span);
            let s = t.add(s, bias);
            let a = t.softmax_rows(s);
            heads.push(t.matmul(a, vh));
        }
        let cat = if heads.len() == 1 { heads[0] } else { t.concat_cols(&heads) };
        let y = t.matmul(cat, wo);
        let y = t.relu(y);
        let e = self.gate(t, &b.gate1, x, y);

        let en = self.norm(t, &b.ln2, e);
        let f = self.linear(t, &b.ff1, en);
        let f = t.relu(f);
        let f = self.linear(t, &b.ff2, f);
        let f = t.relu(f);
        self.gate(t, &b.gate2, e, f)
    }
}

/// Bias-table column for query token `i` attending to key column `j` of
/// `[memory (m rows); tokens]`.
fn relative_index(i: usize, j: usize, m: usize, n_tok: usize) -> usize {
    if j < m {
        // memory row j is (m - j) timesteps old
        2 * n_tok - 2 + (m - j)
    } else {
        i + n_tok - 1 - (j - m)
    }
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols];
    for r in 0..m.rows {
        for (o, &x) in out.iter_mut().zip(m.row(r)) {
            *o += x;
        }
    }
    out.iter().map(|s| s / m.rows as f64).collect()
}

/// Backward pass that refuses non-finite losses or gradients.
pub fn gradients(tape: &Tape, loss: Var) -> Result<Gradients> {
    let l = tape.value(loss).item();
    if !l.is_finite() {
        return Err(PolicyError::NonFinite(format!("loss {l}")));
    }
    let g = tape.backward(loss);
    if !g.all_finite() {
        return Err(PolicyError::NonFinite("gradient".into()));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    fn tiny() -> PolicyConfig {
        PolicyConfig::profile(Profile::Tiny, 64, 4)
    }

    fn tokens(cfg: &PolicyConfig, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = cfg.n_tokens * cfg.embed_width;
        Matrix::from_vec(cfg.n_tokens, cfg.embed_width, (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
    }

    #[test]
    fn same_seed_same_params() {
        let a = ActorCritic::init(tiny(), 3).unwrap();
        let b = ActorCritic::init(tiny(), 3).unwrap();
        let c = ActorCritic::init(tiny(), 4).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn forward_is_pure_and_finite() {
        let model = ActorCritic::init(tiny(), 1).unwrap();
        let x = tokens(model.config(), 2);
        let mem = model.empty_memory();
        let a = model.forward(&x, &mem).unwrap();
        let b = model.forward(&x, &mem).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
        assert_eq!(a.action_mean.len(), model.config().action_dim());
        assert_eq!(a.new_memory.len(), 1);
    }

    #[test]
    fn zero_memory_len_matches_memoryless_pass() {
        let mut cfg = tiny();
        cfg.memory_len = 0;
        let model = ActorCritic::init(cfg, 5).unwrap();
        let x = tokens(model.config(), 6);
        let first = model.forward(&x, &model.empty_memory()).unwrap();
        assert!(first.new_memory.is_empty());
        let second = model.forward(&x, &first.new_memory).unwrap();
        assert_eq!(first.action_mean, second.action_mean);
        assert_eq!(first.value, second.value);
    }

    #[test]
    fn memory_is_consumed() {
        let model = ActorCritic::init(tiny(), 8).unwrap();
        let x = tokens(model.config(), 9);
        let first = model.forward(&x, &model.empty_memory()).unwrap();
        let second = model.forward(&x, &first.new_memory).unwrap();
        assert_ne!(first.action_mean, second.action_mean);
        assert_ne!(first.value, second.value);
    }

    #[test]
    fn memory_is_capped_fifo() {
        let cfg = tiny();
        let model = ActorCritic::init(cfg.clone(), 8).unwrap();
        let mut mem = model.empty_memory();
        let mut outs = Vec::new();
        for s in 0..cfg.memory_len + 3 {
            let out = model.forward(&tokens(&cfg, s as u64), &mem).unwrap();
            outs.push(out.new_memory.clone());
            mem = out.new_memory;
        }
        assert_eq!(mem.len(), cfg.memory_len);
        for layer in &mem.layers {
            assert_eq!((layer.rows, layer.cols), (cfg.memory_len, cfg.layer_size));
        }
        // newest row is the last pushed summary, oldest rows fell off
        let prev = &outs[outs.len() - 2];
        assert_eq!(mem.layers[0].row(cfg.memory_len - 2), prev.layers[0].row(cfg.memory_len - 1));
        mem.clear();
        assert!(mem.is_empty());
    }

    #[test]
    fn identity_biased_gates_pass_input_through() {
        let mut cfg = tiny();
        cfg.gate_bias_init = 20.0;
        let model = ActorCritic::init(cfg.clone(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = cfg.n_tokens * cfg.layer_size;
        let x = Matrix::from_vec(cfg.n_tokens, cfg.layer_size, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        for layer in 0..cfg.n_layers {
            let y = model.block_output(layer, &x, &Matrix::zeros(0, cfg.layer_size));
            let dev = x.data.iter().zip(&y.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-6, "layer {layer}: deviation {dev}");
        }
    }

    #[test]
    fn shapes_rejected_up_front() {
        let model = ActorCritic::init(tiny(), 1).unwrap();
        let bad = Matrix::zeros(3, 64);
        assert!(matches!(
            model.forward(&bad, &model.empty_memory()),
            Err(PolicyError::Shape { what: "tokens", .. })
        ));
        let mut mem = model.empty_memory();
        mem.layers.pop();
        let x = tokens(model.config(), 1);
        assert!(matches!(model.forward(&x, &mem), Err(PolicyError::Shape { what: "memory", .. })));
    }

    #[test]
    fn forward_at_every_scale() {
        // four 4x4x4 patches keep the full-size pass cheap
        for k in 0..=6 {
            let f = 1.0 / f64::from(1u32 << k);
            let cfg = PolicyConfig::paper(64, 4).scaled(f);
            let model = ActorCritic::init(cfg.clone(), 1).unwrap();
            let x = tokens(&cfg, 3);
            let a = model.forward(&x, &model.empty_memory()).unwrap();
            let b = model.forward(&x, &a.new_memory).unwrap();
            assert!(b.is_finite(), "scale 1/{}", 1u32 << k);
            assert_eq!(b.new_memory.len(), 2.min(cfg.memory_len));
        }
    }

    #[test]
    fn critic_bias_gradient_is_residual() {
        let model = ActorCritic::init(tiny(), 21).unwrap();
        let x = tokens(model.config(), 22);
        let mut tape = Tape::new(&model.params);
        let out = model.forward_tape(&mut tape, &x, &model.empty_memory()).unwrap();
        let v = tape.value(out.value).item();
        let y = 0.75;
        let diff = tape.add_scalar(out.value, -y);
        let sq = tape.square(diff);
        let loss = tape.scale(sq, 0.5);
        let g = gradients(&tape, loss).unwrap();
        let gb = g.get(model.critic_bias_param()).unwrap().item();
        assert!((gb - (v - y)).abs() < 1e-12);
        // the actor head does not feed the value
        assert!(g.get(model.log_std_param()).is_none());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let model = ActorCritic::init(tiny(), 1).unwrap();
        let mut tape = Tape::new(&model.params);
        let c = tape.constant(Matrix::scalar(f64::NAN));
        assert!(matches!(gradients(&tape, c), Err(PolicyError::NonFinite(_))));
    }

    #[test]
    fn relative_index_layout() {
        // 2 memory rows, 3 tokens: ages 2 and 1 then offsets +i-j
        let n = 3;
        assert_eq!(relative_index(0, 0, 2, n), 2 * n - 2 + 2);
        assert_eq!(relative_index(0, 1, 2, n), 2 * n - 2 + 1);
        assert_eq!(relative_index(0, 2, 2, n), n - 1);
        assert_eq!(relative_index(2, 2, 2, n), 2 * n - 2);
        assert_eq!(relative_index(0, 4, 2, n), 0);
    }
}
