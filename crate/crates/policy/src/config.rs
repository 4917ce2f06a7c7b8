use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, Result};

/// Network shape. Input geometry (`embed_width`, `n_tokens`) comes from the
/// observation pipeline; everything else is a hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Width of one raw patch token fed to the linear embedding.
    pub embed_width: usize,
    /// Tokens per observation.
    pub n_tokens: usize,
    pub layer_size: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_size: usize,
    pub pwff_size: usize,
    /// Past timesteps kept per layer.
    pub memory_len: usize,
    pub gmm_components: usize,
    /// Adds one gate logit per component to the action vector.
    pub gated_actions: bool,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub gate_bias_init: f64,
    pub action_log_std_init: f64,
    /// Width multiplier this config was derived with (1 for full size).
    pub scale_factor: f64,
}

/// Named presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Full-size network.
    Paper,
    /// 1/32 widths, for single-workstation runs.
    Desk,
    /// 1/64 widths (layer size 16), for gradient checks and unit tests.
    Tiny,
}

impl Profile {
    pub fn scale_factor(self) -> f64 {
        match self {
            Profile::Paper => 1.0,
            Profile::Desk => 1.0 / 32.0,
            Profile::Tiny => 1.0 / 64.0,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "paper" => Some(Profile::Paper),
            "desk" => Some(Profile::Desk),
            "tiny" => Some(Profile::Tiny),
            _ => None,
        }
    }
}

impl PolicyConfig {
    pub fn paper(embed_width: usize, n_tokens: usize) -> Self {
        Self {
            embed_width,
            n_tokens,
            layer_size: 1024,
            n_layers: 3,
            n_heads: 8,
            head_size: 512,
            pwff_size: 512,
            memory_len: 400,
            gmm_components: 8,
            gated_actions: false,
            actor_hidden: vec![6400, 1600, 512, 512, 512, 512],
            critic_hidden: vec![6400, 1600, 512, 512, 512, 512],
            gate_bias_init: 2.0,
            action_log_std_init: -0.5,
            scale_factor: 1.0,
        }
    }

    pub fn profile(profile: Profile, embed_width: usize, n_tokens: usize) -> Self {
        Self::paper(embed_width, n_tokens).scaled(profile.scale_factor())
    }

    /// Shrinks every width and the memory length by `factor`, keeping layer,
    /// head and component counts.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |w: usize| ((w as f64 * factor).round() as usize).max(1);
        Self {
            layer_size: s(self.layer_size),
            head_size: s(self.head_size),
            pwff_size: s(self.pwff_size),
            memory_len: (self.memory_len as f64 * factor).round() as usize,
            actor_hidden: self.actor_hidden.iter().map(|&w| s(w)).collect(),
            critic_hidden: self.critic_hidden.iter().map(|&w| s(w)).collect(),
            scale_factor: self.scale_factor * factor,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_width", self.embed_width),
            ("n_tokens", self.n_tokens),
            ("layer_size", self.layer_size),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("head_size", self.head_size),
            ("pwff_size", self.pwff_size),
            ("gmm_components", self.gmm_components),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(PolicyError::InvalidConfig(format!("{name}: must be >= 1")));
            }
        }
        for (name, hidden) in [("actor_hidden", &self.actor_hidden), ("critic_hidden", &self.critic_hidden)] {
            if hidden.iter().any(|&w| w == 0) {
                return Err(PolicyError::InvalidConfig(format!("{name}: widths must be >= 1")));
            }
        }
        if !self.gate_bias_init.is_finite() || !self.action_log_std_init.is_finite() {
            return Err(PolicyError::InvalidConfig(
                "gate_bias_init, action_log_std_init: must be finite".into(),
            ));
        }
        if !(self.scale_factor > 0.0) {
            return Err(PolicyError::InvalidConfig("scale_factor: must be > 0".into()));
        }
        Ok(())
    }

    /// Raw action length: weight, 2 means and 2 stds per component, plus a
    /// gate logit each when gated.
    pub fn action_dim(&self) -> usize {
        self.gmm_components * if self.gated_actions { 6 } else { 5 }
    }

    pub fn attention_width(&self) -> usize {
        self.n_heads * self.head_size
    }

    /// Relative-position bias entries per head: token offsets in
    /// `-(T-1)..=T-1` followed by memory ages `1..=memory_len`.
    pub fn relative_positions(&self) -> usize {
        2 * self.n_tokens - 1 + self.memory_len
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        crate::checkpoint::hash_bytes(&json)
    }
}
