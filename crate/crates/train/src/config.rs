//! Run configuration. Keys are flat and named after the hyperparameter table;
//! a `scale` key picks the preset that supplies every unset key.

use std::path::Path;

use graphprune_core::{EnvConfig, SimConfig};
use graphprune_core::pruner::PrunerConfig;
use graphprune_core::reward::RewardConstants;
use graphprune_policy::{PolicyConfig, Profile};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};
use crate::ppo::PpoConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub scale: Profile,

    pub learning_rate: f64,
    pub discount_factor: f64,
    pub gae_lambda: f64,
    pub clip_parameter: f64,
    pub value_function_coeff: f64,
    pub entropy_coeff: f64,
    /// Environment steps per PPO update.
    pub update_frequency: usize,
    pub k_epochs: usize,
    pub num_minibatch: usize,
    pub target_kl: f64,

    pub gtrxl_layer_size: usize,
    pub gtrxl_layers: usize,
    pub attn_heads: usize,
    pub attn_head_size: usize,
    pub pwff_size: usize,
    pub gtrxl_mem_len: usize,
    pub num_gmm_components: usize,
    pub hidden_layers_actor: Vec<usize>,
    pub hidden_layers_critic: Vec<usize>,

    pub env_width: usize,
    pub env_height: usize,
    pub max_robot_moves: u32,
    pub max_rrt_growth_attempts: u32,

    pub prune_fraction: f64,
    pub attempt_penalty: f64,
    pub terminal_bonus_scale: f64,
    pub sigma_min: f64,
    /// Gated components plus trigonometric noise in the pruner.
    pub noise_variant: bool,
    pub noise_scale: f64,
    pub fov_radius: u32,
    pub obstacle_count: [u32; 2],
    pub obstacle_size: [u32; 2],
    pub rrt_step: f64,
    pub rrt_attempts_per_growth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frontier_distance: Option<f64>,
    pub patch_size: usize,
    pub gate_bias_init: f64,
    pub action_log_std_init: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_grad_norm: Option<f64>,
    pub adam_epsilon: f64,
    pub normalize_advantages: bool,

    pub total_timesteps: u64,
    /// Environment instances interleaved round-robin into each window.
    pub n_envs: usize,
    pub seed: u64,
    /// Steps between checkpoints; 0 saves only at the end.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn profile(scale: Profile) -> Self {
        let paper = PolicyConfig::paper(1, 1);
        let p = paper.scaled(scale.scale_factor());
        let sim = match scale {
            Profile::Paper => SimPreset {
                size: 250,
                fov: 25,
                count: [8, 16],
                side: [10, 50],
                rrt_step: 10.0,
                attempts: 100,
                patch: 25,
                total: 1_000_000,
            },
            Profile::Desk => SimPreset {
                size: 100,
                fov: 10,
                count: [8, 16],
                side: [4, 20],
                rrt_step: 4.0,
                attempts: 40,
                patch: 20,
                total: 20_000,
            },
            Profile::Tiny => SimPreset {
                size: 32,
                fov: 6,
                count: [2, 4],
                side: [2, 6],
                rrt_step: 3.0,
                attempts: 10,
                patch: 8,
                total: 1_024,
            },
        };
        let (update, n_envs) = match scale {
            Profile::Tiny => (128, 2),
            _ => (512, 4),
        };
        Self {
            scale,
            learning_rate: 3e-4,
            discount_factor: 0.99,
            gae_lambda: 0.95,
            clip_parameter: 0.1,
            value_function_coeff: 0.5,
            entropy_coeff: 0.01,
            update_frequency: update,
            k_epochs: 4,
            num_minibatch: 4,
            target_kl: 0.03,
            gtrxl_layer_size: p.layer_size,
            gtrxl_layers: p.n_layers,
            attn_heads: p.n_heads,
            attn_head_size: p.head_size,
            pwff_size: p.pwff_size,
            gtrxl_mem_len: p.memory_len,
            num_gmm_components: p.gmm_components,
            hidden_layers_actor: p.actor_hidden,
            hidden_layers_critic: p.critic_hidden,
            env_width: sim.size,
            env_height: sim.size,
            max_robot_moves: 100,
            max_rrt_growth_attempts: 100,
            prune_fraction: 0.96,
            attempt_penalty: 5.0,
            terminal_bonus_scale: 8.0,
            sigma_min: 1.0,
            noise_variant: false,
            noise_scale: 1e-3,
            fov_radius: sim.fov,
            obstacle_count: sim.count,
            obstacle_size: sim.side,
            rrt_step: sim.rrt_step,
            rrt_attempts_per_growth: sim.attempts,
            frontier_distance: None,
            patch_size: sim.patch,
            gate_bias_init: p.gate_bias_init,
            action_log_std_init: p.action_log_std_init,
            max_grad_norm: Some(0.5),
            adam_epsilon: 1e-8,
            normalize_advantages: true,
            total_timesteps: sim.total,
            n_envs,
            seed: 0,
            checkpoint_every: 0,
        }
    }

    /// Parses TOML, filling unset keys from the preset named by `scale`
    /// (default `desk`). Unknown keys and bad values are reported by name.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))?;
        let scale = match table.get("scale") {
            None => Profile::Desk,
            Some(v) => v
                .as_str()
                .and_then(Profile::parse)
                .ok_or_else(|| TrainError::key("scale", "expected one of paper, desk, tiny"))?,
        };
        let mut merged = toml::Table::try_from(Self::profile(scale))
            .map_err(|e| TrainError::Config(e.to_string()))?;
        let known: Vec<String> = merged.keys().cloned().chain(optional_keys()).collect();
        for (k, v) in table {
            if !known.contains(&k) {
                return Err(TrainError::key(k, "unknown key"));
            }
            merged.insert(k, v);
        }
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| {
            // name the offending key when the deserialiser reports one
            let msg = e.to_string();
            TrainError::Config(msg.trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| if ok { Ok(()) } else { Err(TrainError::key(key, msg)) };
        check(self.learning_rate >= 0.0 && self.learning_rate.is_finite(), "learning_rate", "must be >= 0")?;
        check(
            self.discount_factor > 0.0 && self.discount_factor < 1.0,
            "discount_factor",
            "must be in (0, 1)",
        )?;
        check((0.0..=1.0).contains(&self.gae_lambda), "gae_lambda", "must be in [0, 1]")?;
        check(self.clip_parameter > 0.0, "clip_parameter", "must be > 0")?;
        check(self.value_function_coeff >= 0.0, "value_function_coeff", "must be >= 0")?;
        check(self.entropy_coeff >= 0.0, "entropy_coeff", "must be >= 0")?;
        check(self.update_frequency >= 1, "update_frequency", "must be >= 1")?;
        check(self.k_epochs >= 1, "k_epochs", "must be >= 1")?;
        check(
            self.num_minibatch >= 1 && self.num_minibatch <= self.update_frequency,
            "num_minibatch",
            "must be in [1, update_frequency]",
        )?;
        check(self.target_kl > 0.0, "target_kl", "must be > 0")?;
        check(self.n_envs >= 1, "n_envs", "must be >= 1")?;
        check(
            self.total_timesteps >= self.update_frequency as u64,
            "total_timesteps",
            "must be >= update_frequency",
        )?;
        check(
            self.checkpoint_every % self.update_frequency as u64 == 0,
            "checkpoint_every",
            "must be a multiple of update_frequency",
        )?;
        check(
            self.max_grad_norm.is_none_or(|g| g > 0.0),
            "max_grad_norm",
            "must be > 0",
        )?;
        check(self.adam_epsilon > 0.0, "adam_epsilon", "must be > 0")?;
        check(
            self.obstacle_count[0] <= self.obstacle_count[1],
            "obstacle_count",
            "min must not exceed max",
        )?;
        check(
            self.obstacle_size[0] >= 1 && self.obstacle_size[0] <= self.obstacle_size[1],
            "obstacle_size",
            "must be 1 <= min <= max",
        )?;
        check(
            self.patch_size >= 1 && self.env_width % self.patch_size == 0 && self.env_height % self.patch_size == 0,
            "patch_size",
            "must divide env_width and env_height",
        )?;
        self.sim_config().validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.policy_config().validate()?;
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            env: EnvConfig {
                width: self.env_width,
                height: self.env_height,
                obstacle_count: (self.obstacle_count[0], self.obstacle_count[1]),
                obstacle_size: (self.obstacle_size[0], self.obstacle_size[1]),
                fov_radius: self.fov_radius,
                ..EnvConfig::default()
            },
            pruner: PrunerConfig {
                prune_fraction: self.prune_fraction,
                sigma_min: self.sigma_min,
                noise_enabled: self.noise_variant,
                noise_scale: self.noise_scale,
                noise_frequencies: None,
            },
            reward: RewardConstants {
                attempt_penalty: self.attempt_penalty,
                max_moves: self.max_robot_moves,
                terminal_scale: self.terminal_bonus_scale,
                discount: self.discount_factor,
            },
            rrt_step: self.rrt_step,
            growth_attempts: self.rrt_attempts_per_growth,
            max_growth_calls: self.max_rrt_growth_attempts,
            frontier_distance: self.frontier_distance,
            patch_size: self.patch_size,
        }
    }

    pub fn n_tokens(&self) -> usize {
        (self.env_width / self.patch_size) * (self.env_height / self.patch_size)
    }

    pub fn token_width(&self) -> usize {
        self.patch_size * self.patch_size * graphprune_core::observation::CHANNELS
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            embed_width: self.token_width(),
            n_tokens: self.n_tokens(),
            layer_size: self.gtrxl_layer_size,
            n_layers: self.gtrxl_layers,
            n_heads: self.attn_heads,
            head_size: self.attn_head_size,
            pwff_size: self.pwff_size,
            memory_len: self.gtrxl_mem_len,
            gmm_components: self.num_gmm_components,
            gated_actions: self.noise_variant,
            actor_hidden: self.hidden_layers_actor.clone(),
            critic_hidden: self.hidden_layers_critic.clone(),
            gate_bias_init: self.gate_bias_init,
            action_log_std_init: self.action_log_std_init,
            scale_factor: self.scale.scale_factor(),
        }
    }

    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            learning_rate: self.learning_rate,
            gamma: self.discount_factor,
            gae_lambda: self.gae_lambda,
            clip: self.clip_parameter,
            value_coeff: self.value_function_coeff,
            entropy_coeff: self.entropy_coeff,
            update_every: self.update_frequency,
            k_epochs: self.k_epochs,
            n_minibatch: self.num_minibatch,
            target_kl: self.target_kl,
            total_timesteps: self.total_timesteps,
            normalize_advantages: self.normalize_advantages,
        }
    }

    /// Number of PPO updates a full run performs.
    pub fn n_updates(&self) -> u64 {
        self.total_timesteps / self.update_frequency as u64
    }

    /// Hash of everything that shapes a run except its length, so a run can
    /// be resumed with a different `total_timesteps`.
    pub fn compat_hash(&self) -> String {
        let mut c = self.clone();
        c.total_timesteps = 0;
        c.checkpoint_every = 0;
        let json = serde_json::to_string(&c).expect("config serialises");
        graphprune_policy::checkpoint::hash_bytes(json.as_bytes())
    }
}

struct SimPreset {
    size: usize,
    fov: u32,
    count: [u32; 2],
    side: [u32; 2],
    rrt_step: f64,
    attempts: usize,
    patch: usize,
    total: u64,
}

fn optional_keys() -> impl Iterator<Item = String> {
    ["frontier_distance", "max_grad_norm"].into_iter().map(String::from)
}
