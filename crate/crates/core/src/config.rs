//! Run configuration, loaded from TOML.
//!
//! Every key is optional; missing keys take the defaults below.
//!
//! ```toml
//! seed = 0
//! workers = 1
//! episodes = 100000
//! checkpoint_interval = 1000
//! log_interval = 100
//!
//! [hyper]            # discount, entropy weight, learning rate, clipping, loss weights
//! gamma = 0.95
//! entropy_weight = 0.01
//! learning_rate = 2e-4
//! grad_clip = 40.0
//! value_weight = 0.5
//! blocking_weight = 0.5
//! on_goal_weight = 0.5
//! bc_weight = 1.0
//! optimizer = "sgd"  # or "adam"
//!
//! [env]              # episode length L = floor(alpha·m·(1+d) + beta·A)
//! alpha = 4.0
//! beta = 5.0
//! crowd_window = 5
//! blocking_detour = 10
//!
//! [env.rewards]
//! r_move = -0.3
//! r_collision = -2.0
//! r_idle_off_goal = -0.5
//! r_idle_on_goal = 0.0
//! r_team = 20.0
//! r_crowd_out = 0.3
//! r_crowd_in = -0.3
//! r_blocking = -2.0
//!
//! [curriculum]
//! initial_window = 1000
//! window_growth = 1.5
//! max_episodes_per_level = 50000
//! improvement_tol = 0.01
//! average_window = 100
//! boost_capacity = 512
//! boost_probability = 0.25
//! demo_probability = 0.5
//! agent_counts = [1, 2, 4, 8]
//! # pin_level = 0
//! # fixed_size = 10
//! # fixed_density = 0.0
//!
//! [expert]
//! max_expansions = 200000
//! agent_cap = 4
//! # timeout_ms = 1000
//!
//! [eval]
//! agent_counts = [8, 16, 32, 64]
//! densities = [0.0, 0.1, 0.2, 0.3]
//! size = 20
//! envs = 100
//! base_seed = 0
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::CurriculumConfig;
use crate::eval::BenchmarkGrid;
use crate::expert::SearchBudget;
use crate::policy::Hyper;
use crate::rollout::EnvSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub workers: usize,
    pub episodes: u64,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    pub hyper: Hyper,
    pub env: EnvSettings,
    pub curriculum: CurriculumConfig,
    pub expert: SearchBudget,
    pub eval: BenchmarkGrid,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            workers: 1,
            episodes: 100_000,
            checkpoint_interval: 1000,
            log_interval: 100,
            hyper: Hyper::default(),
            env: EnvSettings::default(),
            curriculum: CurriculumConfig::default(),
            expert: SearchBudget::default(),
            eval: BenchmarkGrid::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: TrainConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        let c = &self.curriculum;
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.checkpoint_interval == 0 || self.log_interval == 0 {
            return bad("intervals must be positive");
        }
        if !(self.hyper.learning_rate > 0.0 && self.hyper.grad_clip > 0.0) {
            return bad("learning_rate and grad_clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.hyper.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.env.crowd_window < 3 || self.env.crowd_window.is_multiple_of(2) {
            return bad("crowd_window must be odd and at least 3");
        }
        if c.agent_counts.is_empty() || c.agent_counts.contains(&0) {
            return bad("agent_counts must be non-empty and positive");
        }
        if !(0.0..=1.0).contains(&c.boost_probability) || !(0.0..=1.0).contains(&c.demo_probability) {
            return bad("probabilities must lie in [0, 1]");
        }
        if c.initial_window == 0 || c.window_growth < 1.0 || c.average_window == 0 {
            return bad("curriculum windows must be positive and non-shrinking");
        }
        if c.fixed_density.is_some_and(|d| !(0.0..1.0).contains(&d)) || c.fixed_size.is_some_and(|s| s < 2) {
            return bad("fixed size/density out of range");
        }
        Ok(())
    }
}
