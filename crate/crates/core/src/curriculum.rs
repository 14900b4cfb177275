//! Boosted curriculum: level-dependent environment ranges, plateau-driven
//! level advancement and re-sampling of failed environments.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::world::WorldSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRanges {
    pub d_lo: f64,
    pub d_hi: f64,
    pub s_lo: usize,
    pub s_hi: usize,
}

/// Density and world-size ranges of curriculum level `sigma`.
pub fn level_ranges(sigma: u32) -> LevelRanges {
    let s = f64::from(sigma);
    LevelRanges {
        d_lo: (0.05 * s).min(0.2),
        d_hi: (0.1 + 0.1 * s).min(0.6),
        s_lo: (10 + 5 * sigma as usize).min(40),
        s_hi: (40 + 5 * sigma as usize).min(120),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub initial_window: u64,
    pub window_growth: f64,
    pub max_episodes_per_level: u64,
    pub improvement_tol: f64,
    pub average_window: usize,
    pub boost_capacity: usize,
    pub boost_probability: f64,
    pub demo_probability: f64,
    pub agent_counts: Vec<usize>,
    /// Keeps the level fixed at this value when set.
    pub pin_level: Option<u32>,
    /// Overrides the level's size range with a single size.
    pub fixed_size: Option<usize>,
    /// Overrides the level's density range with a single density.
    pub fixed_density: Option<f64>,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            initial_window: 1000,
            window_growth: 1.5,
            max_episodes_per_level: 50_000,
            improvement_tol: 0.01,
            average_window: 100,
            boost_capacity: 512,
            boost_probability: 0.25,
            demo_probability: 0.5,
            agent_counts: vec![1, 2, 4, 8],
            pin_level: None,
            fixed_size: None,
            fixed_density: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub config: CurriculumConfig,
    pub level: u32,
    /// Plateau window `n`: non-improving episodes tolerated before advancing.
    pub plateau_window: u64,
    pub episodes_at_level: u64,
    /// Best moving average seen at this level; `None` before the first episode.
    pub best_avg_reward: Option<f64>,
    pub episodes_since_improvement: u64,
    recent_rewards: VecDeque<f64>,
    pub boost_buffer: VecDeque<WorldSpec>,
    /// Episodes observed at each level so far.
    pub episodes_per_level: Vec<u64>,
}

impl CurriculumState {
    pub fn new(config: CurriculumConfig) -> Self {
        let level = config.pin_level.unwrap_or(0);
        CurriculumState {
            plateau_window: config.initial_window,
            level,
            episodes_at_level: 0,
            best_avg_reward: None,
            episodes_since_improvement: 0,
            recent_rewards: VecDeque::new(),
            boost_buffer: VecDeque::new(),
            episodes_per_level: vec![0; level as usize + 1],
            config,
        }
    }

    /// The level's ranges after applying fixed size/density overrides.
    pub fn ranges(&self) -> LevelRanges {
        let mut r = level_ranges(self.level);
        if let Some(s) = self.config.fixed_size {
            r.s_lo = s;
            r.s_hi = s;
        }
        if let Some(d) = self.config.fixed_density {
            r.d_lo = d;
            r.d_hi = d;
        }
        r
    }

    pub fn moving_average(&self) -> Option<f64> {
        (!self.recent_rewards.is_empty()).then(|| self.recent_rewards.iter().sum::<f64>() / self.recent_rewards.len() as f64)
    }

    pub fn sample_spec<R: Rng + ?Sized>(&self, rng: &mut R) -> WorldSpec {
        if !self.boost_buffer.is_empty() && rng.gen_bool(self.config.boost_probability) {
            return self.boost_buffer[rng.gen_range(0..self.boost_buffer.len())];
        }
        let r = self.ranges();
        let size = rng.gen_range(r.s_lo..=r.s_hi);
        let density = if r.d_hi > r.d_lo { rng.gen_range(r.d_lo..=r.d_hi) } else { r.d_lo };
        let agents = self.config.agent_counts[rng.gen_range(0..self.config.agent_counts.len())];
        WorldSpec::new(size, density, agents, rng.gen())
    }

    /// Records one finished episode and advances the level on a plateau.
    /// Returns true when the level changed.
    pub fn observe_episode(&mut self, total_reward: f64, success: bool, spec: &WorldSpec) -> bool {
        self.episodes_at_level += 1;
        self.episodes_per_level[self.level as usize] += 1;
        self.recent_rewards.push_back(total_reward);
        if self.recent_rewards.len() > self.config.average_window {
            self.recent_rewards.pop_front();
        }
        let avg = self.moving_average().unwrap_or(total_reward);
        if self.best_avg_reward.is_none_or(|best| avg > best + self.config.improvement_tol) {
            self.best_avg_reward = Some(avg);
            self.episodes_since_improvement = 0;
        } else {
            self.episodes_since_improvement += 1;
        }
        if !success {
            if self.boost_buffer.len() == self.config.boost_capacity {
                self.boost_buffer.pop_front();
            }
            if self.config.boost_capacity > 0 {
                self.boost_buffer.push_back(*spec);
            }
        }

        let plateau = self.episodes_since_improvement >= self.plateau_window;
        let exhausted = self.episodes_at_level >= self.config.max_episodes_per_level;
        if self.config.pin_level.is_none() && (plateau || exhausted) {
            self.level += 1;
            self.plateau_window = (self.plateau_window as f64 * self.config.window_growth).ceil() as u64;
            self.episodes_at_level = 0;
            self.episodes_since_improvement = 0;
            self.best_avg_reward = None;
            self.recent_rewards.clear();
            self.episodes_per_level.push(0);
            return true;
        }
        false
    }
}

/// Bernoulli draw deciding whether the next episode follows the expert.
pub fn demo_mode<R: Rng + ?Sized>(rng: &mut R, demo_probability: f64) -> bool {
    rng.gen_bool(demo_probability)
}
