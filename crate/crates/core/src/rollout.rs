//! Episode environment shared by training and evaluation: world dynamics,
//! crowd bookkeeping and rewards bundled behind one `step` call.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::{self, CrowdParams, RewardBreakdown, RewardConstants, RewardError};
use crate::world::{
    self, episode_status, generate_world, valid_actions, Action, ActionMask, EpisodeStatus, Observation, StepEvents, WorldError, WorldSpec,
    WorldState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

/// Environment constants: episode-length coefficients, crowd window,
/// blocking detour and reward magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSettings {
    pub alpha: f64,
    pub beta: f64,
    pub crowd_window: usize,
    pub blocking_detour: u32,
    pub rewards: RewardConstants,
}

impl Default for EnvSettings {
    fn default() -> Self {
        EnvSettings {
            alpha: 4.0,
            beta: 5.0,
            crowd_window: CrowdParams::DEFAULT_WINDOW,
            blocking_detour: reward::DEFAULT_DETOUR,
            rewards: RewardConstants::default(),
        }
    }
}

pub struct StepOutcome {
    pub events: StepEvents,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Env {
    pub spec: WorldSpec,
    pub state: WorldState,
    pub max_len: u32,
    pub crowd: CrowdParams,
    pub settings: EnvSettings,
    pub breakdown: RewardBreakdown,
    pub collisions: u64,
    pub moves: Vec<u32>,
}

impl Env {
    pub fn new(spec: &WorldSpec, settings: &EnvSettings) -> Result<Self, EnvError> {
        let state = generate_world(spec)?;
        Self::from_state(spec, state, settings)
    }

    pub fn from_state(spec: &WorldSpec, state: WorldState, settings: &EnvSettings) -> Result<Self, EnvError> {
        let zeta = reward::zeta(spec.num_agents, spec.size, spec.obstacle_density)?;
        Ok(Env {
            spec: *spec,
            max_len: world::max_episode_length(spec, settings.alpha, settings.beta),
            crowd: CrowdParams::new(settings.crowd_window, zeta),
            settings: *settings,
            breakdown: RewardBreakdown::default(),
            collisions: 0,
            moves: vec![0; state.num_agents()],
            state,
        })
    }

    pub fn status(&self) -> EpisodeStatus {
        episode_status(&self.state, self.max_len)
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.state.num_agents()).map(|i| world::observe(&self.state, i).expect("agent in range")).collect()
    }

    pub fn masks(&self) -> Vec<ActionMask> {
        (0..self.state.num_agents()).map(|i| valid_actions(&self.state, i).expect("agent in range")).collect()
    }

    pub fn is_blocking(&self, agent: usize) -> bool {
        reward::is_blocking(&self.state, agent, self.settings.blocking_detour)
    }

    /// Advances the world one step and scores it.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepOutcome, EnvError> {
        let (next, mut events) = world::step(&self.state, actions)?;
        reward::mark_crowd_transitions(&self.state, &next, &mut events, &self.crowd);
        let (rewards, delta) =
            reward::step_reward(&self.state, actions, &events, &next, &self.settings.rewards, self.settings.blocking_detour);
        self.breakdown += delta;
        self.collisions += events.collisions() as u64;
        for (m, e) in self.moves.iter_mut().zip(&events.agents) {
            *m += u32::from(e.moved);
        }
        self.state = next;
        Ok(StepOutcome { events, rewards })
    }

    /// Sum of all rewards handed out so far.
    pub fn total_reward(&self) -> f64 {
        reward::episode_total(&self.breakdown, &self.settings.rewards)
    }
}
