//! Scenario and replay files.
//!
//! Both are JSON documents. A scenario pins down a world exactly:
//!
//! ```json
//! {
//!   "version": 1,
//!   "spec": { "size": 10, "obstacle_density": 0.1, "num_agents": 2, "seed": 7 },
//!   "obstacles": [[0, 3], [4, 4]],
//!   "agents": [ { "start": [1, 1], "goal": [8, 2] }, { "start": [5, 0], "goal": [0, 0] } ]
//! }
//! ```
//!
//! A replay adds the per-step joint actions, one string per step with one
//! character per agent (`N`, `E`, `S`, `W`, `.` for stay):
//!
//! ```json
//! { "version": 1, "scenario": { ... }, "steps": ["E.", "ES"] }
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{step, Action, Grid, Pos, StepEvents, WorldError, WorldSpec, WorldState};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format version {0}")]
    Version(u32),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("step {step}: {reason}")]
    BadStep { step: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPlacement {
    pub start: [i32; 2],
    pub goal: [i32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub version: u32,
    pub spec: WorldSpec,
    pub obstacles: Vec<[i32; 2]>,
    pub agents: Vec<AgentPlacement>,
}

fn pair(p: Pos) -> [i32; 2] {
    [p.row, p.col]
}

fn pos([r, c]: [i32; 2]) -> Pos {
    Pos::new(r, c)
}

impl Scenario {
    pub fn from_world(spec: &WorldSpec, world: &WorldState) -> Self {
        Scenario {
            version: FORMAT_VERSION,
            spec: *spec,
            obstacles: world.grid.obstacles().map(pair).collect(),
            agents: world.agents.iter().map(|a| AgentPlacement { start: pair(a.pos), goal: pair(a.goal) }).collect(),
        }
    }

    /// Rebuilds the initial world state (t = 0).
    pub fn to_world(&self) -> Result<WorldState, FormatError> {
        if self.version != FORMAT_VERSION {
            return Err(FormatError::Version(self.version));
        }
        let mut grid = Grid::empty(self.spec.size);
        for &o in &self.obstacles {
            let p = pos(o);
            if !grid.in_bounds(p) {
                return Err(WorldError::InvalidScenario(format!("obstacle {p} out of bounds")).into());
            }
            grid.set_obstacle(p, true);
        }
        let placements: Vec<(Pos, Pos)> = self.agents.iter().map(|a| (pos(a.start), pos(a.goal))).collect();
        Ok(WorldState::from_parts(grid, &placements)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let s: Scenario = serde_json::from_str(text)?;
        if s.version != FORMAT_VERSION {
            return Err(FormatError::Version(s.version));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replay {
    pub version: u32,
    pub scenario: Scenario,
    pub steps: Vec<String>,
}

pub fn encode_joint_action(actions: &[Action]) -> String {
    actions.iter().map(|a| a.code()).collect()
}

pub fn decode_joint_action(code: &str) -> Option<Vec<Action>> {
    code.chars().map(Action::from_code).collect()
}

impl Replay {
    pub fn new(scenario: Scenario, joint_actions: &[Vec<Action>]) -> Self {
        Replay { version: FORMAT_VERSION, scenario, steps: joint_actions.iter().map(|j| encode_joint_action(j)).collect() }
    }

    pub fn joint_actions(&self) -> Result<Vec<Vec<Action>>, FormatError> {
        let n = self.scenario.agents.len();
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| match decode_joint_action(s) {
                Some(j) if j.len() == n => Ok(j),
                Some(j) => Err(FormatError::BadStep { step: i, reason: format!("{} actions for {n} agents", j.len()) }),
                None => Err(FormatError::BadStep { step: i, reason: format!("unknown action code in {s:?}") }),
            })
            .collect()
    }

    /// Re-simulates the replay and returns every state (initial included)
    /// together with the events of each transition.
    pub fn simulate(&self) -> Result<(Vec<WorldState>, Vec<StepEvents>), FormatError> {
        let mut states = vec![self.scenario.to_world()?];
        let mut events = Vec::with_capacity(self.steps.len());
        for joint in self.joint_actions()? {
            let (next, ev) = step(states.last().unwrap(), &joint)?;
            states.push(next);
            events.push(ev);
        }
        Ok((states, events))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("replay serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let r: Replay = serde_json::from_str(text)?;
        if r.version != FORMAT_VERSION {
            return Err(FormatError::Version(r.version));
        }
        r.scenario.to_world()?;
        Ok(r)
    }
}
