use serde::Serialize;
use wasm_bindgen::prelude::*;

use crowdpath::curriculum::level_ranges;
use crowdpath::expert::{plan_expert, JointPlan, SearchBudget};
use crowdpath::reward::{crowd_density, zeta, CrowdParams};
use crowdpath::rollout::{Env, EnvSettings};
use crowdpath::world::{default_max_episode_length, Action, EpisodeStatus, WorldSpec};

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[derive(Serialize)]
struct AgentView {
    row: i32,
    col: i32,
    goal_row: i32,
    goal_col: i32,
    on_goal: bool,
    density: f64,
    crowded: bool,
}

#[derive(Serialize)]
struct Frame {
    size: usize,
    t: u32,
    max_len: u32,
    zeta: f64,
    status: &'static str,
    obstacles: Vec<[i32; 2]>,
    agents: Vec<AgentView>,
    collisions: u64,
    reward: f64,
}

/// A generated world played back along its expert plan.
#[wasm_bindgen]
pub struct Simulation {
    env: Env,
    plan: Option<JointPlan>,
}

#[wasm_bindgen]
impl Simulation {
    #[wasm_bindgen(constructor)]
    pub fn new(size: usize, density: f64, agents: usize, seed: u64) -> Result<Simulation, JsValue> {
        let spec = WorldSpec::new(size, density, agents, seed);
        let env = Env::new(&spec, &EnvSettings::default()).map_err(js_err)?;
        // Keep the page responsive: the joint search gets a small budget.
        let budget = SearchBudget { max_expansions: 20_000, ..SearchBudget::default() };
        let plan = plan_expert(&env.state, &budget, seed).ok();
        Ok(Simulation { env, plan })
    }

    /// False when neither planner produced a plan; agents then wait in place.
    #[wasm_bindgen(getter)]
    pub fn planned(&self) -> bool {
        self.plan.is_some()
    }

    /// Advances one step; returns false once the episode is over.
    pub fn step(&mut self) -> Result<bool, JsValue> {
        if self.env.status() != EpisodeStatus::Running {
            return Ok(false);
        }
        let t = self.env.state.t as usize;
        let actions = match &self.plan {
            Some(p) => p.joint_action(t),
            None => vec![Action::Stay; self.env.state.num_agents()],
        };
        self.env.step(&actions).map_err(js_err)?;
        Ok(self.env.status() == EpisodeStatus::Running)
    }

    /// Current state as JSON, with each agent's local crowd density.
    pub fn frame(&self) -> String {
        let s = &self.env.state;
        let window = self.env.crowd.window;
        let agents = s
            .agents
            .iter()
            .map(|a| {
                let density = crowd_density(s, a.id, window);
                AgentView {
                    row: a.pos.row,
                    col: a.pos.col,
                    goal_row: a.goal.row,
                    goal_col: a.goal.col,
                    on_goal: a.on_goal,
                    density,
                    crowded: density >= self.env.crowd.zeta,
                }
            })
            .collect();
        let frame = Frame {
            size: s.grid.size(),
            t: s.t,
            max_len: self.env.max_len,
            zeta: self.env.crowd.zeta,
            status: match self.env.status() {
                EpisodeStatus::Running => "running",
                EpisodeStatus::Success => "success",
                EpisodeStatus::Timeout => "timeout",
            },
            obstacles: s.grid.obstacles().map(|p| [p.row, p.col]).collect(),
            agents,
            collisions: self.env.collisions,
            reward: self.env.total_reward(),
        };
        serde_json::to_string(&frame).expect("frame serializes")
    }
}

/// Crowding threshold for `agents` agents on an `size`×`size` world.
#[wasm_bindgen]
pub fn crowd_threshold(agents: usize, size: usize, density: f64) -> Result<f64, JsValue> {
    zeta(agents, size, density).map_err(js_err)
}

#[wasm_bindgen]
pub fn episode_length(agents: usize, size: usize, density: f64) -> u32 {
    default_max_episode_length(&WorldSpec::new(size, density, agents, 0))
}

#[wasm_bindgen]
pub fn crowd_window() -> usize {
    CrowdParams::DEFAULT_WINDOW
}

/// Density and size ranges of curriculum levels `0..=max_level` as JSON.
#[wasm_bindgen]
pub fn curriculum_table(max_level: u32) -> String {
    let rows: Vec<_> = (0..=max_level).map(|s| (s, level_ranges(s))).collect();
    serde_json::to_string(&rows).expect("table serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulation_reaches_goals() {
        let mut sim = Simulation::new(10, 0.1, 3, 2).unwrap();
        assert!(sim.planned());
        while sim.step().unwrap() {}
        let frame: serde_json::Value = serde_json::from_str(&sim.frame()).unwrap();
        assert_eq!(frame["status"], "success");
        assert_eq!(frame["collisions"], 0);
    }

    #[test]
    fn helpers() {
        assert!((crowd_threshold(8, 20, 0.0).unwrap() - 0.7204).abs() < 1e-4);
        assert_eq!(episode_length(64, 20, 0.3), 424);
        let table: serde_json::Value = serde_json::from_str(&curriculum_table(2)).unwrap();
        assert_eq!(table.as_array().unwrap().len(), 3);
    }
}
