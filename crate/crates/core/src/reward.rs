//! Crowd-aware reward engine.
//!
//! Per-step rewards combine movement, idling, collision, team completion,
//! blocking and a crowd term. The crowd term fires when an agent's local
//! density crosses the world's threshold `zeta`: entering a crowded window
//! is penalized and leaving one is rewarded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Action, Pos, StepEvents, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("world over-packed: {agents} agents leave no free cells (m = {size}, d = {density})")]
    OverPacked { agents: usize, size: usize, density: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConstants {
    pub r_move: f64,
    pub r_collision: f64,
    pub r_idle_off_goal: f64,
    pub r_idle_on_goal: f64,
    pub r_team: f64,
    pub r_crowd_out: f64,
    pub r_crowd_in: f64,
    pub r_blocking: f64,
}

impl Default for RewardConstants {
    fn default() -> Self {
        RewardConstants {
            r_move: -0.3,
            r_collision: -2.0,
            r_idle_off_goal: -0.5,
            r_idle_on_goal: 0.0,
            r_team: 20.0,
            r_crowd_out: 0.3,
            r_crowd_in: -0.3,
            r_blocking: -2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrowdParams {
    /// Odd side length of the density window.
    pub window: usize,
    pub zeta: f64,
}

impl CrowdParams {
    pub const DEFAULT_WINDOW: usize = 5;

    pub fn new(window: usize, zeta: f64) -> Self {
        debug_assert!(window % 2 == 1 && window >= 3);
        CrowdParams { window, zeta }
    }
}

/// Counts of each reward channel accumulated over an episode (all agents).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub w_m: u64,
    pub w_c: u64,
    pub w_s_penalized: u64,
    /// Idle steps taken on goal; they carry `r_idle_on_goal` (zero by default).
    pub w_s_on_goal: u64,
    pub w_e: u64,
    pub w_crowd_in: u64,
    pub w_crowd_out: u64,
    pub w_blocking: u64,
}

impl std::ops::AddAssign for RewardBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.w_m += o.w_m;
        self.w_c += o.w_c;
        self.w_s_penalized += o.w_s_penalized;
        self.w_s_on_goal += o.w_s_on_goal;
        self.w_e += o.w_e;
        self.w_crowd_in += o.w_crowd_in;
        self.w_crowd_out += o.w_crowd_out;
        self.w_blocking += o.w_blocking;
    }
}

/// Agents (self included) in the `window`×`window` box centered on the
/// agent, divided by the in-bounds free cells of that box.
pub fn crowd_density(state: &WorldState, agent_id: usize, window: usize) -> f64 {
    let center = state.agents[agent_id].pos;
    let half = (window / 2) as i32;
    let inside = |p: Pos| (p.row - center.row).abs() <= half && (p.col - center.col).abs() <= half;
    let mut free = 0usize;
    for dr in -half..=half {
        for dc in -half..=half {
            if state.grid.is_free(center.offset((dr, dc))) {
                free += 1;
            }
        }
    }
    let agents = state.agents.iter().filter(|a| inside(a.pos)).count();
    agents as f64 / free as f64
}

/// Crowding threshold `min(0.95, 0.7 + A / (m²(1 - d) - A))`.
pub fn zeta(agents: usize, size: usize, density: f64) -> Result<f64, RewardError> {
    let denom = (size * size) as f64 * (1.0 - density) - agents as f64;
    if denom <= 0.0 {
        return Err(RewardError::OverPacked { agents, size, density });
    }
    Ok((0.7 + agents as f64 / denom).min(0.95))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrowdTransition {
    Entered,
    Left,
    Unchanged,
}

pub fn crowd_transition(before: f64, after: f64, zeta: f64) -> CrowdTransition {
    if before < zeta && zeta <= after {
        CrowdTransition::Entered
    } else if after < zeta && zeta <= before {
        CrowdTransition::Left
    } else {
        CrowdTransition::Unchanged
    }
}

/// Crowd term with the default magnitudes (±0.3).
pub fn crowd_reward(before: f64, after: f64, zeta: f64) -> f64 {
    crowd_term(&RewardConstants::default(), crowd_transition(before, after, zeta))
}

fn crowd_term(c: &RewardConstants, t: CrowdTransition) -> f64 {
    match t {
        CrowdTransition::Entered => c.r_crowd_in,
        CrowdTransition::Left => c.r_crowd_out,
        CrowdTransition::Unchanged => 0.0,
    }
}

/// Fills the crowd flags of `events` from densities before and after a step.
pub fn mark_crowd_transitions(before: &WorldState, after: &WorldState, events: &mut StepEvents, crowd: &CrowdParams) {
    for (i, ev) in events.agents.iter_mut().enumerate() {
        let t = crowd_transition(crowd_density(before, i, crowd.window), crowd_density(after, i, crowd.window), crowd.zeta);
        ev.crowd_in = t == CrowdTransition::Entered;
        ev.crowd_out = t == CrowdTransition::Left;
    }
}

pub const DEFAULT_DETOUR: u32 = 10;

/// True when parking `agent_id` where it stands lengthens some other agent's
/// shortest path to its goal by at least `detour` steps (or cuts it off).
pub fn is_blocking(state: &WorldState, agent_id: usize, detour: u32) -> bool {
    let me = state.agents[agent_id].pos;
    state.agents.iter().filter(|a| a.id != agent_id).any(|other| {
        let free = state.grid.distance_map(other.goal, &[]);
        let open = free[state.grid.index(other.pos)];
        if open == u32::MAX {
            return false;
        }
        let blocked = state.grid.distance_map(other.goal, &[me]);
        let with_block = blocked[state.grid.index(other.pos)];
        with_block == u32::MAX || with_block - open >= detour
    })
}

/// Per-agent rewards of one transition plus the channel counts it adds.
///
/// `events` must already carry crowd flags (see [`mark_crowd_transitions`]).
pub fn step_reward(
    before: &WorldState,
    _actions: &[Action],
    events: &StepEvents,
    after: &WorldState,
    consts: &RewardConstants,
    detour: u32,
) -> (Vec<f64>, RewardBreakdown) {
    let mut delta = RewardBreakdown::default();
    let success = after.all_on_goal() && !before.all_on_goal();
    let rewards = events
        .agents
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            let mut r;
            if ev.collided {
                r = consts.r_collision;
                delta.w_c += 1;
            } else if ev.moved {
                r = consts.r_move;
                delta.w_m += 1;
            } else if after.agents[i].on_goal {
                r = consts.r_idle_on_goal;
                delta.w_s_on_goal += 1;
            } else {
                r = consts.r_idle_off_goal;
                delta.w_s_penalized += 1;
            }
            if ev.crowd_in {
                r += consts.r_crowd_in;
                delta.w_crowd_in += 1;
            } else if ev.crowd_out {
                r += consts.r_crowd_out;
                delta.w_crowd_out += 1;
            }
            if !ev.moved && is_blocking(after, i, detour) {
                r += consts.r_blocking;
                delta.w_blocking += 1;
            }
            if success {
                r += consts.r_team;
                delta.w_e += 1;
            }
            r
        })
        .collect();
    (rewards, delta)
}

/// Dot product of the reward constants with the channel counts.
pub fn episode_total(b: &RewardBreakdown, c: &RewardConstants) -> f64 {
    b.w_m as f64 * c.r_move
        + b.w_c as f64 * c.r_collision
        + b.w_s_penalized as f64 * c.r_idle_off_goal
        + b.w_s_on_goal as f64 * c.r_idle_on_goal
        + b.w_e as f64 * c.r_team
        + b.w_crowd_in as f64 * c.r_crowd_in
        + b.w_crowd_out as f64 * c.r_crowd_out
        + b.w_blocking as f64 * c.r_blocking
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{step, Grid, WorldState};
    use proptest::prelude::*;

    type Cell = (i32, i32);

    fn world(size: usize, obstacles: &[Cell], agents: &[(Cell, Cell)]) -> WorldState {
        let mut grid = Grid::empty(size);
        for &(r, c) in obstacles {
            grid.set_obstacle(Pos::new(r, c), true);
        }
        let placements: Vec<(Pos, Pos)> = agents.iter().map(|&((a, b), (c, d))| (Pos::new(a, b), Pos::new(c, d))).collect();
        WorldState::from_parts(grid, &placements).unwrap()
    }

    #[test]
    fn density_five_over_thirteen() {
        // 5x5 window around (2,2): 12 obstacles leave 13 free cells, 5 agents.
        let obstacles = [(0, 0), (0, 1), (0, 2), (0, 3), (0, 4), (1, 0), (2, 0), (3, 0), (4, 0), (4, 1), (4, 2), (4, 3)];
        let agents = [((2, 2), (9, 9)), ((1, 1), (9, 8)), ((3, 3), (9, 7)), ((1, 4), (9, 6)), ((3, 1), (9, 5))];
        let w = world(10, &obstacles, &agents);
        assert_eq!(crowd_density(&w, 0, 5), 5.0 / 13.0);
        assert!((crowd_density(&w, 0, 5) - 0.385).abs() < 5e-4);
    }

    #[test]
    fn density_seven_over_eight() {
        // Agent in the corner: the window keeps a 3x3 in-bounds block, one obstacle.
        let agents =
            [((0, 0), (9, 9)), ((0, 1), (9, 8)), ((0, 2), (9, 7)), ((1, 0), (9, 6)), ((1, 1), (9, 5)), ((2, 0), (9, 4)), ((2, 1), (9, 3))];
        let w = world(10, &[(2, 2)], &agents);
        assert_eq!(crowd_density(&w, 0, 5), 0.875);
    }

    #[test]
    fn lone_agent_density() {
        let w = world(10, &[], &[((5, 5), (0, 0))]);
        assert_eq!(crowd_density(&w, 0, 5), 0.04);
    }

    #[test]
    fn zeta_values() {
        assert!((zeta(8, 20, 0.0).unwrap() - 0.7204).abs() < 1e-4);
        assert_eq!(zeta(8, 20, 0.0).unwrap(), 0.7 + 8.0 / 392.0);
        assert_eq!(zeta(64, 20, 0.3).unwrap(), 0.95);
        assert_eq!(zeta(0, 20, 0.3).unwrap(), 0.7);
        assert!(matches!(zeta(16, 4, 0.0), Err(RewardError::OverPacked { .. })));
    }

    #[test]
    fn crowd_reward_scenarios() {
        assert_eq!(crowd_reward(0.385, 0.875, 0.75), -0.3);
        assert_eq!(crowd_reward(0.8, 0.5, 0.75), 0.3);
        assert_eq!(crowd_reward(0.4, 0.6, 0.75), 0.0);
        assert_eq!(crowd_reward(0.8, 0.9, 0.75), 0.0);
    }

    #[test]
    fn blocking_examples() {
        let w = world(8, &[], &[((3, 3), (0, 0))]);
        assert!(!is_blocking(&w, 0, DEFAULT_DETOUR));

        // Open plain: any detour around one cell costs at most 2 steps.
        let w = world(8, &[], &[((3, 3), (0, 0)), ((3, 2), (3, 6))]);
        assert!(!is_blocking(&w, 0, DEFAULT_DETOUR));
    }

    #[test]
    fn blocking_in_corridor() {
        // Row 1 is a corridor of length 12 between walls; agent 0 parks mid-way.
        let size = 14;
        let mut obstacles = vec![];
        for c in 0..size as i32 {
            obstacles.push((0, c));
            obstacles.push((2, c));
        }
        for r in 3..size as i32 {
            for c in 1..size as i32 - 1 {
                obstacles.push((r, c));
            }
        }
        // Two side columns keep the rest of the grid connected to the corridor ends.
        let w = world(size, &obstacles, &[((1, 6), (1, 6)), ((1, 1), (1, 12))]);
        let grid = &w.grid;
        let free = grid.distance_map(Pos::new(1, 12), &[]);
        let blocked = grid.distance_map(Pos::new(1, 12), &[Pos::new(1, 6)]);
        assert_eq!(free[grid.index(Pos::new(1, 1))], 11);
        assert_eq!(blocked[grid.index(Pos::new(1, 1))], u32::MAX);
        assert!(is_blocking(&w, 0, DEFAULT_DETOUR));
        assert!(!is_blocking(&w, 1, DEFAULT_DETOUR));
    }

    fn one_step(w: &WorldState, actions: &[Action], zeta: f64) -> (Vec<f64>, RewardBreakdown) {
        let (next, mut ev) = step(w, actions).unwrap();
        mark_crowd_transitions(w, &next, &mut ev, &CrowdParams::new(5, zeta));
        step_reward(w, actions, &ev, &next, &RewardConstants::default(), DEFAULT_DETOUR)
    }

    #[test]
    fn step_reward_examples() {
        let w = world(8, &[], &[((3, 3), (0, 0)), ((7, 7), (6, 6))]);
        let (r, _) = one_step(&w, &[Action::North, Action::Stay], 0.9);
        assert_eq!(r, vec![-0.3, -0.5]);

        // Agent 0 bumps into agent 1 while the crowd around it jumps past zeta:
        // agent 2 moves next to it in the same step.
        let w = world(8, &[], &[((3, 3), (0, 0)), ((3, 4), (3, 4)), ((5, 3), (7, 7))]);
        let zeta = 0.3;
        let before = crowd_density(&w, 0, 3);
        assert!(before < zeta);
        let (next, mut ev) = step(&w, &[Action::East, Action::Stay, Action::North]).unwrap();
        mark_crowd_transitions(&w, &next, &mut ev, &CrowdParams::new(3, zeta));
        assert!(ev.agents[0].collided && ev.agents[0].crowd_in);
        let (r, d) = step_reward(&w, &[], &ev, &next, &RewardConstants::default(), DEFAULT_DETOUR);
        assert!((r[0] - (-2.3)).abs() < 1e-12);
        assert_eq!(d.w_c, 1);
        // All three now share one 3x3 neighbourhood: each window holds 3/9.
        assert_eq!(d.w_crowd_in, 3);
    }

    #[test]
    fn team_bonus_goes_to_every_agent() {
        let w = world(6, &[], &[((0, 0), (0, 1)), ((3, 3), (3, 3))]);
        let (r, d) = one_step(&w, &[Action::East, Action::Stay], 0.9);
        assert_eq!(r, vec![-0.3 + 20.0, 20.0]);
        assert_eq!(d.w_e, 2);
    }

    #[test]
    fn episode_total_examples() {
        let c = RewardConstants::default();
        assert_eq!(episode_total(&RewardBreakdown::default(), &c), 0.0);
        assert!((episode_total(&RewardBreakdown { w_m: 10, ..Default::default() }, &c) + 3.0).abs() < 1e-12);
        assert_eq!(episode_total(&RewardBreakdown { w_e: 4, ..Default::default() }, &c), 80.0);
    }

    proptest! {
        #[test]
        fn crowd_antisymmetry(a in 0.0f64..=1.0, b in 0.0f64..=1.0, z in 0.7f64..=0.95) {
            prop_assert_eq!(crowd_reward(a, b, z) + crowd_reward(b, a, z), 0.0);
        }

        #[test]
        fn closed_density_loop_sums_to_zero(mut path in proptest::collection::vec(0.0f64..=1.0, 1..30), z in 0.7f64..=0.95) {
            path.push(path[0]);
            let sum: f64 = path.windows(2).map(|w| crowd_reward(w[0], w[1], z)).sum();
            prop_assert!(sum.abs() < 1e-9);
        }

        #[test]
        fn zeta_bounds_and_monotone(a in 0usize..100, m in 10usize..40, d in 0.0f64..0.6) {
            if let (Ok(z), Ok(z_more_agents), Ok(z_denser)) = (zeta(a, m, d), zeta(a + 1, m, d), zeta(a, m, (d + 0.05).min(0.6))) {
                prop_assert!((0.7..=0.95).contains(&z));
                prop_assert!(z_more_agents >= z);
                prop_assert!(z_denser >= z);
            }
        }
    }
}
