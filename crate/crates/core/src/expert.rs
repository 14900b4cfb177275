//! Expert planners supplying demonstrations.
//!
//! [`plan_od_astar`] is an exact A* over the joint state with operator
//! decomposition: each search step assigns the move of one agent, so the
//! branching factor stays at five instead of `5^A`. Costs follow the usual
//! sum-of-costs convention of the M* family: every agent pays one unit per
//! timestep except when it waits on its own goal. Ties between equally good
//! nodes fall back to action order, or to a seeded random draw with
//! [`plan_od_astar_seeded`]. [`plan_prioritized`] is
//! the fallback for larger teams: agents are planned one after another
//! against a space-time reservation table.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{step, Action, Grid, Pos, WorldState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("search budget exhausted after {expanded} expansions")]
    Exhausted { expanded: usize },
    #[error("no collision-free joint plan exists")]
    NoSolution,
    #[error("{agents} agents exceed the joint-search cap of {cap}")]
    AgentCap { agents: usize, cap: usize },
    #[error("prioritized planning failed for agent {agent}")]
    Failed { agent: usize },
    #[error("unknown agent id {0}")]
    UnknownAgent(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBudget {
    pub max_expansions: usize,
    /// Wall-clock limit; `None` keeps the search deterministic.
    pub timeout_ms: Option<u64>,
    /// Largest team handled by the joint search.
    pub agent_cap: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget { max_expansions: 200_000, timeout_ms: None, agent_cap: 4 }
    }
}

/// Per-agent action sequences of equal length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointPlan {
    pub actions: Vec<Vec<Action>>,
    pub sum_of_costs: u32,
    pub makespan: u32,
}

impl JointPlan {
    /// Builds a plan from per-agent position sequences (all starting at t = 0).
    pub fn from_paths(paths: &[Vec<Pos>], goals: &[Pos]) -> JointPlan {
        let horizon = paths.iter().map(|p| p.len()).max().unwrap_or(1).max(1);
        let mut actions = Vec::with_capacity(paths.len());
        for path in paths {
            let mut seq: Vec<Action> = path.windows(2).map(|w| Action::between(w[0], w[1]).expect("path cells are adjacent")).collect();
            seq.resize(horizon - 1, Action::Stay);
            actions.push(seq);
        }
        let mut plan = JointPlan { actions, sum_of_costs: 0, makespan: 0 };
        plan.trim(paths, goals);
        plan
    }

    fn trim(&mut self, paths: &[Vec<Pos>], goals: &[Pos]) {
        // Drop trailing steps in which nobody moves.
        let mut t = self.horizon();
        while t > 0 && self.actions.iter().all(|a| a[t - 1] == Action::Stay) {
            t -= 1;
        }
        for a in &mut self.actions {
            a.truncate(t);
        }
        self.makespan = t as u32;
        self.sum_of_costs = plan_cost(&self.actions, paths.iter().map(|p| p[0]), goals);
    }

    pub fn horizon(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn joint_action(&self, t: usize) -> Vec<Action> {
        self.actions.iter().map(|a| a.get(t).copied().unwrap_or(Action::Stay)).collect()
    }

    pub fn joint_actions(&self) -> Vec<Vec<Action>> {
        (0..self.horizon()).map(|t| self.joint_action(t)).collect()
    }
}

/// Sum-of-costs of action sequences: one unit per agent and step, except
/// waiting on the agent's own goal.
pub fn plan_cost(actions: &[Vec<Action>], starts: impl Iterator<Item = Pos>, goals: &[Pos]) -> u32 {
    let mut cost = 0;
    for ((seq, start), &goal) in actions.iter().zip(starts).zip(goals) {
        let mut p = start;
        for &a in seq {
            if !(a == Action::Stay && p == goal) {
                cost += 1;
            }
            p = p.offset(a.delta());
        }
    }
    cost
}

/// The planned action of `agent_id` at time `t`; `Stay` once its sequence ends.
pub fn expert_action(plan: &JointPlan, agent_id: usize, t: usize) -> Result<Action, PlanError> {
    let seq = plan.actions.get(agent_id).ok_or(PlanError::UnknownAgent(agent_id))?;
    Ok(seq.get(t).copied().unwrap_or(Action::Stay))
}

/// Shortest 4-connected path length avoiding obstacles and `blocked` cells.
pub fn bfs_distance(grid: &Grid, from: Pos, to: Pos, blocked: &[Pos]) -> Option<u32> {
    let d = grid.distance_map(from, blocked)[grid.index(to)];
    (d != u32::MAX).then_some(d)
}

/// Executes a plan through the simulator and reports the first problem.
pub fn verify_plan(world: &WorldState, plan: &JointPlan) -> Result<(), String> {
    if plan.actions.len() != world.num_agents() {
        return Err(format!("plan covers {} agents, world has {}", plan.actions.len(), world.num_agents()));
    }
    let mut state = world.clone();
    for t in 0..plan.horizon() {
        let (next, ev) = step(&state, &plan.joint_action(t)).map_err(|e| e.to_string())?;
        if let Some(i) = ev.agents.iter().position(|e| e.collided) {
            return Err(format!("agent {i} collides at step {t}"));
        }
        state = next;
    }
    if !state.all_on_goal() {
        return Err("plan ends with agents off their goals".into());
    }
    Ok(())
}

struct Clock {
    start: Option<Instant>,
    limit: Duration,
}

impl Clock {
    fn new(timeout_ms: Option<u64>) -> Self {
        match timeout_ms {
            Some(ms) => Clock { start: Some(Instant::now()), limit: Duration::from_millis(ms) },
            None => Clock { start: None, limit: Duration::ZERO },
        }
    }

    fn expired(&self) -> bool {
        self.start.is_some_and(|s| s.elapsed() > self.limit)
    }
}

struct OdNode {
    /// Cell indices: agents `< next` already hold their new cell.
    cells: Vec<u16>,
    /// Cell indices at the start of the current timestep.
    prev: Vec<u16>,
    next: usize,
    g: u32,
    parent: Option<usize>,
}

/// Sum-of-costs optimal joint plan by A* with operator decomposition.
pub fn plan_od_astar(world: &WorldState, budget: &SearchBudget) -> Result<JointPlan, PlanError> {
    od_astar(world, budget, None)
}

/// Like [`plan_od_astar`], with ties among equally promising nodes broken
/// by a random draw. Different seeds give different optimal plans.
pub fn plan_od_astar_seeded(world: &WorldState, budget: &SearchBudget, tie_seed: u64) -> Result<JointPlan, PlanError> {
    od_astar(world, budget, Some(ChaCha8Rng::seed_from_u64(tie_seed)))
}

fn od_astar(world: &WorldState, budget: &SearchBudget, mut ties: Option<ChaCha8Rng>) -> Result<JointPlan, PlanError> {
    let n = world.num_agents();
    if n > budget.agent_cap {
        return Err(PlanError::AgentCap { agents: n, cap: budget.agent_cap });
    }
    let grid = &world.grid;
    let goals: Vec<u16> = world.agents.iter().map(|a| grid.index(a.goal) as u16).collect();
    let dists: Vec<Vec<u32>> = world.agents.iter().map(|a| grid.distance_map(a.goal, &[])).collect();
    let heuristic = |cells: &[u16]| -> Option<u32> {
        cells.iter().zip(&dists).try_fold(0u32, |acc, (&c, d)| {
            let v = d[c as usize];
            (v != u32::MAX).then(|| acc + v)
        })
    };
    // Precomputed neighbor lists (including the cell itself, as Stay).
    let moves: Vec<Vec<u16>> = (0..grid.size() * grid.size())
        .map(|i| {
            let p = grid.pos_of(i);
            Action::ALL.iter().map(|a| p.offset(a.delta())).filter(|q| grid.is_free(*q)).map(|q| grid.index(q) as u16).collect()
        })
        .collect();

    let start: Vec<u16> = world.agents.iter().map(|a| grid.index(a.pos) as u16).collect();
    let Some(h0) = heuristic(&start) else {
        return Err(PlanError::NoSolution);
    };
    let mut nodes = vec![OdNode { cells: start.clone(), prev: start.clone(), next: 0, g: 0, parent: None }];
    let mut open = BinaryHeap::new();
    let mut seq = 0u64;
    open.push(Reverse((h0, h0, 0u32, seq, 0usize)));
    let mut best_g: HashMap<Vec<u16>, u32> = HashMap::from([(start, 0)]);
    let mut closed: HashSet<Vec<u16>> = HashSet::new();
    let clock = Clock::new(budget.timeout_ms);
    let mut expanded = 0usize;

    while let Some(Reverse((_, _, _, _, id))) = open.pop() {
        let node = &nodes[id];
        if node.next == 0 {
            if closed.contains(&node.cells) {
                continue;
            }
            if node.cells == goals {
                return Ok(reconstruct(world, &nodes, id));
            }
            closed.insert(node.cells.clone());
        }
        expanded += 1;
        if expanded > budget.max_expansions || (expanded.is_multiple_of(1024) && clock.expired()) {
            return Err(PlanError::Exhausted { expanded });
        }

        let k = node.next;
        let from = node.prev[k];
        let (g, cells, prev) = (node.g, node.cells.clone(), node.prev.clone());
        for &to in &moves[from as usize] {
            let conflict = (0..k).any(|j| cells[j] == to || (cells[j] == from && prev[j] == to));
            if conflict {
                continue;
            }
            let step_cost = u32::from(!(to == from && to == goals[k]));
            let mut child_cells = cells.clone();
            child_cells[k] = to;
            let g2 = g + step_cost;
            let Some(h) = heuristic(&child_cells) else { continue };
            let (next, child_prev) = if k + 1 == n {
                if closed.contains(&child_cells) {
                    continue;
                }
                match best_g.get(&child_cells) {
                    Some(&old) if old <= g2 => continue,
                    _ => {
                        best_g.insert(child_cells.clone(), g2);
                    }
                }
                (0, child_cells.clone())
            } else {
                (k + 1, prev.clone())
            };
            nodes.push(OdNode { cells: child_cells, prev: child_prev, next, g: g2, parent: Some(id) });
            seq += 1;
            let tie = ties.as_mut().map_or(0, |r| r.gen::<u32>());
            open.push(Reverse((g2 + h, h, tie, seq, nodes.len() - 1)));
        }
    }
    Err(PlanError::NoSolution)
}

fn reconstruct(world: &WorldState, nodes: &[OdNode], goal_id: usize) -> JointPlan {
    let grid = &world.grid;
    let mut snapshots: Vec<&[u16]> = Vec::new();
    let mut cur = Some(goal_id);
    while let Some(id) = cur {
        if nodes[id].next == 0 {
            snapshots.push(&nodes[id].cells);
        }
        cur = nodes[id].parent;
    }
    snapshots.reverse();
    let paths: Vec<Vec<Pos>> = (0..world.num_agents()).map(|i| snapshots.iter().map(|s| grid.pos_of(s[i] as usize)).collect()).collect();
    let goals: Vec<Pos> = world.agents.iter().map(|a| a.goal).collect();
    JointPlan::from_paths(&paths, &goals)
}

#[derive(Default)]
struct Reservations {
    vertex: HashSet<(u16, u32)>,
    /// (from, to, t): the move leaves `from` at t and reaches `to` at t + 1.
    edge: HashSet<(u16, u16, u32)>,
    /// Cell held forever from the given time on (a finished agent's goal).
    parked: HashMap<u16, u32>,
    /// Latest time any reservation is active.
    last: u32,
}

impl Reservations {
    fn occupied(&self, cell: u16, t: u32) -> bool {
        self.vertex.contains(&(cell, t)) || self.parked.get(&cell).is_some_and(|&from| t >= from)
    }

    fn add_path(&mut self, path: &[u16]) {
        for (t, &c) in path.iter().enumerate() {
            self.vertex.insert((c, t as u32));
        }
        for (t, w) in path.windows(2).enumerate() {
            self.edge.insert((w[0], w[1], t as u32));
        }
        let end = path.len() as u32 - 1;
        self.parked.insert(*path.last().unwrap(), end);
        self.last = self.last.max(end);
    }

    /// Whether some reservation visits `cell` at or after `t`.
    fn visited_from(&self, cell: u16, t: u32) -> bool {
        (t..=self.last).any(|s| self.vertex.contains(&(cell, s)))
    }
}

/// Plans agents one at a time in a seeded random order; earlier agents'
/// trajectories are hard constraints for later ones.
pub fn plan_prioritized(world: &WorldState, order_seed: u64) -> Result<JointPlan, PlanError> {
    let grid = &world.grid;
    let horizon = 4 * grid.size() as u32;
    let mut order: Vec<usize> = (0..world.num_agents()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));

    let mut table = Reservations::default();
    let mut paths: Vec<Vec<Pos>> = vec![Vec::new(); world.num_agents()];
    for &agent in &order {
        let a = &world.agents[agent];
        let path = space_time_astar(grid, grid.index(a.pos) as u16, grid.index(a.goal) as u16, &table, horizon)
            .ok_or(PlanError::Failed { agent })?;
        table.add_path(&path);
        paths[agent] = path.iter().map(|&c| grid.pos_of(c as usize)).collect();
    }
    let goals: Vec<Pos> = world.agents.iter().map(|a| a.goal).collect();
    Ok(JointPlan::from_paths(&paths, &goals))
}

fn space_time_astar(grid: &Grid, start: u16, goal: u16, table: &Reservations, horizon: u32) -> Option<Vec<u16>> {
    let dist = grid.distance_map(grid.pos_of(goal as usize), &[]);
    let h = |c: u16| dist[c as usize];
    if h(start) == u32::MAX || table.occupied(start, 0) {
        return None;
    }
    let mut parent: HashMap<(u16, u32), (u16, u32)> = HashMap::new();
    let mut seen: HashSet<(u16, u32)> = HashSet::from([(start, 0)]);
    let mut open = BinaryHeap::new();
    open.push(Reverse((h(start), 0u32, start)));
    while let Some(Reverse((_, t, cell))) = open.pop() {
        if cell == goal && !table.visited_from(goal, t + 1) {
            let mut path = vec![cell];
            let mut key = (cell, t);
            while let Some(&p) = parent.get(&key) {
                path.push(p.0);
                key = p;
            }
            path.reverse();
            return Some(path);
        }
        if t >= horizon {
            continue;
        }
        let p = grid.pos_of(cell as usize);
        for a in Action::ALL {
            let q = p.offset(a.delta());
            if !grid.is_free(q) {
                continue;
            }
            let next = grid.index(q) as u16;
            let t2 = t + 1;
            if table.occupied(next, t2) || table.edge.contains(&(next, cell, t)) || h(next) == u32::MAX {
                continue;
            }
            if seen.insert((next, t2)) {
                parent.insert((next, t2), (cell, t));
                open.push(Reverse((t2 + h(next), t2, next)));
            }
        }
    }
    None
}

/// OD A* when the team is small enough and the budget allows, otherwise
/// prioritized planning. `seed` breaks ties in the joint search and orders
/// agents in the fallback.
pub fn plan_expert(world: &WorldState, budget: &SearchBudget, seed: u64) -> Result<JointPlan, PlanError> {
    match plan_od_astar_seeded(world, budget, seed) {
        Ok(plan) => Ok(plan),
        Err(PlanError::NoSolution) => Err(PlanError::NoSolution),
        Err(_) => plan_prioritized(world, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldSpec};
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
    fn bfs_examples() {
        let g = Grid::empty(8);
        assert_eq!(bfs_distance(&g, Pos::new(2, 2), Pos::new(2, 2), &[]), Some(0));
        assert_eq!(bfs_distance(&g, Pos::new(3, 1), Pos::new(3, 6), &[]), Some(5));
        let w = world(5, &[(0, 1), (1, 0), (1, 1)], &[((4, 4), (4, 4))]);
        assert_eq!(bfs_distance(&w.grid, Pos::new(4, 4), Pos::new(0, 0), &[]), None);
    }

    #[test]
    fn single_agent_plan_is_shortest() {
        let w = world(6, &[(2, 1), (2, 2), (2, 3)], &[((0, 2), (4, 2))]);
        let plan = plan_od_astar(&w, &SearchBudget::default()).unwrap();
        let d = bfs_distance(&w.grid, Pos::new(0, 2), Pos::new(4, 2), &[]).unwrap();
        assert_eq!(plan.makespan, d);
        assert_eq!(plan.sum_of_costs, d);
        verify_plan(&w, &plan).unwrap();
    }

    #[test]
    fn seeded_ties_vary_optimal_plans() {
        let w = world(8, &[], &[((0, 0), (6, 6)), ((7, 0), (0, 7))]);
        let base = plan_od_astar(&w, &SearchBudget::default()).unwrap();
        let mut distinct = HashSet::new();
        for seed in 0..8 {
            let plan = plan_od_astar_seeded(&w, &SearchBudget::default(), seed).unwrap();
            verify_plan(&w, &plan).unwrap();
            assert_eq!(plan.sum_of_costs, base.sum_of_costs);
            assert_eq!(plan, plan_od_astar_seeded(&w, &SearchBudget::default(), seed).unwrap());
            distinct.insert(plan.actions.clone());
        }
        assert!(distinct.len() > 1);
    }

    #[test]
    fn corridor_with_pocket() {
        // Width-1 corridor on row 1 with a pocket at (0, 2).
        let mut obstacles = vec![];
        for c in 0..5 {
            if c != 2 {
                obstacles.push((0, c));
            }
            obstacles.push((2, c));
            obstacles.push((3, c));
            obstacles.push((4, c));
        }
        let w = world(5, &obstacles, &[((1, 0), (1, 4)), ((1, 4), (1, 0))]);
        let plan = plan_od_astar(&w, &SearchBudget::default()).unwrap();
        verify_plan(&w, &plan).unwrap();
        // One agent ducks into the pocket (2 extra moves). Both start two cells
        // from the pocket mouth, so the other must wait once: 4 + 4 + 2 + 1.
        assert_eq!(plan.sum_of_costs, 11);
        assert_eq!(crate::selfcheck::exhaustive_sum_of_costs(&w), Some(11));
    }

    #[test]
    fn exhausted_and_capped() {
        let w = world(8, &[], &[((0, 0), (7, 7)), ((7, 7), (0, 0))]);
        let tight = SearchBudget { max_expansions: 3, ..SearchBudget::default() };
        assert!(matches!(plan_od_astar(&w, &tight), Err(PlanError::Exhausted { .. })));
        let capped = SearchBudget { agent_cap: 1, ..SearchBudget::default() };
        assert_eq!(plan_od_astar(&w, &capped), Err(PlanError::AgentCap { agents: 2, cap: 1 }));
        assert!(plan_expert(&w, &capped, 0).is_ok());
    }

    #[test]
    fn unsolvable_instance() {
        // Agent 1 sits on its goal inside a corridor that agent 0 must cross.
        let w = world(4, &[(1, 0), (1, 1), (1, 2), (1, 3)], &[((0, 0), (0, 3)), ((0, 2), (0, 2))]);
        assert_eq!(plan_od_astar(&w, &SearchBudget::default()), Err(PlanError::NoSolution));
    }

    #[test]
    fn prioritized_examples() {
        let w = world(6, &[], &[((0, 0), (0, 5))]);
        let plan = plan_prioritized(&w, 3).unwrap();
        assert_eq!(plan.makespan, 5);
        let w = world(6, &[], &[((0, 0), (0, 5)), ((5, 0), (5, 5))]);
        let plan = plan_prioritized(&w, 3).unwrap();
        assert_eq!(plan.sum_of_costs, 10);
        verify_plan(&w, &plan).unwrap();
    }

    #[test]
    fn prioritized_eight_agents_replays() {
        let w = generate_world(&WorldSpec::new(20, 0.1, 8, 42)).unwrap();
        let plan = plan_prioritized(&w, 5).unwrap();
        verify_plan(&w, &plan).unwrap();
        assert_eq!(plan, plan_prioritized(&w, 5).unwrap());
    }

    #[test]
    fn expert_action_lookup() {
        let w = world(6, &[], &[((0, 0), (0, 2))]);
        let plan = plan_od_astar(&w, &SearchBudget::default()).unwrap();
        assert_eq!(expert_action(&plan, 0, 0), Ok(Action::East));
        assert_eq!(expert_action(&plan, 0, 99), Ok(Action::Stay));
        assert_eq!(expert_action(&plan, 1, 0), Err(PlanError::UnknownAgent(1)));
        let replayed: Vec<Vec<Action>> =
            (0..plan.horizon()).map(|t| (0..1).map(|i| expert_action(&plan, i, t).unwrap()).collect()).collect();
        assert_eq!(replayed, plan.joint_actions());
    }

    proptest! {
        #[test]
        fn bfs_symmetric(seed: u64, density in 0.0f64..0.5) {
            let w = generate_world(&WorldSpec::new(9, density, 2, seed)).unwrap();
            let (a, b) = (w.agents[0].pos, w.agents[1].pos);
            prop_assert_eq!(bfs_distance(&w.grid, a, b, &[]), bfs_distance(&w.grid, b, a, &[]));
        }
    }
}
