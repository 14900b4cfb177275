//! Grid-world MAPF environment.
//!
//! Coordinates are `(row, col)` with row 0 at the north edge, so `North`
//! decreases the row index. Agents move simultaneously; conflicting moves
//! are rejected and the offending agents stay where they are.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side of the square observation window fed to the policy.
pub const OBS_SIZE: usize = 10;
/// Window index of the observing agent (an even window has no center).
pub const OBS_ANCHOR: i32 = 4;
pub const OBS_CHANNELS: usize = 4;
/// Attempts spent re-sampling an unreachable start/goal pair before carving.
const REPAIR_ATTEMPTS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("world size {0} is below the minimum of 4")]
    SizeTooSmall(usize),
    #[error("obstacle density {0} outside [0, 0.6]")]
    BadDensity(f64),
    #[error("at least one agent is required")]
    NoAgents,
    #[error("{agents} agents do not fit in {free} free cells")]
    TooManyAgents { agents: usize, free: usize },
    #[error("unknown agent id {0}")]
    UnknownAgent(usize),
    #[error("joint action has {got} entries, expected {expected}")]
    JointActionLength { got: usize, expected: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub size: usize,
    pub obstacle_density: f64,
    pub num_agents: usize,
    pub seed: u64,
}

impl WorldSpec {
    pub fn new(size: usize, obstacle_density: f64, num_agents: usize, seed: u64) -> Self {
        WorldSpec { size, obstacle_density, num_agents, seed }
    }

    /// Number of obstacle cells placed before connectivity repair.
    pub fn obstacle_count(&self) -> usize {
        // The epsilon absorbs representation error such as 0.29999... * 100.
        (self.obstacle_density * (self.size * self.size) as f64 + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.size < 4 {
            return Err(WorldError::SizeTooSmall(self.size));
        }
        if !(0.0..=0.6).contains(&self.obstacle_density) {
            return Err(WorldError::BadDensity(self.obstacle_density));
        }
        if self.num_agents == 0 {
            return Err(WorldError::NoAgents);
        }
        let free = self.size * self.size - self.obstacle_count();
        if self.num_agents > free {
            return Err(WorldError::TooManyAgents { agents: self.num_agents, free });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub row: i32,
    pub col: i32,
}

impl Pos {
    pub const fn new(row: i32, col: i32) -> Self {
        Pos { row, col }
    }

    pub fn offset(self, (dr, dc): (i32, i32)) -> Pos {
        Pos::new(self.row + dr, self.col + dc)
    }

    pub fn manhattan(self, other: Pos) -> u32 {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    North,
    East,
    South,
    West,
    Stay,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::North, Action::East, Action::South, Action::West, Action::Stay];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::North => (-1, 0),
            Action::East => (0, 1),
            Action::South => (1, 0),
            Action::West => (0, -1),
            Action::Stay => (0, 0),
        }
    }

    /// Single-letter code used by replay files.
    pub fn code(self) -> char {
        match self {
            Action::North => 'N',
            Action::East => 'E',
            Action::South => 'S',
            Action::West => 'W',
            Action::Stay => '.',
        }
    }

    pub fn from_code(c: char) -> Option<Action> {
        match c {
            'N' => Some(Action::North),
            'E' => Some(Action::East),
            'S' => Some(Action::South),
            'W' => Some(Action::West),
            '.' => Some(Action::Stay),
            _ => None,
        }
    }

    /// The action moving `from` to the 4-adjacent (or identical) cell `to`.
    pub fn between(from: Pos, to: Pos) -> Option<Action> {
        let d = (to.row - from.row, to.col - from.col);
        Action::ALL.into_iter().find(|a| a.delta() == d)
    }
}

/// Set of actions, indexed by [`Action::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ActionMask(pub [bool; Action::COUNT]);

impl ActionMask {
    pub fn only_stay() -> Self {
        let mut m = ActionMask::default();
        m.insert(Action::Stay);
        m
    }

    pub fn full() -> Self {
        ActionMask([true; Action::COUNT])
    }

    pub fn insert(&mut self, a: Action) {
        self.0[a.index()] = true;
    }

    pub fn contains(&self, a: Action) -> bool {
        self.0[a.index()]
    }

    pub fn len(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Action> + '_ {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid {
    size: usize,
    cells: Vec<bool>,
}

impl Grid {
    pub fn empty(size: usize) -> Self {
        Grid { size, cells: vec![false; size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.row >= 0 && p.col >= 0 && (p.row as usize) < self.size && (p.col as usize) < self.size
    }

    /// Row-major index of an in-bounds cell.
    pub fn index(&self, p: Pos) -> usize {
        debug_assert!(self.in_bounds(p));
        p.row as usize * self.size + p.col as usize
    }

    pub fn pos_of(&self, idx: usize) -> Pos {
        Pos::new((idx / self.size) as i32, (idx % self.size) as i32)
    }

    pub fn is_obstacle(&self, p: Pos) -> bool {
        self.cells[self.index(p)]
    }

    /// In bounds and not an obstacle.
    pub fn is_free(&self, p: Pos) -> bool {
        self.in_bounds(p) && !self.cells[self.index(p)]
    }

    pub fn set_obstacle(&mut self, p: Pos, obstacle: bool) {
        let i = self.index(p);
        self.cells[i] = obstacle;
    }

    pub fn obstacle_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn free_count(&self) -> usize {
        self.cells.len() - self.obstacle_count()
    }

    pub fn obstacles(&self) -> impl Iterator<Item = Pos> + '_ {
        self.cells.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| self.pos_of(i))
    }

    pub fn free_cells(&self) -> impl Iterator<Item = Pos> + '_ {
        self.cells.iter().enumerate().filter(|(_, &c)| !c).map(|(i, _)| self.pos_of(i))
    }

    pub fn neighbors(&self, p: Pos) -> impl Iterator<Item = Pos> + '_ {
        Action::ALL[..4].iter().map(move |a| p.offset(a.delta())).filter(|q| self.is_free(*q))
    }

    /// Breadth-first distances from `source` to every cell; `u32::MAX` marks
    /// unreachable or blocked cells.
    pub fn distance_map(&self, source: Pos, blocked: &[Pos]) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.cells.len()];
        if !self.is_free(source) || blocked.contains(&source) {
            return dist;
        }
        let mut queue = VecDeque::new();
        dist[self.index(source)] = 0;
        queue.push_back(source);
        while let Some(p) = queue.pop_front() {
            let d = dist[self.index(p)];
            for q in self.neighbors(p) {
                let qi = self.index(q);
                if dist[qi] == u32::MAX && !blocked.contains(&q) {
                    dist[qi] = d + 1;
                    queue.push_back(q);
                }
            }
        }
        dist
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub id: usize,
    pub pos: Pos,
    pub goal: Pos,
    pub on_goal: bool,
}

impl AgentState {
    pub fn new(id: usize, pos: Pos, goal: Pos) -> Self {
        AgentState { id, pos, goal, on_goal: pos == goal }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorldState {
    pub grid: Grid,
    pub agents: Vec<AgentState>,
    pub t: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AgentEvents {
    pub collided: bool,
    pub moved: bool,
    pub arrived: bool,
    pub crowd_in: bool,
    pub crowd_out: bool,
}

/// Per-agent outcome flags of one transition. The crowd flags are left
/// unset by [`step`] and filled in by `reward::mark_crowd_transitions`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepEvents {
    pub agents: Vec<AgentEvents>,
    /// Rounds of the rejection fixed point that rejected at least one move.
    pub resolution_rounds: usize,
}

impl StepEvents {
    pub fn collisions(&self) -> usize {
        self.agents.iter().filter(|e| e.collided).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeStatus {
    Running,
    Success,
    Timeout,
}

impl WorldState {
    /// Builds a state from explicit placements, checking every invariant.
    pub fn from_parts(grid: Grid, starts_goals: &[(Pos, Pos)]) -> Result<Self, WorldError> {
        let agents: Vec<AgentState> = starts_goals.iter().enumerate().map(|(i, &(s, g))| AgentState::new(i, s, g)).collect();
        let state = WorldState { grid, agents, t: 0 };
        state.check_invariants().map_err(WorldError::InvalidScenario)?;
        Ok(state)
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agent(&self, id: usize) -> Result<&AgentState, WorldError> {
        self.agents.get(id).ok_or(WorldError::UnknownAgent(id))
    }

    pub fn agent_at(&self, p: Pos) -> Option<usize> {
        self.agents.iter().position(|a| a.pos == p)
    }

    pub fn all_on_goal(&self) -> bool {
        self.agents.iter().all(|a| a.on_goal)
    }

    /// Returns a description of the first violated invariant, if any.
    pub fn check_invariants(&self) -> Result<(), String> {
        for a in &self.agents {
            if !self.grid.is_free(a.pos) {
                return Err(format!("agent {} at {} is out of bounds or on an obstacle", a.id, a.pos));
            }
            if !self.grid.is_free(a.goal) {
                return Err(format!("goal of agent {} at {} is out of bounds or on an obstacle", a.id, a.goal));
            }
            if a.on_goal != (a.pos == a.goal) {
                return Err(format!("agent {} has stale on_goal flag", a.id));
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.id != i {
                return Err(format!("agent at index {i} carries id {}", a.id));
            }
            if self.agents[i + 1..].iter().any(|b| b.pos == a.pos) {
                return Err(format!("two agents share cell {}", a.pos));
            }
        }
        Ok(())
    }
}

/// Generates a random solvable world from a spec. Deterministic in the spec.
pub fn generate_world(spec: &WorldSpec) -> Result<WorldState, WorldError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.size;
    let mut grid = Grid::empty(m);
    for i in sample(&mut rng, m * m, spec.obstacle_count()).into_iter() {
        grid.cells[i] = true;
    }
    let free: Vec<Pos> = grid.free_cells().collect();
    let starts: Vec<Pos> = sample(&mut rng, free.len(), spec.num_agents).into_iter().map(|i| free[i]).collect();

    let mut goals: Vec<Pos> = Vec::with_capacity(spec.num_agents);
    for (id, &start) in starts.iter().enumerate() {
        let dist = grid.distance_map(start, &[]);
        let reachable = |g: Pos, grid: &Grid| dist[grid.index(g)] != u32::MAX;
        let mut chosen = None;
        for _ in 0..REPAIR_ATTEMPTS {
            let g = free[rng.gen_range(0..free.len())];
            if goals.contains(&g) || (g == start && free.len() > spec.num_agents) {
                continue;
            }
            if reachable(g, &grid) {
                chosen = Some(g);
                break;
            }
        }
        let goal = match chosen {
            Some(g) => g,
            None => {
                // Fall back to any unused free cell, then carve a corridor to it.
                let unused: Vec<Pos> = free.iter().copied().filter(|g| !goals.contains(g) && *g != start).collect();
                let g = if unused.is_empty() { start } else { unused[rng.gen_range(0..unused.len())] };
                carve_corridor(&mut grid, start, g);
                g
            }
        };
        debug_assert!(grid.distance_map(start, &[])[grid.index(goal)] != u32::MAX, "agent {id} unreachable");
        goals.push(goal);
    }

    let agents = starts.iter().zip(&goals).enumerate().map(|(i, (&s, &g))| AgentState::new(i, s, g)).collect();
    Ok(WorldState { grid, agents, t: 0 })
}

/// Clears obstacles along the row-then-column straight-line path from `a` to `b`.
fn carve_corridor(grid: &mut Grid, a: Pos, b: Pos) {
    let mut p = a;
    grid.set_obstacle(p, false);
    while p.row != b.row {
        p.row += (b.row - p.row).signum();
        grid.set_obstacle(p, false);
    }
    while p.col != b.col {
        p.col += (b.col - p.col).signum();
        grid.set_obstacle(p, false);
    }
}

/// Maximum episode length `floor(alpha * m * (1 + d) + beta * A)`, with `m`
/// the grid side length.
pub fn max_episode_length(spec: &WorldSpec, alpha: f64, beta: f64) -> u32 {
    let l = alpha * spec.size as f64 * (1.0 + spec.obstacle_density) + beta * spec.num_agents as f64;
    (l + 1e-9).floor() as u32
}

pub fn default_max_episode_length(spec: &WorldSpec) -> u32 {
    max_episode_length(spec, 4.0, 5.0)
}

/// Actions that are statically feasible: in bounds and not into an
/// obstacle. Occupancy by other agents is resolved in [`step`].
pub fn valid_actions(state: &WorldState, agent_id: usize) -> Result<ActionMask, WorldError> {
    let pos = state.agent(agent_id)?.pos;
    let mut mask = ActionMask::only_stay();
    for a in &Action::ALL[..4] {
        if state.grid.is_free(pos.offset(a.delta())) {
            mask.insert(*a);
        }
    }
    Ok(mask)
}

/// Simultaneous transition. Rejected moves leave the agent in place with
/// `collided` set; rejection is iterated to a fixed point.
pub fn step(state: &WorldState, joint_action: &[Action]) -> Result<(WorldState, StepEvents), WorldError> {
    let n = state.agents.len();
    if joint_action.len() != n {
        return Err(WorldError::JointActionLength { got: joint_action.len(), expected: n });
    }
    let from: Vec<Pos> = state.agents.iter().map(|a| a.pos).collect();
    let target: Vec<Pos> = from.iter().zip(joint_action).map(|(p, a)| p.offset(a.delta())).collect();
    let mut moving: Vec<bool> = joint_action.iter().map(|a| *a != Action::Stay).collect();
    let mut collided = vec![false; n];

    for i in 0..n {
        if moving[i] && !state.grid.is_free(target[i]) {
            moving[i] = false;
            collided[i] = true;
        }
    }

    let mut rounds = 0;
    loop {
        let end = |j: usize, moving: &[bool]| if moving[j] { target[j] } else { from[j] };
        let mut reject = vec![false; n];
        for i in (0..n).filter(|&i| moving[i]) {
            for j in (0..n).filter(|&j| j != i) {
                // Vertex conflict with a stayer, a rejected agent or another mover.
                if end(j, &moving) == target[i] {
                    reject[i] = true;
                }
                // Edge conflict: swapping with an adjacent mover.
                if moving[j] && target[j] == from[i] && target[i] == from[j] {
                    reject[i] = true;
                }
            }
        }
        if !reject.iter().any(|&r| r) {
            break;
        }
        rounds += 1;
        for i in 0..n {
            if reject[i] {
                moving[i] = false;
                collided[i] = true;
            }
        }
    }

    let mut next = state.clone();
    next.t += 1;
    let mut events = StepEvents { agents: vec![AgentEvents::default(); n], resolution_rounds: rounds };
    for i in 0..n {
        let agent = &mut next.agents[i];
        if moving[i] {
            agent.pos = target[i];
        }
        agent.on_goal = agent.pos == agent.goal;
        events.agents[i] = AgentEvents { collided: collided[i], moved: moving[i], arrived: agent.on_goal, ..AgentEvents::default() };
    }
    Ok((next, events))
}

/// Local view of one agent: four binary channels over a 10×10 window plus
/// the unit direction to its own goal.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Channel-major `[channel][row][col]` values in {0, 1}.
    pub channels: Vec<f64>,
    /// `(d_row, d_col)` unit vector toward the goal, zero when on goal.
    pub goal_vec: [f64; 2],
}

impl Observation {
    pub const LEN: usize = OBS_CHANNELS * OBS_SIZE * OBS_SIZE;

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.channels[(channel * OBS_SIZE + row) * OBS_SIZE + col]
    }

    fn set(&mut self, channel: usize, row: usize, col: usize) {
        self.channels[(channel * OBS_SIZE + row) * OBS_SIZE + col] = 1.0;
    }

    pub fn zeros() -> Self {
        Observation { channels: vec![0.0; Self::LEN], goal_vec: [0.0; 2] }
    }
}

pub const CH_EXTENT: usize = 0;
pub const CH_OBSTACLES: usize = 1;
pub const CH_AGENTS: usize = 2;
pub const CH_GOALS: usize = 3;

pub fn observe(state: &WorldState, agent_id: usize) -> Result<Observation, WorldError> {
    let me = *state.agent(agent_id)?;
    let top = me.pos.row - OBS_ANCHOR;
    let left = me.pos.col - OBS_ANCHOR;
    let span = OBS_SIZE as i32;
    let mut obs = Observation::zeros();
    for wr in 0..OBS_SIZE {
        for wc in 0..OBS_SIZE {
            let p = Pos::new(top + wr as i32, left + wc as i32);
            if state.grid.in_bounds(p) {
                obs.set(CH_EXTENT, wr, wc);
                if state.grid.is_obstacle(p) {
                    obs.set(CH_OBSTACLES, wr, wc);
                }
            } else {
                obs.set(CH_OBSTACLES, wr, wc);
            }
        }
    }
    let inside = |p: Pos| p.row >= top && p.row < top + span && p.col >= left && p.col < left + span;
    for other in state.agents.iter().filter(|a| a.id != agent_id && inside(a.pos)) {
        obs.set(CH_AGENTS, (other.pos.row - top) as usize, (other.pos.col - left) as usize);
        let gr = other.goal.row.clamp(top, top + span - 1);
        let gc = other.goal.col.clamp(left, left + span - 1);
        obs.set(CH_GOALS, (gr - top) as usize, (gc - left) as usize);
    }
    let dr = (me.goal.row - me.pos.row) as f64;
    let dc = (me.goal.col - me.pos.col) as f64;
    let norm = (dr * dr + dc * dc).sqrt();
    if norm > 0.0 {
        obs.goal_vec = [dr / norm, dc / norm];
    }
    Ok(obs)
}

pub fn episode_status(state: &WorldState, max_len: u32) -> EpisodeStatus {
    if state.all_on_goal() {
        EpisodeStatus::Success
    } else if state.t >= max_len {
        EpisodeStatus::Timeout
    } else {
        EpisodeStatus::Running
    }
}

/// ASCII rendering: `#` obstacle, `A`..`Z` agents (lowercase when on goal),
/// `a`..`z` goals of agents not standing on them, `.` free.
pub fn render_ascii(state: &WorldState) -> String {
    let m = state.grid.size();
    let mut rows = vec![vec!['.'; m]; m];
    for p in state.grid.obstacles() {
        rows[p.row as usize][p.col as usize] = '#';
    }
    let label = |i: usize| (b'a' + (i % 26) as u8) as char;
    for a in state.agents.iter().filter(|a| !a.on_goal) {
        rows[a.goal.row as usize][a.goal.col as usize] = label(a.id);
    }
    for a in &state.agents {
        let c = label(a.id);
        rows[a.pos.row as usize][a.pos.col as usize] = if a.on_goal { c } else { c.to_ascii_uppercase() };
    }
    let mut out = String::with_capacity(m * (m + 1));
    for r in rows {
        out.extend(r);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_world(size: usize, agents: &[(Pos, Pos)]) -> WorldState {
        WorldState::from_parts(Grid::empty(size), agents).unwrap()
    }

    #[test]
    fn zero_density_world() {
        let w = generate_world(&WorldSpec::new(10, 0.0, 1, 7)).unwrap();
        assert_eq!(w.grid.obstacle_count(), 0);
        assert_eq!(w.agents.len(), 1);
        let a = w.agents[0];
        assert_ne!(w.grid.distance_map(a.pos, &[])[w.grid.index(a.goal)], u32::MAX);
        assert_eq!(w.t, 0);
    }

    #[test]
    fn obstacle_count_before_repair() {
        let spec = WorldSpec::new(20, 0.2, 8, 11);
        assert_eq!(spec.obstacle_count(), 80);
        let w = generate_world(&spec).unwrap();
        assert!(w.grid.obstacle_count() <= 80);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = WorldSpec::new(16, 0.3, 6, 99);
        assert_eq!(generate_world(&spec).unwrap(), generate_world(&spec).unwrap());
    }

    #[test]
    fn rejects_overfull_spec() {
        let spec = WorldSpec::new(4, 0.5, 9, 1);
        assert_eq!(generate_world(&spec), Err(WorldError::TooManyAgents { agents: 9, free: 8 }));
        assert!(matches!(generate_world(&WorldSpec::new(3, 0.0, 1, 0)), Err(WorldError::SizeTooSmall(3))));
        assert!(matches!(generate_world(&WorldSpec::new(8, 0.7, 1, 0)), Err(WorldError::BadDensity(_))));
    }

    #[test]
    fn episode_length_values() {
        assert_eq!(default_max_episode_length(&WorldSpec::new(20, 0.0, 8, 0)), 120);
        assert_eq!(default_max_episode_length(&WorldSpec::new(20, 0.3, 64, 0)), 424);
        assert_eq!(default_max_episode_length(&WorldSpec::new(10, 0.0, 1, 0)), 45);
    }

    #[test]
    fn corner_and_enclosed_actions() {
        let w = open_world(5, &[(Pos::new(0, 0), Pos::new(4, 4))]);
        let mask = valid_actions(&w, 0).unwrap();
        assert_eq!(mask.iter().collect::<Vec<_>>(), vec![Action::East, Action::South, Action::Stay]);

        let mut grid = Grid::empty(5);
        for p in [Pos::new(1, 2), Pos::new(3, 2), Pos::new(2, 1), Pos::new(2, 3)] {
            grid.set_obstacle(p, true);
        }
        let w = WorldState::from_parts(grid, &[(Pos::new(2, 2), Pos::new(2, 2))]).unwrap();
        assert_eq!(valid_actions(&w, 0).unwrap(), ActionMask::only_stay());

        let w = open_world(5, &[(Pos::new(2, 2), Pos::new(0, 0))]);
        assert_eq!(valid_actions(&w, 0).unwrap(), ActionMask::full());
        assert_eq!(valid_actions(&w, 3), Err(WorldError::UnknownAgent(3)));
    }

    #[test]
    fn single_move() {
        let w = open_world(5, &[(Pos::new(2, 2), Pos::new(0, 0))]);
        let (next, ev) = step(&w, &[Action::East]).unwrap();
        assert_eq!(next.agents[0].pos, Pos::new(2, 3));
        assert_eq!(next.t, 1);
        assert_eq!(ev.agents[0], AgentEvents { moved: true, ..Default::default() });
    }

    #[test]
    fn swap_is_rejected() {
        let w = open_world(5, &[(Pos::new(0, 0), Pos::new(4, 4)), (Pos::new(0, 1), Pos::new(4, 0))]);
        let (next, ev) = step(&w, &[Action::East, Action::West]).unwrap();
        assert_eq!(next.agents[0].pos, Pos::new(0, 0));
        assert_eq!(next.agents[1].pos, Pos::new(0, 1));
        assert!(ev.agents.iter().all(|e| e.collided && !e.moved));
    }

    #[test]
    fn contested_cell_rejects_all() {
        let w = open_world(5, &[(Pos::new(0, 0), Pos::new(4, 4)), (Pos::new(0, 2), Pos::new(4, 0))]);
        let (next, ev) = step(&w, &[Action::East, Action::West]).unwrap();
        assert_eq!(next.agents[0].pos, Pos::new(0, 0));
        assert_eq!(next.agents[1].pos, Pos::new(0, 2));
        assert_eq!(ev.collisions(), 2);
    }

    #[test]
    fn rejection_cascades_through_a_chain() {
        // c is walled by the boundary, so b (following c) and then a are rejected.
        let w = open_world(5, &[(Pos::new(0, 2), Pos::new(4, 4)), (Pos::new(0, 3), Pos::new(4, 0)), (Pos::new(0, 4), Pos::new(3, 3))]);
        let (next, ev) = step(&w, &[Action::East, Action::East, Action::East]).unwrap();
        assert_eq!(next.agents.iter().map(|a| a.pos).collect::<Vec<_>>(), vec![Pos::new(0, 2), Pos::new(0, 3), Pos::new(0, 4)]);
        assert_eq!(ev.collisions(), 3);
        assert!(ev.resolution_rounds <= 3);
    }

    #[test]
    fn following_a_mover_is_allowed() {
        let w = open_world(5, &[(Pos::new(0, 0), Pos::new(4, 4)), (Pos::new(0, 1), Pos::new(4, 0))]);
        let (next, ev) = step(&w, &[Action::East, Action::East]).unwrap();
        assert_eq!(next.agents[0].pos, Pos::new(0, 1));
        assert_eq!(next.agents[1].pos, Pos::new(0, 2));
        assert_eq!(ev.collisions(), 0);
    }

    #[test]
    fn wrong_joint_action_length() {
        let w = open_world(5, &[(Pos::new(0, 0), Pos::new(4, 4))]);
        assert_eq!(step(&w, &[]).unwrap_err(), WorldError::JointActionLength { got: 0, expected: 1 });
    }

    #[test]
    fn observation_examples() {
        let w = open_world(10, &[(Pos::new(5, 2), Pos::new(5, 8))]);
        let obs = observe(&w, 0).unwrap();
        for r in 0..OBS_SIZE {
            for c in 0..OBS_SIZE {
                assert_eq!(obs.get(CH_AGENTS, r, c), 0.0);
                assert_eq!(obs.get(CH_GOALS, r, c), 0.0);
            }
        }
        assert_eq!(obs.goal_vec, [0.0, 1.0]);

        let w = open_world(10, &[(Pos::new(5, 5), Pos::new(5, 5))]);
        assert_eq!(observe(&w, 0).unwrap().goal_vec, [0.0, 0.0]);

        let w = open_world(10, &[(Pos::new(3, 3), Pos::new(0, 0)), (Pos::new(4, 3), Pos::new(9, 9))]);
        let obs = observe(&w, 0).unwrap();
        let ones: Vec<(usize, usize)> =
            (0..OBS_SIZE).flat_map(|r| (0..OBS_SIZE).map(move |c| (r, c))).filter(|&(r, c)| obs.get(CH_AGENTS, r, c) == 1.0).collect();
        assert_eq!(ones, vec![(5, 4)]);
    }

    #[test]
    fn observation_boundary_encoding() {
        let w = open_world(6, &[(Pos::new(0, 0), Pos::new(5, 5))]);
        let obs = observe(&w, 0).unwrap();
        // Window row 3 is the row just north of the grid.
        assert_eq!(obs.get(CH_EXTENT, 3, 4), 0.0);
        assert_eq!(obs.get(CH_OBSTACLES, 3, 4), 1.0);
        assert_eq!(obs.get(CH_EXTENT, 4, 4), 1.0);
        assert_eq!(obs.get(CH_OBSTACLES, 4, 4), 0.0);
        // Grid extends 6 cells: window cols 4..=9 are in bounds.
        assert_eq!(obs.get(CH_EXTENT, 9, 9), 1.0);
    }

    #[test]
    fn far_goals_clip_to_window_edge() {
        let w = open_world(30, &[(Pos::new(10, 10), Pos::new(0, 0)), (Pos::new(11, 12), Pos::new(29, 11))]);
        let obs = observe(&w, 0).unwrap();
        // Goal row 29 clamps to window row 9; col 11 maps to window col 5.
        assert_eq!(obs.get(CH_GOALS, 9, 5), 1.0);
        assert_eq!(obs.channels[CH_GOALS * 100..].iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn status_values() {
        let mut w = open_world(5, &[(Pos::new(1, 1), Pos::new(1, 1))]);
        w.t = 3;
        assert_eq!(episode_status(&w, 10), EpisodeStatus::Success);
        let mut w = open_world(5, &[(Pos::new(1, 1), Pos::new(2, 2))]);
        w.t = 10;
        assert_eq!(episode_status(&w, 10), EpisodeStatus::Timeout);
        w.t = 9;
        assert_eq!(episode_status(&w, 10), EpisodeStatus::Running);
    }
}
