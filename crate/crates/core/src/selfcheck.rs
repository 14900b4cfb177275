//! Built-in consistency checks run by `crowdpath selfcheck`.
//!
//! Each check compares a production code path against an independent
//! reference: central finite differences for gradients, exhaustive
//! joint-state search for the expert, a plain accumulator for metrics and
//! direct arithmetic for the closed-form formulas.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curriculum::level_ranges;
use crate::eval::{compute_metrics, EpisodeRecord};
use crate::expert::{plan_cost, plan_od_astar, verify_plan, SearchBudget};
use crate::policy::{backward, block_of, compute_losses, Gradients, Hyper, PolicyParams, StepRecord, Trajectory};
use crate::reward::{crowd_reward, zeta};
use crate::world::{generate_world, max_episode_length, step, Action, ActionMask, Observation, Pos, WorldSpec, WorldState};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct SelfCheckReport {
    pub results: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    fn record(&mut self, name: &str, outcome: Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.results.push(CheckResult { name: name.to_string(), passed, detail });
    }

    pub fn render(&self) -> String {
        self.results.iter().map(|r| format!("{} {}: {}\n", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail)).collect()
    }
}

/// Runs every check with its default sizes.
pub fn run_selfcheck() -> SelfCheckReport {
    let mut report = SelfCheckReport::default();
    report.record("episode-length", check_episode_length());
    report.record("crowd-threshold", check_zeta());
    report.record("crowd-reward", check_crowd_reward());
    report.record("level-ranges", check_level_ranges());
    report.record("gradients", check_gradients(&GradCheck::default(), &|p, t, h| backward(p, t, h).expect("finite")));
    report.record("expert-optimality", check_expert(40, 0));
    report.record("metrics", check_metrics(20, 0));
    report
}

fn check_episode_length() -> Result<String, String> {
    let cases = [((20, 0.0, 8), 120), ((20, 0.3, 64), 424), ((10, 0.0, 1), 45)];
    for ((m, d, a), want) in cases {
        let got = max_episode_length(&WorldSpec::new(m, d, a, 0), 4.0, 5.0);
        if got != want {
            return Err(format!("L(m={m}, d={d}, A={a}) = {got}, expected {want}"));
        }
    }
    Ok("3 fixtures".into())
}

fn check_zeta() -> Result<String, String> {
    let z = zeta(8, 20, 0.0).map_err(|e| e.to_string())?;
    if (z - (0.7 + 8.0 / 392.0)).abs() > 1e-12 || (z - 0.7204).abs() > 1e-4 {
        return Err(format!("zeta(8, 20, 0) = {z}"));
    }
    let z = zeta(64, 20, 0.3).map_err(|e| e.to_string())?;
    if z != 0.95 {
        return Err(format!("zeta(64, 20, 0.3) = {z}, expected the 0.95 cap"));
    }
    if zeta(400, 20, 0.0).is_ok() {
        return Err("over-packed world accepted".into());
    }
    Ok("0.7204, 0.95 cap, over-packing rejected".into())
}

fn check_crowd_reward() -> Result<String, String> {
    let cases = [(5.0 / 13.0, 7.0 / 8.0, -0.3), (0.8, 0.5, 0.3), (0.5, 0.6, 0.0)];
    for (before, after, want) in cases {
        let got = crowd_reward(before, after, 0.75);
        if got != want {
            return Err(format!("{before:.3} -> {after:.3} gave {got}, expected {want}"));
        }
    }
    Ok("enter, leave and stay-outside fixtures".into())
}

fn check_level_ranges() -> Result<String, String> {
    // Densities in hundredths keep the reference exact.
    for sigma in 0..=20u32 {
        let r = level_ranges(sigma);
        let d_lo = f64::from((5 * sigma).min(20)) / 100.0;
        let d_hi = f64::from((10 + 10 * sigma).min(60)) / 100.0;
        let s_lo = (10 + 5 * sigma).min(40) as usize;
        let s_hi = (40 + 5 * sigma).min(120) as usize;
        if (r.d_lo - d_lo).abs() > 1e-12 || (r.d_hi - d_hi).abs() > 1e-12 || r.s_lo != s_lo || r.s_hi != s_hi {
            return Err(format!("level {sigma}: {r:?}"));
        }
    }
    Ok("levels 0..=20".into())
}

/// Settings of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub trajectories: usize,
    pub params_per_trajectory: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { trajectories: 10, params_per_trajectory: 25, step: 1e-5, tolerance: 1e-4, floor: 1e-4, seed: 0 }
    }
}

/// Random trajectory with continuous observations, mixing demonstration and
/// exploration steps.
pub fn random_trajectory<R: Rng>(rng: &mut R, len: usize) -> Trajectory {
    let steps = (0..len)
        .map(|_| {
            let mut mask = ActionMask::only_stay();
            for a in &Action::ALL[..4] {
                if rng.gen_bool(0.7) {
                    mask.insert(*a);
                }
            }
            let choices: Vec<Action> = mask.iter().collect();
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            StepRecord {
                obs: Observation {
                    channels: (0..Observation::LEN).map(|_| rng.gen_range(0.0..1.0)).collect(),
                    goal_vec: [angle.sin(), angle.cos()],
                },
                action: choices[rng.gen_range(0..choices.len())],
                reward: rng.gen_range(-2.0..1.0),
                value: rng.gen_range(-1.0..1.0),
                mask,
                blocking: rng.gen_bool(0.3),
                on_goal: rng.gen_bool(0.3),
                demo: rng.gen_bool(0.3),
            }
        })
        .collect();
    Trajectory { steps, bootstrap: rng.gen_range(-1.0..1.0) }
}

/// Compares `grad_fn` against central differences of the total loss.
/// Every block is sampled at least once per trajectory.
pub fn check_gradients(cfg: &GradCheck, grad_fn: &dyn Fn(&PolicyParams, &Trajectory, &Hyper) -> Gradients) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hyper = Hyper::default();
    let blocks = crate::policy::layout();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for k in 0..cfg.trajectories {
        let mut params = PolicyParams::init(cfg.seed + k as u64);
        // Move off the zero biases so no ReLU sits exactly at its kink.
        params.values.iter_mut().for_each(|v| *v += rng.gen_range(-0.05..0.05));
        let len = rng.gen_range(2..6);
        let traj = random_trajectory(&mut rng, len);
        let grads = grad_fn(&params, &traj, &hyper);
        let mut indices: Vec<usize> = blocks.iter().map(|b| b.offset + rng.gen_range(0..b.len)).collect();
        while indices.len() < cfg.params_per_trajectory {
            indices.push(rng.gen_range(0..params.len()));
        }
        for i in indices {
            let total_at = |v: f64| {
                let mut p = params.clone();
                p.values[i] = v;
                compute_losses(&p, &traj, &hyper).expect("non-empty").total
            };
            let x = params.values[i];
            let numeric = (total_at(x + cfg.step) - total_at(x - cfg.step)) / (2.0 * cfg.step);
            let analytic = grads.values[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
            worst = worst.max(rel);
            checked += 1;
            if rel > cfg.tolerance {
                return Err(format!(
                    "block {} index {i}: analytic {analytic:.6e}, numeric {numeric:.6e}, relative error {rel:.2e}",
                    block_of(i).unwrap_or_default()
                ));
            }
        }
    }
    Ok(format!("{checked} parameters, worst relative error {worst:.2e}"))
}

/// Minimum sum-of-costs by exhaustive search over joint states, using the
/// simulator for transitions. A step costs one per agent, except an agent
/// waiting on its own goal. `None` when no joint state has everyone on goal.
pub fn exhaustive_sum_of_costs(world: &WorldState) -> Option<u32> {
    let n = world.num_agents();
    let goals: Vec<Pos> = world.agents.iter().map(|a| a.goal).collect();
    let start: Vec<Pos> = world.agents.iter().map(|a| a.pos).collect();
    let mut best: HashMap<Vec<Pos>, u32> = HashMap::from([(start.clone(), 0)]);
    let mut queue = BinaryHeap::from([Reverse((0u32, start))]);
    let joint_count = Action::COUNT.pow(n as u32);
    while let Some(Reverse((cost, cells))) = queue.pop() {
        if best[&cells] < cost {
            continue;
        }
        if cells == goals {
            return Some(cost);
        }
        let mut state = world.clone();
        for (a, &p) in state.agents.iter_mut().zip(&cells) {
            a.pos = p;
            a.on_goal = p == a.goal;
        }
        for code in 0..joint_count {
            let actions: Vec<Action> = (0..n).map(|i| Action::ALL[code / Action::COUNT.pow(i as u32) % Action::COUNT]).collect();
            let (next, ev) = step(&state, &actions).expect("valid joint action");
            if ev.agents.iter().any(|e| e.collided) {
                continue;
            }
            let edge = (0..n).filter(|&i| !(actions[i] == Action::Stay && cells[i] == goals[i])).count() as u32;
            let next_cells: Vec<Pos> = next.agents.iter().map(|a| a.pos).collect();
            let c = cost + edge;
            if best.get(&next_cells).is_none_or(|&b| c < b) {
                best.insert(next_cells.clone(), c);
                queue.push(Reverse((c, next_cells)));
            }
        }
    }
    None
}

/// Compares the joint A* planner to the exhaustive oracle on seeded small
/// worlds. Returns the number of instances checked.
pub fn compare_expert(world: &WorldState) -> Result<(), String> {
    let oracle = exhaustive_sum_of_costs(world);
    let budget = SearchBudget { max_expansions: 5_000_000, ..SearchBudget::default() };
    match (plan_od_astar(world, &budget), oracle) {
        (Ok(plan), Some(best)) => {
            verify_plan(world, &plan)?;
            let starts = world.agents.iter().map(|a| a.pos);
            let goals: Vec<Pos> = world.agents.iter().map(|a| a.goal).collect();
            let recomputed = plan_cost(&plan.actions, starts, &goals);
            if plan.sum_of_costs != best || recomputed != best {
                return Err(format!("planner cost {} (recomputed {recomputed}), optimum {best}", plan.sum_of_costs));
            }
            Ok(())
        }
        (Err(crate::expert::PlanError::NoSolution), None) => Ok(()),
        (Ok(plan), None) => Err(format!("planner found cost {} where the oracle finds no solution", plan.sum_of_costs)),
        (Err(e), oracle) => Err(format!("planner failed ({e}), oracle {oracle:?}")),
    }
}

fn check_expert(instances: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..instances {
        let spec = WorldSpec::new(5, rng.gen_range(0.0..0.3), rng.gen_range(2..=3), rng.gen());
        let world = generate_world(&spec).map_err(|e| e.to_string())?;
        compare_expert(&world).map_err(|e| format!("instance {k} ({spec:?}): {e}"))?;
    }
    Ok(format!("{instances} 5x5 worlds"))
}

/// Random record batch sharing one configuration.
pub fn random_records<R: Rng>(rng: &mut R, n: usize) -> Vec<EpisodeRecord> {
    let agents = rng.gen_range(1..6);
    let spec = WorldSpec::new(20, 0.1, agents, 0);
    let limit = max_episode_length(&spec, 4.0, 5.0);
    (0..n)
        .map(|i| {
            let success = rng.gen_bool(0.5);
            let makespan = if success { rng.gen_range(1..=limit) } else { limit };
            EpisodeRecord {
                spec,
                success,
                makespan,
                moves: (0..agents).map(|_| rng.gen_range(0..=makespan)).collect(),
                collision_count: rng.gen_range(0..20),
                seed: i as u64,
            }
        })
        .collect()
}

fn check_metrics(batches: usize, seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in 0..batches {
        let n = rng.gen_range(1..60);
        let records = random_records(&mut rng, n);
        let row = compute_metrics(&records).map_err(|e| e.to_string())?;
        let (mut wins, mut span, mut moves, mut coll) = (0u64, 0u64, 0u64, 0u64);
        for r in &records {
            coll += r.collision_count;
            if r.success {
                wins += 1;
                span += u64::from(r.makespan);
                moves += r.moves.iter().map(|&m| u64::from(m)).sum::<u64>();
            }
        }
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + b.abs());
        let rate = wins as f64 * 100.0 / n as f64;
        let mean_span = (wins > 0).then(|| span as f64 / wins as f64);
        let mean_moves = (wins > 0).then(|| moves as f64 / wins as f64);
        let mean_coll = coll as f64 / n as f64;
        let opt_close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => close(x, y),
            (None, None) => true,
            _ => false,
        };
        if !close(row.success_rate, rate)
            || !opt_close(row.mean_makespan, mean_span)
            || !opt_close(row.mean_total_moves, mean_moves)
            || !close(row.mean_collision_count, mean_coll)
            || !opt_close(row.collision_rate, mean_span.map(|s| mean_coll / s))
        {
            return Err(format!("batch {b}: {row:?}"));
        }
    }
    Ok(format!("{batches} random batches"))
}
