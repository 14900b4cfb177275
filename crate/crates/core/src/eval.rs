//! Benchmark harness: seeded episode batches and Table-I style metrics.
//!
//! Makespan and total moves are averaged over successful episodes only and
//! are absent (rendered `-`) when nothing succeeded; collision counts are
//! averaged over all episodes. The collision rate is the mean collision
//! count divided by the mean makespan.

use std::io::{self, BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expert::{plan_expert, SearchBudget};
use crate::policy::{act, forward_batch, ActMode, PolicyParams};
use crate::rollout::{Env, EnvError, EnvSettings};
use crate::world::{Action, EpisodeStatus, WorldSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no episode records")]
    Empty,
    #[error("records mix configurations")]
    MixedConfig,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad record line: {0}")]
    Json(#[from] serde_json::Error),
}

/// Who picks the actions of every agent during an episode.
#[derive(Debug, Clone, Copy)]
pub enum Actor<'a> {
    Policy {
        params: &'a PolicyParams,
        mode: ActMode,
    },
    Expert {
        budget: SearchBudget,
    },
    /// Uniform over each agent's statically valid actions.
    UniformRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub spec: WorldSpec,
    pub success: bool,
    /// Steps until the last arrival; the episode limit on timeout.
    pub makespan: u32,
    /// Non-idle moves of each agent.
    pub moves: Vec<u32>,
    pub collision_count: u64,
    /// Seed of the actor's own randomness (sampling, planner order).
    pub seed: u64,
}

impl EpisodeRecord {
    pub fn total_moves(&self) -> u64 {
        self.moves.iter().map(|&m| u64::from(m)).sum()
    }
}

/// Plays one episode on the world generated from `spec`.
pub fn run_episode(actor: &Actor, spec: &WorldSpec, seed: u64, settings: &EnvSettings) -> Result<EpisodeRecord, EvalError> {
    run_episode_traced(actor, spec, seed, settings).map(|(r, _)| r)
}

/// [`run_episode`] that also returns the joint action of every step.
pub fn run_episode_traced(
    actor: &Actor,
    spec: &WorldSpec,
    seed: u64,
    settings: &EnvSettings,
) -> Result<(EpisodeRecord, Vec<Vec<Action>>), EvalError> {
    let mut trace = Vec::new();
    let mut env = Env::new(spec, settings)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = match actor {
        Actor::Expert { budget } => plan_expert(&env.state, budget, seed).ok(),
        _ => None,
    };
    let n = spec.num_agents;
    while env.status() == EpisodeStatus::Running {
        let actions: Vec<Action> = match actor {
            Actor::Policy { params, mode } => {
                let masks = env.masks();
                let out = forward_batch(params, &env.observations());
                (0..n).map(|i| act(&out.output(i), &masks[i], &mut rng, *mode)).collect()
            }
            Actor::Expert { .. } => match &plan {
                Some(p) => p.joint_action(env.state.t as usize),
                None => vec![Action::Stay; n],
            },
            Actor::UniformRandom => env
                .masks()
                .iter()
                .map(|m| {
                    let choices: Vec<Action> = m.iter().collect();
                    choices[rng.gen_range(0..choices.len())]
                })
                .collect(),
        };
        env.step(&actions)?;
        trace.push(actions);
    }
    let success = env.status() == EpisodeStatus::Success;
    let record = EpisodeRecord {
        spec: *spec,
        success,
        makespan: if success { env.state.t } else { env.max_len },
        moves: env.moves.clone(),
        collision_count: env.collisions,
        seed,
    };
    Ok((record, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub agents: usize,
    pub density: f64,
    pub size: usize,
    pub episodes: usize,
    /// Percent in [0, 100].
    pub success_rate: f64,
    pub mean_makespan: Option<f64>,
    pub mean_total_moves: Option<f64>,
    pub mean_collision_count: f64,
    pub collision_rate: Option<f64>,
}

pub fn compute_metrics(records: &[EpisodeRecord]) -> Result<MetricsRow, EvalError> {
    let first = records.first().ok_or(EvalError::Empty)?;
    let key = |r: &EpisodeRecord| (r.spec.num_agents, r.spec.obstacle_density.to_bits(), r.spec.size);
    if records.iter().any(|r| key(r) != key(first)) {
        return Err(EvalError::MixedConfig);
    }
    let n = records.len() as f64;
    let wins: Vec<&EpisodeRecord> = records.iter().filter(|r| r.success).collect();
    let mean_over_wins =
        |f: &dyn Fn(&EpisodeRecord) -> f64| (!wins.is_empty()).then(|| wins.iter().map(|r| f(r)).sum::<f64>() / wins.len() as f64);
    let mean_makespan = mean_over_wins(&|r| f64::from(r.makespan));
    let mean_total_moves = mean_over_wins(&|r| r.total_moves() as f64);
    let mean_collision_count = records.iter().map(|r| r.collision_count as f64).sum::<f64>() / n;
    Ok(MetricsRow {
        agents: first.spec.num_agents,
        density: first.spec.obstacle_density,
        size: first.spec.size,
        episodes: records.len(),
        success_rate: 100.0 * wins.len() as f64 / n,
        mean_makespan,
        mean_total_moves,
        mean_collision_count,
        collision_rate: mean_makespan.map(|m| mean_collision_count / m),
    })
}

/// Deterministic per-episode seed for a benchmark cell.
pub fn episode_seed(base_seed: u64, agents: usize, density: f64, index: usize) -> u64 {
    let mut x = base_seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [agents as u64, density.to_bits(), index as u64] {
        x = splitmix64(x ^ v);
    }
    x
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkGrid {
    pub agent_counts: Vec<usize>,
    pub densities: Vec<f64>,
    pub size: usize,
    pub envs: usize,
    pub base_seed: u64,
}

impl Default for BenchmarkGrid {
    fn default() -> Self {
        BenchmarkGrid { agent_counts: vec![8, 16, 32, 64], densities: vec![0.0, 0.1, 0.2, 0.3], size: 20, envs: 100, base_seed: 0 }
    }
}

/// Runs every (agents, density) cell of the grid; rows come out ordered by
/// agents, then density. Episodes are spread over the available cores but
/// the result does not depend on scheduling.
pub fn benchmark(actor: &Actor, grid: &BenchmarkGrid, settings: &EnvSettings) -> Result<(Vec<MetricsRow>, Vec<EpisodeRecord>), EvalError> {
    let mut agents = grid.agent_counts.clone();
    agents.sort_unstable();
    agents.dedup();
    let mut densities = grid.densities.clone();
    densities.sort_by(f64::total_cmp);
    densities.dedup();

    let mut jobs = Vec::new();
    for &a in &agents {
        for &d in &densities {
            for i in 0..grid.envs {
                let seed = episode_seed(grid.base_seed, a, d, i);
                jobs.push((WorldSpec::new(grid.size, d, a, seed), seed));
            }
        }
    }
    let records = run_jobs(actor, &jobs, settings)?;
    let rows = records.chunks(grid.envs.max(1)).map(compute_metrics).collect::<Result<Vec<_>, _>>()?;
    Ok((rows, records))
}

fn run_jobs(actor: &Actor, jobs: &[(WorldSpec, u64)], settings: &EnvSettings) -> Result<Vec<EpisodeRecord>, EvalError> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    if threads <= 1 {
        return jobs.iter().map(|(spec, seed)| run_episode(actor, spec, *seed, settings)).collect();
    }
    let chunk = jobs.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope
                    .spawn(move || part.iter().map(|(spec, seed)| run_episode(actor, spec, *seed, settings)).collect::<Result<Vec<_>, _>>())
            })
            .collect();
        let mut out = Vec::with_capacity(jobs.len());
        for h in handles {
            out.extend(h.join().expect("benchmark worker panicked")?);
        }
        Ok(out)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

pub const REPORT_COLUMNS: [&str; 8] =
    ["agents", "density", "size", "success_rate", "makespan", "total_moves", "collision_count", "collision_rate"];
const REPORT_TITLES: [&str; 8] =
    ["Agents", "Density", "Size", "Success rate", "Makespan", "Total moves", "Collision count", "Collision rate"];

fn round_half_up(x: f64) -> String {
    format!("{}", (x + 0.5).floor() as i64)
}

fn fmt_opt(x: Option<f64>, f: impl Fn(f64) -> String) -> String {
    x.map_or_else(|| "-".to_string(), f)
}

/// Cell strings of one row: rates and counts with two decimals, makespan
/// and moves as integers (half-up), absent values as `-`.
pub fn format_row(row: &MetricsRow) -> [String; 8] {
    [
        row.agents.to_string(),
        row.density.to_string(),
        row.size.to_string(),
        format!("{:.2}", row.success_rate),
        fmt_opt(row.mean_makespan, round_half_up),
        fmt_opt(row.mean_total_moves, round_half_up),
        format!("{:.2}", row.mean_collision_count),
        fmt_opt(row.collision_rate, |r| format!("{r:.2}")),
    ]
}

pub fn emit_report(rows: &[MetricsRow], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(&REPORT_COLUMNS.join(","));
            out.push('\n');
            for row in rows {
                out.push_str(&format_row(row).join(","));
                out.push('\n');
            }
        }
        ReportFormat::Markdown => {
            out.push_str(&format!("| {} |\n", REPORT_TITLES.join(" | ")));
            out.push_str(&format!("|{}\n", "---|".repeat(REPORT_TITLES.len())));
            for row in rows {
                out.push_str(&format!("| {} |\n", format_row(row).join(" | ")));
            }
        }
    }
    out
}

/// One JSON object per line.
pub fn write_records<W: Write>(mut w: W, records: &[EpisodeRecord]) -> Result<(), EvalError> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<EpisodeRecord>, EvalError> {
    r.lines().filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty())).map(|l| Ok(serde_json::from_str(&l?)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::bfs_distance;
    use crate::world::generate_world;

    fn record(success: bool, makespan: u32, moves: u32, collisions: u64) -> EpisodeRecord {
        EpisodeRecord { spec: WorldSpec::new(20, 0.3, 8, 0), success, makespan, moves: vec![moves], collision_count: collisions, seed: 0 }
    }

    #[test]
    fn table_fixture_row() {
        let mut records = Vec::new();
        for i in 0..100 {
            let collisions = if i < 27 { 2 } else { 1 };
            records.push(if i < 64 { record(true, 55, 156, collisions) } else { record(false, 424, 300, collisions) });
        }
        let row = compute_metrics(&records).unwrap();
        assert_eq!(row.success_rate, 64.0);
        assert_eq!(row.mean_makespan, Some(55.0));
        assert_eq!(row.mean_total_moves, Some(156.0));
        assert!((row.mean_collision_count - 1.27).abs() < 1e-12);
        let cells = format_row(&row);
        assert_eq!(cells[3..], ["64.00", "55", "156", "1.27", "0.02"]);
    }

    #[test]
    fn all_successes() {
        let row = compute_metrics(&vec![record(true, 10, 7, 0); 5]).unwrap();
        assert_eq!(
            (row.success_rate, row.mean_makespan, row.mean_collision_count, row.collision_rate),
            (100.0, Some(10.0), 0.0, Some(0.0))
        );
    }

    #[test]
    fn zero_successes_render_dash() {
        let row = compute_metrics(&[record(false, 424, 3, 4)]).unwrap();
        assert_eq!(row.mean_makespan, None);
        assert_eq!(row.collision_rate, None);
        let csv = emit_report(std::slice::from_ref(&row), ReportFormat::Csv);
        assert_eq!(csv, "agents,density,size,success_rate,makespan,total_moves,collision_count,collision_rate\n8,0.3,20,0.00,-,-,4.00,-\n");
        let md = emit_report(&[row], ReportFormat::Markdown);
        assert_eq!(md.lines().count(), 3);
        assert!(md.lines().nth(2).unwrap().contains("| - |"));
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_metrics(&[]), Err(EvalError::Empty)));
        let mut other = record(true, 1, 1, 0);
        other.spec.num_agents = 3;
        assert!(matches!(compute_metrics(&[record(true, 1, 1, 0), other]), Err(EvalError::MixedConfig)));
    }

    #[test]
    fn expert_single_agent_episode() {
        let spec = WorldSpec::new(10, 0.0, 1, 4);
        let rec = run_episode(&Actor::Expert { budget: SearchBudget::default() }, &spec, 1, &EnvSettings::default()).unwrap();
        let w = generate_world(&spec).unwrap();
        let d = bfs_distance(&w.grid, w.agents[0].pos, w.agents[0].goal, &[]).unwrap();
        assert!(rec.success);
        assert_eq!(rec.makespan, d);
        assert_eq!(rec.collision_count, 0);
    }

    #[test]
    fn stay_policy_times_out() {
        // Zero parameters with only Stay allowed would be circular; instead make
        // Stay dominate the logits through the head bias.
        let mut params = PolicyParams::zeros();
        let n = params.len();
        params.values[n - 8 + Action::Stay.index()] = 100.0;
        let spec = WorldSpec::new(8, 0.1, 3, 5);
        let rec = run_episode(&Actor::Policy { params: &params, mode: ActMode::Greedy }, &spec, 0, &EnvSettings::default()).unwrap();
        assert!(!rec.success);
        assert_eq!(rec.total_moves(), 0);
        assert_eq!(rec.makespan, crate::world::default_max_episode_length(&spec));
    }

    #[test]
    fn records_roundtrip_as_lines() {
        let records = vec![record(true, 3, 4, 0), record(false, 9, 1, 2)];
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn benchmark_counts_and_determinism() {
        let grid = BenchmarkGrid { agent_counts: vec![2, 1], densities: vec![0.0], size: 8, envs: 3, base_seed: 7 };
        let (rows, records) = benchmark(&Actor::UniformRandom, &grid, &EnvSettings::default()).unwrap();
        assert_eq!(records.len(), 6);
        assert_eq!(rows.iter().map(|r| r.agents).collect::<Vec<_>>(), vec![1, 2]);
        let (rows2, _) = benchmark(&Actor::UniformRandom, &grid, &EnvSettings::default()).unwrap();
        assert_eq!(rows, rows2);

        let single = BenchmarkGrid { envs: 1, ..grid };
        let (rows, records) = benchmark(&Actor::UniformRandom, &single, &EnvSettings::default()).unwrap();
        assert_eq!(rows[0], compute_metrics(&records[..1]).unwrap());
    }
}
