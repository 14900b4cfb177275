use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crowdpath::config::TrainConfig;
use crowdpath::eval::{benchmark, emit_report, run_episode_traced, write_records, Actor, ReportFormat};
use crowdpath::policy::{load_checkpoint, ActMode};
use crowdpath::scenario::{Replay, Scenario};
use crowdpath::selfcheck::run_selfcheck;
use crowdpath::train::{train, EpisodeSummary, Resume};
use crowdpath::world::{generate_world, render_ascii, WorldSpec};

#[derive(Parser)]
#[command(name = "crowdpath", version, about = "Crowd-aware multi-agent path finding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenario files, optionally with a replay of a rollout.
    Gen {
        #[arg(long, default_value_t = 20)]
        size: usize,
        #[arg(long, default_value_t = 0.1)]
        density: f64,
        #[arg(long, default_value_t = 8)]
        agents: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of scenarios; seeds run from `seed` upwards.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Also write `replay-<seed>.json` of an expert rollout, or of the
        /// policy in this checkpoint.
        #[arg(long)]
        replay: bool,
        #[arg(long, requires = "replay")]
        checkpoint: Option<PathBuf>,
    },
    /// Train a policy.
    Train {
        /// TOML configuration; defaults apply when omitted.
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        episodes: Option<u64>,
        /// Run directory for checkpoints and the manifest.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Benchmark a checkpoint, the expert or the uniform-random baseline.
    Eval {
        checkpoint: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["checkpoint", "random"])]
        expert: bool,
        #[arg(long, conflicts_with = "checkpoint")]
        random: bool,
        /// TOML configuration whose `[eval]` table sets the grid.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        agents: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        densities: Option<Vec<f64>>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        envs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Sample actions instead of taking the most likely one.
        #[arg(long)]
        sample: bool,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
        /// Report file; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Line-delimited JSON log of every episode.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Render a replay file frame by frame.
    Replay {
        file: PathBuf,
        /// Pause between frames.
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
    },
    /// Run the built-in consistency checks.
    Selfcheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(TrainConfig::from_toml(&text)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen { size, density, agents, seed, count, out, replay, checkpoint } => {
            fs::create_dir_all(&out)?;
            let params = checkpoint.as_deref().map(load_checkpoint).transpose()?.map(|c| c.params);
            let settings = TrainConfig::default().env;
            for s in seed..seed + count {
                let spec = WorldSpec::new(size, density, agents, s);
                let world = generate_world(&spec)?;
                let scenario = Scenario::from_world(&spec, &world);
                fs::write(out.join(format!("scenario-{s}.json")), scenario.to_json())?;
                if replay {
                    let actor = match &params {
                        Some(p) => Actor::Policy { params: p, mode: ActMode::Greedy },
                        None => Actor::Expert { budget: TrainConfig::default().expert },
                    };
                    let (record, actions) = run_episode_traced(&actor, &spec, s, &settings)?;
                    fs::write(out.join(format!("replay-{s}.json")), Replay::new(scenario, &actions).to_json())?;
                    println!("seed {s}: success={} makespan={} collisions={}", record.success, record.makespan, record.collision_count);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { config, seed, workers, episodes, out, resume } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.workers = workers.unwrap_or(cfg.workers);
            cfg.episodes = episodes.unwrap_or(cfg.episodes);
            let resume = resume
                .as_deref()
                .map(|p| load_checkpoint(p).map_err(anyhow::Error::from).and_then(|c| Ok(Resume::from_checkpoint(c)?)))
                .transpose()?;
            let mut log = TrainLog::new(cfg.log_interval);
            let outcome = train(&cfg, Some(&out), resume, &mut |s| log.observe(s))?;
            println!(
                "trained {} episodes, final level {}, checkpoint {}",
                outcome.episodes, outcome.curriculum.level, outcome.manifest.checkpoint
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { checkpoint, expert, random, config, agents, densities, size, envs, seed, sample, format, out, records } => {
            let cfg = load_config(config.as_deref())?;
            let mut grid = cfg.eval.clone();
            grid.agent_counts = agents.unwrap_or(grid.agent_counts);
            grid.densities = densities.unwrap_or(grid.densities);
            grid.size = size.unwrap_or(grid.size);
            grid.envs = envs.unwrap_or(grid.envs);
            grid.base_seed = seed.unwrap_or(grid.base_seed);
            let params = checkpoint.as_deref().map(load_checkpoint).transpose()?.map(|c| c.params);
            let actor = match (&params, expert, random) {
                (Some(p), _, _) => Actor::Policy { params: p, mode: if sample { ActMode::Sample } else { ActMode::Greedy } },
                (None, true, _) => Actor::Expert { budget: cfg.expert },
                (None, false, true) => Actor::UniformRandom,
                (None, false, false) => bail!("give a checkpoint, --expert or --random"),
            };
            let (rows, recs) = benchmark(&actor, &grid, &cfg.env)?;
            let fmt = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Markdown => ReportFormat::Markdown,
            };
            let report = emit_report(&rows, fmt);
            match out {
                Some(p) => fs::write(&p, &report).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{report}"),
            }
            if let Some(p) = records {
                write_records(io::BufWriter::new(fs::File::create(&p)?), &recs)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { file, delay_ms } => {
            let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let replay = Replay::from_json(&text)?;
            let (states, events) = replay.simulate()?;
            let mut stdout = io::stdout().lock();
            for (t, state) in states.iter().enumerate() {
                let collisions = if t == 0 { 0 } else { events[t - 1].collisions() };
                let arrived = state.agents.iter().filter(|a| a.on_goal).count();
                writeln!(stdout, "t={t} on_goal={arrived}/{} collisions={collisions}", state.num_agents())?;
                writeln!(stdout, "{}", render_ascii(state))?;
                stdout.flush()?;
                if delay_ms > 0 {
                    std::thread::sleep(Duration::from_millis(delay_ms));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selfcheck => {
            let report = run_selfcheck();
            print!("{}", report.render());
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}

/// Periodic progress lines over the last `interval` episodes.
struct TrainLog {
    interval: u64,
    start: Instant,
    seen: u64,
    wins: u64,
    reward: f64,
    demos: u64,
}

impl TrainLog {
    fn new(interval: u64) -> Self {
        TrainLog { interval, start: Instant::now(), seen: 0, wins: 0, reward: 0.0, demos: 0 }
    }

    fn observe(&mut self, s: &EpisodeSummary) {
        self.seen += 1;
        self.wins += u64::from(s.success && !s.demo);
        self.demos += u64::from(s.demo);
        self.reward += s.total_reward;
        if self.seen.is_multiple_of(self.interval) {
            let explore = (self.interval - self.demos).max(1);
            println!(
                "episode {:>8}  level {:>2}  explore success {:>5.1}%  mean reward {:>8.2}  {:.0}s",
                s.index + 1,
                s.level,
                100.0 * self.wins as f64 / explore as f64,
                self.reward / self.interval as f64,
                self.start.elapsed().as_secs_f64()
            );
            self.wins = 0;
            self.demos = 0;
            self.reward = 0.0;
        }
    }
}
