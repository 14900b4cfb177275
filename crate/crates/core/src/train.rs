//! Training orchestrator.
//!
//! Each worker repeatedly takes a snapshot of the shared parameters, asks the
//! curriculum for an environment and a demonstration flag, plays one episode
//! and pushes the resulting gradient back into the store. One agent per
//! episode is the learner; the other agents act from the same snapshot.
//! Demonstration episodes follow an expert joint plan and train the
//! behaviour-cloning term; if the planner gives up, the episode is played
//! by the policy instead.
//!
//! With a single worker everything runs on the calling thread and a fixed
//! seed reproduces the run bit for bit.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::TrainConfig;
use crate::curriculum::{demo_mode, CurriculumState};
use crate::expert::{plan_expert, SearchBudget};
use crate::policy::{
    act, forward, forward_batch, losses_and_gradients, save_checkpoint, ActMode, Checkpoint, CheckpointError, LossReport, OptimizerState,
    PolicyError, PolicyParams, StepRecord, Trajectory,
};
use crate::rollout::{Env, EnvError, EnvSettings};
use crate::world::{Action, EpisodeStatus, WorldSpec};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Config(String),
}

/// Summary of one finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub index: u64,
    pub worker: usize,
    pub spec: WorldSpec,
    pub demo: bool,
    pub success: bool,
    pub steps: u32,
    /// Team reward of the episode, the curriculum's performance signal.
    pub total_reward: f64,
    pub level: u32,
    pub losses: LossReport,
}

/// A played episode seen from its learner agent.
#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub learner: usize,
    pub demo: bool,
    pub success: bool,
    pub steps: u32,
    pub total_reward: f64,
}

/// Plays one episode on `spec`. With `demo` set the expert drives every agent;
/// otherwise all agents sample from `params`.
pub fn play_episode<R: Rng>(
    params: &PolicyParams,
    spec: &WorldSpec,
    demo: bool,
    settings: &EnvSettings,
    budget: &SearchBudget,
    rng: &mut R,
) -> Result<Episode, TrainError> {
    let mut env = Env::new(spec, settings)?;
    let learner = rng.gen_range(0..spec.num_agents);
    let plan = if demo { plan_expert(&env.state, budget, rng.gen()).ok() } else { None };
    let demo = plan.is_some();
    let mut steps = Vec::new();

    while env.status() == EpisodeStatus::Running {
        let mask = crate::world::valid_actions(&env.state, learner).expect("learner in range");
        let blocking = env.is_blocking(learner);
        let on_goal = env.state.agents[learner].on_goal;
        let (actions, obs, value) = match &plan {
            Some(p) => {
                let obs = crate::world::observe(&env.state, learner).expect("learner in range");
                (p.joint_action(env.state.t as usize), obs, 0.0)
            }
            None => {
                let masks = env.masks();
                let mut all_obs = env.observations();
                let out = forward_batch(params, &all_obs);
                let actions: Vec<Action> = (0..spec.num_agents).map(|i| act(&out.output(i), &masks[i], rng, ActMode::Sample)).collect();
                let value = out.output(learner).value;
                (actions, all_obs.swap_remove(learner), value)
            }
        };
        let outcome = env.step(&actions)?;
        steps.push(StepRecord { obs, action: actions[learner], reward: outcome.rewards[learner], value, mask, blocking, on_goal, demo });
    }

    let success = env.status() == EpisodeStatus::Success;
    let bootstrap =
        if success || demo { 0.0 } else { forward(params, &crate::world::observe(&env.state, learner).expect("learner in range")).value };
    Ok(Episode {
        trajectory: Trajectory { steps, bootstrap },
        learner,
        demo,
        success,
        steps: env.state.t,
        total_reward: env.total_reward(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: TrainConfig,
    pub version: String,
    pub episodes: u64,
    pub episodes_per_level: Vec<u64>,
    pub final_level: u32,
    pub checkpoint: String,
    /// Evaluation report produced for this run, if any.
    pub metrics: Option<String>,
}

pub struct TrainOutcome {
    pub params: PolicyParams,
    pub curriculum: CurriculumState,
    pub episodes: u64,
    pub manifest: RunManifest,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const MANIFEST: &str = "manifest.json";

/// Resumption point taken from an earlier checkpoint.
pub struct Resume {
    pub params: PolicyParams,
    pub curriculum: CurriculumState,
    pub episodes: u64,
}

impl Resume {
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, TrainError> {
        let section = |k: &str| ckpt.sections.get(k).cloned().ok_or_else(|| TrainError::Config(format!("checkpoint lacks `{k}`")));
        let curriculum = serde_json::from_value(section("curriculum")?).map_err(|e| TrainError::Config(e.to_string()))?;
        let episodes = section("episodes")?.as_u64().ok_or_else(|| TrainError::Config("bad `episodes`".into()))?;
        Ok(Resume { params: ckpt.params, curriculum, episodes })
    }
}

struct Shared {
    params: PolicyParams,
    optimizer: OptimizerState,
}

struct Control {
    curriculum: CurriculumState,
    rng: ChaCha8Rng,
    issued: u64,
    finished: u64,
}

fn checkpoint_of(params: &PolicyParams, control: &Control, config: &TrainConfig) -> Checkpoint {
    let mut ckpt = Checkpoint::new(params.clone());
    ckpt.sections.insert("episodes".into(), control.finished.into());
    ckpt.sections.insert("seed".into(), config.seed.into());
    ckpt.sections.insert("curriculum".into(), serde_json::to_value(&control.curriculum).expect("serializable"));
    ckpt
}

/// Runs training. Checkpoints and the manifest go to `out_dir` when given.
/// `on_episode` sees every finished episode in completion order.
pub fn train(
    config: &TrainConfig,
    out_dir: Option<&Path>,
    resume: Option<Resume>,
    on_episode: &mut (dyn FnMut(&EpisodeSummary) + Send),
) -> Result<TrainOutcome, TrainError> {
    config.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let (params, curriculum, done) = match resume {
        Some(r) => (r.params, r.curriculum, r.episodes),
        None => (PolicyParams::init(config.seed), CurriculumState::new(config.curriculum.clone()), 0),
    };
    let shared = Mutex::new(Shared { params, optimizer: OptimizerState::new(config.hyper.optimizer) });
    let control = Mutex::new(Control {
        curriculum,
        rng: ChaCha8Rng::seed_from_u64(config.seed ^ done.rotate_left(32)),
        issued: done,
        finished: done,
    });
    let on_episode = Mutex::new(on_episode);

    let worker = |id: usize| -> Result<(), TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1 + id as u64) ^ done);
        loop {
            let (index, spec, demo) = {
                let mut c = control.lock().unwrap();
                if c.issued >= config.episodes {
                    return Ok(());
                }
                c.issued += 1;
                let Control { curriculum, rng: crng, issued, .. } = &mut *c;
                let spec = curriculum.sample_spec(crng);
                let demo = demo_mode(crng, curriculum.config.demo_probability);
                (*issued - 1, spec, demo)
            };
            let snapshot = shared.lock().unwrap().params.clone();
            let ep = play_episode(&snapshot, &spec, demo, &config.env, &config.expert, &mut rng)?;
            let (losses, grads) = losses_and_gradients(&snapshot, &ep.trajectory, &config.hyper, true)?;
            {
                let mut s = shared.lock().unwrap();
                let Shared { params, optimizer } = &mut *s;
                optimizer.apply(params, &grads.expect("requested"), &config.hyper)?;
            }
            let (summary, ckpt) = {
                let mut c = control.lock().unwrap();
                let level = c.curriculum.level;
                c.curriculum.observe_episode(ep.total_reward, ep.success, &spec);
                c.finished += 1;
                let summary = EpisodeSummary {
                    index,
                    worker: id,
                    spec,
                    demo: ep.demo,
                    success: ep.success,
                    steps: ep.steps,
                    total_reward: ep.total_reward,
                    level,
                    losses,
                };
                let due = out_dir.is_some() && c.finished.is_multiple_of(config.checkpoint_interval);
                let ckpt = due.then(|| (c.finished, checkpoint_of(&shared.lock().unwrap().params, &c, config)));
                (summary, ckpt)
            };
            if let (Some(dir), Some((n, ckpt))) = (out_dir, ckpt) {
                save_checkpoint(&dir.join(format!("ckpt-{n:08}.ckpt")), &ckpt)?;
            }
            (on_episode.lock().unwrap())(&summary);
        }
    };

    if config.workers == 1 {
        worker(0)?;
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..config.workers).map(|id| scope.spawn(move || worker(id))).collect();
            handles.into_iter().try_for_each(|h| h.join().expect("training worker panicked"))
        })?;
    }

    let Shared { params, .. } = shared.into_inner().unwrap();
    let control = control.into_inner().unwrap();
    let checkpoint_path = out_dir.map(|d| d.join(FINAL_CHECKPOINT));
    if let Some(path) = &checkpoint_path {
        save_checkpoint(path, &checkpoint_of(&params, &control, config))?;
    }
    let manifest = RunManifest {
        config: config.clone(),
        version: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).to_string(),
        episodes: control.finished,
        episodes_per_level: control.curriculum.episodes_per_level.clone(),
        final_level: control.curriculum.level,
        checkpoint: checkpoint_path.as_deref().map(display_path).unwrap_or_default(),
        metrics: None,
    };
    if let Some(dir) = out_dir {
        let path = dir.join(MANIFEST);
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&manifest).expect("serializable"))?;
        std::fs::rename(tmp, path)?;
    }
    Ok(TrainOutcome { params, episodes: control.finished, curriculum: control.curriculum, manifest })
}

fn display_path(p: &Path) -> String {
    PathBuf::from(p).display().to_string()
}
