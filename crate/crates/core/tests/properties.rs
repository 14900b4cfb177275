//! Cross-module property tests.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crowdpath::curriculum::{level_ranges, CurriculumConfig, CurriculumState};
use crowdpath::eval::{compute_metrics, run_episode, Actor, EpisodeRecord};
use crowdpath::policy::{read_checkpoint, write_checkpoint, Checkpoint, PolicyParams};
use crowdpath::reward::{episode_total, RewardConstants};
use crowdpath::rollout::{Env, EnvSettings};
use crowdpath::scenario::{Replay, Scenario};
use crowdpath::world::{generate_world, observe, step, Action, EpisodeStatus, WorldSpec, CH_EXTENT};

fn spec_strategy() -> impl Strategy<Value = WorldSpec> {
    (4usize..14, 0.0f64..0.4, 1usize..8, any::<u64>()).prop_map(|(m, d, a, s)| WorldSpec::new(m, d, a, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_worlds_are_valid_and_solvable(spec in spec_strategy()) {
        let w = generate_world(&spec).unwrap();
        prop_assert!(w.check_invariants().is_ok());
        // Corridor carving may remove obstacles, never add them.
        prop_assert!(w.grid.obstacle_count() <= spec.obstacle_count());
        prop_assert_eq!(generate_world(&spec).unwrap(), w.clone());
        for a in &w.agents {
            prop_assert!(w.grid.distance_map(a.pos, &[])[w.grid.index(a.goal)] != u32::MAX);
        }
    }

    #[test]
    fn random_walks_keep_invariants_and_reward_totals(spec in spec_strategy(), seed in any::<u64>()) {
        let mut env = Env::new(&spec, &EnvSettings::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut summed = 0.0;
        let mut moves = 0u64;
        while env.status() == EpisodeStatus::Running {
            let actions: Vec<Action> = (0..spec.num_agents).map(|_| Action::ALL[rng.gen_range(0..5)]).collect();
            let out = env.step(&actions).unwrap();
            prop_assert!(env.state.check_invariants().is_ok());
            prop_assert!(out.events.resolution_rounds <= spec.num_agents);
            summed += out.rewards.iter().sum::<f64>();
            moves += out.events.agents.iter().filter(|e| e.moved).count() as u64;
        }
        prop_assert!((summed - episode_total(&env.breakdown, &RewardConstants::default())).abs() < 1e-9);
        prop_assert!(moves <= spec.num_agents as u64 * u64::from(env.state.t));
    }

    #[test]
    fn observations_are_binary_and_bounded(spec in spec_strategy()) {
        let w = generate_world(&spec).unwrap();
        for i in 0..spec.num_agents {
            let o = observe(&w, i).unwrap();
            prop_assert!(o.channels.iter().all(|&v| v == 0.0 || v == 1.0));
            let norm = o.goal_vec[0].hypot(o.goal_vec[1]);
            prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
            prop_assert_eq!(o.get(CH_EXTENT, 4, 4), 1.0);
        }
    }

    #[test]
    fn replay_reproduces_rollout(spec in spec_strategy(), seed in any::<u64>()) {
        let w = generate_world(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = w.clone();
        let mut joint = Vec::new();
        for _ in 0..20 {
            let a: Vec<Action> = (0..spec.num_agents).map(|_| Action::ALL[rng.gen_range(0..5)]).collect();
            state = step(&state, &a).unwrap().0;
            joint.push(a);
        }
        let replay = Replay::new(Scenario::from_world(&spec, &w), &joint);
        let back = Replay::from_json(&replay.to_json()).unwrap();
        let (states, _) = back.simulate().unwrap();
        prop_assert_eq!(states.last().unwrap(), &state);
    }

    #[test]
    fn metrics_match_oracle_and_ignore_order(seed in any::<u64>(), n in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = WorldSpec::new(20, 0.1, 3, 0);
        let mut records: Vec<EpisodeRecord> = (0..n)
            .map(|i| {
                let success = rng.gen_bool(0.4);
                let makespan = if success { rng.gen_range(1..100) } else { 101 };
                EpisodeRecord { spec, success, makespan, moves: vec![rng.gen_range(0..=makespan); 3], collision_count: rng.gen_range(0..9), seed: i as u64 }
            })
            .collect();
        let row = compute_metrics(&records).unwrap();
        let oracle = common::metrics_oracle(&records);
        prop_assert!((row.success_rate - oracle.success_rate).abs() < 1e-9);
        prop_assert_eq!(row.mean_makespan.is_none(), row.success_rate == 0.0);
        if let (Some(r), Some(m)) = (row.collision_rate, row.mean_makespan) {
            prop_assert!((r * m - row.mean_collision_count).abs() < 1e-9);
        }
        records.reverse();
        let again = compute_metrics(&records).unwrap();
        prop_assert_eq!(again.success_rate, row.success_rate);
        prop_assert!((again.mean_collision_count - row.mean_collision_count).abs() < 1e-12);
    }

    #[test]
    fn curriculum_is_monotone_and_bounded(rewards in proptest::collection::vec((-10.0f64..10.0, any::<bool>()), 1..400), cap in 1usize..20) {
        let cfg = CurriculumConfig { initial_window: 7, boost_capacity: cap, ..Default::default() };
        let mut c = CurriculumState::new(cfg);
        let spec = WorldSpec::new(10, 0.0, 1, 0);
        let (mut level, mut window) = (c.level, c.plateau_window);
        for (r, ok) in rewards {
            c.observe_episode(r, ok, &spec);
            prop_assert!(c.level >= level && c.plateau_window >= window);
            prop_assert!(c.boost_buffer.len() <= cap);
            level = c.level;
            window = c.plateau_window;
        }
    }

    #[test]
    fn level_ranges_monotone(sigma in 0u32..60) {
        let (a, b) = (level_ranges(sigma), level_ranges(sigma + 1));
        prop_assert!(a.d_lo <= b.d_lo && a.d_hi <= b.d_hi && a.s_lo <= b.s_lo && a.s_hi <= b.s_hi);
        prop_assert!(a.d_lo <= a.d_hi && a.s_lo <= a.s_hi);
    }

    #[test]
    fn checkpoint_roundtrip(seed in any::<u64>()) {
        let ckpt = Checkpoint::new(PolicyParams::init(seed));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        prop_assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), ckpt);
    }
}

#[test]
fn episode_records_replay_from_seed() {
    let params = PolicyParams::init(4);
    for k in 0..5 {
        let spec = WorldSpec::new(8, 0.1, 3, k);
        for actor in [Actor::UniformRandom, Actor::Policy { params: &params, mode: crowdpath::policy::ActMode::Sample }] {
            let a = run_episode(&actor, &spec, k, &EnvSettings::default()).unwrap();
            let b = run_episode(&actor, &spec, a.seed, &EnvSettings::default()).unwrap();
            assert_eq!(a, b);
            assert!(a.makespan <= crowdpath::world::default_max_episode_length(&spec));
        }
    }
}
