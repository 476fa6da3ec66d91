use homeostat::agents::{drive_mono, drive_single, reward_modular, reward_mono, DriveParams};
use homeostat::config::RunConfig;
use homeostat::env::{Action, EnvState, ResourceGrid, ResourceKernel};
use homeostat::nn::{gradient_check, QNetwork};
use homeostat::qlearn::{EpsilonSchedule, ReplayBuffer, Transition};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid() -> ResourceGrid {
    RunConfig::paper().build_grid().unwrap()
}

fn transition(id: usize) -> Transition {
    Transition {
        obs: vec![id as f32],
        action: id % 4,
        rewards: vec![0.0],
        scalar_reward: id as f64,
        next_obs: vec![0.0],
    }
}

proptest! {
    #[test]
    fn stats_follow_intake_minus_depletion(actions in prop::collection::vec(0usize..4, 1..300)) {
        let grid = grid();
        let mut state = EnvState::initial(&grid, &[0.5; 4], &[5.0; 4]).unwrap();
        for a in actions {
            let before = state.stats.h.clone();
            state.step(Action::from_index(a).unwrap(), &grid, 0.004);
            prop_assert!(state.pos_x < 11 && state.pos_y < 11);
            for i in 0..4 {
                let intake = grid.value(i, state.pos_x, state.pos_y);
                prop_assert_eq!(state.stats.h[i], before[i] + intake - 0.004);
            }
        }
    }

    #[test]
    fn observation_is_a_function_of_position_and_stats(x in 0usize..11, y in 0usize..11, h in prop::collection::vec(-5.0f64..20.0, 4)) {
        let grid = grid();
        let mut a = EnvState::initial(&grid, &h, &[5.0; 4]).unwrap();
        a.pos_x = x;
        a.pos_y = y;
        let mut b = a.clone();
        b.t = 999;
        let obs = a.observe(&grid);
        prop_assert_eq!(obs.len(), 40);
        prop_assert_eq!(&obs, &b.observe(&grid));
        prop_assert_eq!(&obs[36..], &h[..]);
        // Centre cell of each layer is the value under the agent.
        for i in 0..4 {
            prop_assert_eq!(obs[9 * i + 4], grid.value(i, x, y));
        }
    }

    #[test]
    fn drives_are_non_negative_and_rewards_telescope(
        path in prop::collection::vec(prop::collection::vec(-10.0f64..15.0, 4), 2..50),
        sp in prop::collection::vec(0.0f64..10.0, 4),
    ) {
        let p = DriveParams::new(4, 2, sp.clone());
        let mut mono = 0.0;
        let mut modular = vec![0.0; 4];
        for w in path.windows(2) {
            prop_assert!(drive_mono(&w[0], &p) >= 0.0);
            mono += reward_mono(&w[0], &w[1], &p);
            for (acc, r) in modular.iter_mut().zip(reward_modular(&w[0], &w[1], &p)) {
                *acc += r;
            }
        }
        let (first, last) = (&path[0], &path[path.len() - 1]);
        let expect = drive_mono(first, &p) - drive_mono(last, &p);
        prop_assert!((mono - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        for i in 0..4 {
            let expect = drive_single(first[i], sp[i], &p) - drive_single(last[i], sp[i], &p);
            prop_assert!((modular[i] - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn replay_samples_are_distinct_and_recent(capacity in 1usize..64, pushes in 1usize..200, seed in any::<u64>()) {
        let mut buf = ReplayBuffer::new(capacity);
        for id in 0..pushes {
            buf.push(transition(id));
        }
        prop_assert_eq!(buf.len(), pushes.min(capacity));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = buf.len().div_ceil(2);
        let mut ids: Vec<usize> = buf.sample(batch, &mut rng).unwrap().iter().map(|t| t.scalar_reward as usize).collect();
        prop_assert!(ids.iter().all(|&id| id + capacity >= pushes && id < pushes));
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), batch);
        prop_assert!(buf.sample(buf.len() + 1, &mut rng).is_err());
    }

    #[test]
    fn epsilon_stays_between_endpoints(k in 1usize..20_000, t in 0usize..40_000) {
        let s = EpsilonSchedule::new(1.0, 0.01, k);
        let e = s.epsilon_at(t);
        prop_assert!((0.01..=1.0).contains(&e));
        prop_assert!(s.epsilon_at(t + 1) <= e);
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), gamma in 0.0f64..0.999, batch in 1usize..256, sp in 0.5f64..9.5) {
        let mut cfg = RunConfig::desk().with_setpoint(sp);
        cfg.seed = seed;
        cfg.gamma = gamma;
        cfg.batch_size = batch;
        let back = RunConfig::parse_str(&cfg.to_config_string()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn kernel_density_is_symmetric(dx in -6.0f64..6.0, dy in -6.0f64..6.0) {
        let k = ResourceKernel::isotropic(5.0, 5.0, 1.0);
        let (a, b) = (k.density(5.0 + dx, 5.0 + dy), k.density(5.0 - dx, 5.0 - dy));
        prop_assert!((a - b).abs() <= 1e-12 * a);
        prop_assert!(k.density(5.0 + dx, 5.0 + dy) <= k.density(5.0, 5.0));
    }
}

#[test]
fn library_gradient_check_agrees() {
    let check = gradient_check(30, 1e-5, 99).unwrap();
    assert_eq!(check.trials, 30);
    assert!(check.max_relative_error < 1e-4, "{check:?}");
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = QNetwork::<f32>::new(&[40, 16, 16, 4], &mut rng).unwrap();
    let mut bytes = Vec::new();
    net.write_checkpoint(&mut bytes).unwrap();
    let back = QNetwork::<f32>::read_checkpoint(bytes.as_slice()).unwrap();
    let x: Vec<f32> = (0..40).map(|i| i as f32 / 40.0).collect();
    assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
}
