//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line and fails
//! when its criterion does not hold.
//!
//! The first six criteria are exact property checks and finish in seconds.
//! The desk-scale reproductions (7 to 11) train roughly a hundred agents and
//! take tens of minutes on one core; runs shared between criteria are
//! computed once per test binary.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex, OnceLock};

use homeostat::agents::{drive_mono, drive_single, reward_modular, reward_mono, DriveParams};
use homeostat::config::{AgentKind, RunConfig};
use homeostat::env::{Action, EnvState, ResourceKernel};
use homeostat::harness::{
    perturbation_experiment, random_baseline_delta, run_episode, sweep_exploration, sweep_setpoints, Metric,
    PerturbationResult, SweepResult, Workers,
};
use homeostat::nn::{Activations, Gradients, QNetwork};
use homeostat::qlearn::EpsilonSchedule;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: usize = 10;

/// Written straight to stderr so the line shows even when output is captured.
fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!("[{}] criterion {id:>2} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

// ---------------------------------------------------------------------------
// Shared desk-scale runs

type Key = (AgentKind, usize, u64);

fn cache() -> &'static Mutex<HashMap<Key, Arc<OnceLock<SweepResult>>>> {
    static CACHE: OnceLock<Mutex<HashMap<Key, Arc<OnceLock<SweepResult>>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Desk runs of `agent` with ε annealed over `k` steps and every set-point
/// at `setpoint`, seeds 0..10, as a one-setting sweep keyed by set-point.
fn desk_runs(agent: AgentKind, k: usize, setpoint: f64) -> SweepResult {
    let cell = {
        let mut map = cache().lock().unwrap();
        map.entry((agent, k, setpoint.to_bits())).or_default().clone()
    };
    cell.get_or_init(|| {
        let mut base = RunConfig::desk();
        base.agent = agent;
        base.anneal_steps = k;
        sweep_setpoints(&base, &[setpoint], SEEDS, Workers(0)).expect("sweep")
    })
    .clone()
}

fn desk_median(agent: AgentKind, k: usize, setpoint: f64, metric: Metric) -> f64 {
    let runs = desk_runs(agent, k, setpoint);
    assert!(runs.is_complete(), "failed runs: {:?}", runs.failures);
    runs.median(setpoint, agent, metric).expect("runs")
}

fn perturbation() -> &'static PerturbationResult {
    static RESULT: OnceLock<PerturbationResult> = OnceLock::new();
    RESULT.get_or_init(|| perturbation_experiment(&RunConfig::desk(), SEEDS, Workers(0)).expect("perturbation"))
}

// ---------------------------------------------------------------------------
// 1. Parameter counts

#[test]
fn c01_parameter_counts() {
    let paper = RunConfig::paper();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mono_sizes = paper.agent_settings(AgentKind::Monolithic).layer_sizes();
    let module_sizes = paper.agent_settings(AgentKind::Modular).layer_sizes();
    let mono = QNetwork::<f32>::new(&mono_sizes, &mut rng).unwrap().flat_parameters().len();
    let module = QNetwork::<f32>::new(&module_sizes, &mut rng).unwrap().flat_parameters().len();
    let modular = paper.n_resources * module;
    let rounded = |n: usize| format!("{:.2e}", n as f64);
    let pass = mono == 1_095_684
        && modular == 1_092_016
        && mono_sizes == [40, 1024, 1024, 4]
        && module_sizes == [40, 500, 500, 4]
        && rounded(mono) == "1.10e6"
        && &rounded(modular)[..4] == "1.09";
    report(
        1,
        "parameter counts",
        pass,
        &format!("monolithic {mono}, modular 4 x {module} = {modular}"),
    );
}

// ---------------------------------------------------------------------------
// 2. Gradient check against central differences of an independent forward pass

fn naive_loss(net: &QNetwork<f64>, inputs: &[f64], actions: &[usize], targets: &[f64]) -> f64 {
    let sizes = net.layer_sizes().to_vec();
    let batch = actions.len();
    let mut total = 0.0;
    for b in 0..batch {
        let mut act: Vec<f64> = inputs[b * sizes[0]..(b + 1) * sizes[0]].to_vec();
        for l in 0..sizes.len() - 1 {
            let mut next = vec![0.0; sizes[l + 1]];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut z = net.bias(l, o);
                for (i, a) in act.iter().enumerate() {
                    z += net.weight(l, i, o) * a;
                }
                *slot = if l + 2 < sizes.len() { z.max(0.0) } else { z };
            }
            act = next;
        }
        let r = act[actions[b]] - targets[b];
        total += r * r;
    }
    total / batch as f64
}

#[test]
fn c02_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let step = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..100 {
        let mut sizes = vec![rng.gen_range(1..=10)];
        for _ in 0..rng.gen_range(1..=2) {
            sizes.push(rng.gen_range(1..=8));
        }
        sizes.push(4);
        let mut net = QNetwork::<f64>::new(&sizes, &mut rng).unwrap();
        for l in 0..sizes.len() - 1 {
            for o in 0..sizes[l + 1] {
                net.set_bias(l, o, rng.gen_range(-0.5..0.5));
            }
        }
        let batch = rng.gen_range(1..=6);
        let inputs: Vec<f64> = (0..batch * sizes[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let actions: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..4)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.gen_range(-3.0..3.0)).collect();

        let mut scratch = Activations::default();
        let mut grads = Gradients::zeros_like(&net);
        let loss = net.backward_td(&inputs, &actions, &targets, &mut scratch, &mut grads).unwrap();
        assert!((loss - naive_loss(&net, &inputs, &actions, &targets)).abs() < 1e-12);
        let analytic = grads.flat();

        let base = net.flat_parameters();
        let mut params = base.clone();
        let mut probe = net.clone();
        for (k, a) in analytic.iter().enumerate() {
            params[k] = base[k] + step;
            probe.load_flat_parameters(&params).unwrap();
            let up = naive_loss(&probe, &inputs, &actions, &targets);
            params[k] = base[k] - step;
            probe.load_flat_parameters(&params).unwrap();
            let down = naive_loss(&probe, &inputs, &actions, &targets);
            params[k] = base[k];
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
            checked += 1;
        }
    }
    report(
        2,
        "gradient check",
        worst < 1e-4,
        &format!("max relative error {worst:.3e} over {checked} parameters in 100 nets (limit 1e-4)"),
    );
}

// ---------------------------------------------------------------------------
// 3. Drive and reward algebra

#[test]
fn c03_drive_reward_algebra() {
    let p = DriveParams::new(4, 2, vec![5.0; 4]);
    let examples = [
        drive_mono(&[5.0; 4], &p) == 0.0,
        drive_mono(&[4.0, 5.0, 5.0, 5.0], &p) == 1.0,
        drive_mono(&[3.0, 5.0, 5.0, 5.0], &p) == 4.0,
        reward_mono(&[3.0, 5.0, 5.0, 5.0], &[3.0, 5.0, 5.0, 5.0], &p) == 0.0,
        reward_mono(&[3.0, 5.0, 5.0, 5.0], &[4.0, 5.0, 5.0, 5.0], &p) == 3.0,
        drive_single(5.0, 5.0, &p) == 0.0,
        drive_single(3.0, 5.0, &p) == 4.0,
        drive_single(7.0, 5.0, &p) == 4.0,
        reward_modular(&[3.0, 5.0, 5.0, 5.0], &[4.0, 5.0, 5.0, 5.0], &p) == [3.0, 0.0, 0.0, 0.0],
        reward_mono(&[5.0; 4], &[4.0, 5.0, 5.0, 5.0], &p) == -1.0,
        reward_modular(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.5, 4.0], &p)
            .iter()
            .enumerate()
            .all(|(i, r)| (i == 2) != (*r == 0.0)),
        reward_modular(&[3.0, 5.0, 5.0, 20.0], &[4.0, 5.0, 5.0, 20.0], &p)[3] == 0.0,
    ];
    let examples_ok = examples.iter().all(|&e| e);

    // Telescoping over random-policy trajectories.
    let mut worst = 0.0f64;
    for seed in 0..3 {
        let mut cfg = RunConfig::desk();
        cfg.agent = AgentKind::Random;
        cfg.total_steps = 1000;
        cfg.anneal_steps = 1000;
        cfg.seed = seed;
        cfg.delta_t1 = 0;
        cfg.delta_t2 = 1000;
        let log = run_episode(&cfg).unwrap();
        let dp = cfg.drive_params();
        let start = log.stats_at(0);
        let end = &log.final_stats;
        let mono_sum: f64 = log.scalar_rewards.iter().sum();
        worst = worst.max((mono_sum - (drive_mono(start, &dp) - drive_mono(end, &dp))).abs());
        for i in 0..cfg.n_resources {
            let sum: f64 = (0..log.len()).map(|t| log.rewards_at(t)[i]).sum();
            let expect = drive_single(start[i], dp.setpoints[i], &dp) - drive_single(end[i], dp.setpoints[i], &dp);
            worst = worst.max((sum - expect).abs());
        }
    }

    // One stat: the modular agent is the monolithic agent.
    let mut cfg = RunConfig::desk();
    cfg.n_resources = 1;
    cfg.kernels = vec![ResourceKernel::isotropic(0.0, 0.0, 1.0)];
    cfg.setpoints = vec![5.0];
    cfg.initial_stats = vec![0.5];
    cfg.hidden_mono = vec![32, 32];
    cfg.hidden_modular = vec![32, 32];
    cfg.batch_size = 16;
    cfg.total_steps = 1500;
    cfg.anneal_steps = 500;
    cfg.delta_t1 = 750;
    cfg.delta_t2 = 1500;
    cfg.seed = 11;
    cfg.agent = AgentKind::Monolithic;
    let mono = run_episode(&cfg).unwrap();
    cfg.agent = AgentKind::Modular;
    let modular = run_episode(&cfg).unwrap();
    let same_actions = mono.actions == modular.actions;
    let same_rewards = mono.scalar_rewards.iter().zip(&modular.rewards).all(|(a, b)| a == b);

    let pass = examples_ok && worst <= 1e-9 && same_actions && same_rewards;
    report(
        3,
        "drive and reward algebra",
        pass,
        &format!(
            "examples {}, telescoping max error {worst:.2e} (limit 1e-9), one-stat action traces {} over {} steps",
            if examples_ok { "exact" } else { "WRONG" },
            if same_actions && same_rewards { "identical" } else { "differ" },
            mono.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Conservation of the stat update

#[test]
fn c04_conservation() {
    let cfg = RunConfig::desk();
    let grid = cfg.build_grid().unwrap();
    let mut state = EnvState::initial(&grid, &cfg.initial_stats, &cfg.setpoints).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let clamp_at = 5_000;
    let mut exact = true;
    let mut worst_residual = 0.0f64;
    let mut clamp_constant = true;
    let mut intake_ok = true;
    let corners = [(0.0, 0.0), (0.0, 10.0), (10.0, 0.0), (10.0, 10.0)];
    for t in 0..10_000 {
        if t == clamp_at {
            state.apply_clamp(3, 20.0).unwrap();
        }
        let before = state.stats.h.clone();
        let (x, y) = (state.pos_x as i64, state.pos_y as i64);
        let action = Action::from_index(rng.gen_range(0..4)).unwrap();
        let (dx, dy) = action.delta();
        let (nx, ny) = (x + dx, y + dy);
        let (ex, ey) = if (0..11).contains(&nx) && (0..11).contains(&ny) { (nx, ny) } else { (x, y) };
        state.step(action, &grid, cfg.depletion);
        assert_eq!((state.pos_x as i64, state.pos_y as i64), (ex, ey));
        for i in 0..4 {
            let after = state.stats.h[i];
            if t >= clamp_at && i == 3 {
                clamp_constant &= after == 20.0;
                continue;
            }
            // Independent unit-variance Gaussian at the corner means.
            let (mx, my) = corners[i];
            let d2 = (ex as f64 - mx).powi(2) + (ey as f64 - my).powi(2);
            let oracle = (-d2 / 2.0).exp() / (2.0 * std::f64::consts::PI);
            let intake = grid.value(i, ex as usize, ey as usize);
            intake_ok &= (intake - oracle).abs() <= 1e-15;
            exact &= after == before[i] + intake - cfg.depletion;
            let residual = after - before[i] - intake + cfg.depletion;
            worst_residual = worst_residual.max(residual.abs() / f64::EPSILON / before[i].abs().max(1.0));
        }
    }
    report(
        4,
        "environment conservation",
        exact && clamp_constant && intake_ok && worst_residual <= 4.0,
        &format!(
            "10000 random steps: update {} h + intake - 0.004, algebraic residual <= {worst_residual:.1} ulp, intake {} the kernel oracle, clamped stat {}",
            if exact { "bit-equal to" } else { "differs from" },
            if intake_ok { "matches" } else { "differs from" },
            if clamp_constant { "constant" } else { "moved" }
        ),
    );
}

// ---------------------------------------------------------------------------
// 5. ε schedule

#[test]
fn c05_epsilon_schedule() {
    let mut problems = Vec::new();
    for k in [1usize, 10, 100, 1000, 5000, 10_000] {
        let s = EpsilonSchedule::new(1.0, 0.01, k);
        if k == 1 {
            if s.epsilon_at(0) != 0.01 {
                problems.push(format!("K=1: eps(0) = {}", s.epsilon_at(0)));
            }
        } else if s.epsilon_at(0) != 1.0 {
            problems.push(format!("K={k}: eps(0) = {}", s.epsilon_at(0)));
        }
        for t in [k - 1, k, k + 1, 2 * k + 5] {
            if s.epsilon_at(t) != 0.01 {
                problems.push(format!("K={k}: eps({t}) = {}", s.epsilon_at(t)));
            }
        }
        let mut prev = f64::INFINITY;
        for t in 0..k + 10 {
            let e = s.epsilon_at(t);
            if e > prev || !(0.01..=1.0).contains(&e) {
                problems.push(format!("K={k}: not monotone at t={t}"));
                break;
            }
            prev = e;
        }
    }
    report(
        5,
        "epsilon schedule",
        problems.is_empty(),
        &if problems.is_empty() {
            "endpoints, K=1 case and monotonicity hold for K in {1, 10, 100, 1000, 5000, 10000}".to_string()
        } else {
            problems.join("; ")
        },
    );
}

// ---------------------------------------------------------------------------
// 6. Determinism of the command-line run

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn c06_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let exe = env!("CARGO_BIN_EXE_homeostat");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let status = Command::new(exe)
            .args(["run", "--preset", "desk", "--seed", "7", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(csv_files(&out));
    }
    let same = !outputs[0].is_empty() && outputs[0] == outputs[1];
    let names: Vec<&str> = outputs[0].iter().map(|(n, _)| n.as_str()).collect();
    report(
        6,
        "determinism",
        same,
        &format!("two `run --preset desk --seed 7` executions, files {names:?} {}", if same { "byte-identical" } else { "differ" }),
    );
}

// ---------------------------------------------------------------------------
// 7. Homeostasis at several set-points

#[test]
fn c07_setpoint_learnability() {
    let mut pass = true;
    let mut parts = Vec::new();
    for sp in [2.0, 5.0, 8.0] {
        let m = desk_median(AgentKind::Monolithic, 2000, sp, Metric::FinalStatMean);
        let ok = (m - sp).abs() <= 0.2 * sp;
        pass &= ok;
        parts.push(format!("h*={sp}: median {m:.3} (band {:.1}..{:.1}){}", 0.8 * sp, 1.2 * sp, if ok { "" } else { " OUT" }));
    }
    report(7, "set-point learnability", pass, &parts.join(", "));
}

// ---------------------------------------------------------------------------
// 8. Learning beats a random policy

#[test]
fn c08_beats_random() {
    let random = random_baseline_delta(&RunConfig::desk(), SEEDS, Workers(0)).unwrap();
    let mono = desk_median(AgentKind::Monolithic, 2000, 5.0, Metric::Delta);
    let modular = desk_median(AgentKind::Modular, 2000, 5.0, Metric::Delta);
    let pass = mono < 0.5 * random && modular < 0.5 * random;
    report(
        8,
        "learning beats chance",
        pass,
        &format!("median delta: random {random:.3}, monolithic {mono:.3}, modular {modular:.3} (limit {:.3})", 0.5 * random),
    );
}

// ---------------------------------------------------------------------------
// 9. Exploration indifference of the modular agent

#[test]
fn c09_exploration_indifference() {
    let ks = [1usize, 400, 2000, 4000];
    let mono: Vec<f64> = ks
        .iter()
        .map(|&k| desk_median(AgentKind::Monolithic, k, 5.0, Metric::Delta))
        .collect();
    let (best_i, best) = mono
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let modular = desk_median(AgentKind::Modular, 1, 5.0, Metric::Delta);
    let first = modular <= 1.25 * best;
    let second = mono[0] > best;
    let listing: Vec<String> = ks.iter().zip(&mono).map(|(k, d)| format!("K={k}: {d:.3}")).collect();
    report(
        9,
        "exploration indifference",
        first && second,
        &format!(
            "modular K=1 median delta {modular:.3} vs 1.25 x best monolithic {:.3} (K={}) [{}]; monolithic medians {}; K=1 worse than best: {second}",
            1.25 * best,
            ks[best_i],
            if first { "ok" } else { "too high" },
            listing.join(", ")
        ),
    );
}

// Cross-check that the exploration sweep entry point reproduces one cached cell.
#[test]
fn c09_sweep_entry_point_matches() {
    let mut base = RunConfig::desk();
    base.agent = AgentKind::Modular;
    base.total_steps = 600;
    base.delta_t1 = 300;
    base.delta_t2 = 600;
    base.final_window = 100;
    base.batch_size = 16;
    let swept = sweep_exploration(&base, &[1], 2, false, Workers(0)).unwrap();
    let mut direct = base.clone();
    direct.anneal_steps = 1;
    let d0 = run_episode(&direct).unwrap().delta(300, 600, &[]).unwrap();
    assert_eq!(swept.values(1.0, AgentKind::Modular, Metric::Delta)[0], d0);
}

// ---------------------------------------------------------------------------
// 10. Robustness to a clamped stat

#[test]
fn c10_perturbation_robustness() {
    let r = perturbation();
    assert!(r.sweep.is_complete(), "failed runs: {:?}", r.sweep.failures);
    let setting = r.perturbation.time as f64;
    let mono = r.sweep.values(setting, AgentKind::Monolithic, Metric::Delta);
    let modular = r.sweep.values(setting, AgentKind::Modular, Metric::Delta);
    let mono_med = r.sweep.median(setting, AgentKind::Monolithic, Metric::Delta).unwrap();
    let mod_med = r.sweep.median(setting, AgentKind::Modular, Metric::Delta).unwrap();
    let wins = mono.iter().zip(&modular).filter(|(m, g)| g < m).count();
    let pass = mod_med < mono_med && wins >= 7;
    report(
        10,
        "perturbation robustness",
        pass,
        &format!(
            "clamp h{}={} at t={}: post-clamp median delta modular {mod_med:.3} vs monolithic {mono_med:.3}, modular lower in {wins}/{} seeds (need 7)",
            r.perturbation.stat + 1,
            r.perturbation.value,
            r.perturbation.time,
            mono.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 11. Clamp exactness

#[test]
fn c11_clamp_exactness() {
    let r = perturbation();
    let p = r.perturbation;
    let mut checked = 0;
    let mut bad_stat = 0;
    let mut bad_reward = 0;
    for (agent, _, log) in &r.logs {
        let log = log.as_ref().expect("run finished");
        for t in p.time..log.len() {
            checked += 1;
            bad_stat += usize::from(log.stats_at(t)[p.stat] != p.value);
            if *agent == AgentKind::Modular {
                bad_reward += usize::from(log.rewards_at(t)[p.stat] != 0.0);
            }
        }
        bad_stat += usize::from(log.final_stats[p.stat] != p.value);
    }
    report(
        11,
        "clamp exactness",
        checked > 0 && bad_stat == 0 && bad_reward == 0 && (p.stat, p.value, p.time) == (3, 20.0, 6000),
        &format!("{checked} post-clamp steps: h4 != 20 in {bad_stat}, module-4 reward != 0 in {bad_reward}"),
    );
}
