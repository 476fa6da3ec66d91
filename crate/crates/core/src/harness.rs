//! Episode runner, metrics and the experiment sweeps.

use rayon::prelude::*;

use crate::agents::{reward_modular, reward_mono, Controller, ModularAgent, MonolithicAgent, RandomPolicy, Real};
use crate::config::{AgentKind, Perturbation, RunConfig};
use crate::env::{Action, EnvState};
use crate::error::{Error, Result};
use crate::qlearn::Transition;

/// Per-step record of one episode. Row `t` holds the stats *before* the
/// action of step `t` and the rewards of the transition it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub n_stats: usize,
    pub setpoints: Vec<f64>,
    /// `[t][i]`, flattened.
    pub stats: Vec<f64>,
    pub actions: Vec<u8>,
    pub epsilons: Vec<f64>,
    /// Per-stat drive reductions, `[t][i]` flattened.
    pub rewards: Vec<f64>,
    pub scalar_rewards: Vec<f64>,
    pub losses: Vec<Option<f64>>,
    /// Stats after the last step.
    pub final_stats: Vec<f64>,
    pub start: (usize, usize),
    pub perturbation: Option<Perturbation>,
}

impl RunLog {
    fn with_capacity(n_stats: usize, setpoints: Vec<f64>, steps: usize) -> Self {
        Self {
            n_stats,
            setpoints,
            stats: Vec::with_capacity(steps * n_stats),
            actions: Vec::with_capacity(steps),
            epsilons: Vec::with_capacity(steps),
            rewards: Vec::with_capacity(steps * n_stats),
            scalar_rewards: Vec::with_capacity(steps),
            losses: Vec::with_capacity(steps),
            final_stats: Vec::new(),
            start: (0, 0),
            perturbation: None,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn stats_at(&self, t: usize) -> &[f64] {
        &self.stats[t * self.n_stats..(t + 1) * self.n_stats]
    }

    pub fn rewards_at(&self, t: usize) -> &[f64] {
        &self.rewards[t * self.n_stats..(t + 1) * self.n_stats]
    }

    /// Number of steps on which a learning update ran.
    pub fn update_count(&self) -> usize {
        self.losses.iter().filter(|l| l.is_some()).count()
    }

    pub fn delta(&self, t1: usize, t2: usize, exclude: &[usize]) -> Result<f64> {
        compute_delta(self, t1, t2, &self.setpoints, exclude)
    }
}

/// Average absolute set-point deviation per step over `t1 <= t < t2`,
/// summed over the stats not listed in `exclude`.
pub fn compute_delta(log: &RunLog, t1: usize, t2: usize, setpoints: &[f64], exclude: &[usize]) -> Result<f64> {
    if t1 >= t2 || t2 > log.len() {
        return Err(Error::EmptyWindow { t1, t2 });
    }
    let mut total = 0.0;
    for t in t1..t2 {
        for (i, (h, sp)) in log.stats_at(t).iter().zip(setpoints).enumerate() {
            if !exclude.contains(&i) {
                total += (sp - h).abs();
            }
        }
    }
    Ok(total / (t2 - t1) as f64)
}

/// Mean of all stats over the last `window` logged steps.
pub fn final_stat_mean(log: &RunLog, window: usize) -> Result<f64> {
    let len = log.len();
    if window == 0 || window > len {
        return Err(Error::EmptyWindow {
            t1: len.saturating_sub(window),
            t2: len,
        });
    }
    let sum: f64 = log.stats[(len - window) * log.n_stats..].iter().sum();
    Ok(sum / (window * log.n_stats) as f64)
}

/// Runs one episode with the agent selected by `config.agent`.
pub fn run_episode(config: &RunConfig) -> Result<RunLog> {
    config.check()?;
    match config.agent {
        AgentKind::Monolithic => {
            let mut agent = MonolithicAgent::new(config.agent_settings(AgentKind::Monolithic), config.seed)?;
            run_with(config, &mut agent)
        }
        AgentKind::Modular => {
            let mut agent =
                ModularAgent::new(config.agent_settings(AgentKind::Modular), config.n_resources, config.seed)?;
            run_with(config, &mut agent)
        }
        AgentKind::Random => run_with(config, &mut RandomPolicy::new(config.seed)),
    }
}

/// Observe, act, step, store, learn; once per step for `total_steps` steps.
pub fn run_with<C: Controller + ?Sized>(config: &RunConfig, controller: &mut C) -> Result<RunLog> {
    let grid = config.build_grid()?;
    let drive = config.drive_params();
    let mut state = EnvState::initial(&grid, &config.initial_stats, &config.setpoints)?;
    let mut log = RunLog::with_capacity(config.n_resources, config.setpoints.clone(), config.total_steps);
    log.start = (state.pos_x, state.pos_y);
    log.perturbation = config.perturbation;

    let scales = config.input_scales(&grid);
    let to_input = |v: &[f64]| -> Vec<Real> { v.iter().zip(&scales).map(|(x, s)| (x * s) as Real).collect() };
    let mut obs64 = Vec::new();
    for t in 0..config.total_steps {
        if let Some(p) = config.perturbation {
            if p.time == t {
                state.apply_clamp(p.stat, p.value)?;
            }
        }
        state.observe_into(&grid, &mut obs64);
        let obs = to_input(&obs64);
        let eps = controller.epsilon(t);
        let a = controller.act(&obs, t).map_err(|e| match e {
            Error::NonFiniteQ => Error::Divergence {
                step: t,
                detail: "non-finite Q-values".into(),
            },
            other => other,
        })?;
        let action = Action::from_index(a).ok_or_else(|| Error::Shape(format!("action index {a}")))?;

        let h_now = state.stats.h.clone();
        state.step(action, &grid, config.depletion);
        let h_next = &state.stats.h;
        let rewards = reward_modular(&h_now, h_next, &drive);
        let scalar = reward_mono(&h_now, h_next, &drive);
        state.observe_into(&grid, &mut obs64);
        let next_obs = to_input(&obs64);

        log.stats.extend_from_slice(&h_now);
        log.actions.push(a as u8);
        log.epsilons.push(eps);
        log.rewards.extend_from_slice(&rewards);
        log.scalar_rewards.push(scalar);

        controller.remember(Transition {
            obs,
            action: a,
            rewards,
            scalar_reward: scalar,
            next_obs,
        });
        let loss = controller.learn(t + 1)?;
        log.losses.push(loss);
    }
    log.final_stats = state.stats.h.clone();
    Ok(log)
}

/// Replays the action trace through the environment rule and reports the
/// first step whose logged stats disagree.
pub fn audit_conservation(config: &RunConfig, log: &RunLog) -> Result<Option<usize>> {
    let grid = config.build_grid()?;
    let mut state = EnvState::initial(&grid, &config.initial_stats, &config.setpoints)?;
    for t in 0..log.len() {
        if let Some(p) = config.perturbation {
            if p.time == t {
                state.apply_clamp(p.stat, p.value)?;
            }
        }
        if state.stats.h.as_slice() != log.stats_at(t) {
            return Ok(Some(t));
        }
        let action = Action::from_index(log.actions[t] as usize).unwrap();
        state.step(action, &grid, config.depletion);
    }
    Ok((state.stats.h != log.final_stats).then_some(log.len()))
}

/// One finished run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub experiment: String,
    pub setting: f64,
    pub agent: AgentKind,
    pub seed: u64,
    pub delta: f64,
    pub final_stat_mean: f64,
}

/// A run that aborted, typically by divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub setting: f64,
    pub agent: AgentKind,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Delta,
    FinalStatMean,
}

/// Order statistics and moments of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Summary {
    /// Quartiles by linear interpolation between order statistics; sd uses `n - 1`.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            n,
            mean,
            sd,
            min: v[0],
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: v[n - 1],
        })
    }
}

/// Quantile of sorted data, linear interpolation.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    pub failures: Vec<SweepFailure>,
}

impl SweepResult {
    /// Settings in first-seen order.
    pub fn settings(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.setting) {
                out.push(e.setting);
            }
        }
        out
    }

    pub fn agents(&self) -> Vec<AgentKind> {
        let mut out: Vec<AgentKind> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.agent) {
                out.push(e.agent);
            }
        }
        out
    }

    pub fn values(&self, setting: f64, agent: AgentKind, metric: Metric) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| e.setting == setting && e.agent == agent)
            .map(|e| match metric {
                Metric::Delta => e.delta,
                Metric::FinalStatMean => e.final_stat_mean,
            })
            .collect()
    }

    pub fn summary(&self, setting: f64, agent: AgentKind, metric: Metric) -> Option<Summary> {
        Summary::of(&self.values(setting, agent, metric))
    }

    pub fn median(&self, setting: f64, agent: AgentKind, metric: Metric) -> Option<f64> {
        self.summary(setting, agent, metric).map(|s| s.median)
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Worker pool size; `0` means one worker per core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Workers(pub usize);

/// Runs every config, `workers` at a time. Results keep the input order.
pub fn run_many(configs: &[RunConfig], workers: Workers) -> Vec<Result<RunLog>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.0)
        .build()
        .expect("thread pool");
    pool.install(|| configs.par_iter().map(run_episode).collect())
}

/// Stats excluded from Δ: the clamped one, if any.
pub fn excluded_stats(config: &RunConfig) -> Vec<usize> {
    config.perturbation.map(|p| vec![p.stat]).unwrap_or_default()
}

/// Scores a finished run with the config's Δ window and final-mean window.
pub fn score(config: &RunConfig, log: &RunLog) -> Result<(f64, f64)> {
    let delta = log.delta(config.delta_t1, config.delta_t2, &excluded_stats(config))?;
    let fsm = final_stat_mean(log, config.final_window)?;
    Ok((delta, fsm))
}

/// One sweep task.
#[derive(Debug, Clone)]
struct Task {
    setting: f64,
    config: RunConfig,
}

fn run_tasks(experiment: &str, tasks: Vec<Task>, workers: Workers) -> (SweepResult, Vec<Option<RunLog>>) {
    let configs: Vec<RunConfig> = tasks.iter().map(|t| t.config.clone()).collect();
    let results = run_many(&configs, workers);
    let mut out = SweepResult::default();
    let mut logs = Vec::with_capacity(tasks.len());
    for (task, result) in tasks.iter().zip(results) {
        let c = &task.config;
        match result.and_then(|log| score(c, &log).map(|s| (s, log))) {
            Ok(((delta, fsm), log)) => {
                out.entries.push(SweepEntry {
                    experiment: experiment.to_string(),
                    setting: task.setting,
                    agent: c.agent,
                    seed: c.seed,
                    delta,
                    final_stat_mean: fsm,
                });
                logs.push(Some(log));
            }
            Err(e) => {
                out.failures.push(SweepFailure {
                    setting: task.setting,
                    agent: c.agent,
                    seed: c.seed,
                    error: e.to_string(),
                });
                logs.push(None);
            }
        }
    }
    (out, logs)
}

fn replicate(base: &RunConfig, setting: f64, agents: &[AgentKind], seeds: usize, edit: impl Fn(&mut RunConfig)) -> Vec<Task> {
    let mut tasks = Vec::new();
    for &agent in agents {
        for s in 0..seeds {
            let mut config = base.clone();
            config.agent = agent;
            config.seed = base.seed + s as u64;
            edit(&mut config);
            tasks.push(Task { setting, config });
        }
    }
    tasks
}

/// Final stat mean of the base agent for each common set-point.
pub fn sweep_setpoints(base: &RunConfig, setpoints: &[f64], seeds: usize, workers: Workers) -> Result<SweepResult> {
    if let Some(bad) = setpoints.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::Config(format!("set-point {bad} must be positive")));
    }
    let tasks = setpoints
        .iter()
        .flat_map(|&s| replicate(base, s, &[base.agent], seeds, |c| *c = c.clone().with_setpoint(s)))
        .collect();
    Ok(run_tasks("setpoint", tasks, workers).0)
}

/// Δ of the base agent for each discount factor.
pub fn sweep_gamma(base: &RunConfig, gammas: &[f64], seeds: usize, workers: Workers) -> Result<SweepResult> {
    if let Some(bad) = gammas.iter().find(|g| !(0.0..1.0).contains(*g)) {
        return Err(Error::Config(format!("gamma {bad} is outside [0, 1)")));
    }
    let tasks = gammas
        .iter()
        .flat_map(|&g| replicate(base, g, &[base.agent], seeds, |c| c.gamma = g))
        .collect();
    Ok(run_tasks("gamma", tasks, workers).0)
}

/// Δ for each ε annealing length, for both agents or just the base agent.
pub fn sweep_exploration(
    base: &RunConfig,
    anneal_steps: &[usize],
    seeds: usize,
    both_agents: bool,
    workers: Workers,
) -> Result<SweepResult> {
    if let Some(bad) = anneal_steps.iter().find(|&&k| k == 0 || k > base.total_steps) {
        return Err(Error::Config(format!(
            "anneal length {bad} must lie in [1, {}]",
            base.total_steps
        )));
    }
    let agents: &[AgentKind] = if both_agents {
        &[AgentKind::Monolithic, AgentKind::Modular]
    } else {
        std::slice::from_ref(&base.agent)
    };
    let tasks = anneal_steps
        .iter()
        .flat_map(|&k| replicate(base, k as f64, agents, seeds, |c| c.anneal_steps = k))
        .collect();
    Ok(run_tasks("explore", tasks, workers).0)
}

/// Mean and standard deviation of each stat across runs, per step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeCourse {
    pub agent: AgentKind,
    pub n_stats: usize,
    pub runs: usize,
    /// `[t][i]` flattened.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl TimeCourse {
    pub fn from_logs(agent: AgentKind, logs: &[&RunLog]) -> Option<Self> {
        let first = logs.first()?;
        let (n_stats, len) = (first.n_stats, first.len());
        let runs = logs.len();
        let mut mean = vec![0.0; len * n_stats];
        let mut sd = vec![0.0; len * n_stats];
        for k in 0..len * n_stats {
            let xs: Vec<f64> = logs.iter().map(|l| l.stats[k]).collect();
            let m = xs.iter().sum::<f64>() / runs as f64;
            mean[k] = m;
            sd[k] = if runs > 1 {
                (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt()
            } else {
                0.0
            };
        }
        Some(Self {
            agent,
            n_stats,
            runs,
            mean,
            sd,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len() / self.n_stats
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct PerturbationResult {
    pub perturbation: Perturbation,
    /// Post-clamp Δ over the unclamped stats, both agents, paired by seed.
    pub sweep: SweepResult,
    pub time_courses: Vec<TimeCourse>,
    /// Per-run logs in `(agent, seed)` order; `None` for failed runs.
    pub logs: Vec<(AgentKind, u64, Option<RunLog>)>,
}

/// Clamps the last stat to 20 halfway through, ε annealed over 5000 steps,
/// for both agents. Δ is measured from the clamp to the end of the run.
pub fn perturbation_experiment(base: &RunConfig, seeds: usize, workers: Workers) -> Result<PerturbationResult> {
    let perturbation = Perturbation {
        time: base.midpoint(),
        stat: base.n_resources - 1,
        value: 20.0,
    };
    perturbation_experiment_with(base, perturbation, 5_000.min(base.total_steps), seeds, workers)
}

pub fn perturbation_experiment_with(
    base: &RunConfig,
    perturbation: Perturbation,
    anneal_steps: usize,
    seeds: usize,
    workers: Workers,
) -> Result<PerturbationResult> {
    let mut cfg = base.clone();
    cfg.perturbation = Some(perturbation);
    cfg.anneal_steps = anneal_steps;
    cfg.delta_t1 = perturbation.time;
    cfg.delta_t2 = cfg.total_steps;
    cfg.check()?;
    let agents = [AgentKind::Monolithic, AgentKind::Modular];
    let tasks = replicate(&cfg, perturbation.time as f64, &agents, seeds, |_| {});
    let keys: Vec<(AgentKind, u64)> = tasks.iter().map(|t| (t.config.agent, t.config.seed)).collect();
    let (sweep, logs) = run_tasks("perturb", tasks, workers);
    let logs: Vec<(AgentKind, u64, Option<RunLog>)> =
        keys.into_iter().zip(logs).map(|((a, s), l)| (a, s, l)).collect();
    let time_courses = agents
        .iter()
        .filter_map(|&agent| {
            let ok: Vec<&RunLog> = logs
                .iter()
                .filter(|(a, _, _)| *a == agent)
                .filter_map(|(_, _, l)| l.as_ref())
                .collect();
            TimeCourse::from_logs(agent, &ok)
        })
        .collect();
    Ok(PerturbationResult {
        perturbation,
        sweep,
        time_courses,
        logs,
    })
}

/// Median Δ of a uniform random policy under `base`, the chance baseline.
pub fn random_baseline_delta(base: &RunConfig, seeds: usize, workers: Workers) -> Result<f64> {
    let mut cfg = base.clone();
    cfg.agent = AgentKind::Random;
    let tasks = replicate(&cfg, 0.0, &[AgentKind::Random], seeds, |_| {});
    let (sweep, _) = run_tasks("random", tasks, workers);
    if let Some(f) = sweep.failures.first() {
        return Err(Error::Config(format!("random baseline failed: {}", f.error)));
    }
    Ok(sweep
        .median(0.0, AgentKind::Random, Metric::Delta)
        .expect("at least one seed"))
}
