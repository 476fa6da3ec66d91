//! Command-line front end.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{AgentKind, Preset, RunConfig};
use crate::error::{Error, Result};
use crate::harness::{
    perturbation_experiment, run_many, score, sweep_exploration, sweep_gamma, sweep_setpoints, SweepEntry,
    SweepFailure, SweepResult, Workers,
};
use crate::nn::{gradient_check, parameter_count};
use crate::plot;
use crate::report::{self, MeanSdCourse};

#[derive(Debug, Parser)]
#[command(name = "homeostat", version, about = "Homeostatic Q-learning experiments on a resource grid world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train agents for one episode each and write their stat logs.
    Run(Common),
    /// Final stat mean over a range of common set-points.
    SweepSetpoint {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9")]
        setpoints: Vec<f64>,
    },
    /// Δ over a range of discount factors.
    SweepGamma {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,0.9,0.99")]
        gammas: Vec<f64>,
    },
    /// Δ over a range of ε annealing lengths.
    SweepExplore {
        #[command(flatten)]
        common: Common,
        /// Annealing lengths; defaults to 1, 400, 2000, 4000 and 5000 capped at the run length.
        #[arg(long, value_delimiter = ',')]
        anneal: Vec<usize>,
    },
    /// Clamp the last stat to 20 halfway through and compare both agents.
    Perturb(Common),
    /// Redraw figures from the CSV files in a results directory.
    Plot {
        /// Directory holding sweep and time-course CSVs.
        #[arg(long)]
        input: PathBuf,
        /// Where to write SVGs; defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print parameter counts and run the gradient check.
    Verify {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Paper,
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentArg {
    Mono,
    Modular,
    Both,
    Random,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Key-value config file; keys not given take the paper-scale defaults.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in parameter set.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// First seed; replicates use consecutive seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeds per setting.
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Episode length; the Δ window becomes the second half.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum)]
    pub agent: Option<AgentArg>,
    /// Worker threads for independent runs, 0 for all cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Write every n-th step to time-course files.
    #[arg(long)]
    pub stride: Option<usize>,
}

impl Common {
    fn base_config(&self) -> Result<RunConfig> {
        let mut config = match (&self.config, self.preset) {
            (Some(path), _) => RunConfig::from_file(path)?,
            (None, Some(PresetArg::Desk)) => RunConfig::for_preset(Preset::Desk),
            (None, _) => RunConfig::for_preset(Preset::Paper),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(steps) = self.steps {
            config.total_steps = steps;
            config.delta_t1 = steps / 2;
            config.delta_t2 = steps;
            config.anneal_steps = config.anneal_steps.min(steps).max(1);
            config.final_window = config.final_window.min(steps);
            config.buffer_capacity = config.buffer_capacity.min(steps.max(1));
            if let Some(p) = config.perturbation.as_mut() {
                p.time = p.time.min(steps / 2);
            }
        }
        if let Some(stride) = self.stride {
            config.log_stride = stride;
        }
        if self.seeds == 0 {
            return Err(Error::Config("--seeds must be at least 1".into()));
        }
        config.check()?;
        Ok(config)
    }

    fn agents(&self, default: &[AgentKind]) -> Vec<AgentKind> {
        match self.agent {
            None => default.to_vec(),
            Some(AgentArg::Mono) => vec![AgentKind::Monolithic],
            Some(AgentArg::Modular) => vec![AgentKind::Modular],
            Some(AgentArg::Random) => vec![AgentKind::Random],
            Some(AgentArg::Both) => vec![AgentKind::Monolithic, AgentKind::Modular],
        }
    }

    fn workers(&self) -> Workers {
        Workers(self.workers)
    }
}

/// Parses `args` (program name first), executes and returns the exit code:
/// 0 when every requested run finished, 1 on divergence or failed runs,
/// 2 on usage or input errors.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(Outcome { failures }) if failures.is_empty() => 0,
        Ok(Outcome { failures }) => {
            for f in &failures {
                eprintln!("run failed: agent={} setting={} seed={}: {}", f.agent, f.setting, f.seed, f.error);
            }
            1
        }
        Err(e @ Error::Divergence { .. }) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

struct Outcome {
    failures: Vec<SweepFailure>,
}

impl Outcome {
    fn ok() -> Self {
        Self { failures: Vec::new() }
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_svg(dir: &Path, name: &str, svg: &str) -> Result<()> {
    fs::write(dir.join(name), svg)?;
    Ok(())
}

fn execute(command: Command) -> Result<Outcome> {
    match command {
        Command::Run(common) => run(&common),
        Command::SweepSetpoint { common, setpoints } => {
            let base = common.base_config()?;
            let mut result = SweepResult::default();
            for agent in common.agents(&[base.agent]) {
                let cfg = RunConfig { agent, ..base.clone() };
                let part = sweep_setpoints(&cfg, &setpoints, common.seeds, common.workers())?;
                merge(&mut result, part);
            }
            finish_sweep(&common.out, "sweep_setpoint", &result, plot::setpoint_svg)
        }
        Command::SweepGamma { common, gammas } => {
            let base = common.base_config()?;
            let mut result = SweepResult::default();
            for agent in common.agents(&[base.agent]) {
                let cfg = RunConfig { agent, ..base.clone() };
                let part = sweep_gamma(&cfg, &gammas, common.seeds, common.workers())?;
                merge(&mut result, part);
            }
            finish_sweep(&common.out, "sweep_gamma", &result, |e| plot::boxplot_svg(e, "discount factor γ"))
        }
        Command::SweepExplore { common, anneal } => {
            let base = common.base_config()?;
            let ks = if anneal.is_empty() {
                let mut ks: Vec<usize> = [1, 400, 2000, 4000, 5000]
                    .iter()
                    .map(|&k: &usize| k.min(base.total_steps).max(1))
                    .collect();
                ks.dedup();
                ks
            } else {
                anneal
            };
            let mut result = SweepResult::default();
            let agents = common.agents(&[AgentKind::Monolithic, AgentKind::Modular]);
            for agent in agents {
                let cfg = RunConfig { agent, ..base.clone() };
                let part = sweep_exploration(&cfg, &ks, common.seeds, false, common.workers())?;
                merge(&mut result, part);
            }
            finish_sweep(&common.out, "sweep_explore", &result, |e| {
                plot::boxplot_svg(e, "ε annealing steps")
            })
        }
        Command::Perturb(common) => perturb(&common),
        Command::Plot { input, out } => {
            replot(&input, out.as_deref().unwrap_or(&input))?;
            Ok(Outcome::ok())
        }
        Command::Verify { trials, seed } => verify(trials, seed),
    }
}

fn merge(into: &mut SweepResult, part: SweepResult) {
    into.entries.extend(part.entries);
    into.failures.extend(part.failures);
}

fn finish_sweep(
    out: &Path,
    stem: &str,
    result: &SweepResult,
    draw: impl Fn(&[SweepEntry]) -> Result<String>,
) -> Result<Outcome> {
    fs::create_dir_all(out)?;
    report::write_sweep(create(out, &format!("{stem}.csv"))?, result)?;
    if !result.entries.is_empty() {
        write_svg(out, &format!("{stem}.svg"), &draw(&result.entries)?)?;
    }
    print_medians(result);
    Ok(Outcome {
        failures: result.failures.clone(),
    })
}

fn print_medians(result: &SweepResult) {
    use crate::harness::Metric;
    for agent in result.agents() {
        for s in result.settings() {
            if let (Some(d), Some(f)) = (
                result.median(s, agent, Metric::Delta),
                result.median(s, agent, Metric::FinalStatMean),
            ) {
                println!("{agent:>8} setting={s:<8} median delta={d:.4} median final_stat_mean={f:.4}");
            }
        }
    }
}

fn run(common: &Common) -> Result<Outcome> {
    let base = common.base_config()?;
    let agents = common.agents(&[base.agent]);
    let mut configs = Vec::new();
    for &agent in &agents {
        for s in 0..common.seeds {
            configs.push(RunConfig {
                agent,
                seed: base.seed + s as u64,
                ..base.clone()
            });
        }
    }
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join("config.toml"), base.to_config_string())?;
    let setting = base.setpoints.iter().sum::<f64>() / base.setpoints.len() as f64;
    let mut result = SweepResult::default();
    for (cfg, log) in configs.iter().zip(run_many(&configs, common.workers())) {
        match log.and_then(|log| score(cfg, &log).map(|s| (s, log))) {
            Ok(((delta, fsm), log)) => {
                let name = format!("run_{}_seed{}.csv", cfg.agent, cfg.seed);
                report::write_time_course(create(&common.out, &name)?, &log, cfg.log_stride)?;
                result.entries.push(SweepEntry {
                    experiment: "run".into(),
                    setting,
                    agent: cfg.agent,
                    seed: cfg.seed,
                    delta,
                    final_stat_mean: fsm,
                });
            }
            Err(e) => result.failures.push(SweepFailure {
                setting,
                agent: cfg.agent,
                seed: cfg.seed,
                error: e.to_string(),
            }),
        }
    }
    report::write_sweep(create(&common.out, "summary.csv")?, &result)?;
    for e in &result.entries {
        println!(
            "{:>8} seed={} delta={:.4} final_stat_mean={:.4}",
            e.agent, e.seed, e.delta, e.final_stat_mean
        );
    }
    Ok(Outcome {
        failures: result.failures,
    })
}

const PERTURB_META_HEADER: [&str; 4] = ["clamp_time", "clamp_stat", "clamp_value", "setpoint"];

fn perturb(common: &Common) -> Result<Outcome> {
    let base = common.base_config()?;
    let result = perturbation_experiment(&base, common.seeds, common.workers())?;
    let out = &common.out;
    fs::create_dir_all(out)?;
    report::write_sweep(create(out, "perturb.csv")?, &result.sweep)?;
    let p = result.perturbation;
    let mut meta = csv::Writer::from_writer(create(out, "perturb_meta.csv")?);
    meta.write_record(PERTURB_META_HEADER)?;
    meta.write_record([
        p.time.to_string(),
        (p.stat + 1).to_string(),
        report::format_float(p.value),
        report::format_float(base.setpoints[0]),
    ])?;
    meta.flush()?;
    let courses: Vec<MeanSdCourse> = result
        .time_courses
        .iter()
        .map(|tc| MeanSdCourse::from_time_course(tc, base.log_stride))
        .collect();
    for course in &courses {
        report::write_mean_sd(create(out, &format!("perturb_timecourse_{}.csv", course.agent))?, course)?;
    }
    if !courses.is_empty() {
        write_svg(out, "perturb.svg", &plot::time_course_svg(&courses, base.setpoints[0], Some(p.time))?)?;
    }
    let mut paired = 0;
    let mut wins = 0;
    for e in result.sweep.entries.iter().filter(|e| e.agent == AgentKind::Modular) {
        if let Some(m) = result
            .sweep
            .entries
            .iter()
            .find(|m| m.agent == AgentKind::Monolithic && m.seed == e.seed)
        {
            paired += 1;
            wins += usize::from(e.delta < m.delta);
        }
    }
    print_medians(&result.sweep);
    println!("modular below monolithic post-clamp delta in {wins} of {paired} paired seeds");
    Ok(Outcome {
        failures: result.sweep.failures,
    })
}

fn read_if_exists(path: &Path) -> Result<Option<Vec<SweepEntry>>> {
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(report::read_sweep(File::open(path)?)?))
}

/// Redraws every figure whose CSV is present in `input`.
pub fn replot(input: &Path, out: &Path) -> Result<usize> {
    fs::create_dir_all(out)?;
    let mut drawn = 0;
    if let Some(e) = read_if_exists(&input.join("sweep_setpoint.csv"))? {
        write_svg(out, "sweep_setpoint.svg", &plot::setpoint_svg(&e)?)?;
        drawn += 1;
    }
    if let Some(e) = read_if_exists(&input.join("sweep_gamma.csv"))? {
        write_svg(out, "sweep_gamma.svg", &plot::boxplot_svg(&e, "discount factor γ")?)?;
        drawn += 1;
    }
    if let Some(e) = read_if_exists(&input.join("sweep_explore.csv"))? {
        write_svg(out, "sweep_explore.svg", &plot::boxplot_svg(&e, "ε annealing steps")?)?;
        drawn += 1;
    }
    let meta_path = input.join("perturb_meta.csv");
    if meta_path.exists() {
        let mut reader = csv::Reader::from_reader(File::open(&meta_path)?);
        let record = reader
            .records()
            .next()
            .ok_or_else(|| Error::EmptyResults("perturb_meta.csv has no rows".into()))??;
        let bad = |what: &str| Error::Config(format!("perturb_meta.csv: bad {what}"));
        let clamp_time: usize = record[0].parse().map_err(|_| bad("clamp_time"))?;
        let setpoint: f64 = record[3].parse().map_err(|_| bad("setpoint"))?;
        let mut courses = Vec::new();
        for agent in [AgentKind::Monolithic, AgentKind::Modular] {
            let path = input.join(format!("perturb_timecourse_{agent}.csv"));
            if path.exists() {
                courses.push(report::read_mean_sd(File::open(path)?, agent)?);
            }
        }
        write_svg(out, "perturb.svg", &plot::time_course_svg(&courses, setpoint, Some(clamp_time))?)?;
        drawn += 1;
    }
    if drawn == 0 {
        return Err(Error::EmptyResults(format!(
            "no result CSVs found in {}",
            input.display()
        )));
    }
    Ok(drawn)
}

fn group_digits(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn verify(trials: usize, seed: u64) -> Result<Outcome> {
    let paper = RunConfig::paper();
    let mono = parameter_count(&paper.agent_settings(AgentKind::Monolithic).layer_sizes());
    let modular = paper.n_resources * parameter_count(&paper.agent_settings(AgentKind::Modular).layer_sizes());
    println!("monolithic parameters: {}", group_digits(mono));
    println!("modular parameters: {}", group_digits(modular));
    let check = gradient_check(trials, 1e-5, seed)?;
    println!(
        "gradient check: {} trials, {} parameters, max relative error {:.3e}",
        check.trials, check.parameters_checked, check.max_relative_error
    );
    if check.max_relative_error >= 1e-4 {
        return Err(Error::Config(format!(
            "gradient check failed: max relative error {:.3e}",
            check.max_relative_error
        )));
    }
    Ok(Outcome::ok())
}
