//! Run configuration and its plain-text `key = value` file format.
//!
//! The file format is a flat TOML subset: one `key = value` per line, `#`
//! comments, numbers, bare or quoted strings, and (nested) bracketed arrays.
//! Keys not present in the file keep the value of the selected preset.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::agents::{AgentSettings, DriveParams};
use crate::env::{observation_len, ResourceGrid, ResourceKernel};
use crate::error::{Error, Result};
use crate::qlearn::EpsilonSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Full-size networks and step budget.
    Paper,
    /// Reduced networks, batch and horizon with the same structural ratios.
    Desk,
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset `{other}` (expected paper or desk)")),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentKind {
    Monolithic,
    Modular,
    /// Uniform random actions without learning.
    Random,
}

impl FromStr for AgentKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mono" | "monolithic" | "dqn" => Ok(AgentKind::Monolithic),
            "modular" | "gmq" => Ok(AgentKind::Modular),
            "random" => Ok(AgentKind::Random),
            other => Err(format!("unknown agent `{other}` (expected mono, modular or random)")),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Monolithic => "mono",
            AgentKind::Modular => "modular",
            AgentKind::Random => "random",
        })
    }
}

/// Clamp one stat to a fixed value from step `time` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub time: usize,
    pub stat: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub n_resources: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub drive_n: u32,
    pub drive_m: u32,
    pub setpoints: Vec<f64>,
    pub initial_stats: Vec<f64>,
    pub kernels: Vec<ResourceKernel>,
    pub depletion: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub target_period: usize,
    pub eps_initial: f64,
    pub eps_final: f64,
    pub anneal_steps: usize,
    pub hidden_mono: Vec<usize>,
    pub hidden_modular: Vec<usize>,
    /// Rescale network inputs: resource cells by the grid maximum, stats
    /// by the largest set-point.
    pub normalize_inputs: bool,
    pub total_steps: usize,
    pub agent: AgentKind,
    pub seed: u64,
    pub perturbation: Option<Perturbation>,
    /// Window `[delta_t1, delta_t2)` of the homeostatic deviation metric.
    pub delta_t1: usize,
    pub delta_t2: usize,
    /// Trailing window of the final stat mean.
    pub final_window: usize,
    /// Every `log_stride`-th step is written to time-course CSVs.
    pub log_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl RunConfig {
    /// Full-scale settings: four resources at the grid corners, 30k steps,
    /// 40-1024-1024-4 monolithic and 4 x 40-500-500-4 modular networks.
    pub fn paper() -> Self {
        let corners = [(0.0, 0.0), (0.0, 10.0), (10.0, 0.0), (10.0, 10.0)];
        Self {
            preset: Preset::Paper,
            n_resources: 4,
            grid_width: 11,
            grid_height: 11,
            drive_n: 4,
            drive_m: 2,
            setpoints: vec![5.0; 4],
            initial_stats: vec![0.5; 4],
            kernels: corners
                .iter()
                .map(|&(x, y)| ResourceKernel::isotropic(x, y, 1.0))
                .collect(),
            depletion: 0.004,
            buffer_capacity: 30_000,
            batch_size: 512,
            gamma: 0.5,
            learning_rate: 1e-3,
            target_period: 200,
            eps_initial: 1.0,
            eps_final: 0.01,
            anneal_steps: 5_000,
            hidden_mono: vec![1024, 1024],
            hidden_modular: vec![500, 500],
            normalize_inputs: true,
            total_steps: 30_000,
            agent: AgentKind::Monolithic,
            seed: 0,
            perturbation: None,
            delta_t1: 15_000,
            delta_t2: 30_000,
            final_window: 1_000,
            log_stride: 1,
        }
    }

    /// Laptop-scale settings keeping buffer = horizon, target period and γ.
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            buffer_capacity: 12_000,
            batch_size: 64,
            hidden_mono: vec![128, 128],
            hidden_modular: vec![64, 64],
            total_steps: 12_000,
            delta_t1: 6_000,
            delta_t2: 12_000,
            ..Self::paper()
        }
    }

    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Step at which a mid-run perturbation is applied for this preset.
    pub fn midpoint(&self) -> usize {
        self.total_steps / 2
    }

    pub fn drive_params(&self) -> DriveParams {
        DriveParams::new(self.drive_n, self.drive_m, self.setpoints.clone())
    }

    pub fn schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule::new(self.eps_initial, self.eps_final, self.anneal_steps)
    }

    pub fn build_grid(&self) -> Result<ResourceGrid> {
        ResourceGrid::build(&self.kernels, self.grid_width, self.grid_height)
    }

    pub fn agent_settings(&self, kind: AgentKind) -> AgentSettings {
        AgentSettings {
            obs_len: observation_len(self.n_resources),
            hidden: match kind {
                AgentKind::Modular => self.hidden_modular.clone(),
                _ => self.hidden_mono.clone(),
            },
            learning_rate: self.learning_rate,
            gamma: self.gamma,
            batch_size: self.batch_size,
            buffer_capacity: self.buffer_capacity,
            target_period: self.target_period,
            schedule: self.schedule(),
        }
    }

    /// Per-feature multipliers applied to observations before they reach a
    /// network: all ones unless `normalize_inputs` is set.
    pub fn input_scales(&self, grid: &ResourceGrid) -> Vec<f64> {
        let n = self.n_resources;
        let mut scales = vec![1.0; observation_len(n)];
        if self.normalize_inputs {
            let peak = (0..n)
                .flat_map(|l| grid.layer(l).iter().copied())
                .fold(0.0f64, f64::max);
            let top = self.setpoints.iter().copied().fold(0.0f64, |a, b| a.max(b.abs()));
            let (window, stats) = scales.split_at_mut(9 * n);
            if peak > 0.0 {
                window.fill(1.0 / peak);
            }
            if top > 0.0 {
                stats.fill(1.0 / top);
            }
        }
        scales
    }

    /// Sets every set-point to `value`.
    pub fn with_setpoint(mut self, value: f64) -> Self {
        self.setpoints = vec![value; self.n_resources];
        self
    }

    /// Checks every invariant, reporting the offending key.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let n = self.n_resources;
        let fail = |key: &'static str, msg: String| Err((key, msg));
        if n == 0 {
            return fail("n_resources", "must be at least 1".into());
        }
        if self.setpoints.len() != n {
            return fail("setpoints", format!("expected {n} values, got {}", self.setpoints.len()));
        }
        if self.setpoints.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return fail("setpoints", "set-points must be finite and strictly positive".into());
        }
        if self.initial_stats.len() != n {
            return fail(
                "initial_stats",
                format!("expected {n} values, got {}", self.initial_stats.len()),
            );
        }
        if self.initial_stats.iter().any(|s| !s.is_finite()) {
            return fail("initial_stats", "initial stats must be finite".into());
        }
        if self.kernels.len() != n {
            return fail("kernel_means", format!("expected {n} kernels, got {}", self.kernels.len()));
        }
        if let Some(i) = self.kernels.iter().position(|k| !k.is_positive_definite()) {
            return fail(
                "kernel_covariances",
                format!("covariance of kernel {i} is not symmetric positive definite"),
            );
        }
        if self.grid_width < 3 {
            return fail("grid_width", "must be at least 3".into());
        }
        if self.grid_height < 3 {
            return fail("grid_height", "must be at least 3".into());
        }
        if self.drive_n < 1 {
            return fail("drive_n", "must be at least 1".into());
        }
        if self.drive_m < 1 {
            return fail("drive_m", "must be at least 1".into());
        }
        if !(self.depletion.is_finite() && self.depletion >= 0.0) {
            return fail("depletion", "must be finite and nonnegative".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive".into());
        }
        if self.buffer_capacity < self.batch_size {
            return fail("buffer_capacity", "must be at least batch_size".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail("gamma", format!("{} is outside [0, 1)", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate", "must be positive".into());
        }
        if self.target_period == 0 {
            return fail("target_period", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.eps_initial) {
            return fail("eps_initial", "must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.eps_final) {
            return fail("eps_final", "must lie in [0, 1]".into());
        }
        if self.anneal_steps < 1 {
            return fail("anneal_steps", "must be at least 1".into());
        }
        if self.total_steps < self.anneal_steps {
            return fail("total_steps", "must be at least anneal_steps".into());
        }
        if self.hidden_mono.is_empty() || self.hidden_mono.contains(&0) {
            return fail("hidden_mono", "hidden sizes must be positive".into());
        }
        if self.hidden_modular.is_empty() || self.hidden_modular.contains(&0) {
            return fail("hidden_modular", "hidden sizes must be positive".into());
        }
        if let Some(p) = self.perturbation {
            if p.time >= self.total_steps {
                return fail("perturb_time", "must be before total_steps".into());
            }
            if p.stat >= n {
                return fail("perturb_stat", format!("stat index must be below {n}"));
            }
            if !p.value.is_finite() {
                return fail("perturb_value", "must be finite".into());
            }
        }
        if self.delta_t1 >= self.delta_t2 {
            return fail("delta_t1", "must be below delta_t2".into());
        }
        if self.delta_t2 > self.total_steps {
            return fail("delta_t2", "must not exceed total_steps".into());
        }
        if self.final_window == 0 || self.final_window > self.total_steps {
            return fail("final_window", "must lie in [1, total_steps]".into());
        }
        if self.log_stride == 0 {
            return fail("log_stride", "must be positive".into());
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        self.validate()
            .map_err(|(key, msg)| Error::Config(format!("{key}: {msg}")))
    }

    /// Parses a config document. Unknown keys are rejected.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, String, Value)> = Vec::new();
        let mut lines: HashMap<String, usize> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = strip_comment(raw).trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigKey {
                key: content.to_string(),
                line,
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::ConfigKey {
                    key,
                    line,
                    message: "unknown key".into(),
                });
            }
            if lines.contains_key(&key) {
                return Err(Error::ConfigKey {
                    key,
                    line,
                    message: "duplicate key".into(),
                });
            }
            let value = Value::parse(value.trim()).map_err(|message| Error::ConfigKey {
                key: key.clone(),
                line,
                message,
            })?;
            lines.insert(key.clone(), line);
            entries.push((line, key, value));
        }

        let mut cfg = RunConfig::paper();
        if let Some((line, key, v)) = entries.iter().find(|(_, k, _)| k == "preset") {
            let preset = v.string().and_then(|s| s.parse()).map_err(|message| Error::ConfigKey {
                key: key.clone(),
                line: *line,
                message,
            })?;
            cfg = RunConfig::for_preset(preset);
        }
        let mut perturb = (None, None, None);
        let mut means: Option<Vec<(f64, f64)>> = None;
        let mut covs: Option<Vec<[f64; 4]>> = None;
        for (line, key, v) in &entries {
            let wrap = |message: String| Error::ConfigKey {
                key: key.clone(),
                line: *line,
                message,
            };
            match key.as_str() {
                "preset" => {}
                "n_resources" => cfg.n_resources = v.usize().map_err(wrap)?,
                "grid_width" => cfg.grid_width = v.usize().map_err(wrap)?,
                "grid_height" => cfg.grid_height = v.usize().map_err(wrap)?,
                "drive_n" => cfg.drive_n = v.u32().map_err(wrap)?,
                "drive_m" => cfg.drive_m = v.u32().map_err(wrap)?,
                "setpoints" => cfg.setpoints = v.f64_list().map_err(wrap)?,
                "initial_stats" => cfg.initial_stats = v.f64_list().map_err(wrap)?,
                "kernel_means" => {
                    let rows = v.f64_rows(2).map_err(wrap)?;
                    means = Some(rows.iter().map(|r| (r[0], r[1])).collect());
                }
                "kernel_covariances" => {
                    let rows = v.f64_rows(4).map_err(wrap)?;
                    covs = Some(rows.iter().map(|r| [r[0], r[1], r[2], r[3]]).collect());
                }
                "depletion" => cfg.depletion = v.f64().map_err(wrap)?,
                "buffer_capacity" => cfg.buffer_capacity = v.usize().map_err(wrap)?,
                "batch_size" => cfg.batch_size = v.usize().map_err(wrap)?,
                "gamma" => cfg.gamma = v.f64().map_err(wrap)?,
                "learning_rate" => cfg.learning_rate = v.f64().map_err(wrap)?,
                "target_period" => cfg.target_period = v.usize().map_err(wrap)?,
                "eps_initial" => cfg.eps_initial = v.f64().map_err(wrap)?,
                "eps_final" => cfg.eps_final = v.f64().map_err(wrap)?,
                "anneal_steps" => cfg.anneal_steps = v.usize().map_err(wrap)?,
                "hidden_mono" => cfg.hidden_mono = v.usize_list().map_err(wrap)?,
                "hidden_modular" => cfg.hidden_modular = v.usize_list().map_err(wrap)?,
                "normalize_inputs" => cfg.normalize_inputs = v.number("boolean").map_err(wrap)?,
                "total_steps" => cfg.total_steps = v.usize().map_err(wrap)?,
                "agent" => cfg.agent = v.string().and_then(|s| s.parse()).map_err(wrap)?,
                "seed" => cfg.seed = v.u64().map_err(wrap)?,
                "perturb_time" => perturb.0 = Some(v.usize().map_err(wrap)?),
                "perturb_stat" => perturb.1 = Some(v.usize().map_err(wrap)?),
                "perturb_value" => perturb.2 = Some(v.f64().map_err(wrap)?),
                "delta_t1" => cfg.delta_t1 = v.usize().map_err(wrap)?,
                "delta_t2" => cfg.delta_t2 = v.usize().map_err(wrap)?,
                "final_window" => cfg.final_window = v.usize().map_err(wrap)?,
                "log_stride" => cfg.log_stride = v.usize().map_err(wrap)?,
                _ => unreachable!("key list and match arms disagree"),
            }
        }

        match (means, covs) {
            (None, None) => {}
            (m, c) => {
                let means = m.unwrap_or_else(|| cfg.kernels.iter().map(|k| (k.mean_x, k.mean_y)).collect());
                let covs = c.unwrap_or_else(|| {
                    let shared = cfg.kernels.first().map(|k| k.covariance).unwrap_or([1.0, 0.0, 0.0, 1.0]);
                    vec![shared; means.len()]
                });
                if means.len() != covs.len() {
                    let key = "kernel_covariances";
                    return Err(Error::ConfigKey {
                        key: key.into(),
                        line: lines.get(key).copied().unwrap_or(0),
                        message: format!("{} covariances for {} kernel means", covs.len(), means.len()),
                    });
                }
                cfg.kernels = means
                    .iter()
                    .zip(&covs)
                    .map(|(&(x, y), &c)| ResourceKernel {
                        mean_x: x,
                        mean_y: y,
                        covariance: c,
                    })
                    .collect();
            }
        }

        cfg.perturbation = match perturb {
            (None, None, None) => None,
            (Some(time), Some(stat), Some(value)) => Some(Perturbation { time, stat, value }),
            _ => {
                let key = ["perturb_time", "perturb_stat", "perturb_value"]
                    .into_iter()
                    .find(|k| lines.contains_key(*k))
                    .unwrap();
                return Err(Error::ConfigKey {
                    key: key.into(),
                    line: lines[key],
                    message: "perturb_time, perturb_stat and perturb_value must be given together".into(),
                });
            }
        };

        cfg.validate().map_err(|(key, message)| Error::ConfigKey {
            key: key.into(),
            line: lines.get(key).copied().unwrap_or(0),
            message,
        })?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Serializes every field; [`parse_str`](Self::parse_str) reads it back unchanged.
    pub fn to_config_string(&self) -> String {
        fn list<T: fmt::Display>(v: &[T]) -> String {
            let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            format!("[{}]", items.join(", "))
        }
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("preset", format!("\"{}\"", self.preset));
        kv("n_resources", self.n_resources.to_string());
        kv("grid_width", self.grid_width.to_string());
        kv("grid_height", self.grid_height.to_string());
        kv("drive_n", self.drive_n.to_string());
        kv("drive_m", self.drive_m.to_string());
        kv("setpoints", list(&self.setpoints));
        kv("initial_stats", list(&self.initial_stats));
        let means: Vec<String> = self
            .kernels
            .iter()
            .map(|k| list(&[k.mean_x, k.mean_y]))
            .collect();
        kv("kernel_means", format!("[{}]", means.join(", ")));
        let covs: Vec<String> = self.kernels.iter().map(|k| list(&k.covariance)).collect();
        kv("kernel_covariances", format!("[{}]", covs.join(", ")));
        kv("depletion", self.depletion.to_string());
        kv("buffer_capacity", self.buffer_capacity.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("gamma", self.gamma.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("target_period", self.target_period.to_string());
        kv("eps_initial", self.eps_initial.to_string());
        kv("eps_final", self.eps_final.to_string());
        kv("anneal_steps", self.anneal_steps.to_string());
        kv("hidden_mono", list(&self.hidden_mono));
        kv("hidden_modular", list(&self.hidden_modular));
        kv("normalize_inputs", self.normalize_inputs.to_string());
        kv("total_steps", self.total_steps.to_string());
        kv("agent", format!("\"{}\"", self.agent));
        kv("seed", self.seed.to_string());
        if let Some(p) = self.perturbation {
            kv("perturb_time", p.time.to_string());
            kv("perturb_stat", p.stat.to_string());
            kv("perturb_value", p.value.to_string());
        }
        kv("delta_t1", self.delta_t1.to_string());
        kv("delta_t2", self.delta_t2.to_string());
        kv("final_window", self.final_window.to_string());
        kv("log_stride", self.log_stride.to_string());
        s
    }
}

const KEYS: &[&str] = &[
    "preset",
    "n_resources",
    "grid_width",
    "grid_height",
    "drive_n",
    "drive_m",
    "setpoints",
    "initial_stats",
    "kernel_means",
    "kernel_covariances",
    "depletion",
    "buffer_capacity",
    "batch_size",
    "gamma",
    "learning_rate",
    "target_period",
    "eps_initial",
    "eps_final",
    "anneal_steps",
    "hidden_mono",
    "hidden_modular",
    "normalize_inputs",
    "total_steps",
    "agent",
    "seed",
    "perturb_time",
    "perturb_stat",
    "perturb_value",
    "delta_t1",
    "delta_t2",
    "final_window",
    "log_stride",
];

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Atom(String),
    Array(Vec<Value>),
}

impl Value {
    fn parse(text: &str) -> std::result::Result<Value, String> {
        let chars: Vec<char> = text.chars().collect();
        let mut pos = 0;
        let v = Self::parse_at(&chars, &mut pos)?;
        skip_ws(&chars, &mut pos);
        if pos != chars.len() {
            return Err(format!("unexpected trailing input `{}`", chars[pos..].iter().collect::<String>()));
        }
        Ok(v)
    }

    fn parse_at(chars: &[char], pos: &mut usize) -> std::result::Result<Value, String> {
        skip_ws(chars, pos);
        match chars.get(*pos) {
            None => Err("missing value".into()),
            Some('[') => {
                *pos += 1;
                let mut items = Vec::new();
                loop {
                    skip_ws(chars, pos);
                    if chars.get(*pos) == Some(&']') {
                        *pos += 1;
                        return Ok(Value::Array(items));
                    }
                    items.push(Self::parse_at(chars, pos)?);
                    skip_ws(chars, pos);
                    match chars.get(*pos) {
                        Some(',') => *pos += 1,
                        Some(']') => {}
                        _ => return Err("expected `,` or `]` in array".into()),
                    }
                }
            }
            Some('"') => {
                *pos += 1;
                let start = *pos;
                while *pos < chars.len() && chars[*pos] != '"' {
                    *pos += 1;
                }
                if *pos == chars.len() {
                    return Err("unterminated string".into());
                }
                let s: String = chars[start..*pos].iter().collect();
                *pos += 1;
                Ok(Value::Atom(s))
            }
            Some(_) => {
                let start = *pos;
                while *pos < chars.len() && !matches!(chars[*pos], ',' | ']' | '[') && !chars[*pos].is_whitespace() {
                    *pos += 1;
                }
                Ok(Value::Atom(chars[start..*pos].iter().collect()))
            }
        }
    }

    fn string(&self) -> std::result::Result<String, String> {
        match self {
            Value::Atom(s) => Ok(s.clone()),
            Value::Array(_) => Err("expected a single value, found an array".into()),
        }
    }

    fn number<T: FromStr>(&self, what: &str) -> std::result::Result<T, String> {
        let s = self.string()?;
        s.replace('_', "")
            .parse()
            .map_err(|_| format!("`{s}` is not a valid {what}"))
    }

    fn f64(&self) -> std::result::Result<f64, String> {
        let v: f64 = self.number("number")?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("value must be finite".into())
        }
    }

    fn usize(&self) -> std::result::Result<usize, String> {
        self.number("nonnegative integer")
    }

    fn u32(&self) -> std::result::Result<u32, String> {
        self.number("nonnegative integer")
    }

    fn u64(&self) -> std::result::Result<u64, String> {
        self.number("nonnegative integer")
    }

    fn items(&self) -> std::result::Result<&[Value], String> {
        match self {
            Value::Array(items) => Ok(items),
            Value::Atom(s) => Err(format!("expected an array, found `{s}`")),
        }
    }

    fn f64_list(&self) -> std::result::Result<Vec<f64>, String> {
        self.items()?.iter().map(Value::f64).collect()
    }

    fn usize_list(&self) -> std::result::Result<Vec<usize>, String> {
        self.items()?.iter().map(Value::usize).collect()
    }

    fn f64_rows(&self, width: usize) -> std::result::Result<Vec<Vec<f64>>, String> {
        self.items()?
            .iter()
            .map(|row| {
                let r = row.f64_list()?;
                if r.len() == width {
                    Ok(r)
                } else {
                    Err(format!("each entry needs {width} numbers, got {}", r.len()))
                }
            })
            .collect()
    }
}

fn skip_ws(chars: &[char], pos: &mut usize) {
    while *pos < chars.len() && chars[*pos].is_whitespace() {
        *pos += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_table_defaults() {
        let cfg = RunConfig::parse_str("").unwrap();
        assert_eq!(cfg, RunConfig::paper());
        assert_eq!(cfg.gamma, 0.5);
        assert_eq!(cfg.learning_rate, 1e-3);
        assert_eq!(cfg.batch_size, 512);
        assert_eq!(cfg.buffer_capacity, 30_000);
        assert_eq!(cfg.target_period, 200);
        assert_eq!((cfg.eps_initial, cfg.eps_final), (1.0, 0.01));
        assert_eq!((cfg.drive_n, cfg.drive_m), (4, 2));
        assert_eq!(cfg.setpoints, vec![5.0; 4]);
        assert_eq!(cfg.initial_stats, vec![0.5; 4]);
        assert_eq!(cfg.depletion, 0.004);
        assert_eq!(cfg.total_steps, 30_000);
        assert_eq!(cfg.hidden_mono, vec![1024, 1024]);
        assert_eq!(cfg.hidden_modular, vec![500, 500]);
        let means: Vec<(f64, f64)> = cfg.kernels.iter().map(|k| (k.mean_x, k.mean_y)).collect();
        assert_eq!(means, vec![(0.0, 0.0), (0.0, 10.0), (10.0, 0.0), (10.0, 10.0)]);
        assert!(cfg.kernels.iter().all(|k| k.covariance == [1.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn gamma_out_of_range_is_rejected() {
        let err = RunConfig::parse_str("# sweep\n\ngamma = 1.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::ConfigKey { ref key, line: 3, .. } if key == "gamma"), "{msg}");
        assert!(msg.contains("[0, 1)"), "{msg}");
    }

    #[test]
    fn unknown_and_malformed_keys() {
        let err = RunConfig::parse_str("seed = 3\nlearning_rat = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { ref key, line: 2, .. } if key == "learning_rat"));
        let err = RunConfig::parse_str("batch_size = many").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { ref key, line: 1, .. } if key == "batch_size"));
        assert!(RunConfig::parse_str("just words").is_err());
        assert!(RunConfig::parse_str("seed = 1\nseed = 2").is_err());
        let err = RunConfig::parse_str("perturb_time = 10").unwrap_err();
        assert!(err.to_string().contains("together"));
    }

    #[test]
    fn preset_then_overrides() {
        let cfg = RunConfig::parse_str("preset = \"desk\"\nbatch_size = 32 # small\nhidden_modular = [16, 8]").unwrap();
        assert_eq!(cfg.total_steps, 12_000);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.hidden_modular, vec![16, 8]);
        assert_eq!(cfg.hidden_mono, vec![128, 128]);
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::desk();
        cfg.seed = 42;
        cfg.gamma = 0.3;
        cfg.learning_rate = 3.7e-4;
        cfg.perturbation = Some(Perturbation {
            time: 6000,
            stat: 3,
            value: 20.0,
        });
        cfg.kernels[1].covariance = [2.0, 0.25, 0.25, 0.5];
        cfg.agent = AgentKind::Modular;
        let text = cfg.to_config_string();
        assert_eq!(RunConfig::parse_str(&text).unwrap(), cfg);
        assert_eq!(RunConfig::parse_str(&RunConfig::paper().to_config_string()).unwrap(), RunConfig::paper());
    }

    #[test]
    fn invariant_violations_name_the_key() {
        let err = RunConfig::parse_str("anneal_steps = 40000").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { ref key, .. } if key == "total_steps"));
        let err = RunConfig::parse_str("setpoints = [5, 5, 5]").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { ref key, line: 1, .. } if key == "setpoints"));
        let err = RunConfig::parse_str("kernel_covariances = [[1,0,0,1],[1,0,0,1],[1,0,0,1],[1,3,3,1]]").unwrap_err();
        assert!(matches!(err, Error::ConfigKey { ref key, .. } if key == "kernel_covariances"));
    }
}
