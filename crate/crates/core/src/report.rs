//! CSV output for runs and sweeps, and the readers the plotter uses.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::io::{Read, Write};

use crate::config::AgentKind;
use crate::error::{Error, Result};
use crate::harness::{RunLog, SweepEntry, SweepResult, TimeCourse};

pub const SWEEP_HEADER: [&str; 6] = ["experiment", "setting", "agent", "seed", "delta", "final_stat_mean"];

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_float(field: &str, line: u64, column: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: column `{column}` is not a number: {field:?}")))
}

pub fn write_sweep<W: Write>(w: W, result: &SweepResult) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_HEADER)?;
    for e in &result.entries {
        out.write_record([
            e.experiment.clone(),
            format_float(e.setting),
            e.agent.to_string(),
            e.seed.to_string(),
            format_float(e.delta),
            format_float(e.final_stat_mean),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sweep<R: Read>(r: R) -> Result<Vec<SweepEntry>> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers()?.clone();
    if header.iter().ne(SWEEP_HEADER) {
        return Err(Error::Config(format!(
            "unexpected sweep header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut entries = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i as u64 + 2;
        let agent: AgentKind = record[2]
            .parse()
            .map_err(|e: String| Error::Config(format!("line {line}: {e}")))?;
        let seed = record[3]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("line {line}: bad seed {:?}", &record[3])))?;
        entries.push(SweepEntry {
            experiment: record[0].to_string(),
            setting: parse_float(&record[1], line, "setting")?,
            agent,
            seed,
            delta: parse_float(&record[4], line, "delta")?,
            final_stat_mean: parse_float(&record[5], line, "final_stat_mean")?,
        });
    }
    Ok(entries)
}

/// Per-step log with header `t,h1..hN,epsilon,action`, keeping every
/// `stride`-th step.
pub fn write_time_course<W: Write>(w: W, log: &RunLog, stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=log.n_stats).map(|i| format!("h{i}")));
    header.push("epsilon".into());
    header.push("action".into());
    out.write_record(&header)?;
    for t in (0..log.len()).step_by(stride) {
        let mut row = vec![t.to_string()];
        row.extend(log.stats_at(t).iter().map(|&h| format_float(h)));
        row.push(format_float(log.epsilons[t]));
        row.push(log.actions[t].to_string());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Across-seed mean and standard deviation of each stat, as read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSdCourse {
    pub agent: AgentKind,
    pub n_stats: usize,
    pub t: Vec<usize>,
    /// `[row][i]` flattened.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl MeanSdCourse {
    pub fn from_time_course(tc: &TimeCourse, stride: usize) -> Self {
        let stride = stride.max(1);
        let n = tc.n_stats;
        let t: Vec<usize> = (0..tc.len()).step_by(stride).collect();
        let pick = |v: &[f64]| t.iter().flat_map(|&s| v[s * n..(s + 1) * n].to_vec()).collect();
        Self {
            agent: tc.agent,
            n_stats: n,
            mean: pick(&tc.mean),
            sd: pick(&tc.sd),
            t,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// Header `t,h1_mean..hN_mean,h1_sd..hN_sd`.
pub fn write_mean_sd<W: Write>(w: W, course: &MeanSdCourse) -> Result<()> {
    let n = course.n_stats;
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("h{i}_mean")));
    header.extend((1..=n).map(|i| format!("h{i}_sd")));
    out.write_record(&header)?;
    for (row, &t) in course.t.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(course.mean[row * n..(row + 1) * n].iter().map(|&x| format_float(x)));
        rec.extend(course.sd[row * n..(row + 1) * n].iter().map(|&x| format_float(x)));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_mean_sd<R: Read>(r: R, agent: AgentKind) -> Result<MeanSdCourse> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers()?.clone();
    if header.len() < 3 || (header.len() - 1) % 2 != 0 || &header[0] != "t" {
        return Err(Error::Config(format!(
            "unexpected time-course header {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let n = (header.len() - 1) / 2;
    let mut course = MeanSdCourse {
        agent,
        n_stats: n,
        t: Vec::new(),
        mean: Vec::new(),
        sd: Vec::new(),
    };
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i as u64 + 2;
        let t = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("line {line}: bad step {:?}", &record[0])))?;
        course.t.push(t);
        for k in 0..n {
            course.mean.push(parse_float(&record[1 + k], line, &header[1 + k])?);
        }
        for k in 0..n {
            course.sd.push(parse_float(&record[1 + n + k], line, &header[1 + n + k])?);
        }
    }
    Ok(course)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(format_float(0.5), "5.0000000000000000e-1");
        for x in [0.1, 1.0 / 3.0, -12345.678901234567, 1e-300, 0.0] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 17);
        }
    }

    #[test]
    fn sweep_round_trip() {
        let result = SweepResult {
            entries: vec![
                SweepEntry {
                    experiment: "gamma".into(),
                    setting: 0.5,
                    agent: AgentKind::Monolithic,
                    seed: 3,
                    delta: 1.0 / 7.0,
                    final_stat_mean: 4.75,
                },
                SweepEntry {
                    experiment: "gamma".into(),
                    setting: 0.9,
                    agent: AgentKind::Modular,
                    seed: 4,
                    delta: 12.25,
                    final_stat_mean: -0.1,
                },
            ],
            failures: Vec::new(),
        };
        let mut buf = Vec::new();
        write_sweep(&mut buf, &result).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("experiment,setting,agent,seed,delta,final_stat_mean\n"));
        assert_eq!(read_sweep(buf.as_slice()).unwrap(), result.entries);
    }

    #[test]
    fn bad_sweep_header_is_rejected() {
        let text = "experiment,setting,agent,seed,delta\ngamma,0.5,mono,1,2\n";
        assert!(read_sweep(text.as_bytes()).is_err());
    }

    #[test]
    fn mean_sd_round_trip() {
        let course = MeanSdCourse {
            agent: AgentKind::Modular,
            n_stats: 2,
            t: vec![0, 10],
            mean: vec![0.5, 0.25, 1.5, 2.5],
            sd: vec![0.0, 0.0, 0.125, 1.0 / 3.0],
        };
        let mut buf = Vec::new();
        write_mean_sd(&mut buf, &course).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t,h1_mean,h2_mean,h1_sd,h2_sd\n"));
        assert_eq!(read_mean_sd(buf.as_slice(), AgentKind::Modular).unwrap(), course);
    }
}
