//! Static SVG 1.1 figures built only from data that is also written to CSV.
//!
//! Each drawn box and panel carries a `<desc>` element listing the numbers
//! it was drawn from, so a figure can be checked against its CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::AgentKind;
use crate::error::{Error, Result};
use crate::harness::{quantile, SweepEntry};
use crate::report::MeanSdCourse;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 120.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

const STAT_COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#9467bd", "#d62728", "#8c564b", "#e377c2", "#7f7f7f", "#17becf",
];

fn agent_color(agent: AgentKind) -> &'static str {
    match agent {
        AgentKind::Monolithic => "#4c72b0",
        AgentKind::Modular => "#dd8452",
        AgentKind::Random => "#8c8c8c",
    }
}

/// Box-and-whisker summary: linear-interpolation quartiles, whiskers at
/// the most extreme values within 1.5 IQR of the box.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let q1 = quantile(&v, 0.25);
        let median = quantile(&v, 0.5);
        let q3 = quantile(&v, 0.75);
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside: Vec<f64> = v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x)).collect();
        Some(Self {
            q1,
            median,
            q3,
            whisker_lo: inside.first().copied().unwrap_or(q1),
            whisker_hi: inside.last().copied().unwrap_or(q3),
            outliers: v.into_iter().filter(|x| !(lo_fence..=hi_fence).contains(x)).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5 * lo.abs().max(1.0), hi + 0.5 * hi.abs().max(1.0))
        };
        Self { lo, hi, px_lo, px_hi }
    }

    fn padded(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.0 };
        Self::new(lo - pad, hi + pad, px_lo, px_hi)
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    fn ticks(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        let raw = span / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| span / s <= 6.0)
            .unwrap_or(10.0 * mag);
        let first = (self.lo / step).ceil() as i64;
        let last = (self.hi / step).floor() as i64;
        (first..=last).map(|k| k as f64 * step).collect()
    }
}

fn label(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Canvas {
    body: String,
    width: f64,
    height: f64,
}

impl Canvas {
    fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" {extra}/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, content: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-family="sans-serif" font-size="12" {extra}>{}</text>"#,
            escape(content)
        );
    }

    fn axes(&mut self, x: &Axis, y: &Axis, x_label: &str, y_label: &str, x_ticks: bool) {
        let (x0, x1) = (x.px_lo, x.px_hi);
        let (y0, y1) = (y.px_lo, y.px_hi);
        self.line(x0, y0, x1, y0, "black", "");
        self.line(x0, y0, x0, y1, "black", "");
        if x_ticks {
            for t in x.ticks() {
                let px = x.map(t);
                self.line(px, y0, px, y0 + 5.0, "black", "");
                self.text(px, y0 + 18.0, "middle", &label(t), "");
            }
        }
        for t in y.ticks() {
            let py = y.map(t);
            self.line(x0 - 5.0, py, x0, py, "black", "");
            self.text(x0 - 8.0, py + 4.0, "end", &label(t), "");
        }
        self.text((x0 + x1) / 2.0, y0 + 40.0, "middle", x_label, "");
        let cy = (y0 + y1) / 2.0;
        self.text(
            x0 - 50.0,
            cy,
            "middle",
            y_label,
            &format!(r#"transform="rotate(-90 {:.2} {cy:.2})""#, x0 - 50.0),
        );
    }

    fn legend(&mut self, entries: &[(String, &str)]) {
        let x = self.width - MARGIN_RIGHT + 15.0;
        for (k, (name, color)) in entries.iter().enumerate() {
            let y = MARGIN_TOP + 10.0 + 18.0 * k as f64;
            let _ = writeln!(
                self.body,
                r#"<rect x="{x:.2}" y="{:.2}" width="12" height="12" fill="{color}"/>"#,
                y - 10.0
            );
            self.text(x + 18.0, y, "start", name, "");
        }
    }

    fn finish(self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            w = self.width,
            h = self.height
        );
        let _ = writeln!(s, "<title>{}</title>", escape(title));
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            self.width / 2.0,
            escape(title)
        );
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

fn finite_entries(entries: &[SweepEntry], what: &str) -> Result<()> {
    if entries.is_empty() {
        return Err(Error::EmptyResults(format!("no {what} results to plot")));
    }
    Ok(())
}

/// Final stat mean against the common set-point, one dot per run, with the
/// per-set-point median and the identity line.
pub fn setpoint_svg(entries: &[SweepEntry]) -> Result<String> {
    finite_entries(entries, "set-point")?;
    let mut by_setting: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for e in entries {
        by_setting
            .entry(e.setting.to_bits())
            .or_insert((e.setting, Vec::new()))
            .1
            .push(e.final_stat_mean);
    }
    let settings: Vec<f64> = entries.iter().map(|e| e.setting).collect();
    let values: Vec<f64> = entries.iter().map(|e| e.final_stat_mean).collect();
    let min_of = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max_of = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (s_lo, s_hi) = (min_of(&settings), max_of(&settings));
    let x = Axis::padded(s_lo, s_hi, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let y = Axis::padded(
        min_of(&values).min(x.lo),
        max_of(&values).max(x.hi),
        HEIGHT - MARGIN_BOTTOM,
        MARGIN_TOP,
    );

    let mut c = Canvas::new(WIDTH, HEIGHT);
    c.axes(&x, &y, "set-point", "final stat mean", true);
    c.line(
        x.map(x.lo),
        y.map(x.lo),
        x.map(x.hi),
        y.map(x.hi),
        "#2ca02c",
        r#"stroke-dasharray="6 4" class="identity""#,
    );
    let _ = writeln!(c.body, "<desc>identity {} {}</desc>", x.lo, x.hi);
    let color = agent_color(entries[0].agent);
    for (setting, vals) in by_setting.values() {
        let px = x.map(*setting);
        for v in vals {
            let _ = writeln!(
                c.body,
                r#"<circle cx="{px:.2}" cy="{:.2}" r="3" fill="{color}" fill-opacity="0.6"/>"#,
                y.map(*v)
            );
        }
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let median = quantile(&sorted, 0.5);
        let py = y.map(median);
        let _ = writeln!(
            c.body,
            r#"<g class="median"><desc>setting={setting} median={median}</desc><line x1="{:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="black" stroke-width="2"/></g>"#,
            px - 10.0,
            px + 10.0
        );
    }
    c.legend(&[(entries[0].agent.to_string(), color), ("identity".into(), "#2ca02c")]);
    Ok(c.finish("Final stat mean by set-point"))
}

/// Δ boxplots per setting, one box per agent.
pub fn boxplot_svg(entries: &[SweepEntry], x_label: &str) -> Result<String> {
    finite_entries(entries, "sweep")?;
    let mut agents: Vec<AgentKind> = Vec::new();
    for e in entries {
        if !agents.contains(&e.agent) {
            agents.push(e.agent);
        }
    }
    let mut groups: BTreeMap<(u64, usize), (f64, Vec<f64>)> = BTreeMap::new();
    for e in entries {
        let a = agents.iter().position(|x| *x == e.agent).unwrap();
        groups
            .entry((e.setting.to_bits(), a))
            .or_insert((e.setting, Vec::new()))
            .1
            .push(e.delta);
    }
    let mut settings: Vec<f64> = entries.iter().map(|e| e.setting).collect();
    settings.sort_by(|a, b| a.total_cmp(b));
    settings.dedup();

    let boxes: Vec<(f64, usize, BoxStats)> = groups
        .values()
        .zip(groups.keys())
        .filter_map(|((s, v), (_, a))| BoxStats::of(v).map(|b| (*s, *a, b)))
        .collect();
    if boxes.is_empty() {
        return Err(Error::EmptyResults("no finite Δ values to plot".into()));
    }
    let lo = boxes.iter().map(|(_, _, b)| b.whisker_lo.min(b.outliers.first().copied().unwrap_or(f64::INFINITY))).fold(f64::INFINITY, f64::min);
    let hi = boxes.iter().map(|(_, _, b)| b.whisker_hi.max(b.outliers.last().copied().unwrap_or(f64::NEG_INFINITY))).fold(f64::NEG_INFINITY, f64::max);
    let y = Axis::padded(lo.min(0.0), hi, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    let slot = (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / settings.len() as f64;
    let x = Axis::new(0.0, settings.len() as f64, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let box_w = (0.7 * slot / agents.len() as f64).min(40.0);

    let mut c = Canvas::new(WIDTH, HEIGHT);
    c.axes(&x, &y, x_label, "Δ", false);
    for (k, s) in settings.iter().enumerate() {
        let px = MARGIN_LEFT + (k as f64 + 0.5) * slot;
        c.line(px, y.px_lo, px, y.px_lo + 5.0, "black", "");
        c.text(px, y.px_lo + 18.0, "middle", &label(*s), "");
    }
    for (setting, a, b) in &boxes {
        let k = settings.iter().position(|s| s == setting).unwrap();
        let center = MARGIN_LEFT + (k as f64 + 0.5) * slot + (*a as f64 - (agents.len() as f64 - 1.0) / 2.0) * box_w * 1.1;
        let (l, r) = (center - box_w / 2.0, center + box_w / 2.0);
        let color = agent_color(agents[*a]);
        let _ = writeln!(
            c.body,
            r#"<g class="box"><desc>setting={setting} agent={} q1={} median={} q3={} whisker_lo={} whisker_hi={} outliers={}</desc>"#,
            agents[*a],
            b.q1,
            b.median,
            b.q3,
            b.whisker_lo,
            b.whisker_hi,
            b.outliers.len()
        );
        c.line(center, y.map(b.whisker_lo), center, y.map(b.q1), "black", "");
        c.line(center, y.map(b.q3), center, y.map(b.whisker_hi), "black", "");
        c.line(l + box_w / 4.0, y.map(b.whisker_lo), r - box_w / 4.0, y.map(b.whisker_lo), "black", "");
        c.line(l + box_w / 4.0, y.map(b.whisker_hi), r - box_w / 4.0, y.map(b.whisker_hi), "black", "");
        let _ = writeln!(
            c.body,
            r#"<rect x="{l:.2}" y="{:.2}" width="{box_w:.2}" height="{:.2}" fill="{color}" fill-opacity="0.7" stroke="black"/>"#,
            y.map(b.q3),
            (y.map(b.q1) - y.map(b.q3)).max(0.5)
        );
        c.line(l, y.map(b.median), r, y.map(b.median), "black", r#"stroke-width="2""#);
        for o in &b.outliers {
            let _ = writeln!(
                c.body,
                r#"<circle cx="{center:.2}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"#,
                y.map(*o)
            );
        }
        c.body.push_str("</g>\n");
    }
    let legend: Vec<(String, &str)> = agents.iter().map(|a| (a.to_string(), agent_color(*a))).collect();
    c.legend(&legend);
    Ok(c.finish(&format!("Δ by {x_label}")))
}

/// Stacked panels, one per agent: each stat's across-run mean with a ±1 sd
/// band, a dashed line at the set-point and a marker at the clamp.
pub fn time_course_svg(courses: &[MeanSdCourse], setpoint: f64, clamp_time: Option<usize>) -> Result<String> {
    if courses.is_empty() || courses.iter().all(|c| c.is_empty()) {
        return Err(Error::EmptyResults("no time courses to plot".into()));
    }
    let panel_h = 260.0;
    let height = MARGIN_TOP + courses.len() as f64 * (panel_h + MARGIN_BOTTOM);
    let mut c = Canvas::new(WIDTH, height);
    let t_max = courses.iter().filter_map(|c| c.t.last()).copied().max().unwrap_or(1).max(1);
    let n_stats = courses.iter().map(|c| c.n_stats).max().unwrap_or(0);

    for (p, course) in courses.iter().enumerate() {
        let top = MARGIN_TOP + p as f64 * (panel_h + MARGIN_BOTTOM);
        let n = course.n_stats;
        let mut lo = setpoint;
        let mut hi = setpoint;
        for (m, s) in course.mean.iter().zip(&course.sd) {
            lo = lo.min(m - s);
            hi = hi.max(m + s);
        }
        let x = Axis::new(0.0, t_max as f64, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let y = Axis::padded(lo, hi, top + panel_h, top + 10.0);
        c.axes(&x, &y, "step", "stat level", true);
        c.text(MARGIN_LEFT + 8.0, top + 14.0, "start", &course.agent.to_string(), r#"font-weight="bold""#);
        let _ = writeln!(c.body, "<g class=\"panel\"><desc>agent={} rows={}</desc>", course.agent, course.len());
        for i in 0..n {
            let color = STAT_COLORS[i % STAT_COLORS.len()];
            let mut band = String::new();
            for (row, &t) in course.t.iter().enumerate() {
                let v = course.mean[row * n + i] + course.sd[row * n + i];
                let _ = write!(band, "{:.2},{:.2} ", x.map(t as f64), y.map(v));
            }
            for (row, &t) in course.t.iter().enumerate().rev() {
                let v = course.mean[row * n + i] - course.sd[row * n + i];
                let _ = write!(band, "{:.2},{:.2} ", x.map(t as f64), y.map(v));
            }
            let _ = writeln!(
                c.body,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                band.trim_end()
            );
            let mut line = String::new();
            for (row, &t) in course.t.iter().enumerate() {
                let _ = write!(line, "{:.2},{:.2} ", x.map(t as f64), y.map(course.mean[row * n + i]));
            }
            let _ = writeln!(
                c.body,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                line.trim_end()
            );
        }
        let sy = y.map(setpoint);
        let _ = writeln!(c.body, "<g class=\"setpoint\"><desc>setpoint={setpoint}</desc>");
        c.line(x.px_lo, sy, x.px_hi, sy, "#2ca02c", r#"stroke-dasharray="6 4" stroke-width="1.5""#);
        c.body.push_str("</g>\n");
        if let Some(tc) = clamp_time {
            let cx = x.map(tc as f64);
            let _ = writeln!(c.body, "<g class=\"clamp\"><desc>clamp={tc}</desc>");
            c.line(cx, y.px_lo, cx, y.px_hi, "black", r#"stroke-dasharray="2 3""#);
            c.body.push_str("</g>\n");
        }
        c.body.push_str("</g>\n");
    }
    let mut legend: Vec<(String, &str)> = (0..n_stats)
        .map(|i| (format!("h{}", i + 1), STAT_COLORS[i % STAT_COLORS.len()]))
        .collect();
    legend.push(("set-point".into(), "#2ca02c"));
    c.legend(&legend);
    Ok(c.finish("Stat time courses (mean ± sd)"))
}
