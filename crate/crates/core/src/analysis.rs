//! Aggregate metrics over trajectory batches and CSV/JSON/SVG report emission.
//!
//! Per-round series divide by the number of decisions observed at each round,
//! so batches with different run counts or aborted games aggregate correctly.

use crate::agents::StrategyKind;
use crate::game::{Action, GameKind, GameParams, Trajectory};
use crate::util::{atomic_write, fmt_metric};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io;
use std::path::Path;
use thiserror::Error;

/// Label used for agents whose expanded strategy set is empty.
pub const EMERGENT: &str = "EMERGENT";

/// Grouping attributes such as model, language, lambda or personalities.
pub type GroupKey = BTreeMap<String, String>;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("no trajectories to aggregate")]
    Empty,
    #[error("batch mixes {0}")]
    Heterogeneous(String),
    #[error("metric requires {0}")]
    Unsupported(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeriesByRound {
    pub metric: String,
    pub key: GroupKey,
    pub values: Vec<f64>,
    /// Decisions (or runs, for per-run metrics) behind each point.
    pub n: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CiEstimate {
    pub key: GroupKey,
    pub mean: f64,
    pub half_width95: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StrategyDistribution {
    pub key: GroupKey,
    pub counts: BTreeMap<String, usize>,
    pub percentages: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndGameSummary {
    pub metric: String,
    pub key: GroupKey,
    pub early_mean: f64,
    pub late_mean: f64,
    /// `late_mean - early_mean`.
    pub difference: f64,
}

/// Expanded strategy labels for one classified agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub key: GroupKey,
    pub labels: BTreeSet<StrategyKind>,
}

fn check_batch(trajs: &[&Trajectory]) -> Result<(GameKind, usize), AnalysisError> {
    let first = trajs.first().ok_or(AnalysisError::Empty)?;
    let kind = first.kind();
    let horizon = first.horizon as usize;
    for t in trajs {
        if t.kind() != kind {
            return Err(AnalysisError::Heterogeneous("game kinds".into()));
        }
        if t.horizon as usize != horizon {
            return Err(AnalysisError::Heterogeneous("horizons".into()));
        }
    }
    Ok((kind, horizon))
}

/// Mean over all decisions at each round of `score(action)`.
fn per_round_mean(
    trajs: &[&Trajectory],
    horizon: usize,
    score: impl Fn(Action) -> f64,
) -> (Vec<f64>, Vec<usize>) {
    let mut sum = vec![0.0; horizon];
    let mut n = vec![0usize; horizon];
    for t in trajs {
        for (r, rec) in t.records.iter().enumerate().take(horizon) {
            for &a in &rec.profile {
                sum[r] += score(a);
                n[r] += 1;
            }
        }
    }
    let values = sum
        .iter()
        .zip(&n)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    (values, n)
}

/// Fraction of cooperating (contributing) decisions per round.
pub fn cooperation_rate_by_round(trajs: &[&Trajectory]) -> Result<SeriesByRound, AnalysisError> {
    let (_, horizon) = check_batch(trajs)?;
    let (values, n) = per_round_mean(trajs, horizon, |a| if a.is_cooperate() { 1.0 } else { 0.0 });
    Ok(SeriesByRound {
        metric: "cooperation_rate".into(),
        key: GroupKey::new(),
        values,
        n,
    })
}

/// Mean choice per round coded +1 for OptionA (defect) and -1 for OptionB.
pub fn avg_choice_trajectory(trajs: &[&Trajectory]) -> Result<SeriesByRound, AnalysisError> {
    let (kind, horizon) = check_batch(trajs)?;
    if kind != GameKind::Pd {
        return Err(AnalysisError::Unsupported("Prisoner's Dilemma trajectories".into()));
    }
    let (values, n) = per_round_mean(trajs, horizon, |a| if a.is_cooperate() { -1.0 } else { 1.0 });
    Ok(SeriesByRound {
        metric: "avg_choice".into(),
        key: GroupKey::new(),
        values,
        n,
    })
}

/// Per round, 1 − (largest action share) for three-agent games: 0 when all
/// agree, 1/3 when two align.
pub fn mismatch_rate(trajs: &[&Trajectory]) -> Result<SeriesByRound, AnalysisError> {
    let (_, horizon) = check_batch(trajs)?;
    if trajs.iter().any(|t| t.num_agents() != 3) {
        return Err(AnalysisError::Unsupported("three-agent trajectories".into()));
    }
    let mut sum = vec![0.0; horizon];
    let mut n = vec![0usize; horizon];
    for t in trajs {
        for (r, rec) in t.records.iter().enumerate().take(horizon) {
            sum[r] += profile_mismatch(&rec.profile);
            n[r] += 1;
        }
    }
    let values = sum
        .iter()
        .zip(&n)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(SeriesByRound {
        metric: "mismatch_rate".into(),
        key: GroupKey::new(),
        values,
        n,
    })
}

/// One minus the share of agents taking the most common action.
pub fn profile_mismatch(profile: &[Action]) -> f64 {
    let c = profile.iter().filter(|a| a.is_cooperate()).count();
    let majority = c.max(profile.len() - c);
    1.0 - majority as f64 / profile.len() as f64
}

/// Mean with a normal-approximation 95% interval: 1.96 · sample SD / √n.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Sum of penalties over rounds and agents for each complete PD run, then the
/// mean and 95% interval across runs. Aborted runs are excluded.
pub fn total_penalties(trajs: &[&Trajectory]) -> Result<CiEstimate, AnalysisError> {
    let (kind, _) = check_batch(trajs)?;
    if kind != GameKind::Pd {
        return Err(AnalysisError::Unsupported("Prisoner's Dilemma trajectories".into()));
    }
    let totals: Vec<f64> = trajs
        .iter()
        .filter(|t| t.is_complete())
        .map(|t| t.cumulative_scores().iter().sum())
        .collect();
    if totals.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let (mean, half_width95) = mean_ci95(&totals);
    Ok(CiEstimate {
        key: GroupKey::new(),
        mean,
        half_width95,
        n: totals.len(),
    })
}

/// Per-run fraction of cooperating decisions, then the mean and 95% interval
/// across runs. Runs with no recorded rounds are excluded.
pub fn cooperation_rate_per_run(trajs: &[&Trajectory]) -> Result<CiEstimate, AnalysisError> {
    check_batch(trajs)?;
    let rates: Vec<f64> = trajs
        .iter()
        .filter(|t| !t.records.is_empty())
        .map(|t| {
            let (c, n) = t.records.iter().fold((0usize, 0usize), |(c, n), r| {
                (c + r.profile.iter().filter(|a| a.is_cooperate()).count(), n + r.profile.len())
            });
            c as f64 / n as f64
        })
        .collect();
    if rates.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let (mean, half_width95) = mean_ci95(&rates);
    Ok(CiEstimate {
        key: GroupKey::new(),
        mean,
        half_width95,
        n: rates.len(),
    })
}

/// Mean of a series over two 1-based inclusive round windows.
pub fn end_game_windows(
    s: &SeriesByRound,
    early: (usize, usize),
    late: (usize, usize),
) -> Result<EndGameSummary, AnalysisError> {
    let window = |(a, b): (usize, usize)| -> Result<f64, AnalysisError> {
        if a == 0 || b < a || b > s.values.len() {
            return Err(AnalysisError::Unsupported(format!(
                "round window {a}..={b} within 1..={}",
                s.values.len()
            )));
        }
        Ok(s.values[a - 1..b].iter().sum::<f64>() / (b - a + 1) as f64)
    };
    let (early_mean, late_mean) = (window(early)?, window(late)?);
    Ok(EndGameSummary {
        metric: s.metric.clone(),
        key: s.key.clone(),
        early_mean,
        late_mean,
        difference: late_mean - early_mean,
    })
}

/// Counts expanded labels per group (one count per pure label, empty sets
/// count as [`EMERGENT`]) and converts to percentages. Groups with no counts
/// are omitted.
pub fn strategy_distribution(entries: &[LabelEntry], axes: &[&str]) -> Vec<StrategyDistribution> {
    let mut groups: BTreeMap<GroupKey, BTreeMap<String, usize>> = BTreeMap::new();
    for e in entries {
        let key = project(&e.key, axes);
        let counts = groups.entry(key).or_default();
        if e.labels.is_empty() {
            *counts.entry(EMERGENT.to_string()).or_insert(0) += 1;
        }
        for l in &e.labels {
            *counts.entry(l.to_string()).or_insert(0) += 1;
        }
    }
    distributions_from_counts(groups)
}

pub fn distributions_from_counts(groups: BTreeMap<GroupKey, BTreeMap<String, usize>>) -> Vec<StrategyDistribution> {
    groups
        .into_iter()
        .filter_map(|(key, counts)| {
            let total: usize = counts.values().sum();
            if total == 0 {
                return None;
            }
            let percentages = counts
                .iter()
                .map(|(k, &c)| (k.clone(), 100.0 * c as f64 / total as f64))
                .collect();
            Some(StrategyDistribution {
                key,
                counts,
                percentages,
            })
        })
        .collect()
}

/// Restricts a key to the named axes.
pub fn project(key: &GroupKey, axes: &[&str]) -> GroupKey {
    key.iter()
        .filter(|(k, _)| axes.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// Grouping attributes of a game instance: backend, language, the scaled
/// parameter (`lambda` or `r`) and the personality assignment.
pub fn trajectory_key(t: &Trajectory) -> GroupKey {
    let mut key = GroupKey::new();
    let backends: BTreeSet<&str> = t.agent_meta.iter().map(|m| m.backend.as_str()).collect();
    key.insert("model".into(), backends.into_iter().collect::<Vec<_>>().join("+"));
    let langs: BTreeSet<&str> = t.agent_meta.iter().map(|m| m.language.as_str()).collect();
    key.insert("language".into(), langs.into_iter().collect::<Vec<_>>().join("+"));
    match &t.params {
        GameParams::Pd(m) => {
            key.insert("lambda".into(), m.lambda.to_string());
        }
        GameParams::Pgg(p) => {
            key.insert("r".into(), p.multiplication_factor.to_string());
        }
    }
    let pers: String = if t.agent_meta.iter().all(|m| m.personality.is_none()) {
        "none".into()
    } else {
        t.agent_meta.iter().map(|m| m.personality.map_or('-', |p| p.initial())).collect()
    };
    key.insert("personalities".into(), pers);
    key
}

/// Groups trajectories by their projected keys, preserving input order within groups.
pub fn group_by<'a>(trajs: &[&'a Trajectory], axes: &[&str]) -> BTreeMap<GroupKey, Vec<&'a Trajectory>> {
    let mut out: BTreeMap<GroupKey, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajs {
        out.entry(project(&trajectory_key(t), axes)).or_default().push(t);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Svg => "svg",
        }
    }
}

/// Analysis output that can be rendered in every report format.
pub trait Reportable {
    fn to_csv(&self) -> String;
    fn to_json(&self) -> String;
    fn to_svg(&self, title: &str) -> String;
}

fn key_columns<'a>(keys: impl Iterator<Item = &'a GroupKey>) -> Vec<String> {
    let cols: BTreeSet<String> = keys.flat_map(|k| k.keys().cloned()).collect();
    cols.into_iter().collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn key_cells(key: &GroupKey, cols: &[String]) -> String {
    cols.iter()
        .map(|c| format!(",{}", csv_field(key.get(c).map_or("", |v| v.as_str()))))
        .collect()
}

fn key_label(key: &GroupKey) -> String {
    if key.is_empty() {
        return "all".into();
    }
    key.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
}

fn json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable report");
    s.push('\n');
    s
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

const W: f64 = 720.0;
const PLOT_LEFT: f64 = 60.0;
const PLOT_TOP: f64 = 40.0;
const PLOT_W: f64 = 420.0;
const PLOT_H: f64 = 260.0;

fn svg_open(title: &str, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{height}\" viewBox=\"0 0 {W} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-size=\"14\">{}</text>\n",
        PLOT_LEFT,
        esc(title)
    )
}

fn svg_axes(out: &mut String, y_min: f64, y_max: f64) {
    let (x0, y0, x1, y1) = (PLOT_LEFT, PLOT_TOP, PLOT_LEFT + PLOT_W, PLOT_TOP + PLOT_H);
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y1}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"black\"/>");
    let _ = writeln!(out, "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let y = y1 - PLOT_H * i as f64 / 4.0;
        let _ = writeln!(
            out,
            "<line x1=\"{x0}\" y1=\"{y:.2}\" x2=\"{x1}\" y2=\"{y:.2}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            x0 - 6.0,
            y + 4.0,
            fmt_metric((v * 1000.0).round() / 1000.0)
        );
    }
}

fn svg_legend(out: &mut String, labels: &[String]) {
    for (i, l) in labels.iter().enumerate() {
        let y = PLOT_TOP + 14.0 * i as f64;
        let x = PLOT_LEFT + PLOT_W + 20.0;
        let _ = writeln!(
            out,
            "<rect x=\"{x}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n<text x=\"{}\" y=\"{:.2}\">{}</text>",
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 14.0,
            y,
            esc(l)
        );
    }
}

fn y_scale(v: f64, y_min: f64, y_max: f64) -> f64 {
    let span = if y_max > y_min { y_max - y_min } else { 1.0 };
    PLOT_TOP + PLOT_H - PLOT_H * (v - y_min) / span
}

fn legend_height(n: usize) -> f64 {
    (PLOT_TOP + PLOT_H + 40.0).max(PLOT_TOP + 14.0 * n as f64 + 20.0)
}

impl Reportable for [SeriesByRound] {
    /// `round,value,n,<grouping columns>`, one row per group and round.
    fn to_csv(&self) -> String {
        let cols = key_columns(self.iter().map(|s| &s.key));
        let mut out = String::from("round,value,n");
        for c in &cols {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for s in self {
            for (r, (v, n)) in s.values.iter().zip(&s.n).enumerate() {
                let _ = writeln!(out, "{},{},{}{}", r + 1, fmt_metric(*v), n, key_cells(&s.key, &cols));
            }
        }
        out
    }

    fn to_json(&self) -> String {
        json_pretty(&self)
    }

    /// Line chart, one line per group.
    fn to_svg(&self, title: &str) -> String {
        let (y_min, y_max) = if self.iter().any(|s| s.values.iter().any(|&v| v < 0.0)) {
            (-1.0, 1.0)
        } else {
            (0.0, 1.0)
        };
        let rounds = self.iter().map(|s| s.values.len()).max().unwrap_or(1).max(2);
        let mut out = svg_open(title, legend_height(self.len()));
        svg_axes(&mut out, y_min, y_max);
        let x_of = |r: usize| PLOT_LEFT + PLOT_W * r as f64 / (rounds - 1) as f64;
        for r in 0..rounds {
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                x_of(r),
                PLOT_TOP + PLOT_H + 14.0,
                r + 1
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">round</text>",
            PLOT_LEFT + PLOT_W / 2.0,
            PLOT_TOP + PLOT_H + 30.0
        );
        for (i, s) in self.iter().enumerate() {
            let pts: Vec<String> = s
                .values
                .iter()
                .enumerate()
                .map(|(r, &v)| format!("{:.2},{:.2}", x_of(r), y_scale(v, y_min, y_max)))
                .collect();
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>",
                PALETTE[i % PALETTE.len()],
                pts.join(" ")
            );
        }
        svg_legend(&mut out, &self.iter().map(|s| key_label(&s.key)).collect::<Vec<_>>());
        out.push_str("</svg>\n");
        out
    }
}

impl Reportable for [CiEstimate] {
    /// `mean,ci95,n,<grouping columns>`.
    fn to_csv(&self) -> String {
        let cols = key_columns(self.iter().map(|s| &s.key));
        let mut out = String::from("mean,ci95,n");
        for c in &cols {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for e in self {
            let _ = writeln!(
                out,
                "{},{},{}{}",
                fmt_metric(e.mean),
                fmt_metric(e.half_width95),
                e.n,
                key_cells(&e.key, &cols)
            );
        }
        out
    }

    fn to_json(&self) -> String {
        #[derive(Serialize)]
        #[serde(rename_all = "camelCase")]
        struct Doc<'a> {
            ci_over: &'static str,
            ci_method: &'static str,
            estimates: &'a [CiEstimate],
        }
        json_pretty(&Doc {
            ci_over: "runs",
            ci_method: "normal approximation, 1.96 * sample sd / sqrt(n)",
            estimates: self,
        })
    }

    /// Bar chart with 95% error bars, one bar per group.
    fn to_svg(&self, title: &str) -> String {
        let y_max = self
            .iter()
            .map(|e| e.mean + e.half_width95)
            .fold(0.0_f64, f64::max)
            .max(1.0)
            * 1.1;
        let mut out = svg_open(title, legend_height(self.len()));
        svg_axes(&mut out, 0.0, y_max);
        let slot = PLOT_W / self.len().max(1) as f64;
        for (i, e) in self.iter().enumerate() {
            let x = PLOT_LEFT + slot * i as f64 + slot * 0.15;
            let y = y_scale(e.mean, 0.0, y_max);
            let _ = writeln!(
                out,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                slot * 0.7,
                PLOT_TOP + PLOT_H - y,
                PALETTE[i % PALETTE.len()]
            );
            let cx = x + slot * 0.35;
            let _ = writeln!(
                out,
                "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
                y_scale(e.mean + e.half_width95, 0.0, y_max),
                y_scale((e.mean - e.half_width95).max(0.0), 0.0, y_max)
            );
        }
        svg_legend(&mut out, &self.iter().map(|e| key_label(&e.key)).collect::<Vec<_>>());
        out.push_str("</svg>\n");
        out
    }
}

impl Reportable for [StrategyDistribution] {
    /// `strategy,percentage,count,<grouping columns>`.
    fn to_csv(&self) -> String {
        let cols = key_columns(self.iter().map(|s| &s.key));
        let mut out = String::from("strategy,percentage,count");
        for c in &cols {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for d in self {
            for (label, pct) in &d.percentages {
                let _ = writeln!(
                    out,
                    "{},{},{}{}",
                    label,
                    fmt_metric(*pct),
                    d.counts[label],
                    key_cells(&d.key, &cols)
                );
            }
        }
        out
    }

    fn to_json(&self) -> String {
        json_pretty(&self)
    }

    /// Grouped bars: one cluster per group, one bar per strategy.
    fn to_svg(&self, title: &str) -> String {
        let labels: Vec<String> = self
            .iter()
            .flat_map(|d| d.percentages.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut out = svg_open(title, legend_height(labels.len()));
        svg_axes(&mut out, 0.0, 100.0);
        let slot = PLOT_W / self.len().max(1) as f64;
        let bar = slot * 0.8 / labels.len().max(1) as f64;
        for (g, d) in self.iter().enumerate() {
            let x0 = PLOT_LEFT + slot * g as f64 + slot * 0.1;
            for (i, l) in labels.iter().enumerate() {
                let pct = d.percentages.get(l).copied().unwrap_or(0.0);
                let y = y_scale(pct, 0.0, 100.0);
                let _ = writeln!(
                    out,
                    "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"{bar:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                    x0 + bar * i as f64,
                    PLOT_TOP + PLOT_H - y,
                    PALETTE[i % PALETTE.len()]
                );
            }
            let _ = writeln!(
                out,
                "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                x0 + slot * 0.4,
                PLOT_TOP + PLOT_H + 14.0,
                esc(&key_label(&d.key))
            );
        }
        svg_legend(&mut out, &labels);
        out.push_str("</svg>\n");
        out
    }
}

impl Reportable for [EndGameSummary] {
    /// `metric,early_mean,late_mean,difference,<grouping columns>`.
    fn to_csv(&self) -> String {
        let cols = key_columns(self.iter().map(|s| &s.key));
        let mut out = String::from("metric,early_mean,late_mean,difference");
        for c in &cols {
            out.push(',');
            out.push_str(&csv_field(c));
        }
        out.push('\n');
        for e in self {
            let _ = writeln!(
                out,
                "{},{},{},{}{}",
                e.metric,
                fmt_metric(e.early_mean),
                fmt_metric(e.late_mean),
                fmt_metric(e.difference),
                key_cells(&e.key, &cols)
            );
        }
        out
    }

    fn to_json(&self) -> String {
        json_pretty(&self)
    }

    /// Paired bars (early, late) per group.
    fn to_svg(&self, title: &str) -> String {
        let mut out = svg_open(title, legend_height(2));
        svg_axes(&mut out, 0.0, 1.0);
        let slot = PLOT_W / self.len().max(1) as f64;
        for (g, e) in self.iter().enumerate() {
            for (i, v) in [e.early_mean, e.late_mean].into_iter().enumerate() {
                let y = y_scale(v.clamp(0.0, 1.0), 0.0, 1.0);
                let _ = writeln!(
                    out,
                    "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                    PLOT_LEFT + slot * g as f64 + slot * (0.1 + 0.4 * i as f64),
                    slot * 0.4,
                    PLOT_TOP + PLOT_H - y,
                    PALETTE[i]
                );
            }
        }
        svg_legend(&mut out, &["rounds 1-3".to_string(), "rounds 8-10".to_string()]);
        out.push_str("</svg>\n");
        out
    }
}

/// Writes `stem.<ext>` under `dir` for each requested format.
pub fn emit_report<R: Reportable + ?Sized>(
    results: &R,
    formats: &[ReportFormat],
    dir: &Path,
    stem: &str,
    title: &str,
) -> io::Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    for &f in formats {
        let body = match f {
            ReportFormat::Csv => results.to_csv(),
            ReportFormat::Json => results.to_json(),
            ReportFormat::Svg => results.to_svg(title),
        };
        let path = dir.join(format!("{stem}.{}", f.extension()));
        atomic_write(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{AgentMeta, PayoffMatrix2, PggParams, RoundRecord};
    use Action::*;

    fn traj(params: GameParams, profiles: Vec<Vec<Action>>) -> Trajectory {
        let n = profiles[0].len();
        let horizon = profiles.len() as u32;
        let records = profiles
            .into_iter()
            .enumerate()
            .map(|(i, p)| RoundRecord {
                t: i as u32 + 1,
                payoffs: params.payoffs(&p).unwrap(),
                profile: p,
                responses: None,
            })
            .collect();
        Trajectory {
            game_id: "g".into(),
            params,
            horizon,
            agent_meta: vec![AgentMeta::default(); n],
            records,
            seed: 0,
            aborted: None,
        }
    }

    fn pgg(profiles: Vec<Vec<Action>>) -> Trajectory {
        let rounds = profiles.len() as u32;
        traj(GameParams::Pgg(PggParams::new(3, 10.0, 2.0, rounds)), profiles)
    }

    fn pd(profiles: Vec<Vec<Action>>) -> Trajectory {
        traj(GameParams::Pd(PayoffMatrix2::baseline()), profiles)
    }

    #[test]
    fn cooperation_examples() {
        let all = pgg(vec![vec![Cooperate; 3]; 10]);
        assert!(cooperation_rate_by_round(&[&all]).unwrap().values.iter().all(|&v| v == 1.0));
        let two = pgg(vec![vec![Cooperate, Cooperate, Defect]; 10]);
        let s = cooperation_rate_by_round(&[&two]).unwrap();
        assert!(s.values.iter().all(|&v| (v - 2.0 / 3.0).abs() < 1e-12));
        let a = pgg(vec![vec![Cooperate; 3]]);
        let b = pgg(vec![vec![Defect; 3]]);
        assert_eq!(cooperation_rate_by_round(&[&a, &b]).unwrap().values[0], 0.5);
    }

    #[test]
    fn heterogeneous_batches_rejected() {
        let a = pgg(vec![vec![Cooperate; 3]]);
        let b = pd(vec![vec![Cooperate; 2]]);
        assert!(cooperation_rate_by_round(&[&a, &b]).is_err());
        assert_eq!(cooperation_rate_by_round(&[]), Err(AnalysisError::Empty));
        assert!(avg_choice_trajectory(&[&a]).is_err());
    }

    #[test]
    fn penalty_totals() {
        let bb = pd(vec![vec![Cooperate, Cooperate]; 10]);
        let e = total_penalties(&[&bb]).unwrap();
        assert_eq!(e.mean, 40.0);
        assert_eq!(e.n, 1);
        assert_eq!(e.half_width95, 0.0);
        let (m, hw) = mean_ci95(&[10.0, 20.0]);
        assert_eq!(m, 15.0);
        assert!((hw - 1.96 * 50f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
        assert!((hw - 9.8).abs() < 1e-9);
    }

    #[test]
    fn aborted_runs_excluded_from_totals() {
        let full = pd(vec![vec![Defect, Defect]; 2]);
        let mut partial = pd(vec![vec![Defect, Defect]; 2]);
        partial.records.pop();
        partial.aborted = Some("x".into());
        let e = total_penalties(&[&full, &partial]).unwrap();
        assert_eq!(e.n, 1);
        assert_eq!(e.mean, 24.0);
    }

    #[test]
    fn per_run_cooperation() {
        let a = pgg(vec![vec![Cooperate, Cooperate, Defect]; 2]);
        let b = pgg(vec![vec![Cooperate; 3]; 2]);
        let e = cooperation_rate_per_run(&[&a, &b]).unwrap();
        assert_eq!(e.n, 2);
        assert!((e.mean - 5.0 / 6.0).abs() < 1e-12);
        assert!(e.half_width95 > 0.0);
    }

    #[test]
    fn choice_coding() {
        let a = pd(vec![vec![Defect, Defect]]);
        assert_eq!(avg_choice_trajectory(&[&a]).unwrap().values, vec![1.0]);
        let half = pd(vec![vec![Defect, Cooperate]]);
        assert_eq!(avg_choice_trajectory(&[&half]).unwrap().values, vec![0.0]);
        let three = pd(vec![vec![Defect, Cooperate]]);
        assert_eq!(avg_choice_trajectory(&[&a, &three]).unwrap().values, vec![0.5]);
    }

    #[test]
    fn mismatch_over_all_profiles() {
        for bits in 0..8u8 {
            let p: Vec<Action> = (0..3)
                .map(|i| if bits >> i & 1 == 1 { Defect } else { Cooperate })
                .collect();
            let m = profile_mismatch(&p);
            let all_same = p.iter().all(|&a| a == p[0]);
            assert_eq!(m == 0.0, all_same);
            assert!(m == 0.0 || (m - 1.0 / 3.0).abs() < 1e-15);
        }
        let t = pgg(vec![vec![Cooperate, Cooperate, Defect]]);
        assert!((mismatch_rate(&[&t]).unwrap().values[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn distribution_counts() {
        let key: GroupKey = [("language".to_string(), "en".to_string())].into();
        let e = |l: &[StrategyKind]| LabelEntry {
            key: key.clone(),
            labels: l.iter().copied().collect(),
        };
        let d = strategy_distribution(
            &[
                e(&[StrategyKind::AllD]),
                e(&[StrategyKind::AllD]),
                e(&[StrategyKind::AllD]),
                e(&[StrategyKind::AllC]),
            ],
            &["language"],
        );
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].percentages["ALLD"], 75.0);
        assert_eq!(d[0].percentages["ALLC"], 25.0);
        let emergent = strategy_distribution(&[e(&[])], &["language"]);
        assert_eq!(emergent[0].percentages[EMERGENT], 100.0);
        let mut groups = BTreeMap::new();
        groups.insert(key.clone(), BTreeMap::new());
        assert!(distributions_from_counts(groups).is_empty());
    }

    #[test]
    fn end_game_window_means() {
        let s = SeriesByRound {
            metric: "m".into(),
            key: GroupKey::new(),
            values: (1..=10).map(|v| v as f64 / 10.0).collect(),
            n: vec![1; 10],
        };
        let e = end_game_windows(&s, (1, 3), (8, 10)).unwrap();
        assert!((e.early_mean - 0.2).abs() < 1e-12);
        assert!((e.late_mean - 0.9).abs() < 1e-12);
        assert!((e.difference - 0.7).abs() < 1e-12);
        assert!(end_game_windows(&s, (0, 3), (8, 11)).is_err());
    }

    #[test]
    fn csv_schemas() {
        let mut s = cooperation_rate_by_round(&[&pgg(vec![vec![Cooperate; 3]; 2])]).unwrap();
        s.key.insert("language".into(), "en".into());
        let csv = [s].to_csv();
        assert_eq!(csv, "round,value,n,language\n1,1,3,en\n2,1,3,en\n");
        let ci = [CiEstimate {
            key: GroupKey::new(),
            mean: 15.0,
            half_width95: 9.8,
            n: 2,
        }];
        assert_eq!(ci.to_csv(), "mean,ci95,n\n15,9.8,2\n");
        assert!(ci.to_json().contains("\"ciOver\": \"runs\""));
    }

    #[test]
    fn emitted_files_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let s = [cooperation_rate_by_round(&[&pgg(vec![vec![Cooperate, Defect, Cooperate]; 10])]).unwrap()];
        let a = emit_report(&s[..], &ReportFormat::ALL, dir.path(), "a", "Cooperation").unwrap();
        let b = emit_report(&s[..], &ReportFormat::ALL, dir.path(), "b", "Cooperation").unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let svg = std::fs::read_to_string(&a[2]).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polyline"));
    }
}
