//! Force-position post-processing of a single trial and batch summaries.
//!
//! Pipeline order: drop the slack pick-up (everything before the force first
//! reaches 3 N), cut at the breakaway drop, normalize both axes by their
//! maximum, then fit force on position by least squares and report Pearson's
//! r. The position axis is retraction distance (`stroke - actuator_mm`), so a
//! spring-like muscle gives a positive slope.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::trace::TraceRecord;

pub const DEFAULT_TRIM_THRESHOLD_N: f64 = 3.0;
/// A breakaway is a one-sample drop of at least this much...
pub const BREAKAWAY_DROP_N: f64 = 10.0;
/// ...that lands below this level.
pub const BREAKAWAY_FLOOR_N: f64 = 1.0;
/// Slack allowed when matching a metadata breakaway time to a CSV timestamp
/// printed with 6 decimals.
const TIME_MATCH_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// Force never reached the slack-trim threshold.
    NeverEngaged,
    EmptyAfterTruncation,
    ZeroForce,
    ZeroRetraction,
    PositionAboveStroke,
    ConstantForce,
    TooFewPositions,
}

impl fmt::Display for Degeneracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Degeneracy::NeverEngaged => "force never reached the trim threshold",
            Degeneracy::EmptyAfterTruncation => "no samples before breakaway",
            Degeneracy::ZeroForce => "maximum force is zero",
            Degeneracy::ZeroRetraction => "actuator never retracted",
            Degeneracy::PositionAboveStroke => "actuator position beyond stroke",
            Degeneracy::ConstantForce => "force is constant; correlation undefined",
            Degeneracy::TooFewPositions => "fewer than two distinct positions",
        })
    }
}

/// Drops leading samples until the force first reaches `threshold`. If it
/// never does, the result is empty.
pub fn trim_slack(trace: &TraceRecord, threshold: f64) -> Result<TraceRecord> {
    if !(threshold > 0.0) {
        return Err(invalid(format!(
            "trim threshold {threshold} N must be positive"
        )));
    }
    let start = trace
        .points
        .iter()
        .position(|p| p.force >= threshold)
        .unwrap_or(trace.points.len());
    Ok(TraceRecord {
        points: trace.points[start..].to_vec(),
        meta: trace.meta.clone(),
    })
}

/// Index of the first sample of a breakaway drop, if any.
pub fn detect_breakaway(trace: &TraceRecord) -> Option<usize> {
    trace
        .points
        .windows(2)
        .position(|w| w[0].force - w[1].force >= BREAKAWAY_DROP_N && w[1].force < BREAKAWAY_FLOOR_N)
        .map(|i| i + 1)
}

fn breakaway_cut(trace: &TraceRecord) -> Option<usize> {
    if let Some(tb) = trace.meta.breakaway_time_s {
        return Some(
            trace
                .points
                .iter()
                .position(|p| p.t >= tb - TIME_MATCH_S)
                .unwrap_or(trace.points.len()),
        );
    }
    if trace.meta.breakaway == Some(false) {
        return None;
    }
    detect_breakaway(trace)
}

/// Removes the breakaway sample and everything after it. A breakaway time in
/// the metadata takes precedence over the drop detector.
pub fn truncate_breakaway(trace: &TraceRecord) -> TraceRecord {
    let end = breakaway_cut(trace).unwrap_or(trace.points.len());
    TraceRecord {
        points: trace.points[..end].to_vec(),
        meta: trace.meta.clone(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSeries {
    /// `(retraction / max retraction, force / max force)`.
    pub points: Vec<(f64, f64)>,
    pub max_retraction: f64,
    pub max_force: f64,
    pub constant_force: bool,
}

/// Divides retraction and force by their own maxima.
pub fn normalize(trace: &TraceRecord) -> Result<NormalizedSeries> {
    if trace.is_empty() {
        return Err(Error::Degenerate("empty trace".into()));
    }
    let stroke = trace.meta.stroke_mm.unwrap_or_else(|| {
        trace
            .points
            .iter()
            .map(|p| p.position)
            .fold(f64::MIN, f64::max)
    });
    let retraction: Vec<f64> = trace.points.iter().map(|p| stroke - p.position).collect();
    if retraction.iter().any(|r| *r < 0.0) {
        return Err(Error::Degenerate(
            Degeneracy::PositionAboveStroke.to_string(),
        ));
    }
    let max_retraction = retraction.iter().copied().fold(0.0, f64::max);
    let max_force = trace.forces().fold(f64::MIN, f64::max);
    if !(max_force > 0.0) {
        return Err(Error::Degenerate(Degeneracy::ZeroForce.to_string()));
    }
    if !(max_retraction > 0.0) {
        return Err(Error::Degenerate(Degeneracy::ZeroRetraction.to_string()));
    }
    let first = trace.points[0].force;
    let constant_force = trace.forces().all(|f| f == first);
    let points = retraction
        .iter()
        .zip(trace.forces())
        .map(|(r, f)| (r / max_retraction, f / max_force))
        .collect();
    Ok(NormalizedSeries {
        points,
        max_retraction,
        max_force,
        constant_force,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// `None` when the dependent series has zero variance.
    pub r: Option<f64>,
}

/// Ordinary least squares of y on x and Pearson's r, in mean-centred form.
pub fn linear_fit_and_correlation(series: &[(f64, f64)]) -> Result<LinearFit> {
    let first = series.first().map(|p| p.0);
    if !series.iter().any(|p| Some(p.0) != first) {
        return Err(Error::Degenerate(Degeneracy::TooFewPositions.to_string()));
    }
    let n = series.len() as f64;
    let mean_x = series.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = series.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in series {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let r = (syy > 0.0).then(|| (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0));
    Ok(LinearFit {
        slope,
        intercept,
        r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trial: Option<u32>,
    pub position_axis: &'static str,
    pub total_samples: usize,
    /// Leading samples removed as slack.
    pub trimmed_samples: usize,
    /// Samples removed at and after breakaway.
    pub truncated_samples: usize,
    pub used_samples: usize,
    #[serde(skip)]
    pub normalized_series: Vec<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<f64>,
    /// Largest force before any breakaway, N.
    pub peak_force: f64,
    /// Normalization divisors, for converting the slope back to N/mm.
    pub max_force_used: f64,
    pub max_retraction_used: f64,
    pub breakaway_detected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub functional_extension: Option<bool>,
    pub flags: Vec<Degeneracy>,
}

impl AnalysisReport {
    pub fn is_degenerate(&self) -> bool {
        self.correlation.is_none()
    }

    /// Slope in N per mm of retraction.
    pub fn stiffness_estimate(&self) -> Option<f64> {
        self.slope
            .filter(|_| self.max_retraction_used > 0.0)
            .map(|s| s * self.max_force_used / self.max_retraction_used)
    }
}

/// Full pipeline with the default 3 N trim threshold.
pub fn analyze(trace: &TraceRecord) -> AnalysisReport {
    analyze_with(trace, DEFAULT_TRIM_THRESHOLD_N)
}

/// Full pipeline. Stage failures become flags on the report.
pub fn analyze_with(trace: &TraceRecord, trim_threshold: f64) -> AnalysisReport {
    let mut trace = trace.clone();
    if trace.meta.stroke_mm.is_none() {
        trace.meta.stroke_mm = trace.points.iter().map(|p| p.position).reduce(f64::max);
    }
    let cut = breakaway_cut(&trace);
    let before_breakaway = truncate_breakaway(&trace);
    let peak_force = before_breakaway.forces().fold(0.0, f64::max);

    let mut report = AnalysisReport {
        subject: trace.meta.subject.clone(),
        trial: trace.meta.trial,
        position_axis: "retraction_mm = stroke_mm - actuator_mm",
        total_samples: trace.len(),
        trimmed_samples: 0,
        truncated_samples: 0,
        used_samples: 0,
        normalized_series: Vec::new(),
        slope: None,
        intercept: None,
        correlation: None,
        peak_force,
        max_force_used: 0.0,
        max_retraction_used: 0.0,
        breakaway_detected: trace.meta.breakaway.unwrap_or(cut.is_some()),
        functional_extension: trace.meta.functional_extension,
        flags: Vec::new(),
    };

    let trimmed = match trim_slack(&trace, trim_threshold) {
        Ok(t) => t,
        Err(_) => {
            report.flags.push(Degeneracy::NeverEngaged);
            return report;
        }
    };
    report.trimmed_samples = trace.len() - trimmed.len();
    if trimmed.is_empty() {
        report.flags.push(Degeneracy::NeverEngaged);
        return report;
    }
    let window = truncate_breakaway(&trimmed);
    report.truncated_samples = trimmed.len() - window.len();
    report.used_samples = window.len();
    if window.is_empty() {
        report.flags.push(Degeneracy::EmptyAfterTruncation);
        return report;
    }

    let series = match normalize(&window) {
        Ok(s) => s,
        Err(_) => {
            let max_f = window.forces().fold(f64::MIN, f64::max);
            report.flags.push(if max_f > 0.0 {
                Degeneracy::PositionAboveStroke
            } else {
                Degeneracy::ZeroForce
            });
            return report;
        }
    };
    report.max_force_used = series.max_force;
    report.max_retraction_used = series.max_retraction;
    if series.constant_force {
        report.flags.push(Degeneracy::ConstantForce);
    }
    match linear_fit_and_correlation(&series.points) {
        Ok(fit) => {
            report.slope = Some(fit.slope);
            report.intercept = Some(fit.intercept);
            report.correlation = fit.r;
            if fit.r.is_none() && !report.flags.contains(&Degeneracy::ConstantForce) {
                report.flags.push(Degeneracy::ConstantForce);
            }
        }
        Err(_) => report.flags.push(Degeneracy::TooFewPositions),
    }
    report.normalized_series = series.points;
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubjectSummary {
    pub subject: String,
    pub trials: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    pub peak_min: f64,
    pub peak_max: f64,
    pub breakaway_count: usize,
    pub functional_count: usize,
    pub functional_known: usize,
    pub degenerate_count: usize,
}

impl SubjectSummary {
    /// Fraction of trials with known outcome that reached functional extension.
    pub fn functional_rate(&self) -> Option<f64> {
        (self.functional_known > 0)
            .then(|| self.functional_count as f64 / self.functional_known as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BatchSummary {
    pub subjects: Vec<SubjectSummary>,
}

impl BatchSummary {
    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn total_trials(&self) -> usize {
        self.subjects.iter().map(|s| s.trials).sum()
    }

    /// Subjects with at least one trial reaching functional extension.
    pub fn subjects_functional(&self) -> usize {
        self.subjects
            .iter()
            .filter(|s| s.functional_count > 0)
            .count()
    }

    /// Subjects with at least one breakaway.
    pub fn subjects_breakaway(&self) -> usize {
        self.subjects
            .iter()
            .filter(|s| s.breakaway_count > 0)
            .count()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>8} {:>8} {:>9} {:>9} {:>9} {:>10}",
            "subject",
            "trials",
            "r_min",
            "r_max",
            "peak_min",
            "peak_max",
            "breakaway",
            "functional"
        );
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for s in &self.subjects {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>8} {:>8} {:>9.3} {:>9.3} {:>9} {:>10}",
                s.subject,
                s.trials,
                opt(s.r_min),
                opt(s.r_max),
                s.peak_min,
                s.peak_max,
                format!("{}/{}", s.breakaway_count, s.trials),
                format!("{}/{}", s.functional_count, s.functional_known),
            );
        }
        let n = self.subjects.len();
        let _ = writeln!(
            out,
            "functional extension: {}/{n} subjects; breakaway: {}/{n} subjects",
            self.subjects_functional(),
            self.subjects_breakaway()
        );
        out
    }
}

/// Per-subject aggregation, ordered by subject id then trial index.
pub fn batch_report(reports: &[AnalysisReport]) -> BatchSummary {
    let mut grouped: BTreeMap<String, Vec<&AnalysisReport>> = BTreeMap::new();
    for r in reports {
        let key = r.subject.clone().unwrap_or_else(|| "(unknown)".into());
        grouped.entry(key).or_default().push(r);
    }
    let subjects = grouped
        .into_iter()
        .map(|(subject, mut rs)| {
            rs.sort_by_key(|r| r.trial);
            let rvals: Vec<f64> = rs.iter().filter_map(|r| r.correlation).collect();
            let peaks = rs.iter().map(|r| r.peak_force);
            SubjectSummary {
                trials: rs.len(),
                r_min: rvals.iter().copied().reduce(f64::min),
                r_max: rvals.iter().copied().reduce(f64::max),
                peak_min: peaks.clone().fold(f64::INFINITY, f64::min),
                peak_max: peaks.fold(f64::NEG_INFINITY, f64::max),
                breakaway_count: rs.iter().filter(|r| r.breakaway_detected).count(),
                functional_count: rs
                    .iter()
                    .filter(|r| r.functional_extension == Some(true))
                    .count(),
                functional_known: rs
                    .iter()
                    .filter(|r| r.functional_extension.is_some())
                    .count(),
                degenerate_count: rs.iter().filter(|r| r.is_degenerate()).count(),
                subject,
            }
        })
        .collect();
    BatchSummary { subjects }
}
