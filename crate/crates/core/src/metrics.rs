//! Metrics stream (one JSON object per step) and curve export.

use std::io::{BufRead, Write};

use serde::Deserialize;
use thiserror::Error;

use crate::optim::StepReport;

pub const CURVE_COLUMNS: [&str; 6] = ["step", "r_arr_mean", "r_avc_mean", "r_total_mean", "clip_frac", "u_mean"];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn write_report<W: Write>(mut w: W, report: &StepReport) -> std::io::Result<()> {
    let line = serde_json::to_string(report).map_err(std::io::Error::other)?;
    writeln!(w, "{line}")
}

/// Parses a metrics stream. Every field must be present (reward fields
/// may be `null`).
pub fn read_reports<R: BufRead>(r: R) -> Result<Vec<StepReport>, MetricsError> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Strict {
        stage: crate::optim::Stage,
        step: usize,
        r_format_mean: Option<f64>,
        r_arr_mean: Option<f64>,
        r_avc_mean: Option<f64>,
        r_total_mean: Option<f64>,
        clip_frac: f64,
        ans_entropy: f64,
        u_mean: f64,
        grad_norm: f64,
        objective: f64,
    }
    const REQUIRED: [&str; 11] = [
        "stage",
        "step",
        "r_format_mean",
        "r_arr_mean",
        "r_avc_mean",
        "r_total_mean",
        "clip_frac",
        "ans_entropy",
        "u_mean",
        "grad_norm",
        "objective",
    ];

    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| MetricsError::Malformed { line: n, reason };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| malformed("not a JSON object".into()))?;
        if let Some(missing) = REQUIRED.iter().find(|k| !obj.contains_key(**k)) {
            return Err(malformed(format!("missing field `{missing}`")));
        }
        let s: Strict = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        out.push(StepReport {
            stage: s.stage,
            step: s.step,
            r_format_mean: s.r_format_mean,
            r_arr_mean: s.r_arr_mean,
            r_avc_mean: s.r_avc_mean,
            r_total_mean: s.r_total_mean,
            clip_frac: s.clip_frac,
            ans_entropy: s.ans_entropy,
            u_mean: s.u_mean,
            grad_norm: s.grad_norm,
            objective: s.objective,
            adv_abs_mean: 0.0,
        });
    }
    Ok(out)
}

/// Writes the curve CSV, one row per report. Missing reward values are
/// empty cells.
pub fn export_curves<W: Write>(w: W, reports: &[StepReport]) -> Result<(), MetricsError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(CURVE_COLUMNS)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        csv.write_record([
            r.step.to_string(),
            opt(r.r_arr_mean),
            opt(r.r_avc_mean),
            opt(r.r_total_mean),
            r.clip_frac.to_string(),
            r.u_mean.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Trailing moving average with a full window; empty when the series is
/// shorter than `window`.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || xs.len() < window {
        return Vec::new();
    }
    xs.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

/// Index of the first decrease of the `window`-step moving average, if any.
pub fn first_moving_average_drop(xs: &[f64], window: usize) -> Option<usize> {
    let ma = moving_average(xs, window);
    ma.windows(2).position(|p| p[1] < p[0]).map(|i| i + window)
}
