//! Error metrics and multi-trial summaries.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::ContactPoint;
use crate::grid::ShapeGrid;
use crate::sim::{ToolShape, TrueState};

/// Mean vertical distance between the tool surface and the surface profile
/// of `est`, over the grid columns whose centers lie in the tool's x-range.
pub fn shape_error(est: &ShapeGrid, truth: &ToolShape) -> Result<f64> {
    let profile = est.surface_profile();
    let mut total = 0.0;
    let mut count = 0usize;
    for p in &profile {
        // exact-boundary columns count; tolerate rounding in the center
        let x = p.x;
        if x < truth.x_min - 1e-9 || x > truth.x_max + 1e-9 {
            continue;
        }
        let h = truth.surface_height(x.clamp(truth.x_min, truth.x_max))?;
        total += (h - p.y).abs();
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(total / count as f64)
}

pub fn position_error_series(est: &[ContactPoint], truth: &[TrueState]) -> Result<Vec<f64>> {
    if est.len() != truth.len() {
        return Err(Error::LengthMismatch { left: est.len(), right: truth.len() });
    }
    Ok(est.iter().zip(truth).map(|(e, s)| (e - s.c_true).norm()).collect())
}

/// Mean of `values` over samples with `lo <= t <= hi`; `None` if the window is
/// empty.
pub fn window_mean(t: &[f64], values: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let (sum, n) = t
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= lo && **t <= hi && v.is_finite())
        .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Median of the samples in a time window.
pub fn window_median(t: &[f64], values: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let mut sel: Vec<f64> =
        t.iter().zip(values).filter(|(t, v)| **t >= lo && **t <= hi && v.is_finite()).map(|(_, v)| *v).collect();
    if sel.is_empty() {
        return None;
    }
    sel.sort_by(f64::total_cmp);
    Some(quantile_sorted(&sel, 0.5))
}

/// Quantile by linear interpolation between order statistics
/// (position `q·(n − 1)`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub std: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        mean,
        std,
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub method: String,
    pub shape: String,
    pub seed: u64,
    pub t: Vec<f64>,
    pub position_errors: Vec<f64>,
    pub shape_error_final: Option<f64>,
}

impl TrialResult {
    pub fn window_error(&self, lo: f64, hi: f64) -> Option<f64> {
        window_mean(&self.t, &self.position_errors, lo, hi)
    }
}

/// One row of the aggregate results table.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub shape: String,
    pub metric: String,
    pub summary: Summary,
}

/// Summaries across trials of the window-mean position error and of the
/// final shape error. Trials missing a metric are skipped for that metric.
pub fn aggregate(trials: &[TrialResult], window: (f64, f64)) -> Result<Vec<AggregateRow>> {
    let first = trials.first().ok_or(Error::EmptyInput)?;
    let pos: Vec<f64> = trials.iter().filter_map(|t| t.window_error(window.0, window.1)).collect();
    let shape: Vec<f64> = trials.iter().filter_map(|t| t.shape_error_final).collect();
    let mut rows = Vec::new();
    let mut push = |metric: String, values: &[f64]| -> Result<()> {
        if !values.is_empty() {
            rows.push(AggregateRow {
                method: first.method.clone(),
                shape: first.shape.clone(),
                metric,
                summary: summarize(values)?,
            });
        }
        Ok(())
    };
    push(format!("position_error_{}_{}s", fmt_num(window.0), fmt_num(window.1)), &pos)?;
    push("shape_error_final".to_string(), &shape)?;
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(rows)
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

pub const AGGREGATE_HEADER: &str = "method,shape,metric,mean,std,q1,median,q3,n_trials";

pub fn write_aggregate<W: Write>(mut out: W, rows: &[AggregateRow]) -> Result<()> {
    writeln!(out, "{AGGREGATE_HEADER}")?;
    for r in rows {
        let s = &r.summary;
        writeln!(
            out,
            "{},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            r.method, r.shape, r.metric, s.mean, s.std, s.q1, s.median, s.q3, s.n
        )?;
    }
    Ok(())
}
