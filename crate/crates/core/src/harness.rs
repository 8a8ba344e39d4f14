//! Orchestration behind the command-line verbs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::config::{RunConfig, SweepVariable};
use crate::error::{Error, Result};
use crate::estimator::{EstimateRecord, Estimator, Method};
use crate::geometry::Wrench;
use crate::grid::ShapeGrid;
use crate::io::{read_measurements, write_atomic, write_measurements, write_truth, Measurement};
use crate::metrics::{aggregate, shape_error, write_aggregate, AggregateRow, TrialResult};
use crate::sim::{simulate, ShapeKind, ToolShape};

/// Builds the estimator for `method`. The oracle needs the tool shape.
pub fn build_estimator(cfg: &RunConfig, method: Method, seed: u64, tool: Option<&ToolShape>) -> Result<Estimator> {
    match method {
        Method::Proposed => Estimator::proposed(cfg.filter_config(seed)?),
        Method::Naive => Estimator::naive(cfg.naive_params(seed)?),
        Method::Baseline => Estimator::baseline(cfg.baseline_params(), cfg.baseline_anchor(), cfg.contact_force_threshold_n),
        Method::Oracle => {
            let tool = tool.ok_or_else(|| Error::config("the oracle method needs a known tool shape"))?;
            Ok(Estimator::oracle(*tool, cfg.contact_force_threshold_n))
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimateRun {
    pub records: Vec<EstimateRecord>,
    pub final_shape: Option<ShapeGrid>,
    /// Shape estimates taken every snapshot period.
    pub snapshots: Vec<(f64, ShapeGrid)>,
}

/// Streams wrenches through `est`, snapshotting its shape every
/// `snapshot_period` seconds (never when the period is 0).
pub fn estimate_stream<'a>(
    est: &mut Estimator,
    wrenches: impl IntoIterator<Item = &'a Wrench>,
    snapshot_period: f64,
) -> Result<EstimateRun> {
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut next_snapshot = snapshot_period;
    for w in wrenches {
        records.push(est.push(w)?);
        if snapshot_period > 0.0 && w.t >= next_snapshot {
            if let Some(g) = est.shape()? {
                snapshots.push((w.t, g));
            }
            while next_snapshot <= w.t {
                next_snapshot += snapshot_period;
            }
        }
    }
    Ok(EstimateRun { records, final_shape: est.shape()?, snapshots })
}

/// Simulates one trial and runs one estimator over it.
pub fn run_trial(cfg: &RunConfig, method: Method, kind: ShapeKind, seed: u64) -> Result<TrialResult> {
    let tool = ToolShape::preset(kind);
    let data = simulate(&tool, &cfg.force_script(seed))?;
    let mut est = build_estimator(cfg, method, seed, Some(&tool))?;
    let run = estimate_stream(&mut est, data.iter().map(|s| &s.wrench), 0.0)?;
    let mut t = Vec::with_capacity(data.len());
    let mut errors = Vec::with_capacity(data.len());
    for (r, s) in run.records.iter().zip(&data) {
        if let Some(c) = r.estimate {
            t.push(r.t);
            errors.push((c - s.truth.c_true).norm());
        }
    }
    let shape_error_final = run.final_shape.as_ref().map(|g| shape_error(g, &tool)).transpose()?;
    Ok(TrialResult {
        method: method.name().to_string(),
        shape: kind.name().to_string(),
        seed,
        t,
        position_errors: errors,
        shape_error_final,
    })
}

fn write_config_echo(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_atomic(&out.join("config.toml"), |w| Ok(w.write_all(cfg.to_toml().as_bytes())?))
}

/// Writes `measurements.csv` (with truth columns), `truth.csv` and the
/// config echo for one simulated run of the configured shape.
pub fn run_simulate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let tool = ToolShape::preset(cfg.shape_kind()?);
    let data = simulate(&tool, &cfg.force_script(cfg.seed))?;
    let rows: Vec<Measurement> = data.iter().map(Measurement::from).collect();
    let path = out.join("measurements.csv");
    write_atomic(&path, |w| write_measurements(w, &rows))?;
    write_atomic(&out.join("truth.csv"), |w| write_truth(w, &data))?;
    write_config_echo(cfg, out)?;
    info!("wrote {} samples to {}", rows.len(), path.display());
    Ok(path)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.12e}")).unwrap_or_default()
}

/// Runs the configured method over a measurement log and writes
/// `estimates.csv`, grid snapshots, `errors.csv` when the log carries truth,
/// and the config echo.
pub fn run_estimate(cfg: &RunConfig, input: &Path, out: &Path) -> Result<EstimateRun> {
    let rows = read_measurements(input)?;
    let method = cfg.method()?;
    let tool = ToolShape::preset(cfg.shape_kind()?);
    let mut est = build_estimator(cfg, method, cfg.seed, Some(&tool))?;
    let run = estimate_stream(&mut est, rows.iter().map(|m| &m.wrench), cfg.snapshot_period_s)?;

    write_atomic(&out.join("estimates.csv"), |w| {
        writeln!(w, "t,cx,cy,ess,paused")?;
        for r in &run.records {
            writeln!(
                w,
                "{:.12e},{},{},{},{}",
                r.t,
                fmt_opt(r.estimate.map(|c| c.x)),
                fmt_opt(r.estimate.map(|c| c.y)),
                fmt_opt(r.ess),
                u8::from(r.paused)
            )?;
        }
        Ok(())
    })?;
    if rows.iter().all(|m| m.truth.is_some()) && !rows.is_empty() {
        write_atomic(&out.join("errors.csv"), |w| {
            writeln!(w, "t,position_error")?;
            for (r, m) in run.records.iter().zip(&rows) {
                let e = r.estimate.zip(m.truth).map(|(c, truth)| (c - truth).norm());
                writeln!(w, "{:.12e},{}", r.t, fmt_opt(e))?;
            }
            Ok(())
        })?;
    }
    for (t, g) in &run.snapshots {
        write_atomic(&out.join("snapshots").join(format!("grid_t{t:09.3}.txt")), |w| g.write_snapshot(w))?;
    }
    if let Some(g) = &run.final_shape {
        write_atomic(&out.join("grid_final.txt"), |w| g.write_snapshot(w))?;
    }
    write_config_echo(cfg, out)?;
    Ok(run)
}

/// One cell of a bench matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchCell {
    pub sweep_value: Option<f64>,
    pub method: Method,
    pub shape: ShapeKind,
    pub trial: usize,
}

#[derive(Debug, Default)]
pub struct BenchOutcome {
    pub trials: Vec<(BenchCell, TrialResult)>,
    pub failures: Vec<(BenchCell, String)>,
}

fn cell_tag(c: &BenchCell) -> String {
    match c.sweep_value {
        Some(v) => format!("{}_{}_{v}_{:03}", c.method, c.shape, c.trial),
        None => format!("{}_{}_{:03}", c.method, c.shape, c.trial),
    }
}

/// Runs the method × shape × trial matrix, optionally for every sweep value.
/// Trial `i` uses seed `seed + i` for every method, so all methods see the
/// same data. Outputs do not depend on scheduling.
pub fn run_bench(cfg: &RunConfig, out: &Path, sweep: bool) -> Result<BenchOutcome> {
    let methods: Vec<Method> = cfg.bench.methods.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    let shapes: Vec<ShapeKind> = cfg.bench.shapes.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let var = SweepVariable::parse(&cfg.bench.sweep_variable)?;
    let values: Vec<Option<f64>> =
        if sweep { cfg.bench.sweep_values.iter().map(|v| Some(*v)).collect() } else { vec![None] };
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let resolved: Vec<RunConfig> =
        values.iter().map(|v| v.map_or_else(|| Ok(cfg.clone()), |v| cfg.with_sweep(var, v))).collect::<Result<_>>()?;

    let mut cells = Vec::new();
    for (vi, v) in values.iter().enumerate() {
        for &method in &methods {
            for &shape in &shapes {
                for trial in 0..cfg.trials {
                    cells.push((vi, BenchCell { sweep_value: *v, method, shape, trial }));
                }
            }
        }
    }

    let results: Vec<(BenchCell, Result<TrialResult>)> = cells
        .par_iter()
        .map(|(vi, cell)| {
            let seed = cfg.seed.wrapping_add(cell.trial as u64);
            let res = run_trial(&resolved[*vi], cell.method, cell.shape, seed).and_then(|r| {
                write_atomic(&out.join("cells").join(format!("{}.csv", cell_tag(cell))), |w| {
                    writeln!(w, "t,position_error")?;
                    for (t, e) in r.t.iter().zip(&r.position_errors) {
                        writeln!(w, "{t:.6e},{e:.9e}")?;
                    }
                    Ok(())
                })?;
                Ok(r)
            });
            (*cell, res)
        })
        .collect();

    let mut outcome = BenchOutcome::default();
    for (cell, res) in results {
        match res {
            Ok(r) => outcome.trials.push((cell, r)),
            Err(e) => {
                warn!("{} failed: {e}", cell_tag(&cell));
                outcome.failures.push((cell, e.to_string()));
            }
        }
    }

    let window = (cfg.bench.window_start_s, cfg.bench.window_end_s);
    let mut rows: Vec<AggregateRow> = Vec::new();
    for v in &values {
        for &method in &methods {
            for &shape in &shapes {
                let group: Vec<TrialResult> = outcome
                    .trials
                    .iter()
                    .filter(|(c, _)| c.sweep_value == *v && c.method == method && c.shape == shape)
                    .map(|(_, r)| r.clone())
                    .collect();
                if group.is_empty() {
                    continue;
                }
                for mut row in aggregate(&group, window)? {
                    if let Some(v) = v {
                        row.metric = format!("{}@{}={v}", row.metric, var.name());
                    }
                    rows.push(row);
                }
            }
        }
    }
    write_atomic(&out.join("aggregate.csv"), |w| write_aggregate(w, &rows))?;

    let plot_name = if sweep { format!("plot_{}.csv", var.name()) } else { "plot_methods.csv".to_string() };
    write_atomic(&out.join(plot_name), |w| {
        writeln!(w, "sweep_variable,sweep_value,method,shape,trial,seed,metric,value")?;
        for (cell, r) in &outcome.trials {
            let (name, value) = match cell.sweep_value {
                Some(v) => (var.name().to_string(), format!("{v}")),
                None => (String::new(), String::new()),
            };
            let mut line = String::new();
            let prefix = format!("{name},{value},{},{},{},{}", cell.method, cell.shape, cell.trial, r.seed);
            if let Some(e) = r.window_error(window.0, window.1) {
                writeln!(line, "{prefix},position_error_window,{e:.9e}").expect("string write");
            }
            if let Some(e) = r.shape_error_final {
                writeln!(line, "{prefix},shape_error_final,{e:.9e}").expect("string write");
            }
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    })?;
    if !outcome.failures.is_empty() {
        write_atomic(&out.join("failures.csv"), |w| {
            writeln!(w, "cell,error")?;
            for (cell, e) in &outcome.failures {
                writeln!(w, "{},\"{}\"", cell_tag(cell), e.replace('"', "'"))?;
            }
            Ok(())
        })?;
    }
    write_config_echo(cfg, out)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.script.t_end_s = 2.0;
        cfg.script.t_fluct_s = 1.0;
        cfg.filter.n_particles = 20;
        cfg.naive.n_particles = 20;
        cfg.trials = 2;
        cfg.bench.shapes = vec!["straight".into(), "wavy".into()];
        cfg.bench.window_start_s = 1.0;
        cfg.bench.window_end_s = 2.0;
        cfg
    }

    #[test]
    fn oracle_trial_is_exact_on_noiseless_data() {
        let cfg = quick_config();
        let r = run_trial(&cfg, Method::Oracle, ShapeKind::Wavy, 3).unwrap();
        assert_eq!(r.position_errors.len(), 200);
        assert!(r.position_errors.iter().all(|e| *e <= 1e-6));
        assert!(r.shape_error_final.is_none());
    }

    #[test]
    fn bench_matrix_has_one_group_per_method_and_shape() {
        let cfg = quick_config();
        let dir = tempfile::tempdir().unwrap();
        let out = run_bench(&cfg, dir.path(), false).unwrap();
        assert!(out.failures.is_empty());
        assert_eq!(out.trials.len(), 4 * 2 * 2);
        let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
        // position error for all four methods, shape error for the two filters
        assert_eq!(agg.lines().count(), 1 + 2 * (4 + 2));
        assert!(dir.path().join("config.toml").exists());
    }

    #[test]
    fn snapshots_follow_the_period() {
        let mut cfg = quick_config();
        cfg.snapshot_period_s = 0.5;
        let tool = ToolShape::preset(ShapeKind::Straight);
        let data = simulate(&tool, &cfg.force_script(0)).unwrap();
        let mut est = build_estimator(&cfg, Method::Proposed, 0, None).unwrap();
        let run = estimate_stream(&mut est, data.iter().map(|s| &s.wrench), 0.5).unwrap();
        let times: Vec<f64> = run.snapshots.iter().map(|(t, _)| *t).collect();
        assert_eq!(times.len(), 3);
        for (t, want) in times.iter().zip([0.5, 1.0, 1.5]) {
            assert!((t - want).abs() < 1e-9);
        }
    }
}
