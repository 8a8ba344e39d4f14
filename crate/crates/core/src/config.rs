//! Run configuration: a TOML file whose sections feed each estimator and the
//! simulator. Every length is in metres and every moment in N·m. Missing keys
//! take the simulation defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineParams, NaiveParams};
use crate::error::{Error, Result};
use crate::estimator::Method;
use crate::filter::FilterConfig;
use crate::geometry::Vec2;
use crate::grid::{GridGeometry, ShapeUpdateParams};
use crate::rng::derive_seed;
use crate::sim::{ForceScript, NoiseModel, ShapeKind};
use crate::ukf::SigmaParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub method: String,
    pub shape: String,
    pub trials: usize,
    /// Seconds between grid snapshots written by `estimate`; 0 disables.
    pub snapshot_period_s: f64,
    /// Wrenches with a smaller force norm (N) count as no contact.
    pub contact_force_threshold_n: f64,
    pub filter: FilterSection,
    pub grid: GridSection,
    pub baseline: BaselineSection,
    pub naive: NaiveSection,
    pub script: ScriptSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub n_particles: usize,
    pub n_th: f64,
    pub sigma_c_m: f64,
    pub sigma_m_nm: f64,
    pub d_th_m: f64,
    pub theta_th_rad: f64,
    pub ds_inc: f64,
    pub ds_dec: f64,
    pub jump_rate: f64,
    pub line_fraction: f64,
    pub ukf_alpha: f64,
    pub ukf_beta: f64,
    pub ukf_kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub origin_x_m: f64,
    pub origin_y_m: f64,
    pub cell_size_m: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub rho: f64,
    pub alpha_reg: f64,
    /// Starting anchor of the ridge term.
    pub c0_x_m: f64,
    pub c0_y_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NaiveSection {
    pub n_particles: usize,
    pub n_th: f64,
    pub sigma_c_m: f64,
    pub sigma_s: f64,
    pub sigma_m_nm: f64,
    pub origin_x_m: f64,
    pub origin_y_m: f64,
    pub cell_size_m: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptSection {
    pub theta0_rad: f64,
    pub fluct_freq_hz: f64,
    pub t_fluct_s: f64,
    pub t_end_s: f64,
    pub hold_s: f64,
    pub amp_min_n: f64,
    pub amp_max_n: f64,
    pub steady_spread_rad: f64,
    pub dt_s: f64,
    pub noise: bool,
    pub sigma_force_n: f64,
    pub sigma_moment_nm: f64,
}

/// Bench matrix and optional sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub methods: Vec<String>,
    pub shapes: Vec<String>,
    /// Position-error window (s) for the aggregate.
    pub window_start_s: f64,
    pub window_end_s: f64,
    /// One of `n_particles`, `cell_size_m`, `theta0_rad`; used by `sweep`.
    pub sweep_variable: String,
    pub sweep_values: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            method: "proposed".into(),
            shape: "straight".into(),
            trials: 10,
            snapshot_period_s: 5.0,
            contact_force_threshold_n: 0.5,
            filter: FilterSection::default(),
            grid: GridSection::default(),
            baseline: BaselineSection::default(),
            naive: NaiveSection::default(),
            script: ScriptSection::default(),
            bench: BenchSection::default(),
        }
    }
}

impl Default for FilterSection {
    fn default() -> Self {
        let u = SigmaParams::default();
        Self {
            n_particles: 300,
            n_th: 0.432,
            sigma_c_m: 5.25e-6,
            sigma_m_nm: 3.79e-4,
            d_th_m: 0.00939,
            theta_th_rad: 0.108,
            ds_inc: 0.0347,
            ds_dec: 0.0216,
            jump_rate: 0.01,
            line_fraction: 0.1,
            ukf_alpha: u.alpha,
            ukf_beta: u.beta,
            ukf_kappa: u.kappa,
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        Self { origin_x_m: 0.0, origin_y_m: -0.05, cell_size_m: 0.005, nx: 80, ny: 80 }
    }
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self { rho: 0.992, alpha_reg: 860.0, c0_x_m: 0.2, c0_y_m: 0.15 }
    }
}

impl Default for NaiveSection {
    fn default() -> Self {
        Self {
            n_particles: 300,
            n_th: 0.432,
            sigma_c_m: 1.14e-4,
            sigma_s: 4.37e-3,
            sigma_m_nm: 1.69e-5,
            origin_x_m: 0.0,
            origin_y_m: -0.05,
            cell_size_m: 0.08,
            nx: 5,
            ny: 5,
        }
    }
}

impl Default for ScriptSection {
    fn default() -> Self {
        let s = ForceScript::default();
        let n = NoiseModel::default();
        Self {
            theta0_rad: s.theta0,
            fluct_freq_hz: s.fluct_freq,
            t_fluct_s: s.t_fluct,
            t_end_s: s.t_end,
            hold_s: s.hold,
            amp_min_n: s.amp_range.0,
            amp_max_n: s.amp_range.1,
            steady_spread_rad: s.steady_spread,
            dt_s: s.dt,
            noise: false,
            sigma_force_n: n.sigma_force,
            sigma_moment_nm: n.sigma_moment,
        }
    }
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            methods: Method::ALL.iter().map(|m| m.name().to_string()).collect(),
            shapes: ShapeKind::ALL.iter().map(|s| s.name().to_string()).collect(),
            window_start_s: 10.0,
            window_end_s: 20.0,
            sweep_variable: "n_particles".into(),
            sweep_values: vec![10.0, 30.0, 100.0, 300.0, 1000.0],
        }
    }
}

/// Quantity varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    Particles,
    CellSize,
    Theta0,
}

impl SweepVariable {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "n_particles" => Ok(Self::Particles),
            "cell_size_m" => Ok(Self::CellSize),
            "theta0_rad" => Ok(Self::Theta0),
            other => Err(Error::config(format!(
                "unknown sweep variable {other:?}; expected n_particles, cell_size_m or theta0_rad"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Particles => "n_particles",
            Self::CellSize => "cell_size_m",
            Self::Theta0 => "theta0_rad",
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The fully resolved configuration, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.method()?;
        self.shape_kind()?;
        for m in &self.bench.methods {
            m.parse::<Method>()?;
        }
        for s in &self.bench.shapes {
            s.parse::<ShapeKind>()?;
        }
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if !(self.snapshot_period_s >= 0.0) {
            return Err(Error::config("snapshot_period_s must be non-negative"));
        }
        if !(self.bench.window_end_s > self.bench.window_start_s) {
            return Err(Error::config("bench window must have positive length"));
        }
        SweepVariable::parse(&self.bench.sweep_variable)?;
        self.filter_config(self.seed)?.validate()?;
        self.naive_params(self.seed)?.validate()?;
        self.baseline_params().validate()?;
        self.force_script(self.seed).validate()
    }

    pub fn method(&self) -> Result<Method> {
        self.method.parse()
    }

    pub fn shape_kind(&self) -> Result<ShapeKind> {
        self.shape.parse()
    }

    pub fn grid_geometry(&self) -> Result<GridGeometry> {
        let g = &self.grid;
        GridGeometry::new(Vec2::new(g.origin_x_m, g.origin_y_m), g.cell_size_m, g.nx, g.ny)
    }

    /// Filter settings for a run whose data were generated with `seed`.
    pub fn filter_config(&self, seed: u64) -> Result<FilterConfig> {
        let f = &self.filter;
        Ok(FilterConfig {
            n_particles: f.n_particles,
            n_th: f.n_th,
            sigma_c: f.sigma_c_m,
            sigma_m: f.sigma_m_nm,
            shape: ShapeUpdateParams {
                d_th: f.d_th_m,
                theta_th: f.theta_th_rad,
                ds_inc: f.ds_inc,
                ds_dec: f.ds_dec,
            },
            grid: self.grid_geometry()?,
            ukf: SigmaParams { alpha: f.ukf_alpha, beta: f.ukf_beta, kappa: f.ukf_kappa },
            seed: derive_seed(seed, 1),
            contact_force_threshold: self.contact_force_threshold_n,
            jump_rate: f.jump_rate,
            line_fraction: f.line_fraction,
        })
    }

    pub fn naive_params(&self, seed: u64) -> Result<NaiveParams> {
        let n = &self.naive;
        Ok(NaiveParams {
            n_particles: n.n_particles,
            grid: GridGeometry::new(Vec2::new(n.origin_x_m, n.origin_y_m), n.cell_size_m, n.nx, n.ny)?,
            sigma_c: n.sigma_c_m,
            sigma_s: n.sigma_s,
            sigma_m: n.sigma_m_nm,
            n_th: n.n_th,
            seed: derive_seed(seed, 2),
            contact_force_threshold: self.contact_force_threshold_n,
        })
    }

    pub fn baseline_params(&self) -> BaselineParams {
        BaselineParams { rho: self.baseline.rho, alpha_reg: self.baseline.alpha_reg }
    }

    pub fn baseline_anchor(&self) -> Vec2 {
        Vec2::new(self.baseline.c0_x_m, self.baseline.c0_y_m)
    }

    pub fn force_script(&self, seed: u64) -> ForceScript {
        let s = &self.script;
        ForceScript {
            theta0: s.theta0_rad,
            fluct_freq: s.fluct_freq_hz,
            t_fluct: s.t_fluct_s,
            t_end: s.t_end_s,
            hold: s.hold_s,
            amp_range: (s.amp_min_n, s.amp_max_n),
            steady_spread: s.steady_spread_rad,
            dt: s.dt_s,
            seed,
            noise: s.noise.then_some(NoiseModel { sigma_force: s.sigma_force_n, sigma_moment: s.sigma_moment_nm }),
        }
    }

    /// Applies one sweep value. Cell-size sweeps keep the grid's extent.
    pub fn with_sweep(&self, var: SweepVariable, value: f64) -> Result<Self> {
        let mut out = self.clone();
        match var {
            SweepVariable::Particles => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::config(format!("particle count must be a positive integer, got {value}")));
                }
                out.filter.n_particles = value as usize;
            }
            SweepVariable::CellSize => {
                let g = &self.grid;
                let (w, h) = (g.cell_size_m * g.nx as f64, g.cell_size_m * g.ny as f64);
                out.grid.cell_size_m = value;
                out.grid.nx = (w / value).round().max(1.0) as usize;
                out.grid.ny = (h / value).round().max(1.0) as usize;
            }
            SweepVariable::Theta0 => out.script.theta0_rad = value,
        }
        out.validate()?;
        Ok(out)
    }
}
