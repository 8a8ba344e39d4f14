//! Planar contact simulator.
//!
//! A tool with surface `y = h(x)` on `x ∈ [0.1, 0.3] m` is pushed at random
//! points on its surface. The tool body lies on the `+y` side of the surface,
//! so a force `f = A·(sin θ, cos θ)` with `θ = 0` pushes straight into a flat
//! tool. For the first `t_fluct` seconds the force direction oscillates
//! around the surface normal; afterwards it is held constant between
//! redraws.

use std::f64::consts::{FRAC_PI_6, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{predict_moment, ContactPoint, Vec2, Wrench};

pub const TOOL_X_MIN: f64 = 0.1;
pub const TOOL_X_MAX: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    Straight,
    Arch,
    Angular,
    Wavy,
    Knife,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] =
        [ShapeKind::Straight, ShapeKind::Arch, ShapeKind::Angular, ShapeKind::Wavy, ShapeKind::Knife];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Straight => "straight",
            ShapeKind::Arch => "arch",
            ShapeKind::Angular => "angular",
            ShapeKind::Wavy => "wavy",
            ShapeKind::Knife => "knife",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown shape {s:?} (expected straight, arch, angular, wavy or knife)")))
    }
}

/// Surface profile `y = h(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    /// `h = y0 + slope·(x − x_min)`.
    Straight { y0: f64, slope: f64 },
    /// Half sine bump over the domain.
    Arch { base: f64, height: f64 },
    /// Tent from `base` at both ends to `peak` at `peak_x`.
    Angular { base: f64, peak: f64, peak_x: f64 },
    /// `base + amplitude·sin(wavenumber·(x − x_min))`.
    Wavy { base: f64, amplitude: f64, wavenumber: f64 },
    /// Linear ramp rising by `rise` over the domain with a quadratic
    /// roll-off of depth `tip_drop` over the last `tip_width` meters.
    Knife { base: f64, rise: f64, tip_width: f64, tip_drop: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToolShape {
    pub kind: ShapeKind,
    pub profile: Profile,
    pub x_min: f64,
    pub x_max: f64,
}

impl ToolShape {
    pub fn preset(kind: ShapeKind) -> Self {
        let profile = match kind {
            ShapeKind::Straight => Profile::Straight { y0: 0.10, slope: 0.0 },
            ShapeKind::Arch => Profile::Arch { base: 0.10, height: 0.05 },
            ShapeKind::Angular => Profile::Angular { base: 0.10, peak: 0.15, peak_x: 0.2 },
            ShapeKind::Wavy => Profile::Wavy { base: 0.10, amplitude: 0.02, wavenumber: 10.0 * PI },
            ShapeKind::Knife => Profile::Knife { base: 0.10, rise: 0.08, tip_width: 0.02, tip_drop: 0.01 },
        };
        Self { kind, profile, x_min: TOOL_X_MIN, x_max: TOOL_X_MAX }
    }

    pub fn in_domain(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    fn check(&self, x: f64) -> Result<()> {
        if self.in_domain(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { x, lo: self.x_min, hi: self.x_max })
        }
    }

    /// Height `h(x)` of the surface.
    pub fn surface_height(&self, x: f64) -> Result<f64> {
        self.check(x)?;
        Ok(self.height_unchecked(x))
    }

    pub(crate) fn height_unchecked(&self, x: f64) -> f64 {
        let width = self.x_max - self.x_min;
        let u = x - self.x_min;
        match self.profile {
            Profile::Straight { y0, slope } => y0 + slope * u,
            Profile::Arch { base, height } => base + height * (PI * u / width).sin(),
            Profile::Angular { base, peak, peak_x } => {
                if x <= peak_x {
                    base + (peak - base) * (x - self.x_min) / (peak_x - self.x_min)
                } else {
                    base + (peak - base) * (self.x_max - x) / (self.x_max - peak_x)
                }
            }
            Profile::Wavy { base, amplitude, wavenumber } => base + amplitude * (wavenumber * u).sin(),
            Profile::Knife { base, rise, tip_width, tip_drop } => {
                let ramp = base + rise * u / width;
                let tip_start = self.x_max - tip_width;
                if x <= tip_start {
                    ramp
                } else {
                    let v = (x - tip_start) / tip_width;
                    ramp - tip_drop * v * v
                }
            }
        }
    }

    /// One-sided slopes `(h'(x⁻), h'(x⁺))`; equal except at kinks.
    pub fn slopes(&self, x: f64) -> Result<(f64, f64)> {
        self.check(x)?;
        let width = self.x_max - self.x_min;
        let u = x - self.x_min;
        let s = match self.profile {
            Profile::Straight { slope, .. } => (slope, slope),
            Profile::Arch { height, .. } => {
                let d = height * PI / width * (PI * u / width).cos();
                (d, d)
            }
            Profile::Angular { base, peak, peak_x } => {
                let up = (peak - base) / (peak_x - self.x_min);
                let down = -(peak - base) / (self.x_max - peak_x);
                if x < peak_x {
                    (up, up)
                } else if x > peak_x {
                    (down, down)
                } else {
                    (up, down)
                }
            }
            Profile::Wavy { amplitude, wavenumber, .. } => {
                let d = amplitude * wavenumber * (wavenumber * u).cos();
                (d, d)
            }
            Profile::Knife { rise, tip_width, tip_drop, .. } => {
                let ramp = rise / width;
                let tip_start = self.x_max - tip_width;
                let d = if x <= tip_start { ramp } else { ramp - 2.0 * tip_drop * (x - tip_start) / (tip_width * tip_width) };
                (d, d)
            }
        };
        Ok(s)
    }

    /// Unit normal pointing into the tool body (the `+y` side); at kinks the
    /// normalized mean of the one-sided normals.
    pub fn inward_normal(&self, x: f64) -> Result<Vec2> {
        let (l, r) = self.slopes(x)?;
        let nl = Vec2::new(-l, 1.0).normalize();
        let nr = Vec2::new(-r, 1.0).normalize();
        Ok((nl + nr).normalize())
    }

    /// Angle θ⊥ of the inward normal under the force convention
    /// `f = (sin θ, cos θ)`.
    pub fn surface_normal_angle(&self, x: f64) -> Result<f64> {
        let n = self.inward_normal(x)?;
        Ok(n.x.atan2(n.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma_force: f64,
    pub sigma_moment: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { sigma_force: 0.01, sigma_moment: 1e-4 }
    }
}

/// Contact and force schedule for one simulated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceScript {
    /// Amplitude of the force-direction oscillation (rad).
    pub theta0: f64,
    /// Oscillation frequency of the force direction (Hz).
    pub fluct_freq: f64,
    pub t_fluct: f64,
    pub t_end: f64,
    /// Period between redraws of contact position, amplitude and direction.
    pub hold: f64,
    pub amp_range: (f64, f64),
    /// Half-width of the direction redraw window after the oscillation stops.
    pub steady_spread: f64,
    pub dt: f64,
    pub seed: u64,
    pub noise: Option<NoiseModel>,
}

impl Default for ForceScript {
    fn default() -> Self {
        Self {
            theta0: FRAC_PI_6,
            fluct_freq: 2.0,
            t_fluct: 10.0,
            t_end: 20.0,
            hold: 1.0,
            amp_range: (1.0, 3.0),
            steady_spread: FRAC_PI_6,
            dt: 0.01,
            seed: 0,
            noise: None,
        }
    }
}

impl ForceScript {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.hold >= self.dt) {
            return Err(Error::config("dt must be positive and hold must be at least dt"));
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.theta0) {
            return Err(Error::config("theta0 must lie in [0, pi/2)"));
        }
        if !(self.t_end > 0.0) || self.t_fluct < 0.0 {
            return Err(Error::config("t_end must be positive and t_fluct non-negative"));
        }
        let (lo, hi) = self.amp_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::config("amp_range must be positive and ordered"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    fn hold_steps(&self) -> usize {
        ((self.hold / self.dt).round() as usize).max(1)
    }

    /// Force direction during the oscillation phase.
    pub fn fluctuating_angle(&self, t: f64, theta_perp: f64) -> f64 {
        self.theta0 * (2.0 * PI * self.fluct_freq * t).sin() + theta_perp
    }
}

/// Ground truth at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueState {
    pub t: f64,
    pub c_true: ContactPoint,
    pub f_true: Vec2,
    pub theta_perp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSample {
    pub wrench: Wrench,
    pub truth: TrueState,
}

/// Generates the wrench stream and ground truth for one run.
pub fn simulate(shape: &ToolShape, script: &ForceScript) -> Result<Vec<SimSample>> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(script.seed ^ 0x6e6f_6973_6520_7273);
    let hold_steps = script.hold_steps();
    let fluct_steps = (script.t_fluct / script.dt).round() as usize;
    let (a_lo, a_hi) = script.amp_range;

    let mut contact = Vec2::zeros();
    let mut theta_perp = 0.0;
    let mut amplitude = a_lo;
    let mut steady_offset = 0.0;
    let mut out = Vec::with_capacity(script.n_steps());
    for k in 0..script.n_steps() {
        let t = k as f64 * script.dt;
        if k % hold_steps == 0 {
            // fixed draw order keeps the stream aligned across phases
            let cx = rng.gen_range(shape.x_min..=shape.x_max);
            amplitude = rng.gen_range(a_lo..=a_hi);
            steady_offset = rng.gen_range(-script.steady_spread..=script.steady_spread);
            contact = Vec2::new(cx, shape.height_unchecked(cx));
            theta_perp = shape.surface_normal_angle(cx)?;
        }
        let theta = if k < fluct_steps {
            script.fluctuating_angle(t, theta_perp)
        } else {
            steady_offset + theta_perp
        };
        let f_true = Vec2::new(amplitude * theta.sin(), amplitude * theta.cos());
        let mut wrench = Wrench { t, force: f_true, moment: predict_moment(&contact, &f_true) };
        if let Some(noise) = script.noise {
            let n: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut noise_rng));
            wrench.force += Vec2::new(n[0], n[1]) * noise.sigma_force;
            wrench.moment += n[2] * noise.sigma_moment;
        }
        out.push(SimSample { wrench, truth: TrueState { t, c_true: contact, f_true, theta_perp } });
    }
    Ok(out)
}
