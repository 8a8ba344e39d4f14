//! Particle filter over the contact position with a shape grid per particle.
//!
//! Each particle carries a contact point, its own shape grid and the Gaussian
//! of an unscented Kalman proposal. A step first folds the previous contact
//! into every grid, then samples new contact points, weights them by moment
//! likelihood, motion model and shape prior, and resamples when the effective
//! sample size falls under the threshold.
//!
//! Two optional mixture components cover sudden contact relocation, which a
//! random walk with a millimetre-scale step cannot follow:
//!
//! * the motion model may place a contact anywhere on the grid with
//!   probability `jump_rate` per step;
//! * the proposal may, with probability `line_fraction`, draw the contact on
//!   the current line of action, spread along it by a reference shape grid.
//!
//! Both enter the weights through their exact mixture densities. With both
//! set to zero the filter is the plain unscented particle filter.

use std::sync::Arc;

use log::{debug, warn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::ensemble::{ess, normalize_log_weights, systematic_ancestors};
use crate::error::{Error, Result};
use crate::geometry::{line_of_action, predict_moment, ContactPoint, LineOfAction, Vec2, Wrench};
use crate::grid::{GridGeometry, ShapeGrid, ShapeUpdateParams};
use crate::rng::{stream, ENSEMBLE_LANE};
use crate::ukf::{predict, update_scalar, Gaussian2, Mat2, SigmaParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Resample when ESS / N drops below this ratio.
    pub n_th: f64,
    /// Random-walk std of the contact per step (m).
    pub sigma_c: f64,
    /// Moment measurement std (N·m).
    pub sigma_m: f64,
    pub shape: ShapeUpdateParams,
    pub grid: GridGeometry,
    pub ukf: SigmaParams,
    pub seed: u64,
    /// Wrenches with a smaller force norm (N) count as no contact.
    pub contact_force_threshold: f64,
    /// Per-step probability that the contact relocates uniformly on the grid.
    pub jump_rate: f64,
    /// Share of proposals drawn on the current line of action.
    pub line_fraction: f64,
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::config("n_particles must be at least 1"));
        }
        if !(self.n_th > 0.0 && self.n_th <= 1.0) {
            return Err(Error::config(format!("n_th must lie in (0, 1], got {}", self.n_th)));
        }
        if !(self.sigma_c > 0.0 && self.sigma_c.is_finite()) {
            return Err(Error::config("sigma_c must be positive"));
        }
        if !(self.sigma_m > 0.0 && self.sigma_m.is_finite()) {
            return Err(Error::config("sigma_m must be positive"));
        }
        if !(self.contact_force_threshold > 0.0) {
            return Err(Error::config("contact_force_threshold must be positive"));
        }
        if !(0.0..1.0).contains(&self.jump_rate) {
            return Err(Error::config("jump_rate must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.line_fraction) {
            return Err(Error::config("line_fraction must lie in [0, 1)"));
        }
        if !(self.ukf.alpha > 0.0) {
            return Err(Error::config("ukf alpha must be positive"));
        }
        self.shape.validate()?;
        self.grid.validate()
    }

    fn init_variance(&self) -> f64 {
        let s = 3.0 * self.sigma_c;
        s * s
    }
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub c: ContactPoint,
    /// Shared until first written, so resampling copies are cheap.
    pub grid: Arc<ShapeGrid>,
    pub log_w: f64,
    pub prop_mean: Vec2,
    pub prop_cov: Mat2,
}

impl Particle {
    pub fn weight(&self) -> f64 {
        self.log_w.exp()
    }
}

#[derive(Debug, Clone)]
pub struct FilterState {
    pub particles: Vec<Particle>,
    /// Count of accepted wrenches; also keys the random streams.
    pub step: u64,
    pub paused: bool,
    /// Force of the last accepted wrench, used for the next shape update.
    prev_force: Vec2,
    /// ESS of the last update, before any resampling.
    pub last_ess: f64,
    /// Set when the last update had to reset degenerate weights.
    pub weights_reset: bool,
}

/// Line of action clipped to the grid, with bins weighted by a shape grid.
struct LineProposal {
    line: LineOfAction,
    a0: f64,
    bin_width: f64,
    /// Cumulative bin probabilities, last entry 1.
    cdf: Vec<f64>,
    log_bin_density: Vec<f64>,
    perp_std: f64,
}

impl LineProposal {
    fn build(line: LineOfAction, grid: &ShapeGrid, force_norm: f64, sigma_m: f64) -> Option<Self> {
        let g = grid.geometry();
        let (a0, a1) = line.clip_to_box(&g.lo(), &g.hi())?;
        let len = a1 - a0;
        if !(len > 0.0) {
            return None;
        }
        let n_bins = ((len / (0.5 * g.cell_size)).ceil() as usize).max(1);
        let bin_width = len / n_bins as f64;
        let mass: Vec<f64> =
            (0..n_bins).map(|b| grid.grid_exp_value(&line.point_at(a0 + (b as f64 + 0.5) * bin_width))).collect();
        let total: f64 = mass.iter().sum();
        let mut acc = 0.0;
        let cdf = mass
            .iter()
            .map(|m| {
                acc += m / total;
                acc
            })
            .collect();
        let log_bin_density = mass.iter().map(|m| (m / total / bin_width).ln()).collect();
        Some(Self { line, a0, bin_width, cdf, log_bin_density, perp_std: sigma_m / force_norm })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec2 {
        let u: f64 = rng.gen();
        let bin = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
        let alpha = self.a0 + (bin as f64 + rng.gen::<f64>()) * self.bin_width;
        let z: f64 = StandardNormal.sample(rng);
        self.line.point_at(alpha) + self.line.normal() * (z * self.perp_std)
    }

    fn log_density(&self, c: &Vec2) -> f64 {
        let d = c - self.line.base;
        let alpha = d.dot(&self.line.dir);
        let pos = (alpha - self.a0) / self.bin_width;
        if !(pos >= 0.0) || pos >= self.cdf.len() as f64 {
            return f64::NEG_INFINITY;
        }
        let perp = d.dot(&self.line.normal()) / self.perp_std;
        self.log_bin_density[pos as usize] - 0.5 * perp * perp - self.perp_std.ln() - 0.5 * LN_2PI
    }
}

fn log_normal_iso(x: &Vec2, mean: &Vec2, var: f64) -> f64 {
    -0.5 * (x - mean).norm_squared() / var - var.ln() - LN_2PI
}

fn log_normal_1d(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var - 0.5 * var.ln() - 0.5 * LN_2PI
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn jitter<R: Rng>(rng: &mut R, std: f64) -> Vec2 {
    let x: f64 = StandardNormal.sample(rng);
    let y: f64 = StandardNormal.sample(rng);
    Vec2::new(x * std, y * std)
}

pub(crate) fn gated_norm(norm: f64, threshold: f64) -> Result<()> {
    if !(norm >= threshold) {
        return Err(Error::DegenerateWrench { norm });
    }
    Ok(())
}

fn gated(w: &Wrench, cfg: &FilterConfig) -> Result<()> {
    gated_norm(w.force_norm(), cfg.contact_force_threshold)
}

/// Draws starting positions on the first line of action, or over the whole
/// grid when the line misses it.
pub(crate) fn initial_positions(
    n: usize,
    g: &GridGeometry,
    std: f64,
    seed: u64,
    first: &Wrench,
    step: u64,
) -> Result<Vec<Vec2>> {
    let line = line_of_action(first)?;
    let span = line.clip_to_box(&g.lo(), &g.hi());
    if span.is_none() {
        warn!("t = {}: line of action misses the grid, spreading particles uniformly", first.t);
    }
    Ok((0..n)
        .map(|i| {
            let mut rng = stream(seed, step, i as u32);
            let base = match span {
                Some((a0, a1)) => line.point_at(if a1 > a0 { rng.gen_range(a0..=a1) } else { a0 }),
                None => {
                    let lo = g.lo();
                    let hi = g.hi();
                    Vec2::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y))
                }
            };
            base + jitter(&mut rng, std)
        })
        .collect())
}

/// Creates the ensemble from the first contact wrench.
pub fn init_filter(cfg: &FilterConfig, first: &Wrench) -> Result<FilterState> {
    cfg.validate()?;
    gated(first, cfg)?;
    let grid = Arc::new(ShapeGrid::new(cfg.grid));
    let log_w = -(cfg.n_particles as f64).ln();
    let cov = Mat2::identity() * cfg.init_variance();
    let particles = initial_positions(cfg.n_particles, &cfg.grid, 3.0 * cfg.sigma_c, cfg.seed, first, 0)?
        .into_iter()
        .map(|c| Particle { c, grid: Arc::clone(&grid), log_w, prop_mean: c, prop_cov: cov })
        .collect();
    Ok(FilterState {
        particles,
        step: 1,
        paused: false,
        prev_force: first.force,
        last_ess: cfg.n_particles as f64,
        weights_reset: false,
    })
}

/// One unscented predict + update of a particle's proposal Gaussian against
/// wrench `w`. On a covariance failure the proposal is retried once from the
/// initial covariance.
pub fn ukf_propose(p: &Particle, w: &Wrench, cfg: &FilterConfig) -> Result<Gaussian2> {
    let q = Mat2::identity() * (cfg.sigma_c * cfg.sigma_c);
    let r = cfg.sigma_m * cfg.sigma_m;
    let run = |cov: Mat2| -> Result<Gaussian2> {
        let prior = Gaussian2::new(p.c, cov);
        let pred = predict(&prior, &q, &cfg.ukf)?;
        update_scalar(&pred, |c| predict_moment(c, &w.force), w.moment, r, &cfg.ukf)
    };
    match run(p.prop_cov) {
        Err(Error::CovarianceNotSpd) => {
            debug!("proposal covariance repair failed, retrying from the initial covariance");
            run(Mat2::identity() * cfg.init_variance())
        }
        other => other,
    }
}

impl FilterState {
    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(Particle::weight).collect()
    }

    pub fn ess(&self) -> f64 {
        ess(self.particles.iter().map(Particle::weight))
    }

    /// Advances the ensemble by one accepted wrench.
    pub fn step(&mut self, w: &Wrench, cfg: &FilterConfig) -> Result<()> {
        if self.paused {
            return Err(Error::config("filter is paused; resume it with a contact wrench first"));
        }
        gated(w, cfg)?;
        let step = self.step;
        let f_prev = self.prev_force;
        let line = line_of_action(w)?;

        let line_prop = if cfg.line_fraction > 0.0 {
            let reference = self.reference_grid();
            LineProposal::build(line, reference, w.force_norm(), cfg.sigma_m)
        } else {
            None
        };
        let eps = if line_prop.is_some() { cfg.line_fraction } else { 0.0 };
        let ln_eps = eps.ln();
        let ln_keep = (1.0 - eps).ln();
        let jump = cfg.jump_rate;
        let ln_jump = jump.ln() - cfg.grid.area().ln();
        let ln_stay = (1.0 - jump).ln();
        let var_c = cfg.sigma_c * cfg.sigma_c;
        let var_m = cfg.sigma_m * cfg.sigma_m;

        self.particles.par_iter_mut().enumerate().try_for_each(|(i, p)| -> Result<()> {
            let mut rng = stream(cfg.seed, step, i as u32);
            Arc::make_mut(&mut p.grid).apply_shape_update(&p.c, &f_prev, &cfg.shape)?;

            let prop = ukf_propose(p, w, cfg)?;
            let (_, chol) = crate::ukf::repair_spd(&prop.cov)?;
            let c = match &line_prop {
                Some(lp) if rng.gen::<f64>() < eps => lp.sample(&mut rng),
                _ => {
                    let z = Vec2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                    prop.mean + chol.l() * z
                }
            };

            let mut log_q = crate::ukf::log_density_chol(&prop.mean, &chol, &c);
            if let Some(lp) = &line_prop {
                log_q = log_add(ln_keep + log_q, ln_eps + lp.log_density(&c));
            }
            let mut log_trans = log_normal_iso(&c, &p.c, var_c);
            if jump > 0.0 && cfg.grid.contains(&c) {
                log_trans = log_add(ln_stay + log_trans, ln_jump);
            }
            let log_lik = log_normal_1d(w.moment, predict_moment(&c, &w.force), var_m);
            p.log_w += log_lik + log_trans + p.grid.shape_log_prior(&c) - log_q;
            p.c = c;
            p.prop_mean = prop.mean;
            p.prop_cov = prop.cov;
            Ok(())
        })?;

        self.normalize();
        self.last_ess = self.ess();
        if self.last_ess < cfg.n_th * self.particles.len() as f64 {
            self.resample(cfg.seed);
        }
        self.prev_force = w.force;
        self.step += 1;
        Ok(())
    }

    fn normalize(&mut self) {
        let mut lw: Vec<f64> = self.particles.iter().map(|p| p.log_w).collect();
        self.weights_reset = !normalize_log_weights(&mut lw);
        if self.weights_reset {
            warn!("step {}: every particle weight vanished, resetting to uniform", self.step);
        }
        for (p, v) in self.particles.iter_mut().zip(lw) {
            p.log_w = v;
        }
    }

    /// Grid of the heaviest particle, used to spread line proposals.
    fn reference_grid(&self) -> &ShapeGrid {
        let best = self
            .particles
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p.log_w > acc.1 { (i, p.log_w) } else { acc });
        &self.particles[best.0].grid
    }

    /// Systematic resampling; weights become uniform.
    pub fn resample(&mut self, seed: u64) {
        let mut rng = stream(seed, self.step, ENSEMBLE_LANE);
        let ancestors = systematic_ancestors(&self.weights(), &mut rng);
        let log_w = -(self.particles.len() as f64).ln();
        let next = ancestors
            .into_iter()
            .map(|a| {
                let mut p = self.particles[a].clone();
                p.log_w = log_w;
                p
            })
            .collect();
        self.particles = next;
    }

    pub fn estimate_position(&self) -> ContactPoint {
        self.particles.iter().fold(Vec2::zeros(), |acc, p| acc + p.c * p.weight())
    }

    pub fn estimate_shape(&self) -> Result<ShapeGrid> {
        ShapeGrid::weighted_mean(self.particles.iter().map(|p| (p.grid.as_ref(), p.weight())))
    }

    /// Marks contact as lost. Grids are kept for the next contact.
    pub fn handle_contact_loss(&mut self) {
        self.paused = true;
    }

    /// Restarts positions, weights and proposals from a new contact wrench,
    /// keeping every particle's grid.
    pub fn resume(&mut self, w: &Wrench, cfg: &FilterConfig) -> Result<()> {
        gated(w, cfg)?;
        let positions = initial_positions(cfg.n_particles, &cfg.grid, 3.0 * cfg.sigma_c, cfg.seed, w, self.step)?;
        let log_w = -(self.particles.len() as f64).ln();
        let cov = Mat2::identity() * cfg.init_variance();
        for (p, c) in self.particles.iter_mut().zip(positions) {
            p.c = c;
            p.log_w = log_w;
            p.prop_mean = c;
            p.prop_cov = cov;
        }
        self.paused = false;
        self.prev_force = w.force;
        self.step += 1;
        self.last_ess = self.particles.len() as f64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::ancestor_counts;
    use approx::assert_relative_eq;

    fn small_config(n: usize) -> FilterConfig {
        FilterConfig {
            n_particles: n,
            n_th: 0.432,
            sigma_c: 5.25e-6,
            sigma_m: 3.79e-4,
            shape: ShapeUpdateParams { d_th: 0.00939, theta_th: 0.108, ds_inc: 0.0347, ds_dec: 0.0216 },
            grid: GridGeometry::new(Vec2::new(0.0, -0.05), 0.005, 80, 80).unwrap(),
            ukf: SigmaParams::default(),
            seed: 17,
            contact_force_threshold: 0.5,
            jump_rate: 0.0,
            line_fraction: 0.0,
        }
    }

    fn weight_sum(s: &FilterState) -> f64 {
        s.weights().iter().sum()
    }

    #[test]
    fn init_places_particles_on_first_line() {
        let cfg = small_config(200);
        let s = init_filter(&cfg, &Wrench::new(0.0, 0.0, 2.0, 0.4)).unwrap();
        assert_eq!(s.particles.len(), 200);
        for p in &s.particles {
            assert!((p.c.x - 0.2).abs() < 1e-4);
            assert_relative_eq!(p.log_w, -(200f64).ln());
            assert!(p.grid.values().iter().all(|v| *v == 0.0));
        }
        let ys: Vec<f64> = s.particles.iter().map(|p| p.c.y).collect();
        assert!(ys.iter().any(|y| *y < 0.05) && ys.iter().any(|y| *y > 0.25));
    }

    #[test]
    fn single_particle_has_unit_weight() {
        let cfg = small_config(1);
        let mut s = init_filter(&cfg, &Wrench::new(0.0, 0.0, 2.0, 0.4)).unwrap();
        s.step(&Wrench::new(0.01, 0.3, 2.0, 0.4 - 0.3 * 0.1), &cfg).unwrap();
        assert_relative_eq!(s.particles[0].weight(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn init_rejects_weak_or_zero_force() {
        let cfg = small_config(10);
        assert!(matches!(init_filter(&cfg, &Wrench::new(0.0, 0.0, 0.0, 0.0)), Err(Error::DegenerateWrench { .. })));
        assert!(init_filter(&cfg, &Wrench::new(0.0, 0.0, 0.4, 0.0)).is_err());
        assert!(init_filter(&cfg, &Wrench::new(0.0, 0.0, 0.5, 0.1)).is_ok());
    }

    #[test]
    fn line_missing_grid_falls_back_to_uniform() {
        let cfg = small_config(100);
        // vertical line at x = 1 m, far right of the grid
        let s = init_filter(&cfg, &Wrench::new(0.0, 0.0, 1.0, 1.0)).unwrap();
        assert!(s.particles.iter().all(|p| p.c.x < 0.41 && p.c.x > -0.01));
    }

    #[test]
    fn ukf_proposal_closed_form() {
        let mut cfg = small_config(1);
        cfg.sigma_c = 1e-3;
        cfg.sigma_m = 1e-2;
        let p = Particle {
            c: Vec2::new(0.2, 0.0),
            grid: Arc::new(ShapeGrid::new(cfg.grid)),
            log_w: 0.0,
            prop_mean: Vec2::new(0.2, 0.0),
            prop_cov: Mat2::identity() * 1e-4,
        };
        let w = Wrench::new(0.0, 0.0, 2.0, 0.4);
        let g = ukf_propose(&p, &w, &cfg).unwrap();
        // H = (2, 0); prior + Q = 1.01e-4 I
        let pxx = 1.01e-4;
        let gain = pxx * 2.0 / (4.0 * pxx + 1e-4);
        assert_relative_eq!(g.mean.x, 0.2, epsilon = 1e-12);
        assert_relative_eq!(g.mean.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(g.cov[(0, 0)], pxx - gain * 2.0 * pxx, max_relative = 1e-9);
        assert_relative_eq!(g.cov[(1, 1)], pxx, max_relative = 1e-9);
    }

    #[test]
    fn identical_particles_keep_uniform_weights() {
        // with a flat grid and no carried covariance, the proposal is the exact
        // posterior of likelihood times motion model, so every draw scores alike
        let cfg = small_config(50);
        let mut s = init_filter(&cfg, &Wrench::new(0.0, 0.0, 2.0, 0.4)).unwrap();
        for p in &mut s.particles {
            p.c = Vec2::new(0.2, 0.1);
            p.prop_mean = p.c;
            p.prop_cov = Mat2::identity() * 1e-30;
            p.grid = Arc::new(ShapeGrid::new(cfg.grid));
        }
        s.prev_force = Vec2::new(0.0, -2.0);
        s.step(&Wrench::new(0.01, 0.5, 2.0, 0.4 - 0.05), &cfg).unwrap();
        let w = s.weights();
        let (lo, hi) = w.iter().fold((f64::MAX, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        assert!(hi / lo - 1.0 < 1e-6, "{lo} {hi}");
    }

    #[test]
    fn on_line_particle_has_larger_likelihood() {
        let w = Wrench::new(0.0, 0.5, 2.0, 0.3);
        let line = line_of_action(&w).unwrap();
        let sigma_m = 3.79e-4;
        let on = line.point_at(0.05);
        let off = on + line.normal() * (10.0 * sigma_m / w.force_norm());
        let l_on = log_normal_1d(w.moment, predict_moment(&on, &w.force), sigma_m * sigma_m);
        let l_off = log_normal_1d(w.moment, predict_moment(&off, &w.force), sigma_m * sigma_m);
        assert!(l_on > l_off);
        assert_relative_eq!(l_on - l_off, 50.0, max_relative = 1e-6);
    }

    fn straight_tool_wrench(t: f64, cx: f64, angle: f64, amp: f64) -> Wrench {
        let f = Vec2::new(amp * angle.sin(), amp * angle.cos());
        let c = Vec2::new(cx, 0.1);
        Wrench::new(t, f.x, f.y, predict_moment(&c, &f))
    }

    #[test]
    fn weights_normalized_after_every_step() {
        for (jump, frac) in [(0.0, 0.0), (0.01, 0.1)] {
            let mut cfg = small_config(64);
            cfg.jump_rate = jump;
            cfg.line_fraction = frac;
            let mut s = init_filter(&cfg, &straight_tool_wrench(0.0, 0.2, 0.0, 2.0)).unwrap();
            for k in 1..150 {
                let t = k as f64 * 0.01;
                let cx = if k < 75 { 0.2 } else { 0.15 };
                s.step(&straight_tool_wrench(t, cx, 0.5 * (4.0 * std::f64::consts::PI * t).sin(), 2.0), &cfg)
                    .unwrap();
                assert!((weight_sum(&s) - 1.0).abs() < 1e-12);
                assert!(s.particles.iter().all(|p| p.log_w.is_finite() || p.log_w == f64::NEG_INFINITY));
            }
        }
    }

    #[test]
    fn grid_at_step_k_ignores_measurement_k() {
        let cfg = small_config(20);
        let w0 = straight_tool_wrench(0.0, 0.2, 0.0, 2.0);
        let s0 = init_filter(&cfg, &w0).unwrap();
        // resampling would reorder particles differently for the two inputs
        let mut cfg_nr = cfg.clone();
        cfg_nr.n_th = 1e-9;
        let mut a = s0.clone();
        let mut b = s0;
        a.step(&straight_tool_wrench(0.01, 0.2, 0.3, 2.0), &cfg_nr).unwrap();
        b.step(&straight_tool_wrench(0.01, 0.25, -0.3, 1.0), &cfg_nr).unwrap();
        for (pa, pb) in a.particles.iter().zip(&b.particles) {
            assert_eq!(pa.grid.values(), pb.grid.values());
        }
    }

    #[test]
    fn estimates_are_weighted_means() {
        let cfg = small_config(2);
        let mut s = init_filter(&cfg, &Wrench::new(0.0, 0.0, 2.0, 0.4)).unwrap();
        s.particles[0].c = Vec2::new(0.0, 0.0);
        s.particles[1].c = Vec2::new(0.2, 0.0);
        assert_relative_eq!(s.estimate_position(), Vec2::new(0.1, 0.0), epsilon = 1e-15);

        let mut ones = ShapeGrid::new(cfg.grid);
        for i in 0..cfg.grid.n_cells() {
            ones.add_to_cell(i, 1.0);
        }
        s.particles[1].grid = Arc::new(ones.clone());
        let mean = s.estimate_shape().unwrap();
        assert!(mean.values().iter().all(|v| (v - 0.5).abs() < 1e-12));

        s.particles[0].log_w = 0.0;
        s.particles[1].log_w = f64::NEG_INFINITY;
        assert_eq!(s.estimate_position(), Vec2::new(0.0, 0.0));
        assert_eq!(s.estimate_shape().unwrap().values(), s.particles[0].grid.values());
    }

    #[test]
    fn resampling_one_hot_and_example() {
        let cfg = small_config(4);
        let mut s = init_filter(&cfg, &Wrench::new(0.0, 0.0, 2.0, 0.4)).unwrap();
        for (i, p) in s.particles.iter_mut().enumerate() {
            p.c = Vec2::new(i as f64, 0.0);
            p.log_w = [0.75f64, 0.25, 0.0, 0.0][i].ln();
        }
        s.resample(3);
        let xs: Vec<f64> = s.particles.iter().map(|p| p.c.x).collect();
        assert_eq!(xs, vec![0.0, 0.0, 0.0, 1.0]);
        assert!(s.particles.iter().all(|p| (p.weight() - 0.25).abs() < 1e-15));
    }

    #[test]
    fn resampling_preserves_estimate_in_expectation() {
        let cfg = small_config(30);
        let mut s = init_filter(&cfg, &Wrench::new(0.0, 0.0, 2.0, 0.4)).unwrap();
        let mut lw: Vec<f64> = (0..30).map(|i| -((i as f64 - 12.0) / 5.0).powi(2)).collect();
        normalize_log_weights(&mut lw);
        for (p, v) in s.particles.iter_mut().zip(&lw) {
            p.log_w = *v;
        }
        let before = s.estimate_position();
        let trials = 10_000;
        let mut sum = Vec2::zeros();
        let mut sq = 0.0;
        for k in 0..trials {
            let mut r = s.clone();
            r.resample(k);
            let e = r.estimate_position();
            sum += e;
            sq += (e.y - before.y).powi(2);
        }
        let mean = sum / trials as f64;
        let se = (sq / trials as f64).sqrt() / (trials as f64).sqrt();
        assert!((mean.y - before.y).abs() <= 3.0 * se.max(1e-12), "{} vs {} (se {se})", mean.y, before.y);
        // ancestor counts bracket N·w
        let counts = ancestor_counts(
            &systematic_ancestors(&s.weights(), &mut stream(1, 1, ENSEMBLE_LANE)),
            30,
        );
        for (c, w) in counts.iter().zip(s.weights()) {
            assert!((*c as f64 - 30.0 * w).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn constant_likelihood_factor_cancels() {
        let cfg = small_config(16);
        let s = init_filter(&cfg, &Wrench::new(0.0, 0.1, 2.0, 0.38)).unwrap();
        let mut a = s.clone();
        let mut b = s;
        for p in &mut b.particles {
            p.log_w += 7.5;
        }
        let w = straight_tool_wrench(0.01, 0.2, 0.2, 2.0);
        a.step(&w, &cfg).unwrap();
        b.step(&w, &cfg).unwrap();
        for (pa, pb) in a.particles.iter().zip(&b.particles) {
            assert!((pa.log_w - pb.log_w).abs() < 1e-9);
        }
    }

    #[test]
    fn pause_and_resume_keep_grids() {
        let mut cfg = small_config(32);
        cfg.line_fraction = 0.1;
        cfg.jump_rate = 0.01;
        let mut s = init_filter(&cfg, &straight_tool_wrench(0.0, 0.2, 0.0, 2.0)).unwrap();
        for k in 1..20 {
            s.step(&straight_tool_wrench(k as f64 * 0.01, 0.2, 0.2, 2.0), &cfg).unwrap();
        }
        let grids: Vec<Vec<f64>> = s.particles.iter().map(|p| p.grid.values().to_vec()).collect();
        s.handle_contact_loss();
        assert!(s.paused);
        assert!(s.step(&straight_tool_wrench(0.3, 0.2, 0.0, 2.0), &cfg).is_err());
        s.resume(&straight_tool_wrench(0.5, 0.12, 0.1, 1.5), &cfg).unwrap();
        assert!(!s.paused);
        for (p, g) in s.particles.iter().zip(&grids) {
            assert_eq!(p.grid.values(), g.as_slice());
            assert_relative_eq!(p.weight(), 1.0 / 32.0, max_relative = 1e-12);
            assert_eq!(p.prop_cov, Mat2::identity() * cfg.init_variance());
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let mut cfg = small_config(40);
        cfg.line_fraction = 0.1;
        cfg.jump_rate = 0.01;
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut s = init_filter(&cfg, &straight_tool_wrench(0.0, 0.2, 0.0, 2.0)).unwrap();
                let mut out = Vec::new();
                for k in 1..60 {
                    let t = k as f64 * 0.01;
                    let cx = if k < 30 { 0.2 } else { 0.27 };
                    s.step(&straight_tool_wrench(t, cx, 0.4 * (12.0 * t).sin(), 1.5), &cfg).unwrap();
                    let e = s.estimate_position();
                    out.push((e.x.to_bits(), e.y.to_bits()));
                }
                out
            })
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn line_proposal_density_integrates_to_one() {
        let cfg = small_config(1);
        let mut grid = ShapeGrid::new(cfg.grid);
        for i in 0..cfg.grid.n_cells() {
            grid.add_to_cell(i, ((i * 37) % 11) as f64 * 0.3);
        }
        let w = Wrench::new(0.0, 0.6, 1.8, 0.2);
        let lp = LineProposal::build(line_of_action(&w).unwrap(), &grid, w.force_norm(), 1e-2).unwrap();
        // integrate on a lattice aligned with the line
        let n = lp.line.normal();
        let per_bin = 8;
        let na = per_bin * lp.cdf.len();
        let np = 400;
        let (da, dp) = (lp.bin_width / per_bin as f64, 12.0 * lp.perp_std / np as f64);
        let mut total = 0.0;
        for i in 0..na {
            for j in 0..np {
                let alpha = lp.a0 + (i as f64 + 0.5) * da;
                let perp = -6.0 * lp.perp_std + (j as f64 + 0.5) * dp;
                total += lp.log_density(&(lp.line.point_at(alpha) + n * perp)).exp() * da * dp;
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }
}
