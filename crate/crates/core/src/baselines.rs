//! Comparison estimators: the known-shape oracle, a shape-free recursive
//! least-squares estimator, and a joint particle filter over contact and
//! a coarse grid.

use log::{debug, warn};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::ensemble::{ess, normalize_log_weights, systematic_ancestors};
use crate::error::{Error, Result};
use crate::filter::{gated_norm, initial_positions};
use crate::geometry::{line_of_action, moment_jacobian, predict_moment, ContactPoint, Vec2, Wrench};
use crate::grid::{GridGeometry, ShapeGrid};
use crate::rng::{stream, ENSEMBLE_LANE};
use crate::sim::ToolShape;
use crate::ukf::Mat2;

const SWEEP_POINTS: usize = 2000;
const BISECTIONS: usize = 60;
/// Slack added above and below the surface's height range when clipping.
const HEIGHT_MARGIN: f64 = 0.01;

/// Intersects the line of action with the known surface `y = h(x)`.
///
/// Among several crossings the one where the force pushes into the tool is
/// returned, the smallest line parameter first. When no crossing admits a
/// pushing force the smallest-parameter crossing is returned.
pub fn oracle_estimate(w: &Wrench, surf: &ToolShape) -> Result<ContactPoint> {
    let line = line_of_action(w)?;
    let (y_lo, y_hi) = height_range(surf);
    let lo = Vec2::new(surf.x_min, y_lo - HEIGHT_MARGIN);
    let hi = Vec2::new(surf.x_max, y_hi + HEIGHT_MARGIN);
    let (a0, a1) = line.clip_to_box(&lo, &hi).ok_or(Error::NoIntersection)?;

    let gap = |a: f64| {
        let p = line.point_at(a);
        let x = p.x.clamp(surf.x_min, surf.x_max);
        p.y - surf.height_unchecked(x)
    };

    let mut roots = Vec::new();
    let step = (a1 - a0) / SWEEP_POINTS as f64;
    let mut prev_a = a0;
    let mut prev_g = gap(a0);
    if prev_g == 0.0 {
        roots.push(a0);
    }
    for k in 1..=SWEEP_POINTS {
        let a = if k == SWEEP_POINTS { a1 } else { a0 + k as f64 * step };
        let g = gap(a);
        if g == 0.0 {
            roots.push(a);
        } else if prev_g != 0.0 && (g > 0.0) != (prev_g > 0.0) {
            roots.push(bisect(&gap, prev_a, prev_g, a));
        }
        prev_a = a;
        prev_g = g;
    }

    let pushing = |a: f64| {
        let p = line.point_at(a);
        surf.inward_normal(p.x.clamp(surf.x_min, surf.x_max)).map(|n| n.dot(&w.force) >= 0.0).unwrap_or(false)
    };
    let chosen = roots.iter().copied().find(|&a| pushing(a)).or_else(|| {
        if !roots.is_empty() {
            debug!("t = {}: no crossing admits a pushing force, taking the first", w.t);
        }
        roots.first().copied()
    });
    chosen.map(|a| line.point_at(a)).ok_or(Error::NoIntersection)
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, f_lo: f64, mut hi: f64) -> f64 {
    let lo_positive = f_lo > 0.0;
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v == 0.0 {
            return mid;
        }
        if (v > 0.0) == lo_positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn height_range(surf: &ToolShape) -> (f64, f64) {
    let n = SWEEP_POINTS;
    (0..=n)
        .map(|k| surf.height_unchecked(surf.x_min + (surf.x_max - surf.x_min) * k as f64 / n as f64))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| (lo.min(h), hi.max(h)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    /// Forgetting factor in (0, 1].
    pub rho: f64,
    /// Ridge weight pulling toward the previous estimate.
    pub alpha_reg: f64,
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.alpha_reg >= 0.0 && self.alpha_reg.is_finite()) {
            return Err(Error::config("alpha_reg must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Exponentially forgotten ridge least squares on the moment residual
/// `M - H c` with `H = (f_y, -f_x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub a: Mat2,
    pub b: Vec2,
    /// Last solved estimate; anchors the ridge term.
    pub c: ContactPoint,
}

impl BaselineState {
    pub fn new(c0: ContactPoint) -> Self {
        Self { a: Mat2::zeros(), b: Vec2::zeros(), c: c0 }
    }

    /// Folds in one wrench and re-solves. The normal equations are updated
    /// even when the solve fails.
    pub fn step(&mut self, w: &Wrench, p: &BaselineParams) -> Result<ContactPoint> {
        let norm = w.force_norm();
        if !(norm > crate::geometry::FORCE_EPSILON) {
            return Err(Error::DegenerateWrench { norm });
        }
        let h = moment_jacobian(&w.force);
        let ridge = p.alpha_reg * (1.0 - p.rho);
        self.a = self.a * p.rho + h * h.transpose() + Mat2::identity() * ridge;
        self.b = self.b * p.rho + h * w.moment + self.c * ridge;
        let tr = self.a.trace();
        let det = self.a.determinant();
        if !(tr > 0.0) || det <= 1e-12 * tr * tr {
            return Err(Error::SingularNormalMatrix);
        }
        let inv = Mat2::new(self.a[(1, 1)], -self.a[(0, 1)], -self.a[(1, 0)], self.a[(0, 0)]) / det;
        self.c = inv * self.b;
        Ok(self.c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveParams {
    pub n_particles: usize,
    pub grid: GridGeometry,
    /// Random-walk std of the contact (m).
    pub sigma_c: f64,
    /// Random-walk std of every cell score.
    pub sigma_s: f64,
    /// Moment measurement std (N·m).
    pub sigma_m: f64,
    pub n_th: f64,
    pub seed: u64,
    pub contact_force_threshold: f64,
}

impl NaiveParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::config("n_particles must be at least 1"));
        }
        if !(self.n_th > 0.0 && self.n_th <= 1.0) {
            return Err(Error::config("n_th must lie in (0, 1]"));
        }
        if !(self.sigma_c > 0.0 && self.sigma_m > 0.0 && self.sigma_s >= 0.0) {
            return Err(Error::config("sigma_c and sigma_m must be positive, sigma_s non-negative"));
        }
        if !(self.contact_force_threshold > 0.0) {
            return Err(Error::config("contact_force_threshold must be positive"));
        }
        self.grid.validate()
    }

    /// Dimension of the sampled state: two contact coordinates plus one
    /// score per cell.
    pub fn state_dimension(&self) -> usize {
        2 + self.grid.n_cells()
    }
}

#[derive(Debug, Clone)]
pub struct NaiveParticle {
    pub c: ContactPoint,
    pub grid: ShapeGrid,
    pub log_w: f64,
}

/// Bootstrap particle filter over contact and every grid score jointly.
#[derive(Debug, Clone)]
pub struct NaiveState {
    pub particles: Vec<NaiveParticle>,
    pub step: u64,
    pub paused: bool,
    pub last_ess: f64,
}

impl NaiveState {
    pub fn init(p: &NaiveParams, first: &Wrench) -> Result<Self> {
        p.validate()?;
        gated_norm(first.force_norm(), p.contact_force_threshold)?;
        let grid = ShapeGrid::new(p.grid);
        let log_w = -(p.n_particles as f64).ln();
        let particles = initial_positions(p.n_particles, &p.grid, 3.0 * p.sigma_c, p.seed, first, 0)?
            .into_iter()
            .map(|c| NaiveParticle { c, grid: grid.clone(), log_w })
            .collect();
        Ok(Self { particles, step: 1, paused: false, last_ess: p.n_particles as f64 })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|q| q.log_w.exp()).collect()
    }

    pub fn step(&mut self, w: &Wrench, p: &NaiveParams) -> Result<()> {
        if self.paused {
            return Err(Error::config("filter is paused; resume it with a contact wrench first"));
        }
        gated_norm(w.force_norm(), p.contact_force_threshold)?;
        let step = self.step;
        let var_m = p.sigma_m * p.sigma_m;
        let n_cells = p.grid.n_cells();
        self.particles.par_iter_mut().enumerate().for_each(|(i, q)| {
            let mut rng = stream(p.seed, step, i as u32);
            let zx: f64 = StandardNormal.sample(&mut rng);
            let zy: f64 = StandardNormal.sample(&mut rng);
            q.c += Vec2::new(zx, zy) * p.sigma_c;
            if p.sigma_s > 0.0 {
                for cell in 0..n_cells {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    q.grid.add_to_cell(cell, z * p.sigma_s);
                }
            }
            // The random walks are the proposal, so only the likelihood and
            // the shape prior remain in the weight.
            let r = w.moment - predict_moment(&q.c, &w.force);
            q.log_w += -0.5 * r * r / var_m + q.grid.shape_log_prior(&q.c);
        });

        let mut lw: Vec<f64> = self.particles.iter().map(|q| q.log_w).collect();
        if !normalize_log_weights(&mut lw) {
            warn!("step {step}: every naive particle weight vanished, resetting to uniform");
        }
        for (q, v) in self.particles.iter_mut().zip(lw) {
            q.log_w = v;
        }
        self.last_ess = ess(self.weights());
        if self.last_ess < p.n_th * self.particles.len() as f64 {
            let mut rng = stream(p.seed, step, ENSEMBLE_LANE);
            let ancestors = systematic_ancestors(&self.weights(), &mut rng);
            let log_w = -(self.particles.len() as f64).ln();
            self.particles = ancestors
                .into_iter()
                .map(|a| NaiveParticle { log_w, ..self.particles[a].clone() })
                .collect();
        }
        self.step += 1;
        Ok(())
    }

    pub fn estimate_position(&self) -> ContactPoint {
        self.particles.iter().fold(Vec2::zeros(), |acc, q| acc + q.c * q.log_w.exp())
    }

    pub fn estimate_shape(&self) -> Result<ShapeGrid> {
        ShapeGrid::weighted_mean(self.particles.iter().map(|q| (&q.grid, q.log_w.exp())))
    }

    pub fn handle_contact_loss(&mut self) {
        self.paused = true;
    }

    /// Restarts positions and weights from a new contact, keeping grids.
    pub fn resume(&mut self, w: &Wrench, p: &NaiveParams) -> Result<()> {
        gated_norm(w.force_norm(), p.contact_force_threshold)?;
        let positions = initial_positions(p.n_particles, &p.grid, 3.0 * p.sigma_c, p.seed, w, self.step)?;
        let log_w = -(self.particles.len() as f64).ln();
        for (q, c) in self.particles.iter_mut().zip(positions) {
            q.c = c;
            q.log_w = log_w;
        }
        self.paused = false;
        self.step += 1;
        self.last_ess = self.particles.len() as f64;
        Ok(())
    }
}
