//! Unscented transform for a planar state with a scalar observation.
//!
//! This is the per-particle proposal machinery: a random-walk predict with
//! additive noise followed by an update against the measured moment.

use nalgebra::{Cholesky, Matrix2};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

pub type Mat2 = Matrix2<f64>;

const STATE_DIM: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SigmaParams {
    fn default() -> Self {
        Self { alpha: 1e-3, beta: 2.0, kappa: 0.0 }
    }
}

impl SigmaParams {
    fn lambda(&self) -> f64 {
        self.alpha * self.alpha * (STATE_DIM + self.kappa) - STATE_DIM
    }

    /// `(Wm0, Wc0, Wi)` for the 2n+1 symmetric point set.
    fn weights(&self) -> (f64, f64, f64) {
        let lambda = self.lambda();
        let wm0 = lambda / (STATE_DIM + lambda);
        let wc0 = wm0 + 1.0 - self.alpha * self.alpha + self.beta;
        let wi = 0.5 / (STATE_DIM + lambda);
        (wm0, wc0, wi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    pub mean: Vec2,
    pub cov: Mat2,
}

impl Gaussian2 {
    pub fn new(mean: Vec2, cov: Mat2) -> Self {
        Self { mean, cov }
    }

    pub fn log_density(&self, x: &Vec2) -> Result<f64> {
        let (_, chol) = repair_spd(&self.cov)?;
        Ok(log_density_chol(&self.mean, &chol, x))
    }
}

pub(crate) fn log_density_chol(mean: &Vec2, chol: &Cholesky<f64, nalgebra::U2>, x: &Vec2) -> f64 {
    let d = x - mean;
    let l = chol.l_dirty();
    // forward substitution L y = d
    let y0 = d.x / l[(0, 0)];
    let y1 = (d.y - l[(1, 0)] * y0) / l[(1, 1)];
    let log_det = 2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln());
    -0.5 * (y0 * y0 + y1 * y1) - 0.5 * log_det - (2.0 * std::f64::consts::PI).ln()
}

/// Symmetrizes `cov` and, if it is not positive definite, adds a diagonal
/// jitter starting at 1e-12 and doubling up to ten times.
pub fn repair_spd(cov: &Mat2) -> Result<(Mat2, Cholesky<f64, nalgebra::U2>)> {
    let sym = (cov + cov.transpose()) * 0.5;
    if !sym.iter().all(|v| v.is_finite()) {
        return Err(Error::CovarianceNotSpd);
    }
    if let Some(ch) = Cholesky::new(sym) {
        return Ok((sym, ch));
    }
    let mut jitter = 1e-12;
    for _ in 0..10 {
        let m = sym + Mat2::identity() * jitter;
        if let Some(ch) = Cholesky::new(m) {
            return Ok((m, ch));
        }
        jitter *= 2.0;
    }
    Err(Error::CovarianceNotSpd)
}

fn sigma_points(g: &Gaussian2, params: &SigmaParams) -> Result<[Vec2; 5]> {
    let (_, chol) = repair_spd(&g.cov)?;
    let l = chol.l();
    let scale = (STATE_DIM + params.lambda()).sqrt();
    let c0 = l.column(0) * scale;
    let c1 = l.column(1) * scale;
    let m = g.mean;
    Ok([m, m + c0, m + c1, m - c0, m - c1])
}

/// Identity dynamics with additive process noise, pushed through sigma points.
pub fn predict(g: &Gaussian2, process_noise: &Mat2, params: &SigmaParams) -> Result<Gaussian2> {
    let pts = sigma_points(g, params)?;
    let (_, wc0, wi) = params.weights();
    let origin = pts[0];
    let mut mean_dev = Vec2::zeros();
    for p in &pts[1..] {
        mean_dev += (p - origin) * wi;
    }
    // the weights sum to one, so the mean is the center plus weighted offsets
    let mean = origin + mean_dev;
    let mut cov = Mat2::zeros();
    let d0 = origin - mean;
    cov += d0 * d0.transpose() * wc0;
    for p in &pts[1..] {
        let d = p - mean;
        cov += d * d.transpose() * wi;
    }
    Ok(Gaussian2::new(mean, cov + process_noise))
}

/// Scalar-observation update; `observe` maps a state to the predicted
/// measurement, `noise_var` is the measurement variance.
pub fn update_scalar(
    g: &Gaussian2,
    observe: impl Fn(&Vec2) -> f64,
    measured: f64,
    noise_var: f64,
    params: &SigmaParams,
) -> Result<Gaussian2> {
    let pts = sigma_points(g, params)?;
    let (_, wc0, wi) = params.weights();
    let y0 = observe(&pts[0]);
    // deviations from the central point keep the large negative central weight
    // from amplifying rounding in the mean
    let dev: [f64; 5] = std::array::from_fn(|i| if i == 0 { 0.0 } else { observe(&pts[i]) - y0 });
    let y_hat = y0 + dev[1..].iter().sum::<f64>() * wi;
    let shift = y_hat - y0;
    let mut s = wc0 * shift * shift + noise_var;
    let mut pxy = (pts[0] - g.mean) * (-shift) * wc0;
    for i in 1..5 {
        let dy = dev[i] - shift;
        s += wi * dy * dy;
        pxy += (pts[i] - g.mean) * dy * wi;
    }
    let gain = pxy / s;
    let mean = g.mean + gain * (measured - y_hat);
    let cov = g.cov - gain * gain.transpose() * s;
    Ok(Gaussian2::new(mean, (cov + cov.transpose()) * 0.5))
}

/// Exact Kalman predict + update for `z = H·x + v`, the reference the
/// unscented path must reproduce when the observation is linear.
pub fn kalman_linear(prior: &Gaussian2, process_noise: &Mat2, h: &Vec2, measured: f64, noise_var: f64) -> Gaussian2 {
    let p = prior.cov + process_noise;
    let ph = p * h;
    let s = h.dot(&ph) + noise_var;
    let gain = ph / s;
    let mean = prior.mean + gain * (measured - h.dot(&prior.mean));
    let cov = p - gain * ph.transpose();
    Gaussian2::new(mean, (cov + cov.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{moment_jacobian, predict_moment};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // relative to the magnitude of the inputs, since posterior means can sit
    // arbitrarily close to the origin
    fn rel_err_vec(a: &Vec2, b: &Vec2, scale: f64) -> f64 {
        (a - b).norm() / b.norm().max(scale)
    }

    #[test]
    fn matches_kalman_on_linear_observation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let params = SigmaParams::default();
        for _ in 0..1000 {
            let s0 = rng.gen_range(1e-3..5e-2f64);
            let s1 = rng.gen_range(1e-3..5e-2f64);
            let rot = rng.gen_range(0.0..std::f64::consts::PI);
            let (sn, cs) = rot.sin_cos();
            let r = Mat2::new(cs, -sn, sn, cs);
            let cov = r * Mat2::new(s0 * s0, 0.0, 0.0, s1 * s1) * r.transpose();
            let prior = Gaussian2::new(Vec2::new(rng.gen_range(0.0..0.4), rng.gen_range(-0.05..0.35)), cov);
            let f = Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let m = rng.gen_range(-0.5..0.5);
            let q = Mat2::identity() * rng.gen_range(1e-8..1e-4);
            let r_var = rng.gen_range(1e-8..1e-2);

            let pred = predict(&prior, &q, &params).unwrap();
            let post = update_scalar(&pred, |c| predict_moment(c, &f), m, r_var, &params).unwrap();
            let exact = kalman_linear(&prior, &q, &moment_jacobian(&f), m, r_var);
            let me = rel_err_vec(&post.mean, &exact.mean, prior.mean.norm());
            assert!(me <= 1e-9, "mean rel err {me}");
            let cov_err = (post.cov - exact.cov).norm() / exact.cov.norm();
            assert!(cov_err <= 1e-9, "cov rel err {cov_err}");
        }
    }

    #[test]
    fn closed_form_example() {
        // prior (0.2, 0), diag(1e-4); F = (0, 2); M = 0.4 → H = (2, 0)
        let prior = Gaussian2::new(Vec2::new(0.2, 0.0), Mat2::identity() * 1e-4);
        let q = Mat2::identity() * (5.25e-6f64).powi(2);
        let f = Vec2::new(0.0, 2.0);
        let r = 3.79e-4f64.powi(2);
        let pred = predict(&prior, &q, &SigmaParams::default()).unwrap();
        let post = update_scalar(&pred, |c| predict_moment(c, &f), 0.4, r, &SigmaParams::default()).unwrap();
        let p = 1e-4 + q[(0, 0)];
        let k = 2.0 * p / (4.0 * p + r);
        assert_relative_eq!(post.mean.x, 0.2, max_relative = 1e-12);
        assert_relative_eq!(post.mean.y, 0.0);
        assert_relative_eq!(post.cov[(0, 0)], p - k * 2.0 * p, max_relative = 1e-9);
        assert_relative_eq!(post.cov[(1, 1)], p, max_relative = 1e-9);
        assert!(post.cov[(0, 0)] < 1e-4);
    }

    #[test]
    fn uninformative_or_zero_force_leaves_prediction() {
        let prior = Gaussian2::new(Vec2::new(0.1, 0.2), Mat2::new(2e-4, 5e-5, 5e-5, 1e-4));
        let q = Mat2::identity() * 1e-6;
        let params = SigmaParams::default();
        let pred = predict(&prior, &q, &params).unwrap();
        assert_relative_eq!(pred.cov, prior.cov + q, max_relative = 1e-9);

        let zero = Vec2::zeros();
        let post = update_scalar(&pred, |c| predict_moment(c, &zero), 0.3, 1e-6, &params).unwrap();
        assert_relative_eq!(post.mean, pred.mean, max_relative = 1e-12);
        assert_relative_eq!(post.cov, pred.cov, max_relative = 1e-9);

        let f = Vec2::new(1.0, 2.0);
        let vague = update_scalar(&pred, |c| predict_moment(c, &f), 0.3, 1e12, &params).unwrap();
        assert_relative_eq!(vague.mean, pred.mean, max_relative = 1e-9);
        assert_relative_eq!(vague.cov, pred.cov, max_relative = 1e-9);
    }

    #[test]
    fn repair_adds_jitter_to_singular() {
        let indefinite = Mat2::new(1.0, 1.000_000_1, 1.000_000_1, 1.0) * 1e-8;
        let (fixed, _) = repair_spd(&indefinite).unwrap();
        assert!(fixed[(0, 0)] > 1e-8);
        assert!(repair_spd(&Mat2::new(-1.0, 0.0, 0.0, 1.0)).is_err());
        assert!(repair_spd(&Mat2::new(f64::NAN, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn log_density_standard_normal() {
        let g = Gaussian2::new(Vec2::zeros(), Mat2::identity());
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * 2.0;
        assert_relative_eq!(g.log_density(&Vec2::new(1.0, 1.0)).unwrap(), expected, max_relative = 1e-12);
        let g = Gaussian2::new(Vec2::zeros(), Mat2::new(4.0, 0.0, 0.0, 1.0));
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * 4f64.ln() - 0.5 * 0.25;
        assert_relative_eq!(g.log_density(&Vec2::new(1.0, 0.0)).unwrap(), expected, max_relative = 1e-12);
    }
}
