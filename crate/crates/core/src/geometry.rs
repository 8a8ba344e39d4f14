//! Planar wrench algebra.
//!
//! A single point contact with no torque at the contact satisfies
//! `M = c × F`. In the plane the cross product collapses to the scalar
//! `c_x f_y - c_y f_x`, so one wrench pins the contact to a line (the line of
//! action) but not to a point on it.

use nalgebra::Vector2;

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Contact position in the sensor frame, meters.
pub type ContactPoint = Vec2;

/// Forces below this norm do not define a line of action.
pub const FORCE_EPSILON: f64 = 1e-6;

/// One timestamped planar force/torque sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wrench {
    pub t: f64,
    pub force: Vec2,
    pub moment: f64,
}

impl Wrench {
    pub fn new(t: f64, fx: f64, fy: f64, moment: f64) -> Self {
        Self { t, force: Vec2::new(fx, fy), moment }
    }

    pub fn force_norm(&self) -> f64 {
        self.force.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.force.iter().all(|v| v.is_finite()) && self.moment.is_finite()
    }
}

/// The set `base + α·dir` of contact positions consistent with one wrench.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineOfAction {
    /// Foot of the perpendicular from the sensor origin.
    pub base: Vec2,
    pub dir: Vec2,
}

impl LineOfAction {
    pub fn point_at(&self, alpha: f64) -> Vec2 {
        self.base + self.dir * alpha
    }

    /// Unit normal, `dir` rotated by +90°.
    pub fn normal(&self) -> Vec2 {
        Vec2::new(-self.dir.y, self.dir.x)
    }

    /// Parameter of the orthogonal projection of `p` onto the line.
    pub fn project(&self, p: &Vec2) -> f64 {
        (p - self.base).dot(&self.dir)
    }

    /// Parameter interval where the line lies inside the axis-aligned box
    /// `[lo, hi]`, or `None` when it misses the box.
    pub fn clip_to_box(&self, lo: &Vec2, hi: &Vec2) -> Option<(f64, f64)> {
        let mut a0 = f64::NEG_INFINITY;
        let mut a1 = f64::INFINITY;
        for axis in 0..2 {
            let d = self.dir[axis];
            let b = self.base[axis];
            if d.abs() < 1e-15 {
                if b < lo[axis] || b > hi[axis] {
                    return None;
                }
                continue;
            }
            let t0 = (lo[axis] - b) / d;
            let t1 = (hi[axis] - b) / d;
            a0 = a0.max(t0.min(t1));
            a1 = a1.min(t0.max(t1));
        }
        (a0 <= a1).then_some((a0, a1))
    }
}

/// Planar cross product `c × F`, the moment a contact at `c` produces.
#[inline]
pub fn predict_moment(c: &ContactPoint, force: &Vec2) -> f64 {
    c.x * force.y - c.y * force.x
}

/// Row vector `H` with `predict_moment(c, F) = H·c`.
#[inline]
pub fn moment_jacobian(force: &Vec2) -> Vec2 {
    Vec2::new(force.y, -force.x)
}

pub fn line_of_action(w: &Wrench) -> Result<LineOfAction> {
    let f2 = w.force.norm_squared();
    let norm = f2.sqrt();
    if !(norm > FORCE_EPSILON) {
        return Err(Error::DegenerateWrench { norm });
    }
    let base = Vec2::new(w.moment * w.force.y, -w.moment * w.force.x) / f2;
    Ok(LineOfAction { base, dir: w.force / norm })
}

/// `M - c × F`; zero exactly when `c` is on the wrench's line of action.
#[inline]
pub fn moment_residual(c: &ContactPoint, w: &Wrench) -> f64 {
    w.moment - predict_moment(c, &w.force)
}

/// Membership in the double cone with the given apex, axis and half-angle.
/// The apex itself is inside.
pub fn point_in_double_cone(p: &Vec2, apex: &Vec2, axis: &Vec2, theta: f64) -> bool {
    let d = p - apex;
    let dn = d.norm();
    if dn == 0.0 {
        return true;
    }
    // |cos| of the angle to the axis line, compared without acos.
    let cos_angle = d.dot(axis).abs() / (dn * axis.norm());
    cos_angle >= theta.cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn predict_moment_examples() {
        assert_abs_diff_eq!(predict_moment(&Vec2::new(0.2, 0.1), &Vec2::new(0.0, 2.0)), 0.4, epsilon = 1e-15);
        assert_eq!(predict_moment(&Vec2::zeros(), &Vec2::new(3.0, -1.0)), 0.0);
        assert_abs_diff_eq!(predict_moment(&Vec2::new(0.15, 0.10), &Vec2::new(1.0, 1.0)), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn line_of_action_examples() {
        let l = line_of_action(&Wrench::new(0.0, 0.0, 2.0, 0.4)).unwrap();
        assert_abs_diff_eq!(l.base, Vec2::new(0.2, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(l.dir, Vec2::new(0.0, 1.0), epsilon = 1e-15);

        let l = line_of_action(&Wrench::new(0.0, 2.0, 0.0, -0.2)).unwrap();
        assert_abs_diff_eq!(l.base, Vec2::new(0.0, 0.1), epsilon = 1e-15);
        assert_abs_diff_eq!(l.dir, Vec2::new(1.0, 0.0), epsilon = 1e-15);

        assert!(matches!(
            line_of_action(&Wrench::new(0.0, 0.0, 0.0, 0.1)),
            Err(Error::DegenerateWrench { .. })
        ));
    }

    #[test]
    fn residual_examples() {
        let w = Wrench::new(0.0, 0.0, 2.0, 0.4);
        assert_abs_diff_eq!(moment_residual(&Vec2::new(0.2, 0.0), &w), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(moment_residual(&Vec2::new(0.3, 0.0), &w), -0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(moment_residual(&Vec2::new(0.2, 5.0), &w), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cone_examples() {
        let apex = Vec2::new(0.15, 0.10);
        let axis = Vec2::new(0.0, 1.0);
        assert!(point_in_double_cone(&Vec2::new(0.15, 0.14), &apex, &axis, 0.108));
        assert!(point_in_double_cone(&Vec2::new(0.15, 0.06), &apex, &axis, 0.108));
        assert!(!point_in_double_cone(&Vec2::new(0.19, 0.10), &apex, &axis, 0.108));
        assert!(point_in_double_cone(&apex, &apex, &axis, 0.108));
    }

    #[test]
    fn residual_vanishes_along_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let w = Wrench::new(0.0, rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0));
            let Ok(line) = line_of_action(&w) else { continue };
            assert_abs_diff_eq!(line.dir.norm(), 1.0, epsilon = 1e-12);
            for _ in 0..5 {
                let alpha = rng.gen_range(-1.0..1.0);
                assert!(moment_residual(&line.point_at(alpha), &w).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn cone_matches_arccos_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut checked = 0;
        while checked < 10_000 {
            let p = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let apex = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let axis = Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let theta = rng.gen_range(0.01..1.5);
            let d = p - apex;
            let cos = (d.dot(&axis) / (d.norm() * axis.norm())).clamp(-1.0, 1.0);
            let angle = cos.acos();
            let unsigned = angle.min(std::f64::consts::PI - angle);
            // skip configurations within rounding distance of the boundary
            if (unsigned - theta).abs() < 1e-9 {
                continue;
            }
            assert_eq!(point_in_double_cone(&p, &apex, &axis, theta), unsigned <= theta);
            checked += 1;
        }
    }

    #[test]
    fn clip_to_box_vertical_line() {
        let l = LineOfAction { base: Vec2::new(0.2, 0.0), dir: Vec2::new(0.0, 1.0) };
        let (a0, a1) = l.clip_to_box(&Vec2::new(0.0, -0.05), &Vec2::new(0.4, 0.35)).unwrap();
        assert_abs_diff_eq!(a0, -0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(a1, 0.35, epsilon = 1e-15);
        let off = LineOfAction { base: Vec2::new(0.5, 0.0), dir: Vec2::new(0.0, 1.0) };
        assert!(off.clip_to_box(&Vec2::new(0.0, -0.05), &Vec2::new(0.4, 0.35)).is_none());
    }

    proptest! {
        #[test]
        fn moment_is_linear_in_position(cx in -1.0..1.0f64, cy in -1.0..1.0f64,
                                        fx in -5.0..5.0f64, fy in -5.0..5.0f64, a in -3.0..3.0f64) {
            let c = Vec2::new(cx, cy);
            let f = Vec2::new(fx, fy);
            let lhs = predict_moment(&(c * a), &f);
            let rhs = a * predict_moment(&c, &f);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn double_cone_is_point_symmetric(px in -1.0..1.0f64, py in -1.0..1.0f64,
                                          ax in -1.0..1.0f64, ay in -1.0..1.0f64,
                                          theta in 0.01..1.5f64) {
            prop_assume!(ax.abs() + ay.abs() > 1e-3);
            let apex = Vec2::new(0.1, -0.2);
            let axis = Vec2::new(ax, ay);
            let p = Vec2::new(px, py);
            let mirrored = apex * 2.0 - p;
            prop_assert_eq!(point_in_double_cone(&p, &apex, &axis, theta),
                            point_in_double_cone(&mirrored, &apex, &axis, theta));
        }
    }
}
