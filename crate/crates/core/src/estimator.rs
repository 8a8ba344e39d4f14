//! Uniform streaming interface over the four estimators, with contact
//! gating: wrenches under the force threshold pause estimation and the last
//! estimate is carried over.

use std::fmt;
use std::str::FromStr;

use log::debug;

use crate::baselines::{oracle_estimate, BaselineParams, BaselineState, NaiveParams, NaiveState};
use crate::error::{Error, Result};
use crate::filter::{init_filter, FilterConfig, FilterState};
use crate::geometry::{ContactPoint, Wrench};
use crate::grid::ShapeGrid;
use crate::sim::ToolShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Proposed,
    Naive,
    Baseline,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Proposed, Method::Naive, Method::Baseline, Method::Oracle];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Naive => "naive",
            Method::Baseline => "baseline",
            Method::Oracle => "oracle",
        }
    }

    pub fn estimates_shape(&self) -> bool {
        matches!(self, Method::Proposed | Method::Naive)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown method {s:?}; expected proposed, naive, baseline or oracle")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    pub t: f64,
    /// `None` until the first estimate exists.
    pub estimate: Option<ContactPoint>,
    /// Effective sample size after the update, for particle methods.
    pub ess: Option<f64>,
    pub paused: bool,
}

enum Inner {
    Proposed { cfg: FilterConfig, state: Option<FilterState> },
    Naive { params: NaiveParams, state: Option<NaiveState> },
    Baseline { params: BaselineParams, state: BaselineState },
    Oracle { shape: ToolShape },
}

pub struct Estimator {
    inner: Inner,
    threshold: f64,
    last: Option<ContactPoint>,
}

impl Estimator {
    pub fn proposed(cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        let threshold = cfg.contact_force_threshold;
        Ok(Self { inner: Inner::Proposed { cfg, state: None }, threshold, last: None })
    }

    pub fn naive(params: NaiveParams) -> Result<Self> {
        params.validate()?;
        let threshold = params.contact_force_threshold;
        Ok(Self { inner: Inner::Naive { params, state: None }, threshold, last: None })
    }

    /// Shape-free baseline anchored initially at `c0`.
    pub fn baseline(params: BaselineParams, c0: ContactPoint, threshold: f64) -> Result<Self> {
        params.validate()?;
        Ok(Self { inner: Inner::Baseline { params, state: BaselineState::new(c0) }, threshold, last: None })
    }

    pub fn oracle(shape: ToolShape, threshold: f64) -> Self {
        Self { inner: Inner::Oracle { shape }, threshold, last: None }
    }

    pub fn method(&self) -> Method {
        match self.inner {
            Inner::Proposed { .. } => Method::Proposed,
            Inner::Naive { .. } => Method::Naive,
            Inner::Baseline { .. } => Method::Baseline,
            Inner::Oracle { .. } => Method::Oracle,
        }
    }

    /// Feeds one wrench.
    pub fn push(&mut self, w: &Wrench) -> Result<EstimateRecord> {
        let contact = w.force_norm() >= self.threshold;
        let mut ess = None;
        let paused = !contact;
        match &mut self.inner {
            Inner::Proposed { cfg, state } => match (state.as_mut(), contact) {
                (None, false) => {}
                (None, true) => {
                    let s = init_filter(cfg, w)?;
                    ess = Some(s.last_ess);
                    self.last = Some(s.estimate_position());
                    *state = Some(s);
                }
                (Some(s), false) => {
                    s.handle_contact_loss();
                }
                (Some(s), true) => {
                    if s.paused {
                        s.resume(w, cfg)?;
                    } else {
                        s.step(w, cfg)?;
                    }
                    ess = Some(s.last_ess);
                    self.last = Some(s.estimate_position());
                }
            },
            Inner::Naive { params, state } => match (state.as_mut(), contact) {
                (None, false) => {}
                (None, true) => {
                    let s = NaiveState::init(params, w)?;
                    ess = Some(s.last_ess);
                    self.last = Some(s.estimate_position());
                    *state = Some(s);
                }
                (Some(s), false) => s.handle_contact_loss(),
                (Some(s), true) => {
                    if s.paused {
                        s.resume(w, params)?;
                    } else {
                        s.step(w, params)?;
                    }
                    ess = Some(s.last_ess);
                    self.last = Some(s.estimate_position());
                }
            },
            Inner::Baseline { params, state } => {
                if contact {
                    match state.step(w, params) {
                        Ok(c) => self.last = Some(c),
                        Err(Error::SingularNormalMatrix) => debug!("t = {}: baseline not yet determined", w.t),
                        Err(e) => return Err(e),
                    }
                }
            }
            Inner::Oracle { shape } => {
                if contact {
                    match oracle_estimate(w, shape) {
                        Ok(c) => self.last = Some(c),
                        Err(Error::NoIntersection) => {
                            debug!("t = {}: line of action misses the tool, keeping the last estimate", w.t)
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        Ok(EstimateRecord { t: w.t, estimate: self.last, ess, paused })
    }

    /// Current shape estimate, for the methods that keep one and once
    /// estimation has started.
    pub fn shape(&self) -> Result<Option<ShapeGrid>> {
        match &self.inner {
            Inner::Proposed { state: Some(s), .. } => s.estimate_shape().map(Some),
            Inner::Naive { state: Some(s), .. } => s.estimate_shape().map(Some),
            _ => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{predict_moment, Vec2};
    use crate::sim::ShapeKind;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("kalman".parse::<Method>().is_err());
    }

    fn contact(t: f64, c: Vec2, f: Vec2) -> Wrench {
        Wrench::new(t, f.x, f.y, predict_moment(&c, &f))
    }

    #[test]
    fn gating_pauses_and_carries_the_estimate() {
        let shape = ToolShape::preset(ShapeKind::Straight);
        let mut est = Estimator::oracle(shape, 0.5);
        let c = Vec2::new(0.2, 0.1);
        let r0 = est.push(&Wrench::new(0.0, 0.0, 0.1, 0.0)).unwrap();
        assert!(r0.paused && r0.estimate.is_none());
        let r1 = est.push(&contact(0.01, c, Vec2::new(0.2, 1.0))).unwrap();
        assert!(!r1.paused);
        assert!((r1.estimate.unwrap() - c).norm() < 1e-9);
        let r2 = est.push(&Wrench::new(0.02, 0.0, 0.49, 0.0)).unwrap();
        assert!(r2.paused);
        assert_eq!(r2.estimate, r1.estimate);
        // exactly at the threshold counts as contact
        let r3 = est.push(&contact(0.03, c, Vec2::new(0.0, 0.5))).unwrap();
        assert!(!r3.paused);
    }

    #[test]
    fn baseline_waits_for_a_determined_system() {
        let p = BaselineParams { rho: 1.0, alpha_reg: 0.0 };
        let mut est = Estimator::baseline(p, Vec2::zeros(), 0.5).unwrap();
        let c = Vec2::new(0.2, 0.1);
        let r = est.push(&contact(0.0, c, Vec2::new(0.0, 2.0))).unwrap();
        assert!(r.estimate.is_none());
        let r = est.push(&contact(0.01, c, Vec2::new(2.0, 0.0))).unwrap();
        assert!((r.estimate.unwrap() - c).norm() < 1e-12);
    }
}
