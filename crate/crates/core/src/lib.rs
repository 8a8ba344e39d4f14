pub mod baselines;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod estimator;
pub mod filter;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod sim;
pub mod ukf;

pub use error::{Error, Result};
pub use geometry::{ContactPoint, LineOfAction, Vec2, Wrench};
pub use grid::{GridGeometry, ShapeGrid, ShapeUpdateParams};
pub use sim::{simulate, ForceScript, ShapeKind, SimSample, ToolShape};
