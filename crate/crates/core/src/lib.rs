//! Knowledge-graph regularized top-K recommendation in the Poincaré ball.
//!
//! Users and items are embedded in a ball of curvature `c` and ranked by
//! geodesic distance. Items are pulled toward an attention-weighted Einstein
//! midpoint of their knowledge-graph neighbors, with a per-item strength
//! learned through a one-step bilevel approximation.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the command-line tool uses.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod scalar;
pub mod trainer;

pub use config::{RegularizationMode, TrainingConfig};
pub use error::{Error, Result};
pub use model::{Aggregation, NeighborSet, Regularization, Space, Triple};
pub use scalar::{Scalar, BALL_EPS};

pub type BallPoint = geometry::BallPoint<f64>;
pub type KleinPoint = geometry::KleinPoint<f64>;
pub type ModelParameters = model::ModelParameters<f64>;
pub type OptimizerState = trainer::OptimizerState<f64>;
pub type TrainOutcome = trainer::TrainOutcome<f64>;

pub type BallPointF32 = geometry::BallPoint<f32>;
pub type ModelParametersF32 = model::ModelParameters<f32>;
