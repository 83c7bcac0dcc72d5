//! Hyperbolic open-set few-shot class-incremental learning at desk scale.
//!
//! The crate combines a Poincaré-ball geometry core, a scalar reverse-mode
//! differentiation engine, an open-set base classifier built on reciprocal
//! points with integrated Euclidean + hyperbolic distances, an incremental
//! branch with distillation and hyperbolic metric learning, and a session
//! protocol with the usual accuracy / performance-drop / average metrics.
//!
//! The geometry and autodiff cores are generic over the scalar type via
//! `num-traits`; the training pipeline instantiates them at `f64` (see the
//! aliases below), since single precision is not reliable near the ball
//! boundary.

pub mod backbone;
pub mod ball;
pub mod config;
pub mod data;
pub mod diff;
pub mod diffgeo;
pub mod error;
pub mod gradcheck;
pub mod incremental;
pub mod model;
pub mod optim;
pub mod protocol;
pub mod real;
pub mod report;
pub mod rpl;
pub mod runner;

#[cfg(test)]
pub(crate) mod testutil;

pub use ball::BallConfig;
pub use diff::Value;
pub use error::{Error, Result};
pub use gradcheck::finite_difference_check;
pub use optim::{ParameterStore, SgdConfig};
pub use real::Real;

/// f64 instantiations used by the training pipeline.
pub type Ball64 = ball::BallConfig<f64>;
pub type Ball32 = ball::BallConfig<f32>;
pub type Value64 = diff::Value<f64>;
pub type Store64 = optim::ParameterStore<f64>;
