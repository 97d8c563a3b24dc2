//! Loss-landscape verification toolkit for deep residual networks.
//!
//! The crate evaluates ResNets with a linear head, checks the two coverage
//! conditions under which every critical point is either as good as the best
//! linear predictor or a strict saddle, constructs the corresponding escape
//! direction, and evaluates the near-identity risk and Rademacher bounds.

pub mod baseline;
pub mod bounds;
pub mod data;
pub mod error;
pub mod landscape;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod motivating;
pub mod rng;

pub use data::Dataset;
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use loss::LossKind;
pub use model::{BlockSpec, InnerKind, ParamName, ResNetSpec, Theta};
