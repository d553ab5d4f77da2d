//! Simulation of the stochastic shadow Gierer-Meinhardt system
//!
//! ```text
//! A_t = epsilon^2 Laplacian A - A + A^p / (gamma^q + b)      in D, t > 0
//! tau dgamma = (-gamma + mean(A^r) / gamma^s) dt + sqrt(eta) gamma dB
//! epsilon dA/dnu + a A = 0                                    on the boundary
//! ```
//!
//! The numerical kernels are generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix `f64`, which the harness uses throughout.

pub mod activator;
pub mod brownian;
pub mod error;
pub mod harness;
pub mod inhibitor;
pub mod model;
pub mod monitor;
pub mod operator;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ModelParams = model::ModelParams<f64>;
pub type SpatialGrid = model::SpatialGrid<f64>;
pub type ActivatorField = model::ActivatorField<f64>;
pub type InhibitorState = model::InhibitorState<f64>;
pub type EllipticOperator = operator::EllipticOperator<f64>;
pub type BrownianPath = brownian::BrownianPath<f64>;
pub type StoppingTime = brownian::StoppingTime<f64>;
pub type PicardWindow = activator::PicardWindow<f64>;
pub type EstimateConfig = monitor::EstimateConfig<f64>;
pub type FunctionalSeries = monitor::FunctionalSeries<f64>;
