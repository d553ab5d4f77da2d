//! Coupled simulation, ensembles, convergence studies and their I/O.

pub mod checks;
pub mod config;
pub mod convergence;
pub mod ensemble;
pub mod output;
pub mod trajectory;

pub use checks::{picard_check, verify_bounds, PicardCheckReport, VerifyReport};
pub use config::{Config, InitialProfile, RunMode, RunSpec, Scheme, Splitting};
pub use convergence::{convergence_study, ConvergenceReport};
pub use ensemble::{run_ensemble, EnsembleReport};
pub use trajectory::{coupled_step, run_trajectory, TrajectoryRecord, TrajectoryStatus};
