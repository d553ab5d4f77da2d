//! Strong convergence of the terminal inhibitor value under `dt` halving.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunSpec;
use super::trajectory::{run_on_path, Kernels, TrajectoryStatus};
use crate::brownian::{generate_path, refine_path, PathSeed};
use crate::error::{Error, Result};

/// What the levels are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Closed-form stochastic exponential; available when `A0 = 0`.
    Exact,
    /// [`REFERENCE_HALVINGS`] extra halvings beyond the finest reported level.
    Finest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub scheme: String,
    pub n_paths: usize,
    pub reference: Reference,
    pub dts: Vec<f64>,
    /// `E |gamma_dt(T) - gamma_ref(T)|` per level.
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log dt`; `None` if an error is zero.
    pub slope: Option<f64>,
}

impl ConvergenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "scheme={}", self.scheme);
        let _ = writeln!(out, "n_paths={}", self.n_paths);
        let _ = writeln!(
            out,
            "reference={}",
            match self.reference {
                Reference::Exact => "exact",
                Reference::Finest => "finest",
            }
        );
        for (i, (dt, e)) in self.dts.iter().zip(&self.errors).enumerate() {
            let _ = writeln!(out, "level{i}_dt={dt}");
            let _ = writeln!(out, "level{i}_error={e}");
        }
        let _ = writeln!(
            out,
            "slope={}",
            self.slope.map_or_else(|| "none".to_string(), |s| s.to_string())
        );
        out
    }
}

/// Extra halvings of the numerical reference, so that its own error does
/// not bias the fitted slope.
pub const REFERENCE_HALVINGS: usize = 3;

/// Least-squares slope of `y` against `x`.
pub fn fitted_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Runs `levels` time steps `spec.dt / 2^k`, `k = 0..levels`, on bridge-refined
/// common paths and measures the mean absolute error of `gamma(T)`.
pub fn convergence_study(spec: &RunSpec, levels: usize) -> Result<ConvergenceReport> {
    if levels < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 levels, got {levels}")));
    }
    let exact = spec.initial.values().iter().all(|&v| v == 0.0);
    let finest = if exact { levels - 1 } else { levels - 1 + REFERENCE_HALVINGS };
    let specs: Vec<RunSpec> = (0..=finest)
        .map(|k| {
            let mut s = spec.clone();
            s.steps = spec.steps << k;
            s.dt = spec.horizon / s.steps as f64;
            s.record_every = s.steps;
            s
        })
        .collect();
    let kernels = specs.iter().map(Kernels::for_spec).collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;

    let per_path: Vec<Vec<f64>> = pool.install(|| {
        (0..spec.n_paths as u64)
            .into_par_iter()
            .map(|i| -> Result<Vec<f64>> {
                let coarse = generate_path(spec.horizon, spec.steps, PathSeed::new(spec.master_seed, i))?;
                let fine = refine_path(&coarse, 1 << finest)?;
                let mut finals = Vec::with_capacity(finest + 2);
                for (k, (s, kern)) in specs.iter().zip(&kernels).enumerate() {
                    let path = fine.subsample(1 << (finest - k))?;
                    let rec = run_on_path(s, kern, &path, i, false)?;
                    if rec.status != TrajectoryStatus::Completed {
                        return Err(Error::Trajectory {
                            index: i,
                            time: rec.final_time,
                            source: Box::new(rec.failure.unwrap_or(Error::InvalidArgument(
                                "trajectory stopped early".into(),
                            ))),
                        });
                    }
                    finals.push(rec.final_gamma);
                }
                if exact {
                    let p = &spec.params;
                    let b_t = *fine.values().last().expect("non-empty path");
                    let rate = 1.0 / p.tau + p.eta / (2.0 * p.tau * p.tau);
                    finals.push(spec.gamma0 * (-rate * spec.horizon + p.eta.sqrt() / p.tau * b_t).exp());
                }
                Ok(finals)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let n = per_path.len() as f64;
    let errors: Vec<f64> = (0..levels)
        .map(|k| per_path.iter().map(|f| (f[k] - f[f.len() - 1]).abs()).sum::<f64>() / n)
        .collect();
    let dts: Vec<f64> = specs.iter().take(levels).map(|s| s.dt).collect();
    let slope = errors.iter().all(|&e| e > 0.0).then(|| {
        let x: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
        let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
        fitted_slope(&x, &y)
    });
    Ok(ConvergenceReport {
        scheme: spec.scheme.name().to_string(),
        n_paths: spec.n_paths,
        reference: if exact { Reference::Exact } else { Reference::Finest },
        dts,
        errors,
        slope,
    })
}
