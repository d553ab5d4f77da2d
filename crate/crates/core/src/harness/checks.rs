//! Check suites behind `verify-bounds` and `picard-check`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunSpec;
use super::ensemble::{run_ensemble, EnsembleReport};
use crate::activator::{picard_solve, picard_window_with, ImexStepper, PicardSolution, PicardWindow};
use crate::brownian::{generate_path, BrownianPath, PathSeed};
use crate::error::{Error, Result};
use crate::inhibitor::{transform_step, InhibitorStepInput};
use crate::model::{mean_power_raw, ActivatorField, ModelParams};
use crate::operator::{build_operator, EllipticOperator};
use crate::scalar::Power;

/// Outcome of the pathwise bound checks over an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    /// The lower bound is only asserted in the `tau = eta = 1` normalization.
    pub lower_bound_checked: bool,
    pub lower_bound_ok: bool,
    pub lemma32_ok: bool,
    /// No blow-up, and `h_{alpha,beta}`, `g1`, `g2` finite on every completed path.
    /// `h_delta` is excluded: `gamma^{-delta}` may leave floating-point range
    /// on unrestricted paths without any blow-up of the solution.
    pub bounded_ok: bool,
    pub ensemble: EnsembleReport,
}

impl VerifyReport {
    /// 3 for blow-up in the global regime, 2 for any other violation, else 0.
    pub fn exit_code(&self) -> i32 {
        if self.ensemble.global_regime && !self.bounded_ok {
            3
        } else if !(self.lower_bound_ok && self.lemma32_ok) {
            2
        } else {
            0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lower_bound_checked={}", self.lower_bound_checked);
        let _ = writeln!(out, "lower_bound_ok={}", self.lower_bound_ok);
        let _ = writeln!(out, "lemma32_ok={}", self.lemma32_ok);
        let _ = writeln!(out, "bounded_ok={}", self.bounded_ok);
        out.push_str(&self.ensemble.to_key_value());
        out
    }
}

pub fn verify_bounds(spec: &RunSpec) -> Result<VerifyReport> {
    let ensemble = run_ensemble(spec)?;
    let lower_bound_checked = spec.params.is_normalized();
    Ok(VerifyReport {
        lower_bound_checked,
        lower_bound_ok: !lower_bound_checked || ensemble.lower_bound_violations == 0,
        lemma32_ok: ensemble.lemma32_violations == 0,
        bounded_ok: ensemble.blow_up == 0
            && [ensemble.h_alpha_beta, ensemble.g1_norm, ensemble.g2_norm]
                .iter()
                .all(|s| s.is_none_or(|s| s.max.is_finite())),
        ensemble,
    })
}

/// Fine IMEX integration of the coupled system on the Picard time nodes.
///
/// Each node interval is split into `refine` Lie steps (transform step for
/// `gamma`, then [`ImexStepper`]), with `B` read by linear interpolation.
pub fn imex_reference(
    a0: &ActivatorField<f64>,
    gamma0: f64,
    path: &BrownianPath<f64>,
    times: &[f64],
    refine: usize,
    op: &EllipticOperator<f64>,
    params: &ModelParams<f64>,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if times.len() < 2 || refine == 0 {
        return Err(Error::InvalidArgument("need at least one interval and refine >= 1".into()));
    }
    let h = (times[1] - times[0]) / refine as f64;
    let mut stepper = ImexStepper::new(std::sync::Arc::new(op.propagator(h, op.tolerance())?), params);
    let r = Power::new(params.r);
    let mut a = a0.values().to_vec();
    let mut gamma = gamma0;
    let mut a_hist = vec![a.clone()];
    let mut g_hist = vec![gamma];
    for w in times.windows(2) {
        for k in 0..refine {
            let t0 = w[0] + k as f64 * h;
            let db = path.value_at(t0 + h) - path.value_at(t0);
            let mean_r = mean_power_raw(&a, op.grid(), &r);
            gamma = transform_step(&InhibitorStepInput {
                gamma,
                mean_r,
                dt: h,
                db,
                params,
            })?;
            stepper.step(&mut a, gamma)?;
        }
        a_hist.push(a.clone());
        g_hist.push(gamma);
    }
    Ok((a_hist, g_hist))
}

/// `sup_j ||A_j - A'_j||_C + sup_j |gamma_j - gamma'_j|`.
pub fn history_distance(a1: &[Vec<f64>], g1: &[f64], a2: &[Vec<f64>], g2: &[f64]) -> f64 {
    let da = a1
        .iter()
        .zip(a2)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let dg = g1.iter().zip(g2).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    da + dg
}

/// One Picard window on one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardInstance {
    pub index: u64,
    pub window: PicardWindow<f64>,
    pub end: f64,
    pub iterations: usize,
    pub distances: Vec<f64>,
    /// Largest successive-distance ratio after the first iterate.
    pub max_ratio: f64,
    /// Distance of the fixed point from a fine IMEX run.
    pub imex_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardCheckReport {
    pub tol: f64,
    pub instances: Vec<PicardInstance>,
    pub max_ratio: f64,
    pub max_imex_distance: f64,
    /// Ratios at most 0.6 and IMEX distance below `10 tol` on every instance.
    pub passed: bool,
}

impl PicardCheckReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "instances={}", self.instances.len());
        let _ = writeln!(out, "tol={}", self.tol);
        let _ = writeln!(out, "max_ratio={}", self.max_ratio);
        let _ = writeln!(out, "max_imex_distance={}", self.max_imex_distance);
        let _ = writeln!(out, "passed={}", self.passed);
        out
    }
}

/// Largest ratio after the first iterate; 0 when there are fewer than two ratios.
pub fn max_ratio_after_first(solution: &PicardSolution<f64>) -> f64 {
    solution.ratios.iter().skip(1).copied().fold(0.0, f64::max)
}

/// Subsamples per Picard interval in the IMEX comparison.
pub const IMEX_REFINE: usize = 16;

/// Solves one window per path index using the spec's initial data and barrier.
pub fn picard_check(spec: &RunSpec) -> Result<PicardCheckReport> {
    if !spec.barrier.is_finite() {
        return Err(Error::InvalidArgument("picard-check needs a finite barrier K".into()));
    }
    let op = build_operator(&spec.grid, &spec.params)?.with_tolerance(spec.semigroup_tol);
    let window = picard_window_with(
        &spec.initial,
        spec.gamma0,
        spec.barrier,
        &spec.params,
        spec.picard_safety_factor,
    )?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let instances = pool.install(|| {
        (0..spec.n_paths as u64)
            .into_par_iter()
            .map(|i| picard_instance(spec, &op, &window, i))
            .collect::<Result<Vec<_>>>()
    })?;
    let max_ratio = instances.iter().map(|p| p.max_ratio).fold(0.0, f64::max);
    let max_imex_distance = instances.iter().map(|p| p.imex_distance).fold(0.0, f64::max);
    Ok(PicardCheckReport {
        tol: spec.picard.tol,
        passed: max_ratio <= 0.6 && max_imex_distance < 10.0 * spec.picard.tol,
        instances,
        max_ratio,
        max_imex_distance,
    })
}

fn picard_instance(
    spec: &RunSpec,
    op: &EllipticOperator<f64>,
    window: &PicardWindow<f64>,
    index: u64,
) -> Result<PicardInstance> {
    let nodes = spec.picard.history_nodes;
    let path = generate_path(window.t_hat, nodes * IMEX_REFINE, PathSeed::new(spec.master_seed, index))?;
    let sol = picard_solve(&spec.initial, spec.gamma0, &path, window, op, &spec.params, &spec.picard)?;
    let (a_ref, g_ref) = imex_reference(&spec.initial, spec.gamma0, &path, &sol.times, IMEX_REFINE, op, &spec.params)?;
    Ok(PicardInstance {
        index,
        window: *window,
        end: sol.end,
        iterations: sol.iterations,
        max_ratio: max_ratio_after_first(&sol),
        imex_distance: history_distance(&sol.a_history, &sol.gamma_history, &a_ref, &g_ref),
        distances: sol.distances,
    })
}
