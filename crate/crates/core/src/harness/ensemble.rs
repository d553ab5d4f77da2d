//! Monte Carlo ensembles with a deterministic, index-ordered reduction.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunSpec;
use super::trajectory::{run_on_path, Kernels, TrajectoryRecord, TrajectoryStatus};
use crate::brownian::{generate_path, PathSeed};
use crate::error::{Error, Result};

/// Slack allowed below the pathwise lower bound for round-off.
pub const LOWER_BOUND_SLACK: f64 = 1e-9;

/// Compact per-path line of an [`EnsembleReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub index: u64,
    pub status: TrajectoryStatus,
    pub final_time: f64,
    pub b_sup: f64,
    pub min_gamma: f64,
    pub min_lb_margin: f64,
    pub min_lemma32_margin: f64,
    pub h_delta_integral: f64,
    pub max_h_alpha_beta: f64,
    pub max_g1_norm: f64,
    pub max_g2_norm: f64,
    pub max_sup_a: f64,
    pub all_finite: bool,
    pub failure: Option<String>,
}

impl From<&TrajectoryRecord> for PathSummary {
    fn from(r: &TrajectoryRecord) -> Self {
        let s = &r.summary;
        Self {
            index: r.index,
            status: r.status,
            final_time: r.final_time,
            b_sup: r.b_sup,
            min_gamma: s.min_gamma,
            min_lb_margin: s.min_lb_margin,
            min_lemma32_margin: s.min_lemma32_margin,
            h_delta_integral: s.h_delta_integral,
            max_h_alpha_beta: s.max_h_alpha_beta,
            max_g1_norm: s.max_g1_norm,
            max_g2_norm: s.max_g2_norm,
            max_sup_a: s.max_sup_a,
            all_finite: s.all_finite,
            failure: r.failure.as_ref().map(|e| e.to_string()),
        }
    }
}

/// Min, median and max of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl Spread {
    /// `None` for an empty sample. Non-finite entries propagate to `max`.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Self {
            min: v[0],
            median,
            max: v[n - 1],
        })
    }
}

/// Aggregate of an ensemble. A pure function of the [`RunSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub n_paths: usize,
    pub master_seed: u64,
    pub horizon: f64,
    pub dt: f64,
    pub scheme: String,
    pub barrier: Option<f64>,
    pub global_regime: bool,
    pub delta: f64,

    pub completed: usize,
    pub blow_up: usize,
    pub positivity_failure: usize,
    pub stopped_at_tau: usize,

    /// Fraction of paths with `B*_T >= K`.
    pub bad_set_fraction: f64,
    /// Paths whose `gamma` fell below the lower bound by more than [`LOWER_BOUND_SLACK`].
    pub lower_bound_violations: usize,
    pub min_lower_bound_margin: f64,
    /// Completed paths with `B*_T < K`.
    pub restricted_paths: usize,
    pub lemma32_violations: usize,
    /// Restricted paths whose margin could not be evaluated in floating point.
    pub lemma32_unresolved: usize,
    pub min_lemma32_margin: Option<f64>,
    /// Empirical `C(T)`: per-path `max_t h_{alpha,beta}` over completed paths.
    pub h_alpha_beta: Option<Spread>,
    pub g1_norm: Option<Spread>,
    pub g2_norm: Option<Spread>,
    pub all_finite: bool,
    pub paths: Vec<PathSummary>,
}

impl EnsembleReport {
    /// Flat `key=value` lines, per-path details omitted.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("n_paths", self.n_paths.to_string());
        kv("master_seed", self.master_seed.to_string());
        kv("horizon", self.horizon.to_string());
        kv("dt", self.dt.to_string());
        kv("scheme", self.scheme.clone());
        kv("barrier_K", opt(self.barrier));
        kv("global_regime", self.global_regime.to_string());
        kv("delta", self.delta.to_string());
        kv("completed", self.completed.to_string());
        kv("blow_up", self.blow_up.to_string());
        kv("positivity_failure", self.positivity_failure.to_string());
        kv("stopped_at_tau", self.stopped_at_tau.to_string());
        kv("bad_set_fraction", self.bad_set_fraction.to_string());
        kv("lower_bound_violations", self.lower_bound_violations.to_string());
        kv("min_lower_bound_margin", self.min_lower_bound_margin.to_string());
        kv("restricted_paths", self.restricted_paths.to_string());
        kv("lemma32_violations", self.lemma32_violations.to_string());
        kv("lemma32_unresolved", self.lemma32_unresolved.to_string());
        kv("min_lemma32_margin", opt(self.min_lemma32_margin));
        for (name, spread) in [
            ("h_alpha_beta", &self.h_alpha_beta),
            ("g1_norm", &self.g1_norm),
            ("g2_norm", &self.g2_norm),
        ] {
            kv(&format!("{name}_min"), opt(spread.map(|s| s.min)));
            kv(&format!("{name}_median"), opt(spread.map(|s| s.median)));
            kv(&format!("{name}_max"), opt(spread.map(|s| s.max)));
        }
        kv("all_finite", self.all_finite.to_string());
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// Runs one path and keeps its summary only.
fn summarize(spec: &RunSpec, kernels: &Kernels, index: u64) -> Result<PathSummary> {
    let path = generate_path(spec.horizon, spec.steps, PathSeed::new(spec.master_seed, index))?;
    let rec = run_on_path(spec, kernels, &path, index, false)?;
    Ok(PathSummary::from(&rec))
}

/// Runs `spec.n_paths` trajectories on `spec.workers` threads (0 = all cores).
///
/// Trajectory errors other than blow-up and positivity failure abort the run.
pub fn run_ensemble(spec: &RunSpec) -> Result<EnsembleReport> {
    let kernels = Kernels::for_spec(spec)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let paths: Vec<PathSummary> = pool.install(|| {
        (0..spec.n_paths as u64)
            .into_par_iter()
            .map(|i| summarize(spec, &kernels, i))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(aggregate(spec, paths))
}

/// Sequential fold in index order.
pub fn aggregate(spec: &RunSpec, paths: Vec<PathSummary>) -> EnsembleReport {
    let count = |st: TrajectoryStatus| paths.iter().filter(|p| p.status == st).count();
    let barrier = spec.barrier.is_finite().then_some(spec.barrier);
    let bad = paths.iter().filter(|p| p.b_sup >= spec.barrier).count();
    let lower_bound_violations = paths
        .iter()
        .filter(|p| !(p.min_lb_margin >= -LOWER_BOUND_SLACK))
        .count();
    let min_lower_bound_margin = paths.iter().map(|p| p.min_lb_margin).fold(f64::INFINITY, f64::min);
    let restricted: Vec<&PathSummary> = paths
        .iter()
        .filter(|p| p.status == TrajectoryStatus::Completed && p.b_sup < spec.barrier)
        .collect();
    let unresolved = restricted.iter().filter(|p| !p.min_lemma32_margin.is_finite()).count();
    let lemma32_violations = restricted
        .iter()
        .filter(|p| p.min_lemma32_margin.is_finite() && p.min_lemma32_margin < 0.0)
        .count();
    let min_lemma32_margin = restricted
        .iter()
        .map(|p| p.min_lemma32_margin)
        .filter(|m| m.is_finite())
        .reduce(f64::min);
    let completed: Vec<&PathSummary> = paths.iter().filter(|p| p.status == TrajectoryStatus::Completed).collect();
    let spread = |f: fn(&PathSummary) -> f64| Spread::of(&completed.iter().map(|p| f(p)).collect::<Vec<_>>());
    EnsembleReport {
        n_paths: spec.n_paths,
        master_seed: spec.master_seed,
        horizon: spec.horizon,
        dt: spec.dt,
        scheme: spec.scheme.name().to_string(),
        barrier,
        global_regime: spec.global_regime(),
        delta: spec.monitor.delta,
        completed: count(TrajectoryStatus::Completed),
        blow_up: count(TrajectoryStatus::BlowUp),
        positivity_failure: count(TrajectoryStatus::PositivityFailure),
        stopped_at_tau: count(TrajectoryStatus::StoppedAtTau),
        bad_set_fraction: bad as f64 / paths.len().max(1) as f64,
        lower_bound_violations,
        min_lower_bound_margin,
        restricted_paths: restricted.len(),
        lemma32_violations,
        lemma32_unresolved: unresolved,
        min_lemma32_margin,
        h_alpha_beta: spread(|p| p.max_h_alpha_beta),
        g1_norm: spread(|p| p.max_g1_norm),
        g2_norm: spread(|p| p.max_g2_norm),
        all_finite: completed.iter().all(|p| p.all_finite),
        paths,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::InitialProfile;
    use crate::harness::trajectory::run_trajectory;
    use crate::model::{ModelParams, SpatialGrid};

    fn spec(n: usize) -> RunSpec {
        let params = ModelParams {
            p: 2.0,
            q: 3.0,
            r: 6.0,
            s: 1.0,
            epsilon: 0.1,
            tau: 1.0,
            a: 0.5,
            b: 1.0,
            eta: 1.0,
        };
        let grid = SpatialGrid::line(1.0, 16).unwrap();
        let a0 = InitialProfile::Cosine { sup: 2.0 }.build(&grid).unwrap();
        let mut s = RunSpec::new(params, grid, a0, 1.0, 1.0, 100).unwrap();
        s.n_paths = n;
        s.barrier = 1.0;
        s.master_seed = 99;
        s
    }

    #[test]
    fn single_path_reduces_to_trajectory() {
        let s = spec(1);
        let rep = run_ensemble(&s).unwrap();
        let rec = run_trajectory(&s, 0).unwrap();
        assert_eq!(rep.paths[0], PathSummary::from(&rec));
        assert_eq!(rep.completed, 1);
    }

    #[test]
    fn worker_count_does_not_change_the_report() {
        let mut s = spec(12);
        s.workers = 1;
        let a = run_ensemble(&s).unwrap();
        s.workers = 3;
        let b = run_ensemble(&s).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.to_key_value(), b.to_key_value());
        assert_eq!(a.lower_bound_violations, 0);
        assert_eq!(a.completed + a.blow_up + a.positivity_failure + a.stopped_at_tau, 12);
    }

    #[test]
    fn spread_examples() {
        assert_eq!(Spread::of(&[]), None);
        let s = Spread::of(&[3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!((s.min, s.median, s.max), (1.0, 2.5, 10.0));
    }
}
