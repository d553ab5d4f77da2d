//! Coupled stepping of `(A, gamma)` along one Brownian path.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunMode, RunSpec, Scheme, Splitting};
use crate::activator::ImexStepper;
use crate::brownian::{generate_path, BrownianPath, PathSeed, StreamRegion};
use crate::error::{Error, Result};
use crate::inhibitor::{em_step_adaptive, ode_step, transform_step, InhibitorStepInput};
use crate::model::{mean_power_raw, ActivatorField, ModelParams, SpatialGrid};
use crate::monitor::{FunctionalSeries, Monitor, MonitorSummary};
use crate::operator::{build_operator, Propagator};
use crate::scalar::Power;

/// Propagators shared by every trajectory of a run.
#[derive(Debug, Clone)]
pub struct Kernels {
    full: Arc<Propagator<f64>>,
    half: Option<Arc<Propagator<f64>>>,
}

impl Kernels {
    pub fn new(
        grid: &SpatialGrid<f64>,
        params: &ModelParams<f64>,
        dt: f64,
        splitting: Splitting,
        tol: f64,
    ) -> Result<Self> {
        let op = build_operator(grid, params)?;
        let full = Arc::new(op.propagator(dt, tol)?);
        let half = match splitting {
            Splitting::Lie => None,
            Splitting::Strang => Some(Arc::new(op.propagator(dt / 2.0, tol)?)),
        };
        Ok(Self { full, half })
    }

    pub fn for_spec(spec: &RunSpec) -> Result<Self> {
        Self::new(&spec.grid, &spec.params, spec.dt, spec.splitting, spec.semigroup_tol)
    }
}

/// Splitting stepper for one trajectory.
///
/// Lie: freeze `mean(A^r)`, advance `gamma`, then advance `A` with the new
/// `gamma`. Strang: half activator step, full inhibitor step, half activator step.
#[derive(Debug, Clone)]
pub struct CoupledStepper {
    params: ModelParams<f64>,
    grid: SpatialGrid<f64>,
    scheme: Scheme,
    max_halvings: u32,
    imex: ImexStepper<f64>,
    half: Option<ImexStepper<f64>>,
    r_power: Power<f64>,
    reaction: bool,
    halving_rng: ChaCha8Rng,
}

impl CoupledStepper {
    pub fn new(spec: &RunSpec, kernels: &Kernels, seed: PathSeed) -> Self {
        let threshold = spec.monitor.blow_up_threshold;
        let make = |p: &Arc<Propagator<f64>>| {
            let s = ImexStepper::new(p.clone(), &spec.params).with_blowup_threshold(threshold);
            if spec.reaction {
                s
            } else {
                s.without_reaction()
            }
        };
        Self {
            params: spec.params,
            grid: spec.grid.clone(),
            scheme: spec.scheme,
            max_halvings: spec.max_halvings,
            imex: make(&kernels.full),
            half: kernels.half.as_ref().map(make),
            r_power: Power::new(spec.params.r),
            reaction: spec.reaction,
            halving_rng: seed.rng(StreamRegion::Halving),
        }
    }

    pub fn mean_r(&self, values: &[f64]) -> f64 {
        mean_power_raw(values, &self.grid, &self.r_power)
    }

    fn inhibitor(&mut self, gamma: f64, mean_r: f64, db: f64) -> Result<f64> {
        let dt = self.imex.dt();
        let input = InhibitorStepInput {
            gamma,
            mean_r,
            dt,
            db,
            params: &self.params,
        };
        match self.scheme {
            Scheme::Em => em_step_adaptive(&input, self.max_halvings, &mut self.halving_rng),
            Scheme::Transform => transform_step(&input),
            Scheme::Ode => ode_step(&input),
        }
    }

    /// Advances `values` and returns the new `gamma`.
    pub fn step(&mut self, values: &mut [f64], gamma: f64, db: f64) -> Result<f64> {
        self.step_with_mean(values, gamma, db, None)
    }

    /// [`CoupledStepper::step`] reusing `mean(A^r)` of the current `values` when known.
    pub fn step_with_mean(&mut self, values: &mut [f64], gamma: f64, db: f64, mean_r: Option<f64>) -> Result<f64> {
        match self.half.as_mut() {
            None => {
                let mean_r = mean_r.unwrap_or_else(|| self.mean_r(values));
                let next = self.inhibitor(gamma, mean_r, db)?;
                self.imex.step(values, next)?;
                Ok(next)
            }
            Some(half) => {
                half.step(values, gamma)?;
                let mean_r = mean_power_raw(values, &self.grid, &self.r_power);
                let next = self.inhibitor(gamma, mean_r, db)?;
                self.half.as_mut().expect("strang stepper").step(values, next)?;
                Ok(next)
            }
        }
    }

    pub fn reaction_enabled(&self) -> bool {
        self.reaction
    }
}

/// One coupled step from `(A, gamma)` with increment `db` over `dt`.
pub fn coupled_step(
    field: &ActivatorField<f64>,
    gamma: f64,
    db: f64,
    dt: f64,
    spec: &RunSpec,
) -> Result<(ActivatorField<f64>, f64)> {
    if field.len() != spec.grid.len() {
        return Err(Error::FieldSize {
            expected: spec.grid.len(),
            got: field.len(),
        });
    }
    let kernels = Kernels::new(&spec.grid, &spec.params, dt, spec.splitting, spec.semigroup_tol)?;
    let mut stepper = CoupledStepper::new(spec, &kernels, PathSeed::new(spec.master_seed, 0));
    let mut values = field.values().to_vec();
    let next = stepper.step(&mut values, gamma, db)?;
    Ok((ActivatorField::new(values)?, next))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatus {
    Completed,
    BlowUp,
    PositivityFailure,
    StoppedAtTau,
}

impl TrajectoryStatus {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::BlowUp => "blow_up",
            Self::PositivityFailure => "positivity_failure",
            Self::StoppedAtTau => "stopped_at_tau",
        }
    }
}

/// Outcome of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub index: u64,
    pub status: TrajectoryStatus,
    /// Time of the last recorded state.
    pub final_time: f64,
    pub final_gamma: f64,
    /// `max |B|` over the whole horizon, independent of early stopping.
    pub b_sup: f64,
    pub summary: MonitorSummary<f64>,
    /// Per-step rows; empty unless requested.
    pub series: FunctionalSeries<f64>,
    /// The step error behind a blow-up or positivity status.
    pub failure: Option<Error>,
}

/// Runs trajectory `index` keeping every monitored row.
pub fn run_trajectory(spec: &RunSpec, index: u64) -> Result<TrajectoryRecord> {
    let kernels = Kernels::for_spec(spec)?;
    let path = generate_path(spec.horizon, spec.steps, PathSeed::new(spec.master_seed, index))?;
    run_on_path(spec, &kernels, &path, index, true)
}

/// Runs one trajectory on a given path, which must have `spec.steps` intervals.
pub fn run_on_path(
    spec: &RunSpec,
    kernels: &Kernels,
    path: &BrownianPath<f64>,
    index: u64,
    keep_series: bool,
) -> Result<TrajectoryRecord> {
    if path.steps() != spec.steps {
        return Err(Error::InvalidArgument(format!(
            "path has {} steps, spec needs {}",
            path.steps(),
            spec.steps
        )));
    }
    let mut stepper = CoupledStepper::new(spec, kernels, path.seed());
    let mut monitor = Monitor::new(spec.monitor, &spec.params, &spec.grid, spec.gamma0, spec.barrier)?
        .keep_series(keep_series);
    let times = path.times();
    let b = path.values();
    let b_sup = path.running_sup();
    let localized = spec.mode == RunMode::Localized;

    let mut values = spec.initial.values().to_vec();
    let mut gamma = spec.gamma0;
    let m0 = stepper.mean_r(&values);
    monitor.record(0.0, &values, gamma, m0, b[0], b_sup[0]);
    let mut mean_r = Some(m0);
    let mut status = TrajectoryStatus::Completed;
    let mut failure = None;
    let mut final_time = 0.0;

    for i in 0..spec.steps {
        let t = times[i + 1];
        if localized && b_sup[i + 1] >= spec.barrier {
            status = TrajectoryStatus::StoppedAtTau;
            break;
        }
        match stepper.step_with_mean(&mut values, gamma, b[i + 1] - b[i], mean_r.take()) {
            Ok(g) => gamma = g,
            Err(e) => {
                status = match e {
                    Error::BlowUp { .. } => TrajectoryStatus::BlowUp,
                    Error::Positivity { .. } => TrajectoryStatus::PositivityFailure,
                    other => {
                        return Err(Error::Trajectory {
                            index,
                            time: t,
                            source: Box::new(other),
                        })
                    }
                };
                failure = Some(Error::Trajectory {
                    index,
                    time: t,
                    source: Box::new(e),
                });
                break;
            }
        }
        final_time = t;
        let last = i + 1 == spec.steps;
        if (i + 1) % spec.record_every == 0 || last {
            let m = stepper.mean_r(&values);
            mean_r = Some(m);
            monitor.record(t, &values, gamma, m, b[i + 1], b_sup[i + 1]);
        }
    }
    let (summary, series) = monitor.finish();
    Ok(TrajectoryRecord {
        index,
        status,
        final_time,
        final_gamma: gamma,
        b_sup: *b_sup.last().expect("non-empty path"),
        summary,
        series,
        failure,
    })
}
