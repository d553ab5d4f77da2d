//! Activator dynamics `A_t = epsilon^2 Laplacian A - A + A^p / (gamma^q + b)`.
//!
//! [`imex_step`] is the production stepper: explicit reaction followed by the
//! exact (to tolerance) linear semigroup. [`picard_solve`] instead iterates the
//! mild-solution maps on a short window and is used to check contraction.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::brownian::{first_passage, BrownianPath};
use crate::error::{Error, Result};
use crate::model::{mean_power_raw, sup_norm, ActivatorField, ModelParams, SpatialGrid};
use crate::operator::{EllipticOperator, Propagator, PropagatorScratch};
use crate::scalar::{quotient_power, Power, Scalar};

/// Sup-norm above which a trajectory is declared blown up.
pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e6;

/// `A^p / (gamma^q + b)` pointwise.
pub fn reaction_term<T: Scalar>(
    field: &ActivatorField<T>,
    gamma: T,
    params: &ModelParams<T>,
) -> ActivatorField<T> {
    let mut out = vec![T::zero(); field.len()];
    Reaction::new(params).eval(field.values(), gamma, &mut out);
    ActivatorField::from_trusted(out)
}

/// Reaction kernel with its exponents pre-classified.
#[derive(Debug, Clone, Copy)]
struct Reaction<T> {
    p: Power<T>,
    q: Power<T>,
    b: T,
}

impl<T: Scalar> Reaction<T> {
    fn new(params: &ModelParams<T>) -> Self {
        Self {
            p: Power::new(params.p),
            q: Power::new(params.q),
            b: params.b,
        }
    }

    #[inline]
    fn eval(&self, values: &[T], gamma: T, out: &mut [T]) {
        let inv = T::one() / (self.q.apply(gamma) + self.b);
        for (o, &v) in out.iter_mut().zip(values) {
            *o = self.p.apply(v) * inv;
        }
    }
}

fn check_blowup<T: Scalar>(values: &[T], threshold: T) -> Result<()> {
    let sup = sup_norm(values);
    if sup > threshold || !sup.is_finite() {
        Err(Error::BlowUp {
            sup: sup.to_f64_lossy(),
            threshold: threshold.to_f64_lossy(),
        })
    } else {
        Ok(())
    }
}

/// `A' = S(dt) (A + dt * reaction(A, gamma))`.
///
/// Both stages map non-negative data to non-negative data. Fails with
/// [`Error::BlowUp`] when `||A'||_C` exceeds [`DEFAULT_BLOWUP_THRESHOLD`].
pub fn imex_step<T: Scalar>(
    field: &ActivatorField<T>,
    gamma: T,
    dt: T,
    op: &EllipticOperator<T>,
    params: &ModelParams<T>,
) -> Result<ActivatorField<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if !(gamma > T::zero()) {
        return Err(Error::NonPositiveGamma(gamma.to_f64_lossy()));
    }
    if field.len() != op.len() {
        return Err(Error::FieldSize {
            expected: op.len(),
            got: field.len(),
        });
    }
    let mut stepper = ImexStepper::new(Arc::new(op.propagator(dt, op.tolerance())?), params);
    let mut values = field.values().to_vec();
    stepper.step(&mut values, gamma)?;
    Ok(ActivatorField::from_trusted(values))
}

/// [`imex_step`] with a cached propagator and scratch buffers, for long runs
/// at a fixed `dt`.
#[derive(Debug, Clone)]
pub struct ImexStepper<T> {
    propagator: Arc<Propagator<T>>,
    reaction: Reaction<T>,
    threshold: T,
    reaction_on: bool,
    source: Vec<T>,
    scratch: PropagatorScratch<T>,
}

impl<T: Scalar> ImexStepper<T> {
    pub fn new(propagator: Arc<Propagator<T>>, params: &ModelParams<T>) -> Self {
        Self {
            propagator,
            reaction: Reaction::new(params),
            threshold: T::lit(DEFAULT_BLOWUP_THRESHOLD),
            reaction_on: true,
            source: Vec::new(),
            scratch: PropagatorScratch::default(),
        }
    }

    pub fn with_blowup_threshold(mut self, threshold: T) -> Self {
        self.threshold = threshold;
        self
    }

    /// Drops the reaction term, leaving the pure linear flow.
    pub fn without_reaction(mut self) -> Self {
        self.reaction_on = false;
        self
    }

    pub fn dt(&self) -> T {
        self.propagator.time()
    }

    /// Advances `values` in place by one step with the inhibitor frozen at `gamma`.
    pub fn step(&mut self, values: &mut [T], gamma: T) -> Result<()> {
        if self.reaction_on {
            let dt = self.propagator.time();
            self.source.resize(values.len(), T::zero());
            self.reaction.eval(values, gamma, &mut self.source);
            for (v, &f) in values.iter_mut().zip(&self.source) {
                *v = *v + dt * f;
            }
        }
        self.propagator.apply_in_place(values, &mut self.scratch);
        check_blowup(values, self.threshold)
    }
}

/// `S(t) A0 + \int_0^t S(t-u) g(u) du` with the left-endpoint rectangle rule.
///
/// `source_history[j]` is `g(j t / m)` for `j = 0..m`, `m = source_history.len()`.
/// An empty history means a zero source.
pub fn mild_convolution<T: Scalar>(
    a0: &ActivatorField<T>,
    source_history: &[ActivatorField<T>],
    t: T,
    op: &EllipticOperator<T>,
) -> Result<ActivatorField<T>> {
    if a0.len() != op.len() {
        return Err(Error::FieldSize {
            expected: op.len(),
            got: a0.len(),
        });
    }
    if let Some(bad) = source_history.iter().find(|g| g.len() != op.len()) {
        return Err(Error::FieldSize {
            expected: op.len(),
            got: bad.len(),
        });
    }
    if source_history.is_empty() {
        return op.apply_semigroup(t, a0);
    }
    let m = source_history.len();
    let h = t / T::from_usize_lossy(m);
    let prop = op.propagator(h, op.tolerance())?;
    let mut scratch = PropagatorScratch::default();
    let mut v = a0.values().to_vec();
    // V_{j+1} = S(h) (V_j + h g_j) unrolls to the rectangle sum
    for g in source_history {
        for (x, &gj) in v.iter_mut().zip(g.values()) {
            *x = *x + h * gj;
        }
        prop.apply_in_place(&mut v, &mut scratch);
    }
    Ok(ActivatorField::from_trusted(v))
}

/// Time window on which the mild-solution map is a contraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardWindow<T> {
    /// Radius of the a priori ball.
    pub l: T,
    /// Brownian barrier.
    pub k: T,
    pub t1: T,
    pub t2: T,
    pub t_hat: T,
    pub contraction_ratio_target: T,
}

/// Factor by which `L` exceeds its lower limit `2 + ||A0|| + e^K gamma0`.
pub const DEFAULT_SAFETY_FACTOR: f64 = 1.01;

pub fn picard_window<T: Scalar>(
    a0: &ActivatorField<T>,
    gamma0: T,
    k: T,
    params: &ModelParams<T>,
) -> Result<PicardWindow<T>> {
    picard_window_with(a0, gamma0, k, params, T::lit(DEFAULT_SAFETY_FACTOR))
}

pub fn picard_window_with<T: Scalar>(
    a0: &ActivatorField<T>,
    gamma0: T,
    k: T,
    params: &ModelParams<T>,
    safety_factor: T,
) -> Result<PicardWindow<T>> {
    if !(k >= T::zero()) || !k.is_finite() {
        return Err(Error::InvalidArgument(format!("barrier K must be non-negative, got {k}")));
    }
    if !(gamma0 > T::zero()) {
        return Err(Error::NonPositiveGamma(gamma0.to_f64_lossy()));
    }
    if !(safety_factor > T::one()) {
        return Err(Error::InvalidArgument(format!(
            "safety factor must exceed 1, got {safety_factor}"
        )));
    }
    let l = (T::lit(2.0) + a0.sup_norm() + k.exp() * gamma0) * safety_factor;
    let lp = l.powf(-params.p);
    let s = params.s;
    let t1 = params.b * lp;
    let t2 = (-T::lit(1.5) * s - k * s - T::lit(2.0) * k).exp() * lp;
    Ok(PicardWindow {
        l,
        k,
        t1,
        t2,
        t_hat: t1.min(t2),
        contraction_ratio_target: T::lit(0.5),
    })
}

/// Iteration controls for [`picard_solve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions<T> {
    pub tol: T,
    pub max_iterations: usize,
    /// Uniform time intervals per window.
    pub history_nodes: usize,
}

impl<T: Scalar> Default for PicardOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-10),
            max_iterations: 50,
            history_nodes: 64,
        }
    }
}

/// Converged Picard iterate on `[0, end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardSolution<T> {
    /// `end = min(T_hat, tau_K)`.
    pub end: T,
    pub times: Vec<T>,
    pub a_history: Vec<Vec<T>>,
    pub gamma_history: Vec<T>,
    /// Number of applications of the map.
    pub iterations: usize,
    /// `sup ||A^{n+1} - A^n||_C + sup |gamma^{n+1} - gamma^n|`, one per iteration.
    pub distances: Vec<T>,
    /// `distances[n+1] / distances[n]`.
    pub ratios: Vec<T>,
}

/// Iterates `(A, gamma) -> (F1, F2)` from the constant guess `(A0, gamma0)`.
///
/// `F1(A, gamma)(t) = S(t) A0 + \int_0^t S(t-u) A^p/(gamma^q+b) du` and
/// `F2(A, gamma)(t) = R(t, B_t) gamma0 + \int_0^t R(t-u, B_t-B_u) mean(A^r)/gamma^s du`
/// with `R(t, x) = exp(-(3/2) t + x)`, both discretized on `history_nodes`
/// uniform intervals with the previous iterate's source interpolated linearly
/// across each interval. The kernel `R(t_{j+1} - u, B_{t_{j+1}} - B_u)` is
/// integrated over every sample of `path`, so the noise is resolved at the
/// path's own step. Requires the `tau = eta = 1` normalization.
pub fn picard_solve<T: Scalar>(
    a0: &ActivatorField<T>,
    gamma0: T,
    path: &BrownianPath<T>,
    window: &PicardWindow<T>,
    op: &EllipticOperator<T>,
    params: &ModelParams<T>,
    options: &PicardOptions<T>,
) -> Result<PicardSolution<T>> {
    if !params.is_normalized() {
        return Err(Error::NormalizationRequired {
            tau: params.tau.to_f64_lossy(),
            eta: params.eta.to_f64_lossy(),
        });
    }
    if a0.len() != op.len() {
        return Err(Error::FieldSize {
            expected: op.len(),
            got: a0.len(),
        });
    }
    if !(gamma0 > T::zero()) {
        return Err(Error::NonPositiveGamma(gamma0.to_f64_lossy()));
    }
    if options.history_nodes == 0 || options.max_iterations == 0 || !(options.tol > T::zero()) {
        return Err(Error::InvalidArgument(
            "Picard options need tol > 0 and positive node and iteration counts".into(),
        ));
    }
    if !(window.t_hat > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "window length must be positive, got {}",
            window.t_hat
        )));
    }
    if path.horizon() < window.t_hat {
        return Err(Error::InvalidArgument(format!(
            "Brownian path ends at {} before the window {}",
            path.horizon(),
            window.t_hat
        )));
    }
    let passage = first_passage(path, window.k.max(T::min_positive_value()))?;
    let end = match passage.time() {
        Some(tau) if tau < window.t_hat => tau,
        _ => window.t_hat,
    };
    if !(end > T::zero()) {
        return Err(Error::InvalidArgument("window is empty: |B| reaches K at t = 0".into()));
    }

    let m = options.history_nodes;
    let h = end / T::from_usize_lossy(m);
    let times: Vec<T> = (0..=m).map(|j| T::from_usize_lossy(j) * h).collect();
    let growth: Vec<T> = times
        .windows(2)
        .map(|w| (-T::lit(1.5) * h + path.value_at(w[1]) - path.value_at(w[0])).exp())
        .collect();
    let weights: Vec<[T; 2]> = times.windows(2).map(|w| kernel_weights(path, w[0], w[1])).collect();
    let prop = op.propagator(h, op.tolerance())?;
    let grid = op.grid();
    let reaction = Reaction::new(params);
    let r_power = Power::new(params.r);

    let mut a_hist = vec![a0.values().to_vec(); m + 1];
    let mut g_hist = vec![gamma0; m + 1];
    let mut next_a = a_hist.clone();
    let mut next_g = g_hist.clone();
    let mut source = vec![T::zero(); a0.len()];
    let mut scratch = PropagatorScratch::default();
    let mut distances = Vec::new();
    let mut non_decreasing = 0usize;

    for iteration in 1..=options.max_iterations {
        apply_maps(
            &a_hist,
            &g_hist,
            &mut next_a,
            &mut next_g,
            MapContext {
                h,
                growth: &growth,
                weights: &weights,
                prop: &prop,
                grid,
                reaction: &reaction,
                r_power: &r_power,
                s: params.s,
            },
            &mut source,
            &mut scratch,
        );
        let da = a_hist
            .iter()
            .zip(&next_a)
            .map(|(x, y)| x.iter().zip(y).fold(T::zero(), |acc, (&u, &v)| acc.max((u - v).abs())))
            .fold(T::zero(), T::max);
        let dg = g_hist
            .iter()
            .zip(&next_g)
            .fold(T::zero(), |acc, (&u, &v)| acc.max((u - v).abs()));
        let d = da + dg;
        std::mem::swap(&mut a_hist, &mut next_a);
        std::mem::swap(&mut g_hist, &mut next_g);
        if !d.is_finite() {
            distances.push(d);
            return Err(non_contraction(&distances));
        }
        if let Some(&prev) = distances.last() {
            if d >= prev {
                non_decreasing += 1;
            } else {
                non_decreasing = 0;
            }
        }
        distances.push(d);
        if d < options.tol {
            let ratios = distances.windows(2).map(|w| w[1] / w[0]).collect();
            return Ok(PicardSolution {
                end,
                times,
                a_history: a_hist,
                gamma_history: g_hist,
                iterations: iteration,
                distances,
                ratios,
            });
        }
        if non_decreasing >= 3 {
            return Err(non_contraction(&distances));
        }
    }
    Err(Error::NotConverged {
        iterations: options.max_iterations,
        last: distances.last().map_or(f64::NAN, |d| d.to_f64_lossy()),
    })
}

fn non_contraction<T: Scalar>(distances: &[T]) -> Error {
    Error::NonContraction {
        distances: distances.iter().map(|d| d.to_f64_lossy()).collect(),
    }
}

/// `\int_{t0}^{t1} K(u) (t1 - u)/(t1 - t0) du` and `\int_{t0}^{t1} K(u) (u - t0)/(t1 - t0) du`
/// with `K(u) = exp(-(3/2)(t1 - u) + B_{t1} - B_u)`, trapezoid rule over the samples of `path`.
fn kernel_weights<T: Scalar>(path: &BrownianPath<T>, t0: T, t1: T) -> [T; 2] {
    let times = path.times();
    let lo = times.partition_point(|&t| t <= t0);
    let hi = times.partition_point(|&t| t < t1);
    let b1 = path.value_at(t1);
    let len = t1 - t0;
    let node = |u: T, b: T| {
        let k = (-T::lit(1.5) * (t1 - u) + b1 - b).exp();
        let theta = (u - t0) / len;
        [k * (T::one() - theta), k * theta]
    };
    let mut prev = (t0, node(t0, path.value_at(t0)));
    let mut total = [T::zero(); 2];
    let samples = (lo..hi).map(|i| (times[i], path.values()[i])).chain(std::iter::once((t1, b1)));
    for (u, b) in samples {
        let next = (u, node(u, b));
        let half = T::lit(0.5) * (next.0 - prev.0);
        total[0] = total[0] + half * (prev.1[0] + next.1[0]);
        total[1] = total[1] + half * (prev.1[1] + next.1[1]);
        prev = next;
    }
    total
}

struct MapContext<'a, T> {
    h: T,
    growth: &'a [T],
    weights: &'a [[T; 2]],
    prop: &'a Propagator<T>,
    grid: &'a SpatialGrid<T>,
    reaction: &'a Reaction<T>,
    r_power: &'a Power<T>,
    s: T,
}

#[allow(clippy::too_many_arguments)]
fn apply_maps<T: Scalar>(
    a: &[Vec<T>],
    g: &[T],
    out_a: &mut [Vec<T>],
    out_g: &mut [T],
    ctx: MapContext<'_, T>,
    source: &mut [T],
    scratch: &mut PropagatorScratch<T>,
) {
    let h = ctx.h;
    let half = T::lit(0.5) * h;
    out_a[0].copy_from_slice(&a[0]);
    out_g[0] = g[0];
    ctx.reaction.eval(&a[0], g[0], source);
    let mut quotient = quotient_power(mean_power_raw(&a[0], ctx.grid, ctx.r_power), g[0], ctx.s);
    for j in 0..ctx.growth.len() {
        // S(h) (V_j + (h/2) f_j) + (h/2) f_{j+1}
        let (done, rest) = out_a.split_at_mut(j + 1);
        let next = &mut rest[0];
        for ((n, &prev), &f) in next.iter_mut().zip(&done[j]).zip(source.iter()) {
            *n = prev + half * f;
        }
        ctx.prop.apply_in_place(next, scratch);
        ctx.reaction.eval(&a[j + 1], g[j + 1], source);
        for (n, &f) in next.iter_mut().zip(source.iter()) {
            *n = *n + half * f;
        }

        let next_quotient = quotient_power(mean_power_raw(&a[j + 1], ctx.grid, ctx.r_power), g[j + 1], ctx.s);
        let [w0, w1] = ctx.weights[j];
        out_g[j + 1] = ctx.growth[j] * out_g[j] + w0 * quotient + w1 * next_quotient;
        quotient = next_quotient;
    }
}
