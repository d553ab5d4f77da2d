//! A priori functionals of a trajectory and pathwise checks of the bounds
//! they are supposed to satisfy.
//!
//! With `kappa = (p-1)/r`, `theta = N kappa / 2` and `delta` fixed by
//! `q = kappa (s+1+delta)`:
//!
//! * `h_delta(t) = \int_D A^r / gamma^(s+1+delta) dx`
//! * `h_{alpha,beta}(t) = \int_D A^alpha / gamma^beta dx`
//! * `v(t) = h_delta^(kappa/(1-theta)) + h_delta^kappa`
//!
//! The integrated bound checked along a path (normalized units) is
//!
//! ```text
//! \int_0^t h_delta <= tau/(delta gamma0^delta)
//!                   + max(0, (delta-3)/2 t e^(3 delta/2 + delta K) gamma0^-delta)
//!                   + sup_{u<=t} |\int_0^u gamma^-delta dB|
//! ```
//!
//! on the event `{B*_t < K}`.

use serde::{Deserialize, Serialize};

use crate::activator::DEFAULT_BLOWUP_THRESHOLD;
use crate::brownian::BrownianPath;
use crate::error::{Error, Result};
use crate::model::{sup_norm, ActivatorField, ModelParams, SpatialGrid};
use crate::scalar::{quotient_power, Power, Scalar};

/// Exponents of the monitored functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig<T> {
    pub delta: T,
    /// `false` when `q/kappa - (s+1) <= 0` and `delta` fell back to 1.
    pub delta_derived: bool,
    pub alpha: T,
    pub beta: T,
    pub kappa: T,
    pub theta: T,
    /// Lebesgue exponent for the source norms.
    pub ell: T,
    pub blow_up_threshold: T,
}

impl<T: Scalar> EstimateConfig<T> {
    /// Derived exponents with the default monitor pair `(alpha, beta) = (2, 0)` and `ell = 2`.
    pub fn derive(params: &ModelParams<T>, dimension: usize) -> Self {
        let kappa = params.kappa();
        let theta = T::from_usize_lossy(dimension) * kappa / T::lit(2.0);
        let derived = params.q / kappa - (params.s + T::one());
        let delta_derived = derived > T::zero() && derived.is_finite();
        Self {
            delta: if delta_derived { derived } else { T::one() },
            delta_derived,
            alpha: T::lit(2.0),
            beta: T::zero(),
            kappa,
            theta,
            ell: T::lit(2.0),
            blow_up_threshold: T::lit(DEFAULT_BLOWUP_THRESHOLD),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > T::zero()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.alpha > T::one()) {
            return Err(Error::InvalidArgument(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        if !(self.beta >= T::zero()) {
            return Err(Error::InvalidArgument(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.ell >= T::one()) {
            return Err(Error::InvalidArgument(format!("ell must be at least 1, got {}", self.ell)));
        }
        if !(self.blow_up_threshold > T::zero()) {
            return Err(Error::InvalidArgument("blow-up threshold must be positive".into()));
        }
        Ok(())
    }
}

fn check_gamma<T: Scalar>(gamma: T) -> Result<()> {
    if gamma > T::zero() && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveGamma(gamma.to_f64_lossy()))
    }
}

fn check_len<T: Scalar>(field: &ActivatorField<T>, grid: &SpatialGrid<T>) -> Result<()> {
    if field.len() == grid.len() {
        Ok(())
    } else {
        Err(Error::FieldSize {
            expected: grid.len(),
            got: field.len(),
        })
    }
}

/// `\int_D A^r / gamma^(s+1+delta) dx` (trapezoid rule).
pub fn compute_h_delta<T: Scalar>(
    field: &ActivatorField<T>,
    gamma: T,
    grid: &SpatialGrid<T>,
    params: &ModelParams<T>,
    delta: T,
) -> Result<T> {
    check_gamma(gamma)?;
    check_len(field, grid)?;
    let r = Power::new(params.r);
    let mass = grid.integral(&field.values().iter().map(|&a| r.apply(a)).collect::<Vec<_>>());
    Ok(quotient_power(mass, gamma, params.s + T::one() + delta))
}

/// `\int_D A^alpha / gamma^beta dx` (trapezoid rule).
pub fn compute_h_alpha_beta<T: Scalar>(
    field: &ActivatorField<T>,
    gamma: T,
    grid: &SpatialGrid<T>,
    alpha: T,
    beta: T,
) -> Result<T> {
    check_gamma(gamma)?;
    check_len(field, grid)?;
    if !(alpha > T::one()) {
        return Err(Error::InvalidArgument(format!("alpha must exceed 1, got {alpha}")));
    }
    if !(beta >= T::zero()) {
        return Err(Error::InvalidArgument(format!("beta must be non-negative, got {beta}")));
    }
    let a = Power::new(alpha);
    let mass = grid.measure() * grid.mean_map(field.values(), |v| a.apply(v));
    Ok(quotient_power(mass, gamma, beta))
}

/// `h^(kappa/(1-theta)) + h^kappa`; NaN when `theta >= 1`.
pub fn compute_v<T: Scalar>(h_delta: T, kappa: T, theta: T) -> T {
    if !(theta < T::one()) {
        return T::nan();
    }
    if h_delta == T::zero() {
        return T::zero();
    }
    h_delta.powf(kappa / (T::one() - theta)) + h_delta.powf(kappa)
}

/// Right side of the integrated bound at time `t`, given `sup |\int gamma^-delta dB|` so far.
pub fn integrated_bound<T: Scalar>(
    t: T,
    sup_ito: T,
    params: &ModelParams<T>,
    delta: T,
    gamma0: T,
    barrier: T,
) -> T {
    let start = params.tau / (delta * gamma0.powf(delta));
    let growth = (delta - T::lit(3.0)) / T::lit(2.0)
        * t
        * (T::lit(1.5) * delta + delta * barrier).exp()
        * gamma0.powf(-delta);
    start + growth.max(T::zero()) + sup_ito
}

/// One monitored time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorSample<T> {
    pub t: T,
    pub gamma: T,
    pub mean_r: T,
    pub sup_a: T,
    pub h_delta: T,
    /// `\int_0^t h_delta`, trapezoid rule in time.
    pub h_delta_integral: T,
    pub h_alpha_beta: T,
    pub v: T,
    /// `gamma - gamma0 exp(-(3/2) t - B*_t)`.
    pub lb_margin: T,
    /// Integrated bound minus `h_delta_integral`.
    pub lemma32_margin: T,
    /// `||A^p/(gamma^q+b)||_{L^ell}`.
    pub g1_norm: T,
    /// `||A^r/gamma^s||_{L^ell}`.
    pub g2_norm: T,
}

impl<T: Scalar> MonitorSample<T> {
    pub const CSV_HEADER: &'static str =
        "t,gamma,mean_r,sup_A,h_delta,h_delta_integral,h_alpha_beta,v,lb_margin,lemma32_margin";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.gamma,
            self.mean_r,
            self.sup_a,
            self.h_delta,
            self.h_delta_integral,
            self.h_alpha_beta,
            self.v,
            self.lb_margin,
            self.lemma32_margin
        )
    }
}

/// Recorded functionals of one trajectory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FunctionalSeries<T> {
    pub samples: Vec<MonitorSample<T>>,
}

impl<T: Scalar> FunctionalSeries<T> {
    pub fn times(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn h_delta_integral(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.h_delta_integral).collect()
    }

    pub fn h_alpha_beta(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.h_alpha_beta).collect()
    }

    pub fn v(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.v).collect()
    }

    pub fn bound_margins(&self) -> Vec<T> {
        self.samples.iter().map(|s| s.lemma32_margin).collect()
    }
}

/// Running extrema of a trajectory's functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorSummary<T> {
    pub samples: usize,
    pub min_lb_margin: T,
    pub min_lemma32_margin: T,
    pub final_lemma32_margin: T,
    pub h_delta_integral: T,
    pub sup_ito: T,
    pub max_h_alpha_beta: T,
    pub max_g1_norm: T,
    pub max_g2_norm: T,
    pub max_sup_a: T,
    pub min_gamma: T,
    /// Every recorded functional was finite.
    pub all_finite: bool,
}

/// Per-trajectory accumulator fed once per output step.
#[derive(Debug, Clone)]
pub struct Monitor<T> {
    config: EstimateConfig<T>,
    params: ModelParams<T>,
    grid: SpatialGrid<T>,
    gamma0: T,
    barrier: T,
    keep_series: bool,
    alpha: Power<T>,
    p_ell: Power<T>,
    r_ell: Power<T>,
    q: Power<T>,
    series: FunctionalSeries<T>,
    prev: Option<(T, T, T, T)>, // (t, gamma, h_delta, B_t)
    ito: T,
    summary: MonitorSummary<T>,
}

impl<T: Scalar> Monitor<T> {
    pub fn new(
        config: EstimateConfig<T>,
        params: &ModelParams<T>,
        grid: &SpatialGrid<T>,
        gamma0: T,
        barrier: T,
    ) -> Result<Self> {
        config.validate()?;
        check_gamma(gamma0)?;
        Ok(Self {
            alpha: Power::new(config.alpha),
            p_ell: Power::new(params.p * config.ell),
            r_ell: Power::new(params.r * config.ell),
            q: Power::new(params.q),
            config,
            params: *params,
            grid: grid.clone(),
            gamma0,
            barrier,
            keep_series: false,
            series: FunctionalSeries::default(),
            prev: None,
            ito: T::zero(),
            summary: MonitorSummary {
                samples: 0,
                min_lb_margin: T::infinity(),
                min_lemma32_margin: T::infinity(),
                final_lemma32_margin: T::nan(),
                h_delta_integral: T::zero(),
                sup_ito: T::zero(),
                max_h_alpha_beta: T::zero(),
                max_g1_norm: T::zero(),
                max_g2_norm: T::zero(),
                max_sup_a: T::zero(),
                min_gamma: T::infinity(),
                all_finite: true,
            },
        })
    }

    /// Also retain every sample, not only the running summary.
    pub fn keep_series(mut self, keep: bool) -> Self {
        self.keep_series = keep;
        self
    }

    pub fn config(&self) -> &EstimateConfig<T> {
        &self.config
    }

    /// Records the state at time `t`. `mean_r` is `mean(A^r)`, `b_t` and
    /// `b_sup` are `B_t` and `max_{u<=t} |B_u|`.
    pub fn record(&mut self, t: T, values: &[T], gamma: T, mean_r: T, b_t: T, b_sup: T) -> MonitorSample<T> {
        let cfg = &self.config;
        let p = &self.params;
        let measure = self.grid.measure();
        let s1d = p.s + T::one() + cfg.delta;
        let (mut sum_alpha, mut sum_p, mut sum_r) = (T::zero(), T::zero(), T::zero());
        for (&w, &a) in self.grid.trapezoid_weights().iter().zip(values) {
            sum_alpha = sum_alpha + w * self.alpha.apply(a);
            sum_p = sum_p + w * self.p_ell.apply(a);
            sum_r = sum_r + w * self.r_ell.apply(a);
        }
        let to_integral = measure / self.grid.trapezoid_weights().iter().fold(T::zero(), |acc, &w| acc + w);
        let inv_ell = T::one() / cfg.ell;
        let g1_norm = (sum_p * to_integral).powf(inv_ell) / (self.q.apply(gamma) + p.b);
        let g2_norm = quotient_power((sum_r * to_integral).powf(inv_ell), gamma, p.s);
        let h_delta = quotient_power(measure * mean_r, gamma, s1d);
        let h_alpha_beta = quotient_power(sum_alpha * to_integral, gamma, cfg.beta);

        let mut integral = self.summary.h_delta_integral;
        if let Some((t0, g0, h0, b0)) = self.prev {
            integral = integral + (t - t0) * (h0 + h_delta) / T::lit(2.0);
            // left-point Ito sum of gamma^-delta dB
            self.ito = self.ito + g0.powf(-cfg.delta) * (b_t - b0);
        }
        self.prev = Some((t, gamma, h_delta, b_t));
        let sup_ito = self.summary.sup_ito.max(self.ito.abs());
        let bound = integrated_bound(t, sup_ito, p, cfg.delta, self.gamma0, self.barrier);
        let sample = MonitorSample {
            t,
            gamma,
            mean_r,
            sup_a: sup_norm(values),
            h_delta,
            h_delta_integral: integral,
            h_alpha_beta,
            v: compute_v(h_delta, cfg.kappa, cfg.theta),
            lb_margin: gamma - self.gamma0 * (-T::lit(1.5) * t - b_sup).exp(),
            lemma32_margin: bound - integral,
            g1_norm,
            g2_norm,
        };

        let sm = &mut self.summary;
        sm.samples += 1;
        sm.h_delta_integral = integral;
        sm.sup_ito = sup_ito;
        sm.min_lb_margin = sm.min_lb_margin.min(sample.lb_margin);
        sm.min_lemma32_margin = sm.min_lemma32_margin.min(sample.lemma32_margin);
        sm.final_lemma32_margin = sample.lemma32_margin;
        sm.max_h_alpha_beta = sm.max_h_alpha_beta.max(h_alpha_beta);
        sm.max_g1_norm = sm.max_g1_norm.max(g1_norm);
        sm.max_g2_norm = sm.max_g2_norm.max(g2_norm);
        sm.max_sup_a = sm.max_sup_a.max(sample.sup_a);
        sm.min_gamma = sm.min_gamma.min(gamma);
        let finite = [h_delta, integral, h_alpha_beta, g1_norm, g2_norm, sample.lemma32_margin, gamma]
            .iter()
            .all(|x| x.is_finite());
        sm.all_finite &= finite;
        if self.keep_series {
            self.series.samples.push(sample);
        }
        sample
    }

    pub fn summary(&self) -> &MonitorSummary<T> {
        &self.summary
    }

    pub fn series(&self) -> &FunctionalSeries<T> {
        &self.series
    }

    pub fn finish(self) -> (MonitorSummary<T>, FunctionalSeries<T>) {
        (self.summary, self.series)
    }
}

/// Recomputes the integrated bound from a recorded series and returns
/// `bound(t_end) - \int_0^{t_end} h_delta`.
///
/// The Ito integral is the left-point sum over the series times with `B`
/// read from `path`. Samples after `t_end` are ignored.
pub fn check_integrated_h_delta<T: Scalar>(
    series: &FunctionalSeries<T>,
    path: &BrownianPath<T>,
    params: &ModelParams<T>,
    delta: T,
    gamma0: T,
    barrier: T,
    t_end: T,
) -> Result<T> {
    let samples: Vec<&MonitorSample<T>> = series.samples.iter().take_while(|s| s.t <= t_end).collect();
    if samples.is_empty() {
        return Err(Error::InvalidArgument("series has no samples before t_end".into()));
    }
    let mut integral = T::zero();
    let mut ito = T::zero();
    let mut sup_ito = T::zero();
    for w in samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        integral = integral + (b.t - a.t) * (a.h_delta + b.h_delta) / T::lit(2.0);
        ito = ito + a.gamma.powf(-delta) * (path.value_at(b.t) - path.value_at(a.t));
        sup_ito = sup_ito.max(ito.abs());
    }
    let t = samples.last().map(|s| s.t).unwrap_or_else(T::zero);
    Ok(integrated_bound(t, sup_ito, params, delta, gamma0, barrier) - integral)
}

/// Empirical boundedness constants of one trajectory up to time `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundednessReport<T> {
    pub horizon: T,
    pub max_h_alpha_beta: T,
    pub max_g1_norm: T,
    pub max_g2_norm: T,
    pub all_finite: bool,
    /// `false` when the trajectory was flagged as blown up or a maximum is infinite.
    pub bounded: bool,
}

pub fn check_boundedness<T: Scalar>(series: &FunctionalSeries<T>, horizon: T, blown_up: bool) -> BoundednessReport<T> {
    let mut rep = BoundednessReport {
        horizon,
        max_h_alpha_beta: T::zero(),
        max_g1_norm: T::zero(),
        max_g2_norm: T::zero(),
        all_finite: true,
        bounded: !blown_up,
    };
    for s in series.samples.iter().filter(|s| s.t <= horizon) {
        rep.max_h_alpha_beta = rep.max_h_alpha_beta.max(s.h_alpha_beta);
        rep.max_g1_norm = rep.max_g1_norm.max(s.g1_norm);
        rep.max_g2_norm = rep.max_g2_norm.max(s.g2_norm);
        rep.all_finite &= [s.h_alpha_beta, s.g1_norm, s.g2_norm].iter().all(|x| x.is_finite());
    }
    rep.bounded &= rep.all_finite;
    rep
}
