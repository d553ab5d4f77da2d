//! Time integration of the inhibitor equation
//! `tau dgamma = -gamma dt + (mean(A^r) / gamma^s) dt + sqrt(eta) gamma dB`.
//!
//! Three steppers share one input type: Euler-Maruyama for general
//! `(tau, eta)`, an exact-in-the-noise transform step in the `tau = eta = 1`
//! normalization, and classical RK4 for the deterministic limit `eta = 0`.
//! The source `mean(A^r)` is frozen over each step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::brownian::standard_normal;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::scalar::{quotient_power, Scalar};

/// Midpoint nodes used for the integral of the inverse stochastic exponential.
pub const DEFAULT_QUADRATURE_POINTS: usize = 4;

/// Maximum number of times an Euler-Maruyama step is halved after a
/// positivity failure.
pub const DEFAULT_MAX_HALVINGS: u32 = 10;

#[derive(Debug, Clone, Copy)]
pub struct InhibitorStepInput<'a, T> {
    pub gamma: T,
    /// `mean(A^r)` at the start of the step.
    pub mean_r: T,
    pub dt: T,
    /// Brownian increment over the step.
    pub db: T,
    pub params: &'a ModelParams<T>,
}

impl<T: Scalar> InhibitorStepInput<'_, T> {
    fn check(&self) -> Result<()> {
        if !(self.gamma > T::zero()) || !self.gamma.is_finite() {
            return Err(Error::NonPositiveGamma(self.gamma.to_f64_lossy()));
        }
        if !(self.mean_r >= T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "mean(A^r) must be non-negative, got {}",
                self.mean_r
            )));
        }
        if !(self.dt > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }

    fn drift(&self, gamma: T) -> T {
        let p = self.params;
        (-gamma + quotient_power(self.mean_r, gamma, p.s)) / p.tau
    }
}

/// One Euler-Maruyama step. Fails with [`Error::Positivity`] when the update
/// is not positive; the caller is expected to halve the step.
pub fn em_step<T: Scalar>(input: &InhibitorStepInput<'_, T>) -> Result<T> {
    input.check()?;
    let p = input.params;
    let noise = p.eta.sqrt() / p.tau * input.gamma * input.db;
    let next = input.gamma + input.drift(input.gamma) * input.dt + noise;
    if next > T::zero() && next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Positivity {
            gamma: next.to_f64_lossy(),
            dt: input.dt.to_f64_lossy(),
        })
    }
}

/// Euler-Maruyama with bounded step halving.
///
/// On a positivity failure the increment is split at its midpoint by a
/// Brownian-bridge draw from `rng` and both halves are retried, recursively,
/// at most `max_halvings` levels deep.
pub fn em_step_adaptive<T: Scalar, R: Rng + ?Sized>(
    input: &InhibitorStepInput<'_, T>,
    max_halvings: u32,
    rng: &mut R,
) -> Result<T> {
    match em_step(input) {
        Ok(g) => Ok(g),
        Err(Error::Positivity { .. }) if max_halvings > 0 => {
            let half = input.dt / T::lit(2.0);
            let db1 = input.db / T::lit(2.0)
                + (input.dt / T::lit(4.0)).sqrt() * T::lit(standard_normal(rng));
            let db2 = input.db - db1;
            let first = InhibitorStepInput {
                dt: half,
                db: db1,
                ..*input
            };
            let mid = em_step_adaptive(&first, max_halvings - 1, rng)?;
            let second = InhibitorStepInput {
                gamma: mid,
                dt: half,
                db: db2,
                ..*input
            };
            em_step_adaptive(&second, max_halvings - 1, rng)
        }
        Err(e) => Err(e),
    }
}

fn require_normalized<T: Scalar>(params: &ModelParams<T>) -> Result<()> {
    if params.is_normalized() {
        Ok(())
    } else {
        Err(Error::NormalizationRequired {
            tau: params.tau.to_f64_lossy(),
            eta: params.eta.to_f64_lossy(),
        })
    }
}

/// Transform step in the `tau = eta = 1` normalization.
///
/// `Y = gamma^(s+1)` solves the linear equation
/// `dY = (1/2)(s+1)(s-2) Y dt + (s+1) Y dB + (s+1) mean(A^r) dt`, whose
/// solution over one step with a frozen source is
/// `Y' = Phi(dt) [Y + (s+1) mean(A^r) \int_0^dt Phi(u)^{-1} du]` with
/// `Phi(u) = exp(-(3/2)(s+1) u + (s+1) B(u))`. Inside the step `B` is the
/// linear interpolant of the increment. The result is positive for any input.
pub fn transform_step<T: Scalar>(input: &InhibitorStepInput<'_, T>) -> Result<T> {
    transform_step_with(input, DEFAULT_QUADRATURE_POINTS)
}

pub fn transform_step_with<T: Scalar>(
    input: &InhibitorStepInput<'_, T>,
    quadrature_points: usize,
) -> Result<T> {
    input.check()?;
    let p = input.params;
    require_normalized(p)?;
    let s1 = p.s + T::one();
    let growth = -T::lit(1.5) * input.dt + input.db;
    let gbm = input.gamma * growth.exp();
    if input.mean_r == T::zero() {
        return Ok(gbm);
    }
    // \int_0^dt Phi(u)^{-1} du by the midpoint rule
    let m = quadrature_points.max(1);
    let h = input.dt / T::from_usize_lossy(m);
    let rate = s1 * (T::lit(1.5) - input.db / input.dt);
    let integral = (0..m).fold(T::zero(), |acc, j| {
        let u = (T::from_usize_lossy(j) + T::lit(0.5)) * h;
        acc + h * (rate * u).exp()
    });
    // Y'/(Y Phi(dt)) = 1 + (s+1) m I / Y, evaluated without forming Y
    let ratio = s1 * quotient_power(input.mean_r * integral, input.gamma, s1);
    let next = gbm * (ratio.ln_1p() / s1).exp();
    if next > T::zero() && next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Positivity {
            gamma: next.to_f64_lossy(),
            dt: input.dt.to_f64_lossy(),
        })
    }
}

/// Classical RK4 step of the deterministic equation `tau gamma' = -gamma + mean(A^r)/gamma^s`.
pub fn ode_step<T: Scalar>(input: &InhibitorStepInput<'_, T>) -> Result<T> {
    input.check()?;
    if input.params.eta != T::zero() {
        return Err(Error::InvalidArgument(format!(
            "ode_step requires eta = 0, got {}",
            input.params.eta
        )));
    }
    let dt = input.dt;
    let half = dt / T::lit(2.0);
    let positive = |g: T| -> Result<T> {
        if g > T::zero() && g.is_finite() {
            Ok(g)
        } else {
            Err(Error::Positivity {
                gamma: g.to_f64_lossy(),
                dt: dt.to_f64_lossy(),
            })
        }
    };
    let g = input.gamma;
    let k1 = input.drift(g);
    let k2 = input.drift(positive(g + half * k1)?);
    let k3 = input.drift(positive(g + half * k2)?);
    let k4 = input.drift(positive(g + dt * k3)?);
    positive(g + dt / T::lit(6.0) * (k1 + T::lit(2.0) * (k2 + k3) + k4))
}

/// Closed-form lower bounds on the inhibitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaLowerBound<T> {
    /// `gamma0 exp(-(3/2) t + B_t)`, normalized form.
    pub pointwise: T,
    /// `gamma0 exp(-(3/2) t - B*_t)`, normalized form; bounds `inf_{u<=t} gamma`.
    pub sup_form: T,
    /// `(eta/tau)^(1/(s+1)) exp(-3t/(2 eta) - |B_t|/sqrt(eta)) gamma0`, reported
    /// for general parameters only. `None` when `eta = 0`.
    pub general: Option<T>,
}

pub fn gamma_lower_bound<T: Scalar>(
    t: T,
    b_t: T,
    b_sup: T,
    params: &ModelParams<T>,
    gamma0: T,
) -> GammaLowerBound<T> {
    let decay = -T::lit(1.5) * t;
    let general = (params.eta > T::zero()).then(|| {
        let pre = (params.eta / params.tau).powf(T::one() / (params.s + T::one()));
        pre * (-T::lit(1.5) * t / params.eta - b_t.abs() / params.eta.sqrt()).exp() * gamma0
    });
    GammaLowerBound {
        pointwise: gamma0 * (decay + b_t).exp(),
        sup_form: gamma0 * (decay - b_sup).exp(),
        general,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit(s: f64) -> ModelParams<f64> {
        ModelParams {
            p: 2.0,
            q: 3.0,
            r: 6.0,
            s,
            epsilon: 0.1,
            tau: 1.0,
            a: 0.5,
            b: 1.0,
            eta: 1.0,
        }
    }

    fn input(params: &ModelParams<f64>, gamma: f64, mean_r: f64, dt: f64, db: f64) -> InhibitorStepInput<'_, f64> {
        InhibitorStepInput {
            gamma,
            mean_r,
            dt,
            db,
            params,
        }
    }

    #[test]
    fn em_linear_decay_and_equilibrium() {
        let mut p = unit(1.0);
        p.eta = 0.0;
        let g = em_step(&input(&p, 2.0, 0.0, 0.1, 0.3)).unwrap();
        assert!((g - 2.0 * 0.9).abs() < 1e-15);

        let mut p = unit(0.0);
        p.eta = 0.0;
        let g = em_step(&input(&p, 1.0, 1.0, 0.1, 0.0)).unwrap();
        assert_eq!(g, 1.0);
    }

    #[test]
    fn em_reports_positivity_failure() {
        let p = unit(1.0);
        let err = em_step(&input(&p, 1.0, 0.0, 0.01, -2.0)).unwrap_err();
        assert!(matches!(err, Error::Positivity { .. }));
        assert!(em_step(&input(&p, -1.0, 0.0, 0.01, 0.0)).is_err());
        assert!(em_step(&input(&p, 1.0, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn halving_recovers_or_gives_up() {
        let p = unit(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // a big negative increment over a long step: halving spreads it out
        let g = em_step_adaptive(&input(&p, 1.0, 0.0, 0.5, -1.2), 10, &mut rng);
        assert!(g.is_ok(), "{g:?}");
        assert!(g.unwrap() > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = em_step_adaptive(&input(&p, 1.0, 0.0, 0.5, -1.2), 0, &mut rng);
        assert!(matches!(g, Err(Error::Positivity { .. })));
    }

    #[test]
    fn transform_zero_source_is_gbm() {
        let p = unit(0.0);
        let g = transform_step(&input(&p, 1.0, 0.0, 0.01, 0.1)).unwrap();
        assert!((g - 1.088_717_066_698_398_7).abs() < 1e-10, "{g}");
        assert!((g - (0.085f64).exp()).abs() < 1e-15);

        let p = unit(2.5);
        let g = transform_step(&input(&p, 0.7, 0.0, 0.2, -0.4)).unwrap();
        assert!((g - 0.7 * (-0.3f64 - 0.4).exp()).abs() < 1e-15);
    }

    #[test]
    fn transform_requires_normalization() {
        let mut p = unit(1.0);
        p.eta = 0.5;
        assert!(matches!(
            transform_step(&input(&p, 1.0, 1.0, 0.01, 0.0)),
            Err(Error::NormalizationRequired { .. })
        ));
    }

    #[test]
    fn transform_source_matches_closed_form_integral() {
        // with linear interpolation inside the step, Phi^{-1}(u) = exp(rate u)
        // and the integral is (exp(rate dt) - 1)/rate
        let p = unit(1.0);
        let (gamma, m, dt, db): (f64, f64, f64, f64) = (0.8, 2.0, 0.05, 0.07);
        let s1 = 2.0;
        let rate: f64 = s1 * (1.5 - db / dt);
        let exact_integral = ((rate * dt).exp() - 1.0) / rate;
        let phi = (s1 * (-1.5 * dt + db)).exp();
        let y = phi * (gamma.powf(s1) + s1 * m * exact_integral);
        let want = y.powf(1.0 / s1);
        let got = transform_step_with(&input(&p, gamma, m, dt, db), 64).unwrap();
        assert!((got - want).abs() < 1e-9 * want);
        let coarse = transform_step(&input(&p, gamma, m, dt, db)).unwrap();
        assert!((coarse - want).abs() < 1e-5 * want);
    }

    #[test]
    fn transform_stays_positive_for_violent_increments() {
        let p = unit(3.0);
        for db in [-10.0, -3.0, 0.0, 4.0] {
            let g = transform_step(&input(&p, 1e-6, 5.0, 0.1, db)).unwrap();
            assert!(g > 0.0 && g.is_finite());
        }
    }

    #[test]
    fn ode_converges_to_equilibrium() {
        for (s, c, want) in [(0.0, 4.0, 4.0), (1.0, 4.0, 2.0), (2.0, 8.0, 2.0)] {
            let mut p = unit(s);
            p.eta = 0.0;
            let mut g = 0.5;
            for _ in 0..4000 {
                g = ode_step(&input(&p, g, c, 0.01, 0.0)).unwrap();
            }
            assert!((g - want).abs() < 1e-8, "s={s}: {g}");
        }
        let p = unit(1.0);
        assert!(ode_step(&input(&p, 1.0, 1.0, 0.01, 0.0)).is_err());
    }

    #[test]
    fn ode_matches_em_at_first_order() {
        let mut p = unit(1.0);
        p.eta = 0.0;
        p.tau = 0.7;
        let run = |n: usize, rk: bool| {
            let dt = 1.0 / n as f64;
            let mut g = 1.5;
            for _ in 0..n {
                let inp = input(&p, g, 2.0, dt, 0.0);
                g = if rk { ode_step(&inp).unwrap() } else { em_step(&inp).unwrap() };
            }
            g
        };
        let reference = run(1000, true);
        let e1 = (run(50, false) - reference).abs();
        let e2 = (run(100, false) - reference).abs();
        let order = (e1 / e2).log2();
        assert!((order - 1.0).abs() < 0.1, "{order}");
    }

    #[test]
    fn lower_bound_examples() {
        let p = unit(1.0);
        let lb = gamma_lower_bound(0.0, 0.0, 0.0, &p, 1.7);
        assert_eq!(lb.pointwise, 1.7);
        assert_eq!(lb.sup_form, 1.7);
        let lb = gamma_lower_bound(1.0, 0.0, 0.0, &p, 2.0);
        assert!((lb.pointwise - 2.0 * (-1.5f64).exp()).abs() < 1e-15);
        let lb = gamma_lower_bound(1.0, -0.5, 0.8, &p, 1.0);
        assert!(lb.sup_form <= lb.pointwise);
        assert!((lb.general.unwrap() - (-2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_source_trajectory_attains_bound() {
        let p = unit(1.0);
        let path = crate::brownian::generate_path::<f64>(2.0, 400, crate::brownian::PathSeed::new(1, 0)).unwrap();
        let mut g = 1.3;
        for (i, db) in path.increments().enumerate() {
            g = transform_step(&input(&p, g, 0.0, 0.005, db)).unwrap();
            let t = path.times()[i + 1];
            let lb = gamma_lower_bound(t, path.values()[i + 1], path.running_sup()[i + 1], &p, 1.3);
            assert!((g - lb.pointwise).abs() < 1e-12 * lb.pointwise);
        }
    }
}
