//! Model parameters, regime predicates, the spatial grid and quadrature of
//! spatial means.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Power, Scalar};

/// Exponents and physical constants of the shadow system.
///
/// `epsilon` enters both the diffusion coefficient (as `epsilon^2`) and the
/// Robin condition `epsilon dA/dnu + a A = 0` (to the first power).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub p: T,
    pub q: T,
    pub r: T,
    pub s: T,
    pub epsilon: T,
    pub tau: T,
    pub a: T,
    pub b: T,
    pub eta: T,
}

/// A single violated parameter inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamViolation {
    PGreaterThanOne,
    QPositive,
    RPositive,
    SNonNegative,
    EpsilonPositive,
    TauPositive,
    BPositive,
    ANonNegative,
    EtaNonNegative,
    /// `(p-1)(s+1) < q r`
    ExponentCondition,
    NonFinite,
}

impl ParamViolation {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PGreaterThanOne => "p > 1",
            Self::QPositive => "q > 0",
            Self::RPositive => "r > 0",
            Self::SNonNegative => "s >= 0",
            Self::EpsilonPositive => "epsilon > 0",
            Self::TauPositive => "tau > 0",
            Self::BPositive => "b > 0",
            Self::ANonNegative => "a >= 0",
            Self::EtaNonNegative => "eta >= 0",
            Self::ExponentCondition => "(p-1)(s+1) < q*r",
            Self::NonFinite => "all parameters finite",
        }
    }
}

impl fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of [`ModelParams::validate`]. Violations are values, not errors.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Validation {
    pub violations: Vec<ParamViolation>,
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let names: Vec<_> = self.violations.iter().map(|v| v.name()).collect();
            Err(Error::InvalidParams(format!("violated: {}", names.join(", "))))
        }
    }
}

/// Result of the global-existence exponent test
/// `(p-1)/r < min(2/(N+2), q/(s+1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeCheck<T> {
    pub holds: bool,
    /// `min(2/(N+2), q/(s+1)) - (p-1)/r`
    pub margin: T,
    pub kappa: T,
    pub threshold: T,
}

impl<T: Scalar> ModelParams<T> {
    pub fn validate(&self) -> Validation {
        let zero = T::zero();
        let mut violations = Vec::new();
        let all = [
            self.p, self.q, self.r, self.s, self.epsilon, self.tau, self.a, self.b, self.eta,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            violations.push(ParamViolation::NonFinite);
            return Validation { violations };
        }
        let checks = [
            (self.p > T::one(), ParamViolation::PGreaterThanOne),
            (self.q > zero, ParamViolation::QPositive),
            (self.r > zero, ParamViolation::RPositive),
            (self.s >= zero, ParamViolation::SNonNegative),
            (self.epsilon > zero, ParamViolation::EpsilonPositive),
            (self.tau > zero, ParamViolation::TauPositive),
            (self.b > zero, ParamViolation::BPositive),
            (self.a >= zero, ParamViolation::ANonNegative),
            (self.eta >= zero, ParamViolation::EtaNonNegative),
            (
                (self.p - T::one()) * (self.s + T::one()) < self.q * self.r,
                ParamViolation::ExponentCondition,
            ),
        ];
        violations.extend(checks.iter().filter(|(ok, _)| !ok).map(|(_, v)| *v));
        Validation { violations }
    }

    pub fn check_global_regime(&self, dimension: usize) -> RegimeCheck<T> {
        let n = T::from_usize_lossy(dimension);
        let two = T::lit(2.0);
        let kappa = (self.p - T::one()) / self.r;
        let threshold = (two / (n + two)).min(self.q / (self.s + T::one()));
        RegimeCheck {
            holds: kappa < threshold,
            margin: threshold - kappa,
            kappa,
            threshold,
        }
    }

    /// `(p-1)/r`
    pub fn kappa(&self) -> T {
        (self.p - T::one()) / self.r
    }

    /// True when `tau = eta = 1`, the normalization the transform integrator
    /// and the closed-form bounds are written in.
    pub fn is_normalized(&self) -> bool {
        self.tau == T::one() && self.eta == T::one()
    }

    pub fn to_f64(&self) -> ModelParams<f64> {
        ModelParams {
            p: self.p.to_f64_lossy(),
            q: self.q.to_f64_lossy(),
            r: self.r.to_f64_lossy(),
            s: self.s.to_f64_lossy(),
            epsilon: self.epsilon.to_f64_lossy(),
            tau: self.tau.to_f64_lossy(),
            a: self.a.to_f64_lossy(),
            b: self.b.to_f64_lossy(),
            eta: self.eta.to_f64_lossy(),
        }
    }
}

/// One axis of a tensor-product grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis<T> {
    pub length: T,
    pub points: usize,
    pub spacing: T,
}

/// Uniform node-centred grid on `[0, L_x]` or `[0, L_x] x [0, L_y]`.
///
/// Nodes are stored with the x index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid<T> {
    axes: Vec<Axis<T>>,
    weights: Vec<T>,
    weight_sum: T,
    measure: T,
}

impl<T: Scalar> SpatialGrid<T> {
    pub fn line(length: T, points: usize) -> Result<Self> {
        Self::new(&[length], &[points])
    }

    pub fn rectangle(lengths: [T; 2], points: [usize; 2]) -> Result<Self> {
        Self::new(&lengths, &points)
    }

    pub fn new(lengths: &[T], points: &[usize]) -> Result<Self> {
        if lengths.is_empty() || lengths.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension must be 1 or 2, got {}",
                lengths.len()
            )));
        }
        if lengths.len() != points.len() {
            return Err(Error::InvalidGrid(
                "lengths and points must have the same number of axes".into(),
            ));
        }
        let mut axes = Vec::with_capacity(lengths.len());
        for (&length, &n) in lengths.iter().zip(points) {
            if !(length > T::zero()) || !length.is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "axis length must be positive, got {length}"
                )));
            }
            if n < 3 {
                return Err(Error::InvalidGrid(format!(
                    "need at least 3 points per axis, got {n}"
                )));
            }
            axes.push(Axis {
                length,
                points: n,
                spacing: length / T::from_usize_lossy(n - 1),
            });
        }

        let axis_weights: Vec<Vec<T>> = axes
            .iter()
            .map(|ax| {
                let mut w = vec![T::one(); ax.points];
                w[0] = T::lit(0.5);
                w[ax.points - 1] = T::lit(0.5);
                w
            })
            .collect();
        let weights = match axis_weights.as_slice() {
            [wx] => wx.clone(),
            [wx, wy] => wy
                .iter()
                .flat_map(|&b| wx.iter().map(move |&a| a * b))
                .collect(),
            _ => unreachable!(),
        };
        let weight_sum = weights.iter().fold(T::zero(), |acc, &w| acc + w);
        let measure = axes.iter().fold(T::one(), |acc, ax| acc * ax.length);
        Ok(Self {
            axes,
            weights,
            weight_sum,
            measure,
        })
    }

    pub fn dimension(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis<T>] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `|D|`
    pub fn measure(&self) -> T {
        self.measure
    }

    /// Coordinates of node `index`.
    pub fn coords(&self, index: usize) -> Vec<T> {
        let mut rest = index;
        self.axes
            .iter()
            .map(|ax| {
                let i = rest % ax.points;
                rest /= ax.points;
                T::from_usize_lossy(i) * ax.spacing
            })
            .collect()
    }

    /// Unnormalized trapezoid weights (products of 1 and 1/2).
    pub fn trapezoid_weights(&self) -> &[T] {
        &self.weights
    }

    /// `(1/|D|) \int_D f dx` by the composite trapezoid rule.
    pub fn mean(&self, values: &[T]) -> T {
        debug_assert_eq!(values.len(), self.weights.len());
        let s = self
            .weights
            .iter()
            .zip(values)
            .fold(T::zero(), |acc, (&w, &v)| acc + w * v);
        s / self.weight_sum
    }

    /// `(1/|D|) \int_D g(f) dx` without allocating the mapped field.
    pub fn mean_map(&self, values: &[T], mut g: impl FnMut(T) -> T) -> T {
        let s = self
            .weights
            .iter()
            .zip(values)
            .fold(T::zero(), |acc, (&w, &v)| acc + w * g(v));
        s / self.weight_sum
    }

    pub fn integral(&self, values: &[T]) -> T {
        self.mean(values) * self.measure
    }
}

/// Non-negative activator concentration on the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivatorField<T> {
    values: Vec<T>,
}

impl<T: Scalar> ActivatorField<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= T::zero()) || !v.is_finite())
        {
            return Err(Error::NegativeField {
                index,
                value: value.to_f64_lossy(),
            });
        }
        Ok(Self { values })
    }

    /// Builds a field on `grid`, checking the node count.
    pub fn on_grid(grid: &SpatialGrid<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::FieldSize {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Self::new(values)
    }

    pub fn constant(grid: &SpatialGrid<T>, c: T) -> Result<Self> {
        Self::new(vec![c; grid.len()])
    }

    pub fn zeros(grid: &SpatialGrid<T>) -> Self {
        Self {
            values: vec![T::zero(); grid.len()],
        }
    }

    pub fn from_fn(grid: &SpatialGrid<T>, f: impl Fn(&[T]) -> T) -> Result<Self> {
        Self::new((0..grid.len()).map(|i| f(&grid.coords(i))).collect())
    }

    /// Constructs without the sign check. Callers guarantee non-negativity.
    pub(crate) fn from_trusted(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> T {
        sup_norm(&self.values)
    }
}

pub(crate) fn sup_norm<T: Scalar>(values: &[T]) -> T {
    values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// The scalar inhibitor `gamma > 0` together with `y = gamma^(s+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InhibitorState<T> {
    gamma: T,
    y: T,
}

impl<T: Scalar> InhibitorState<T> {
    pub fn new(gamma: T, s: T) -> Result<Self> {
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(Error::NonPositiveGamma(gamma.to_f64_lossy()));
        }
        Ok(Self {
            gamma,
            y: gamma.powf(s + T::one()),
        })
    }

    /// Rebuilds from the transformed variable `y = gamma^(s+1)`.
    pub fn from_transform(y: T, s: T) -> Result<Self> {
        if !(y > T::zero()) || !y.is_finite() {
            return Err(Error::NonPositiveGamma(y.to_f64_lossy()));
        }
        Ok(Self {
            gamma: y.powf(T::one() / (s + T::one())),
            y,
        })
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn y(&self) -> T {
        self.y
    }
}

/// `(1/|D|) \int_D A^exponent dx` by the trapezoid rule.
pub fn mean_power<T: Scalar>(
    field: &ActivatorField<T>,
    grid: &SpatialGrid<T>,
    exponent: T,
) -> Result<T> {
    if field.len() != grid.len() {
        return Err(Error::FieldSize {
            expected: grid.len(),
            got: field.len(),
        });
    }
    if !(exponent > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "mean_power exponent must be positive, got {exponent}"
        )));
    }
    Ok(mean_power_raw(field.values(), grid, &Power::new(exponent)))
}

/// Unchecked variant used in inner loops.
#[inline]
pub(crate) fn mean_power_raw<T: Scalar>(values: &[T], grid: &SpatialGrid<T>, power: &Power<T>) -> T {
    grid.mean_map(values, |v| power.apply(v))
}
