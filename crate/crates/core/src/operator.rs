//! The elliptic operator `-epsilon^2 Laplacian + I` under the Robin condition
//! `epsilon dA/dnu + a A = 0`, and the action of its semigroup
//! `S(t) = exp(-(-epsilon^2 Laplacian + I) t)`.
//!
//! The boundary closure uses a ghost node on each side. At the left end the
//! outward normal points along `-x`, which gives
//! `A_ghost = A_1 - 2 h (a/epsilon) A_0`; the right end is symmetric. In two
//! dimensions the operator is the Kronecker sum of the axis operators, so the
//! semigroup factors exactly into a product of one-dimensional propagators and
//! the scalar `exp(-t)` from the identity shift.

use crate::error::{Error, Result};
use crate::model::{sup_norm, ActivatorField, ModelParams, SpatialGrid};
use crate::scalar::Scalar;

/// Default relative accuracy of [`EllipticOperator::apply_semigroup`].
pub const DEFAULT_SEMIGROUP_TOL: f64 = 1e-10;

/// Substep cap above which implicit Euler replaces Crank-Nicolson.
pub const DEFAULT_MAX_SUBSTEPS: usize = 1 << 20;

/// `-epsilon^2 d^2/dx^2` along one axis with the Robin ghost closure, as a
/// tridiagonal matrix. The identity shift is not included.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisOperator<T> {
    lower: Vec<T>,
    diag: Vec<T>,
    upper: Vec<T>,
    /// `epsilon^2 / h^2`
    coupling: T,
    /// `max_i |row_i|_1`, an upper bound on the spectrum.
    gershgorin: T,
}

impl<T: Scalar> AxisOperator<T> {
    pub fn new(points: usize, spacing: T, epsilon: T, a: T) -> Result<Self> {
        if points < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 points per axis, got {points}"
            )));
        }
        let c = epsilon * epsilon / (spacing * spacing);
        let robin = T::lit(2.0) * epsilon * a / spacing;
        let two = T::lit(2.0);
        let mut lower = vec![-c; points];
        let mut diag = vec![two * c; points];
        let mut upper = vec![-c; points];
        lower[0] = T::zero();
        upper[points - 1] = T::zero();
        diag[0] = two * c + robin;
        upper[0] = -two * c;
        diag[points - 1] = two * c + robin;
        lower[points - 1] = -two * c;
        let gershgorin = (0..points)
            .map(|i| diag[i].abs() + lower[i].abs() + upper[i].abs())
            .fold(T::zero(), T::max);
        Ok(Self {
            lower,
            diag,
            upper,
            coupling: c,
            gershgorin,
        })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn diag(&self) -> &[T] {
        &self.diag
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    fn max_diag(&self) -> T {
        self.diag.iter().copied().fold(T::zero(), T::max)
    }

    /// Largest Crank-Nicolson substep whose explicit half
    /// `I - (k/2) K` has non-negative entries, further capped by
    /// `h^2 / (2 epsilon^2)`.
    fn positive_step(&self) -> T {
        let explicit = T::lit(2.0) / self.max_diag();
        let classic = T::one() / (T::lit(2.0) * self.coupling);
        explicit.min(classic)
    }

    /// Substep count for time `t` meeting `tol`.
    ///
    /// Crank-Nicolson's error on an eigencomponent `lambda` after `n` steps is
    /// about `t lambda^3 k^2 / 12 * exp(-lambda t)`; the worst case over the
    /// spectrum `[0, gershgorin]` fixes `n`.
    fn substeps(&self, t: T, tol: T) -> usize {
        if t == T::zero() {
            return 0;
        }
        let pos = (t / self.positive_step()).ceil().to_usize().unwrap_or(usize::MAX);
        let lambda = (T::lit(3.0) / t).min(self.gershgorin);
        let lt = lambda * t;
        let worst = T::lit(2.0) * lt * lt * lt * (-lt).exp() / T::lit(12.0);
        let acc = (worst / tol).sqrt().ceil().to_usize().unwrap_or(usize::MAX);
        pos.max(acc).max(1)
    }

    fn apply_line(&self, src: &[T], dst: &mut [T]) {
        let n = self.len();
        for i in 0..n {
            let mut v = self.diag[i] * src[i];
            if i > 0 {
                v = v + self.lower[i] * src[i - 1];
            }
            if i + 1 < n {
                v = v + self.upper[i] * src[i + 1];
            }
            dst[i] = v;
        }
    }
}

/// How the linear part is advanced over one substep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubstepScheme {
    CrankNicolson,
    ImplicitEuler,
}

/// Factorized substep for one axis over a fixed time.
#[derive(Debug, Clone)]
struct AxisPropagator<T> {
    substeps: usize,
    scheme: SubstepScheme,
    // explicit half (Crank-Nicolson only)
    e_lower: Vec<T>,
    e_diag: Vec<T>,
    e_upper: Vec<T>,
    // Thomas factors of the implicit matrix
    i_lower: Vec<T>,
    inv_pivot: Vec<T>,
    c_prime: Vec<T>,
    // assembled product of all substeps, row-major, when cheaper to apply
    dense: Option<Vec<T>>,
}

impl<T: Scalar> AxisPropagator<T> {
    fn new(op: &AxisOperator<T>, t: T, tol: T, max_substeps: usize) -> Self {
        let n = op.len();
        let mut substeps = op.substeps(t, tol);
        let mut scheme = SubstepScheme::CrankNicolson;
        if substeps > max_substeps {
            substeps = max_substeps;
            scheme = SubstepScheme::ImplicitEuler;
        }
        let k = if substeps == 0 {
            T::zero()
        } else {
            t / T::from_usize_lossy(substeps)
        };
        let theta = match scheme {
            SubstepScheme::CrankNicolson => k / T::lit(2.0),
            SubstepScheme::ImplicitEuler => k,
        };
        let (e_lower, e_diag, e_upper) = match scheme {
            SubstepScheme::CrankNicolson => (
                op.lower.iter().map(|&l| -theta * l).collect(),
                op.diag.iter().map(|&d| T::one() - theta * d).collect(),
                op.upper.iter().map(|&u| -theta * u).collect(),
            ),
            SubstepScheme::ImplicitEuler => (Vec::new(), Vec::new(), Vec::new()),
        };
        let i_lower: Vec<T> = op.lower.iter().map(|&l| theta * l).collect();
        let i_diag: Vec<T> = op.diag.iter().map(|&d| T::one() + theta * d).collect();
        let i_upper: Vec<T> = op.upper.iter().map(|&u| theta * u).collect();
        let mut inv_pivot = vec![T::zero(); n];
        let mut c_prime = vec![T::zero(); n];
        let mut pivot = i_diag[0];
        inv_pivot[0] = T::one() / pivot;
        c_prime[0] = i_upper[0] * inv_pivot[0];
        for i in 1..n {
            pivot = i_diag[i] - i_lower[i] * c_prime[i - 1];
            inv_pivot[i] = T::one() / pivot;
            c_prime[i] = i_upper[i] * inv_pivot[i];
        }
        let mut prop = Self {
            substeps,
            scheme,
            e_lower,
            e_diag,
            e_upper,
            i_lower,
            inv_pivot,
            c_prime,
            dense: None,
        };
        // a tridiagonal substep costs about 8n flops, a dense product n^2
        if n < 8 * substeps {
            prop.dense = Some(prop.assemble(n));
        }
        prop
    }

    fn assemble(&self, n: usize) -> Vec<T> {
        let mut m = vec![T::zero(); n * n];
        let mut col = vec![T::zero(); n];
        let mut rhs = vec![T::zero(); n];
        for j in 0..n {
            col.fill(T::zero());
            col[j] = T::one();
            self.advance_substeps(&mut col, &mut rhs);
            for i in 0..n {
                // every substep matrix is entrywise non-negative
                m[i * n + j] = col[i].max(T::zero());
            }
        }
        m
    }

    /// Advances one line held in `u`, using `rhs` as scratch.
    fn advance(&self, u: &mut [T], rhs: &mut [T]) {
        match &self.dense {
            Some(m) => {
                let n = u.len();
                for (i, row) in m.chunks_exact(n).enumerate() {
                    rhs[i] = dot(row, u);
                }
                u.copy_from_slice(&rhs[..n]);
            }
            None => self.advance_substeps(u, rhs),
        }
    }

    fn advance_substeps(&self, u: &mut [T], rhs: &mut [T]) {
        let n = u.len();
        for _ in 0..self.substeps {
            match self.scheme {
                SubstepScheme::CrankNicolson => {
                    for i in 0..n {
                        let mut v = self.e_diag[i] * u[i];
                        if i > 0 {
                            v = v + self.e_lower[i] * u[i - 1];
                        }
                        if i + 1 < n {
                            v = v + self.e_upper[i] * u[i + 1];
                        }
                        rhs[i] = v;
                    }
                }
                SubstepScheme::ImplicitEuler => rhs.copy_from_slice(u),
            }
            // forward sweep
            u[0] = rhs[0] * self.inv_pivot[0];
            for i in 1..n {
                u[i] = (rhs[i] - self.i_lower[i] * u[i - 1]) * self.inv_pivot[i];
            }
            // back substitution
            for i in (0..n - 1).rev() {
                u[i] = u[i] - self.c_prime[i] * u[i + 1];
            }
        }
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (a4, a_rest) = a.split_at(a.len() - a.len() % 4);
    let (b4, b_rest) = b.split_at(a4.len());
    for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let tail = a_rest.iter().zip(b_rest).fold(T::zero(), |s, (&x, &y)| s + x * y);
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Precomputed action of `S(t)` for one fixed `t`.
#[derive(Debug, Clone)]
pub struct Propagator<T> {
    time: T,
    decay: T,
    shape: Vec<usize>,
    axes: Vec<AxisPropagator<T>>,
}

/// Line buffers reused across [`Propagator::apply_in_place`] calls.
#[derive(Debug, Clone, Default)]
pub struct PropagatorScratch<T> {
    line: Vec<T>,
    rhs: Vec<T>,
}

impl<T: Scalar> Propagator<T> {
    pub fn time(&self) -> T {
        self.time
    }

    /// Substep counts per axis.
    pub fn substeps(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.substeps).collect()
    }

    pub fn schemes(&self) -> Vec<SubstepScheme> {
        self.axes.iter().map(|a| a.scheme).collect()
    }

    pub fn apply_in_place(&self, values: &mut [T], scratch: &mut PropagatorScratch<T>) {
        debug_assert_eq!(values.len(), self.shape.iter().product::<usize>());
        if self.time == T::zero() {
            return;
        }
        match self.shape.as_slice() {
            [_] => {
                scratch.rhs.resize(values.len(), T::zero());
                self.axes[0].advance(values, &mut scratch.rhs);
            }
            [nx, ny] => {
                let (nx, ny) = (*nx, *ny);
                scratch.rhs.resize(nx.max(ny), T::zero());
                scratch.line.resize(nx.max(ny), T::zero());
                for row in values.chunks_exact_mut(nx) {
                    self.axes[0].advance(row, &mut scratch.rhs[..nx]);
                }
                for ix in 0..nx {
                    for iy in 0..ny {
                        scratch.line[iy] = values[iy * nx + ix];
                    }
                    self.axes[1].advance(&mut scratch.line[..ny], &mut scratch.rhs[..ny]);
                    for iy in 0..ny {
                        values[iy * nx + ix] = scratch.line[iy];
                    }
                }
            }
            _ => unreachable!("grids are 1D or 2D"),
        }
        for v in values.iter_mut() {
            *v = *v * self.decay;
        }
    }

    pub fn apply(&self, values: &[T]) -> Vec<T> {
        let mut out = values.to_vec();
        self.apply_in_place(&mut out, &mut PropagatorScratch::default());
        out
    }
}

/// Matrix-free `-epsilon^2 Laplacian + I` on a grid.
#[derive(Debug, Clone)]
pub struct EllipticOperator<T> {
    grid: SpatialGrid<T>,
    axes: Vec<AxisOperator<T>>,
    tol: T,
    max_substeps: usize,
}

/// Builds the operator for `grid` with the Robin coefficients in `params`.
pub fn build_operator<T: Scalar>(
    grid: &SpatialGrid<T>,
    params: &ModelParams<T>,
) -> Result<EllipticOperator<T>> {
    EllipticOperator::new(grid, params.epsilon, params.a)
}

impl<T: Scalar> EllipticOperator<T> {
    pub fn new(grid: &SpatialGrid<T>, epsilon: T, a: T) -> Result<Self> {
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if !(a >= T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "Robin coefficient must be non-negative, got {a}"
            )));
        }
        let axes = grid
            .axes()
            .iter()
            .map(|ax| AxisOperator::new(ax.points, ax.spacing, epsilon, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.clone(),
            axes,
            tol: T::lit(DEFAULT_SEMIGROUP_TOL),
            max_substeps: DEFAULT_MAX_SUBSTEPS,
        })
    }

    pub fn with_tolerance(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_substeps(mut self, max_substeps: usize) -> Self {
        self.max_substeps = max_substeps.max(1);
        self
    }

    pub fn tolerance(&self) -> T {
        self.tol
    }

    pub fn grid(&self) -> &SpatialGrid<T> {
        &self.grid
    }

    pub fn axes(&self) -> &[AxisOperator<T>] {
        &self.axes
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `(-epsilon^2 Laplacian + I) f`
    pub fn apply(&self, f: &[T]) -> Vec<T> {
        let mut out = f.to_vec();
        let mut line_in = Vec::new();
        let mut line_out = Vec::new();
        let shape: Vec<usize> = self.grid.axes().iter().map(|a| a.points).collect();
        for (axis, op) in self.axes.iter().enumerate() {
            let n = shape[axis];
            let stride: usize = shape[..axis].iter().product();
            let lines = f.len() / n;
            line_in.resize(n, T::zero());
            line_out.resize(n, T::zero());
            for l in 0..lines {
                let base = (l / stride) * stride * n + (l % stride);
                for i in 0..n {
                    line_in[i] = f[base + i * stride];
                }
                op.apply_line(&line_in, &mut line_out);
                for i in 0..n {
                    out[base + i * stride] = out[base + i * stride] + line_out[i];
                }
            }
        }
        out
    }

    /// Dense matrix, row-major. Intended for small grids.
    pub fn dense(&self) -> Vec<Vec<T>> {
        let n = self.len();
        let mut cols = Vec::with_capacity(n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            cols.push(self.apply(&e));
            e[j] = T::zero();
        }
        (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
    }

    /// Precomputes `S(t)` to relative accuracy `tol`.
    pub fn propagator(&self, t: T, tol: T) -> Result<Propagator<T>> {
        if !(t >= T::zero()) || !t.is_finite() {
            return Err(Error::NegativeTime(t.to_f64_lossy()));
        }
        if !(tol > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "semigroup tolerance must be positive, got {tol}"
            )));
        }
        Ok(Propagator {
            time: t,
            decay: (-t).exp(),
            shape: self.grid.axes().iter().map(|a| a.points).collect(),
            axes: self
                .axes
                .iter()
                .map(|op| AxisPropagator::new(op, t, tol, self.max_substeps))
                .collect(),
        })
    }

    /// `S(t) f`, accurate to the operator's tolerance.
    pub fn apply_semigroup(&self, t: T, f: &ActivatorField<T>) -> Result<ActivatorField<T>> {
        if f.len() != self.len() {
            return Err(Error::FieldSize {
                expected: self.len(),
                got: f.len(),
            });
        }
        let prop = self.propagator(t, self.tol)?;
        Ok(ActivatorField::from_trusted(prop.apply(f.values())))
    }

    /// Semigroup action on an arbitrary (possibly signed) vector.
    pub fn apply_semigroup_raw(&self, t: T, f: &[T]) -> Result<Vec<T>> {
        Ok(self.propagator(t, self.tol)?.apply(f))
    }

    /// `||S(t) f||_C <= ||f||_C` up to `1e-12` slack.
    pub fn sup_norm_contraction_check(&self, t: T, f: &[T]) -> Result<bool> {
        let out = self.apply_semigroup_raw(t, f)?;
        Ok(sup_norm(&out) <= sup_norm(f) + T::lit(1e-12))
    }
}
