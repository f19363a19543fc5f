//! Penalised least squares under the adding-up constraint.
//!
//! Every estimator reduces to
//!
//! ```text
//! minimise  ||z1 - z0' w||^2 + a * sum_j d_j |w_j| + b * sum_j w_j^2
//! subject to sum_j w_j = 1   (and w >= 0 when `nonneg`)
//! ```
//!
//! [`PreparedProblem`] caches the Gram matrix and its eigendecomposition so
//! the same donor pool can be solved for many penalty pairs cheaply, which
//! is what cross-validation does.

mod active;
mod admm;
pub mod scaling;

use nalgebra::{DMatrix, DVector};

use crate::{Error, MatchingMatrix, Result, Scalar};

pub use admm::PreparedProblem;
pub use scaling::{eigen_scale, EigenScaling, Spectrum};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverProblem<T: Scalar> {
    /// J x L.
    pub z0: DMatrix<T>,
    /// Length L.
    pub z1: DVector<T>,
    /// L1 strength.
    pub a: T,
    /// L2 strength.
    pub b: T,
    /// Per-donor L1 multipliers, length J.
    pub d: DVector<T>,
    pub nonneg: bool,
}

impl<T: Scalar> SolverProblem<T> {
    /// The unpenalised non-negative program (original synthetic control).
    pub fn simplex(z0: DMatrix<T>, z1: DVector<T>) -> Self {
        let j = z0.nrows();
        SolverProblem {
            z0,
            z1,
            a: T::zero(),
            b: T::zero(),
            d: DVector::from_element(j, T::one()),
            nonneg: true,
        }
    }

    pub fn affine(z0: DMatrix<T>, z1: DVector<T>, a: T, b: T, d: DVector<T>) -> Self {
        SolverProblem {
            z0,
            z1,
            a,
            b,
            d,
            nonneg: false,
        }
    }

    pub fn objective(&self, w: &DVector<T>) -> T {
        objective(&self.z0, &self.z1, self.a, self.b, &self.d, w)
    }
}

pub(crate) fn objective<T: Scalar>(
    z0: &DMatrix<T>,
    z1: &DVector<T>,
    a: T,
    b: T,
    d: &DVector<T>,
    w: &DVector<T>,
) -> T {
    let resid = z1 - z0.tr_mul(w);
    let l1 = w
        .iter()
        .zip(d.iter())
        .fold(T::zero(), |s, (&wj, &dj)| s + dj * wj.abs());
    resid.norm_squared() + a * l1 + b * w.norm_squared()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T: Scalar> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions {
            tol: T::lit(1e-8),
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult<T: Scalar> {
    pub w: DVector<T>,
    pub objective: T,
    pub iterations: usize,
    /// `|sum(w) - 1|` for polished solutions, the splitting residual otherwise.
    pub primal_residual: T,
    /// Largest violation of the stationarity conditions.
    pub dual_residual: T,
    /// True when the objective is strictly convex on the feasible set.
    pub unique: bool,
}

/// Euclidean distance from `z1` to each row of `z0`.
pub fn pairwise_distances<T: Scalar>(m: &MatchingMatrix<T>) -> DVector<T> {
    distances(&m.z0, &m.z1)
}

pub(crate) fn distances<T: Scalar>(z0: &DMatrix<T>, z1: &DVector<T>) -> DVector<T> {
    DVector::from_fn(z0.nrows(), |j, _| {
        z0.row(j)
            .iter()
            .zip(z1.iter())
            .fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y))
            .sqrt()
    })
}

pub fn solve<T: Scalar>(p: &SolverProblem<T>, opts: &SolverOptions<T>) -> Result<SolverResult<T>> {
    let j = p.z0.nrows();
    if j == 0 {
        return Err(Error::validation("empty donor pool"));
    }
    if p.d.len() != j {
        return Err(Error::validation(format!(
            "d has length {}, expected {j}",
            p.d.len()
        )));
    }
    let prepared = PreparedProblem::new(p.z0.clone(), p.z1.clone())?;
    prepared.solve(p.a, p.b, &p.d, p.nonneg, opts)
}
