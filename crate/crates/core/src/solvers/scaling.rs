//! Eigenvalue scaling of normalised tuning parameters.
//!
//! A normalised pair `(a*, b*)` in `[0,1]^2` is mapped to raw penalties
//! through the ordered nonzero eigenvalues of the donor Gram matrix
//! `z0 z0'`: `b = b* * lambda_ceil(n b*)`, then `a` likewise against the
//! spectrum of `z0 z0' + b I`.

use crate::{MatchingMatrix, Result, Scalar};

use super::PreparedProblem;

/// Relative cutoff below which a Gram eigenvalue counts as zero.
pub const ZERO_EIGENVALUE_RATIO: f64 = 1e-10;

/// Eigenvalues of the J x J Gram matrix, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T: Scalar> {
    /// All J eigenvalues; entries under the zero cutoff are stored as 0.
    pub eigenvalues: Vec<T>,
    /// Number of columns L of the matching matrix.
    pub n_columns: usize,
}

impl<T: Scalar> Spectrum<T> {
    pub fn from_eigenvalues(mut raw: Vec<T>, n_columns: usize) -> Self {
        raw.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
        let max = raw.last().copied().unwrap_or_else(T::zero).max(T::zero());
        let cut = max * T::lit(ZERO_EIGENVALUE_RATIO);
        let eigenvalues = raw
            .into_iter()
            .map(|v| {
                if v > cut && v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            })
            .collect();
        Spectrum {
            eigenvalues,
            n_columns,
        }
    }

    pub fn n_pool(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `min(J, L)`, the number of nonzero eigenvalues in exact arithmetic.
    pub fn n_expected(&self) -> usize {
        self.n_pool().min(self.n_columns)
    }

    /// Largest `min(n_expected, #positive)` positive eigenvalues, ascending.
    pub fn nonzero(&self) -> &[T] {
        let pos = self.eigenvalues.iter().filter(|&&v| v > T::zero()).count();
        let take = pos.min(self.n_expected());
        &self.eigenvalues[self.eigenvalues.len() - take..]
    }

    /// Realises `(a*, b*)` into raw penalties.
    pub fn scale(&self, a_star: T, b_star: T) -> EigenScaling<T> {
        let nonzero = self.nonzero().to_vec();
        let n = self.n_expected();
        let (b, b_index) = pick(&nonzero, b_star);
        let shifted: Vec<T> = if b > T::zero() {
            self.eigenvalues.iter().map(|&l| l + b).collect()
        } else {
            nonzero.clone()
        };
        let (a, a_index) = pick(&shifted, a_star);
        EigenScaling {
            eigenvalues: self.eigenvalues.clone(),
            n,
            n_positive: nonzero.len(),
            shortfall: n - nonzero.len(),
            b_index,
            n_prime: shifted.len(),
            a_index,
            a,
            b,
        }
    }
}

/// `star * values[ceil(len * star)]` (1-based), zero when `star` is zero or
/// there is nothing to pick from.
fn pick<T: Scalar>(values: &[T], star: T) -> (T, Option<usize>) {
    if star <= T::zero() || values.is_empty() {
        return (T::zero(), None);
    }
    let n = values.len();
    let idx = tolerant_ceil(star.as_f64() * n as f64).clamp(1, n);
    (star * values[idx - 1], Some(idx))
}

/// Ceiling that ignores floating noise just above an integer, so grid values
/// such as `0.3` map to `ceil(10 * 0.3) = 3`.
fn tolerant_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r.max(0.0) as usize
    } else {
        x.ceil().max(0.0) as usize
    }
}

/// Full record of one realisation of `(a*, b*)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenScaling<T: Scalar> {
    pub eigenvalues: Vec<T>,
    /// `min(J, L)`.
    pub n: usize,
    /// Positive eigenvalues actually available (at most `n`).
    pub n_positive: usize,
    /// `n - n_positive`: nonzero eigenvalues lost to rank deficiency.
    pub shortfall: usize,
    /// 1-based index into the nonzero spectrum used for `b`.
    pub b_index: Option<usize>,
    /// Length of the spectrum used for `a`.
    pub n_prime: usize,
    pub a_index: Option<usize>,
    pub a: T,
    pub b: T,
}

/// Realises `(a*, b*)` for a matching matrix.
pub fn eigen_scale<T: Scalar>(
    m: &MatchingMatrix<T>,
    a_star: T,
    b_star: T,
) -> Result<crate::TuningParams<T>> {
    let prepared = PreparedProblem::new(m.z0.clone(), m.z1.clone())?;
    crate::TuningParams::realize(a_star, b_star, prepared.spectrum())
}
