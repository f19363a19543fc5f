//! Operator splitting with support polishing.
//!
//! The splitting alternates an exact ridge step on the affine set
//! `sum(w) = 1` with an element-wise soft threshold (plus a clamp at zero
//! for the non-negative program), coupled by a scaled dual variable. The
//! ridge step uses the eigendecomposition of the Gram matrix, so changing
//! `rho` or `b` never refactorises anything.
//!
//! Whenever the sign pattern of the thresholded iterate settles, an
//! active-set refinement is started from it and its result is accepted if
//! it satisfies the full optimality conditions. Accepted points have exact
//! zeros and sum to one up to rounding.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result, Scalar};

use super::active::ActiveSet;
use super::{objective, scaling::Spectrum, SolverOptions, SolverResult};

const RELAXATION: f64 = 1.6;
const ADAPT_EVERY: usize = 10;
const STABLE_PATTERN: usize = 4;
/// Early iterates still carry the flat starting pattern.
const MIN_REFINE_ITER: usize = 60;

/// A donor pool with its Gram matrix and eigendecomposition.
#[derive(Debug, Clone)]
pub struct PreparedProblem<T: Scalar> {
    z0: DMatrix<T>,
    z1: DVector<T>,
    /// `z0 z0'`, J x J.
    gram: DMatrix<T>,
    /// `z0 z1`, length J.
    cross: DVector<T>,
    /// Ascending, clamped at zero.
    eigenvalues: DVector<T>,
    /// Columns match `eigenvalues`.
    eigenvectors: DMatrix<T>,
    spectrum: Spectrum<T>,
}

impl<T: Scalar> PreparedProblem<T> {
    pub fn new(z0: DMatrix<T>, z1: DVector<T>) -> Result<Self> {
        let j = z0.nrows();
        if j == 0 {
            return Err(Error::validation("empty donor pool"));
        }
        if z0.ncols() != z1.len() || z1.is_empty() {
            return Err(Error::validation(format!(
                "matching matrix is {}x{} but target has length {}",
                j,
                z0.ncols(),
                z1.len()
            )));
        }
        let gram = &z0 * z0.transpose();
        let cross = &z0 * &z1;
        let eig = SymmetricEigen::new(gram.clone());
        let mut order: Vec<usize> = (0..j).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let raw: Vec<T> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite Gram eigenvalues".into()));
        }
        let spectrum = Spectrum::from_eigenvalues(raw.clone(), z0.ncols());
        let eigenvectors = DMatrix::from_fn(j, j, |r, c| eig.eigenvectors[(r, order[c])]);
        let eigenvalues = DVector::from_iterator(j, raw.iter().map(|&v| v.max(T::zero())));
        Ok(PreparedProblem {
            z0,
            z1,
            gram,
            cross,
            eigenvalues,
            eigenvectors,
            spectrum,
        })
    }

    pub fn n_pool(&self) -> usize {
        self.z0.nrows()
    }

    pub fn z0(&self) -> &DMatrix<T> {
        &self.z0
    }

    pub fn z1(&self) -> &DVector<T> {
        &self.z1
    }

    pub fn spectrum(&self) -> &Spectrum<T> {
        &self.spectrum
    }

    pub fn distances(&self) -> DVector<T> {
        super::distances(&self.z0, &self.z1)
    }

    /// Whether `w' G w` is positive definite on `{v : sum(v) = 0}`.
    fn strictly_convex_unpenalised(&self) -> bool {
        let j = self.n_pool();
        let zeros = self
            .spectrum
            .eigenvalues
            .iter()
            .filter(|&&v| v <= T::zero())
            .count();
        match zeros {
            0 => true,
            1 => {
                let q = self.eigenvectors.column(0);
                q.sum().abs() > T::lit(1e-8) * T::from_usize_lossy(j).sqrt()
            }
            _ => false,
        }
    }

    pub fn solve(
        &self,
        a: T,
        b: T,
        d: &DVector<T>,
        nonneg: bool,
        opts: &SolverOptions<T>,
    ) -> Result<SolverResult<T>> {
        let j = self.n_pool();
        if d.len() != j {
            return Err(Error::validation(format!(
                "d has length {}, expected {j}",
                d.len()
            )));
        }
        if !(a >= T::zero()) || !(b >= T::zero()) {
            return Err(Error::validation("penalties must be non-negative"));
        }
        if d.iter().any(|&v| !(v >= T::zero())) {
            return Err(Error::validation("L1 multipliers must be non-negative"));
        }
        if j == 1 {
            let w = DVector::from_element(1, T::one());
            return Ok(SolverResult {
                objective: objective(&self.z0, &self.z1, a, b, d, &w),
                w,
                iterations: 0,
                primal_residual: T::zero(),
                dual_residual: T::zero(),
                unique: true,
            });
        }
        let unique = b > T::zero() || self.strictly_convex_unpenalised();
        if a == T::zero() && b == T::zero() && !nonneg {
            let mut res = self.min_norm()?;
            res.unique = unique;
            return Ok(res);
        }
        let mut res = self.split(a, b, d, nonneg, opts)?;
        res.unique = unique;
        Ok(res)
    }

    /// Minimum-norm minimiser of the unpenalised affine program.
    fn min_norm(&self) -> Result<SolverResult<T>> {
        let j = self.n_pool();
        let basis = sum_zero_basis::<T>(j);
        let m = self.z0.tr_mul(&basis);
        let centre = DVector::from_element(j, T::one() / T::from_usize_lossy(j));
        let r0 = &self.z1 - self.z0.tr_mul(&centre);
        let svd = m.svd(true, true);
        let smax = svd
            .singular_values
            .iter()
            .copied()
            .fold(T::zero(), |a, b| a.max(b));
        let eps = smax * rel_eps::<T>();
        let y = svd
            .solve(&r0, eps)
            .map_err(|e| Error::Numerical(format!("least-squares solve failed: {e}")))?;
        let w = centre + basis * y;
        let zeros = DVector::zeros(j);
        let (primal, dual) = self.kkt_residuals(&w, T::zero(), T::zero(), T::zero(), &zeros, false);
        Ok(SolverResult {
            objective: objective(&self.z0, &self.z1, T::zero(), T::zero(), &zeros, &w),
            w,
            iterations: 0,
            primal_residual: primal,
            dual_residual: dual,
            unique: false,
        })
    }

    fn split(
        &self,
        a: T,
        b: T,
        d: &DVector<T>,
        nonneg: bool,
        opts: &SolverOptions<T>,
    ) -> Result<SolverResult<T>> {
        let j = self.n_pool();
        let two = T::lit(2.0);
        let alpha = T::lit(RELAXATION);
        let hess: Vec<T> = self.eigenvalues.iter().map(|&l| two * (l + b)).collect();
        let hmean = hess.iter().fold(T::zero(), |s, &h| s + h) / T::from_usize_lossy(j);
        let l1 = d * a;
        let l1mean = l1.sum() / T::from_usize_lossy(j);
        let tiny = T::lit(1e-12);
        let mut rho = hmean.max(l1mean).max(tiny);
        let rho_lo = rho * T::lit(1e-6);
        let rho_hi = rho * T::lit(1e6);
        let grad_scale = self.kkt_scale(a, b, d) * T::lit(1e-3);
        let kkt_tol = self.kkt_scale(a, b, d) * opts.tol;

        let mut step = RidgeStep::new(&self.eigenvectors, &hess, rho);
        let q = &self.eigenvectors;
        let mut z = DVector::from_element(j, T::one() / T::from_usize_lossy(j));
        let mut u = DVector::zeros(j);
        let mut x = z.clone();
        let mut rhs = DVector::zeros(j);
        let mut pattern: Vec<i8> = vec![0; j];
        let mut stable = 0usize;
        let mut tried: Option<Vec<i8>> = None;
        let mut r_norm = T::zero();
        let mut s_norm = T::zero();

        for it in 1..=opts.max_iter {
            // x: ridge step projected on sum(x) = 1
            for i in 0..j {
                rhs[i] = rho * (z[i] - u[i]) + two * self.cross[i];
            }
            step.apply(q, &rhs, &mut x);
            let z_old = z.clone();
            for i in 0..j {
                let xh = alpha * x[i] + (T::one() - alpha) * z_old[i];
                let v = xh + u[i];
                let k = l1[i] / rho;
                let mut zi = if v > k {
                    v - k
                } else if v < -k {
                    v + k
                } else {
                    T::zero()
                };
                if nonneg && zi < T::zero() {
                    zi = T::zero();
                }
                z[i] = zi;
                u[i] = v - zi;
            }

            r_norm = (&x - &z).amax();
            s_norm = (&z - &z_old).amax() * rho;

            let new_pattern: Vec<i8> = z.iter().map(|&v| sign_of(v)).collect();
            if new_pattern == pattern {
                stable += 1;
            } else {
                pattern = new_pattern;
                stable = 0;
            }
            if stable >= STABLE_PATTERN && it >= MIN_REFINE_ITER && tried.as_ref() != Some(&pattern)
            {
                tried = Some(pattern.clone());
                if let Some(res) = self.refine(&z, a, b, d, nonneg, kkt_tol, it) {
                    return Ok(res);
                }
            }

            let eps_p = opts.tol * T::one().max(x.amax()).max(z.amax());
            let eps_d = opts.tol * T::one().max(u.amax() * rho);
            if r_norm <= eps_p && s_norm <= eps_d {
                if let Some(res) = self.refine(&z, a, b, d, nonneg, kkt_tol, it) {
                    return Ok(res);
                }
                return Ok(self.unpolished(x, z, a, b, d, nonneg, it, r_norm, s_norm));
            }

            if it % ADAPT_EVERY == 0 {
                let rp = r_norm / x.amax().max(z.amax()).max(tiny);
                let rd = s_norm / (u.amax() * rho).max(grad_scale);
                if rp > tiny || rd > tiny {
                    let ratio = (rp.max(tiny) / rd.max(tiny)).sqrt();
                    if ratio > T::lit(5.0) || ratio < T::lit(0.2) {
                        let new_rho = (rho * ratio.min(T::lit(1e2)).max(T::lit(1e-2)))
                            .min(rho_hi)
                            .max(rho_lo);
                        if new_rho != rho {
                            u *= rho / new_rho;
                            rho = new_rho;
                            step = RidgeStep::new(q, &hess, rho);
                        }
                    }
                }
            }
        }
        // slow splitting often still has the right neighbourhood
        if let Some(res) = self.refine(&z, a, b, d, nonneg, kkt_tol, opts.max_iter) {
            return Ok(res);
        }
        Err(Error::NotConverged {
            iterations: opts.max_iter,
            primal_residual: r_norm.as_f64(),
            dual_residual: s_norm.as_f64(),
        })
    }

    /// Magnitude of the gradient terms, used to make KKT checks relative.
    fn kkt_scale(&self, a: T, b: T, d: &DVector<T>) -> T {
        let two = T::lit(2.0);
        let lmax = self.eigenvalues.amax();
        T::one()
            .max(two * (lmax + b))
            .max(two * self.cross.amax())
            .max(a * d.amax())
    }

    /// Runs the active-set refinement from an iterate and certifies the
    /// result against the full optimality conditions.
    #[allow(clippy::too_many_arguments)]
    fn refine(
        &self,
        start: &DVector<T>,
        a: T,
        b: T,
        d: &DVector<T>,
        nonneg: bool,
        kkt_tol: T,
        iterations: usize,
    ) -> Option<SolverResult<T>> {
        let start = if nonneg {
            let total = start.sum();
            if total <= T::zero() {
                return None;
            }
            start / total
        } else {
            start.clone()
        };
        let lam = d * a;
        let set = ActiveSet {
            gram: &self.gram,
            cross: &self.cross,
            b,
            lam: &lam,
            nonneg,
        };
        let j = self.n_pool();
        let out = set.run(&start, kkt_tol * T::lit(0.5), 20 * j + 100)?;
        let (primal, dual) = self.kkt_residuals(&out.w, out.nu, a, b, d, nonneg);
        if dual > kkt_tol || primal > kkt_tol {
            return None;
        }
        Some(SolverResult {
            objective: objective(&self.z0, &self.z1, a, b, d, &out.w),
            w: out.w,
            iterations: iterations + out.steps,
            primal_residual: primal,
            dual_residual: dual,
            unique: false,
        })
    }

    /// `(|sum(w) - 1|, worst stationarity violation)` for multiplier `nu`
    /// (with the Lagrangian term `+nu (sum(w) - 1)`).
    fn kkt_residuals(
        &self,
        w: &DVector<T>,
        nu: T,
        a: T,
        b: T,
        d: &DVector<T>,
        nonneg: bool,
    ) -> (T, T) {
        let two = T::lit(2.0);
        let g = (&self.gram * w + w * b - &self.cross) * two;
        let nu = if a == T::zero() && !nonneg {
            // unpenalised affine program: nu is the common gradient value
            -g.mean()
        } else {
            nu
        };
        let mut worst = T::zero();
        for i in 0..w.len() {
            let gi = g[i] + nu;
            let v = if w[i] != T::zero() {
                (gi + a * d[i] * w[i].signum()).abs()
            } else if nonneg {
                (-(gi + a * d[i])).max(T::zero())
            } else {
                (gi.abs() - a * d[i]).max(T::zero())
            };
            worst = worst.max(v);
        }
        ((w.sum() - T::one()).abs(), worst)
    }

    #[allow(clippy::too_many_arguments)]
    fn unpolished(
        &self,
        x: DVector<T>,
        z: DVector<T>,
        a: T,
        b: T,
        d: &DVector<T>,
        nonneg: bool,
        iterations: usize,
        r: T,
        s: T,
    ) -> SolverResult<T> {
        let w = if nonneg {
            let total = z.sum();
            if total > T::zero() {
                z / total
            } else {
                x
            }
        } else {
            x
        };
        SolverResult {
            objective: objective(&self.z0, &self.z1, a, b, d, &w),
            w,
            iterations,
            primal_residual: r,
            dual_residual: s,
            unique: false,
        }
    }
}

fn sign_of<T: Scalar>(v: T) -> i8 {
    if v > T::zero() {
        1
    } else if v < T::zero() {
        -1
    } else {
        0
    }
}

pub(crate) fn rel_eps<T: Scalar>() -> T {
    T::lit(1e-10).max(T::default_epsilon() * T::lit(100.0))
}

/// Orthonormal basis of `{v : sum(v) = 0}` as the last `n - 1` columns of
/// the Householder reflector mapping the all-ones vector onto `e_1`.
pub(crate) fn sum_zero_basis<T: Scalar>(n: usize) -> DMatrix<T> {
    let sq = T::from_usize_lossy(n).sqrt();
    let mut v = DVector::from_element(n, T::one());
    v[0] += sq;
    let vv = v.norm_squared();
    let two = T::lit(2.0);
    DMatrix::from_fn(n, n - 1, |r, c| {
        let col = c + 1;
        let delta = if r == col { T::one() } else { T::zero() };
        delta - two * v[r] * v[col] / vv
    })
}

/// `x = K^{-1}(rhs - nu 1)` with `sum(x) = 1`, where
/// `K = Q diag(hess + rho) Q'`.
struct RidgeStep<T: Scalar> {
    inv: DVector<T>,
    k_ones: DVector<T>,
    ones_k_ones: T,
    scratch: DVector<T>,
}

impl<T: Scalar> RidgeStep<T> {
    fn new(q: &DMatrix<T>, hess: &[T], rho: T) -> Self {
        let j = hess.len();
        let inv = DVector::from_iterator(j, hess.iter().map(|&h| T::one() / (h + rho)));
        let ones = DVector::from_element(j, T::one());
        let mut scratch = DVector::zeros(j);
        let mut k_ones = DVector::zeros(j);
        apply_inverse(q, &inv, &ones, &mut scratch, &mut k_ones);
        let ones_k_ones = k_ones.sum();
        RidgeStep {
            inv,
            k_ones,
            ones_k_ones,
            scratch,
        }
    }

    fn apply(&mut self, q: &DMatrix<T>, rhs: &DVector<T>, out: &mut DVector<T>) {
        apply_inverse(q, &self.inv, rhs, &mut self.scratch, out);
        let nu = (out.sum() - T::one()) / self.ones_k_ones;
        out.axpy(-nu, &self.k_ones, T::one());
    }
}

fn apply_inverse<T: Scalar>(
    q: &DMatrix<T>,
    inv: &DVector<T>,
    v: &DVector<T>,
    scratch: &mut DVector<T>,
    out: &mut DVector<T>,
) {
    scratch.gemv_tr(T::one(), q, v, T::zero());
    scratch.component_mul_assign(inv);
    out.gemv(T::one(), q, scratch, T::zero());
}
