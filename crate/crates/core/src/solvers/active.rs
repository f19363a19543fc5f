//! Sign-pattern active-set refinement.
//!
//! Minimises `w'(G + bI)w - 2c'w + sum_i lam_i |w_i|` on `sum(w) = 1`
//! (and `w >= 0` when `nonneg`) starting from an approximate solution.
//! Inside a fixed orthant the objective is a quadratic, so each step is a
//! Newton step on the active coordinates, cut short at the first sign
//! change. When the reduced Hessian is singular and the gradient has a
//! component in its null space the step is a ray followed to the first
//! zero crossing. Inactive coordinates enter one at a time, most violated
//! first. Exact in finitely many steps under the usual non-degeneracy, and
//! cheap when started near the optimum.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::Scalar;

use super::admm::sum_zero_basis;

pub(crate) struct Refined<T: Scalar> {
    pub w: DVector<T>,
    pub nu: T,
    pub steps: usize,
}

pub(crate) struct ActiveSet<'a, T: Scalar> {
    pub gram: &'a DMatrix<T>,
    pub cross: &'a DVector<T>,
    pub b: T,
    pub lam: &'a DVector<T>,
    pub nonneg: bool,
}

impl<T: Scalar> ActiveSet<'_, T> {
    /// Gradient of the smooth part, `2(G + bI)w - 2c`.
    fn gradient(&self, w: &DVector<T>) -> DVector<T> {
        let two = T::lit(2.0);
        (self.gram * w + w * self.b - self.cross) * two
    }

    /// `tol` is absolute, on the stationarity conditions.
    pub fn run(&self, start: &DVector<T>, tol: T, max_steps: usize) -> Option<Refined<T>> {
        let j = start.len();
        let two = T::lit(2.0);
        let mut w = start.clone();
        let mut theta: Vec<i8> = w
            .iter()
            .map(|&v| {
                if v > T::zero() {
                    1
                } else if v < T::zero() && !self.nonneg {
                    -1
                } else {
                    0
                }
            })
            .collect();
        for i in 0..j {
            if theta[i] == 0 {
                w[i] = T::zero();
            }
        }
        if theta.iter().all(|&s| s == 0) {
            return None;
        }
        // put the start on the affine set
        let active: Vec<usize> = (0..j).filter(|&i| theta[i] != 0).collect();
        let shift = (T::one() - w.sum()) / T::from_usize_lossy(active.len());
        for &i in &active {
            w[i] += shift;
        }

        for step in 0..max_steps {
            for i in 0..j {
                if w[i] != T::zero() {
                    theta[i] = if w[i] > T::zero() { 1 } else { -1 };
                }
            }
            let active: Vec<usize> = (0..j).filter(|&i| theta[i] != 0).collect();
            let m = active.len();
            if m == 0 || (self.nonneg && theta.iter().any(|&s| s < 0)) {
                return None;
            }
            let g = self.gradient(&w);
            let sign = |s: i8| T::from_i8(s).expect("sign");

            let mut dir = DVector::zeros(j);
            let mut ray = false;
            if m > 1 {
                let basis = sum_zero_basis::<T>(m);
                let h = DMatrix::from_fn(m, m, |r, c| {
                    let v = two * self.gram[(active[r], active[c])];
                    if r == c {
                        v + two * self.b
                    } else {
                        v
                    }
                });
                let ga = DVector::from_fn(m, |r, _| {
                    g[active[r]] + self.lam[active[r]] * sign(theta[active[r]])
                });
                if let Some(da) = newton_by_cholesky(&h, &ga) {
                    for (r, &i) in active.iter().enumerate() {
                        dir[i] = da[r];
                    }
                } else {
                    let reduced = basis.tr_mul(&(&h * &basis));
                    let rg = basis.tr_mul(&ga);
                    let eig = SymmetricEigen::new(reduced);
                    let emax = eig.eigenvalues.iter().fold(T::zero(), |s, &v| s.max(v));
                    let cut = emax * T::lit(1e-12);
                    let proj = eig.eigenvectors.tr_mul(&rg);
                    let null_norm = (0..m - 1)
                        .filter(|&k| eig.eigenvalues[k] <= cut)
                        .fold(T::zero(), |s, k| s + proj[k] * proj[k])
                        .sqrt();
                    ray = null_norm > tol;
                    let coef = DVector::from_fn(m - 1, |k, _| {
                        let big = eig.eigenvalues[k] > cut;
                        match (ray, big) {
                            (true, false) => -proj[k],
                            (false, true) => -proj[k] / eig.eigenvalues[k],
                            _ => T::zero(),
                        }
                    });
                    let y = &eig.eigenvectors * coef;
                    let da = basis * y;
                    for (r, &i) in active.iter().enumerate() {
                        dir[i] = da[r];
                    }
                }
            }

            // first sign change along the step
            let mut t_max: Option<T> = None;
            for &i in &active {
                if sign(theta[i]) * dir[i] < T::zero() {
                    let t = -w[i] / dir[i];
                    t_max = Some(t_max.map_or(t, |s: T| s.min(t)));
                }
            }
            match t_max {
                Some(t) if ray || t < T::one() => {
                    let t = t.max(T::zero());
                    let limit = t * (T::one() + T::lit(1e-12));
                    for &i in &active {
                        let hit = sign(theta[i]) * dir[i] < T::zero() && -w[i] / dir[i] <= limit;
                        if hit {
                            w[i] = T::zero();
                            theta[i] = 0;
                        } else {
                            w[i] += t * dir[i];
                        }
                    }
                    renormalise(&mut w, &theta);
                    continue;
                }
                None if ray => return None,
                _ => {
                    for &i in &active {
                        w[i] += dir[i];
                    }
                    renormalise(&mut w, &theta);
                }
            }

            // optimality of the inactive coordinates
            let g = self.gradient(&w);
            let active: Vec<usize> = (0..j).filter(|&i| theta[i] != 0).collect();
            let nu = -active
                .iter()
                .fold(T::zero(), |s, &i| s + g[i] + self.lam[i] * sign(theta[i]))
                / T::from_usize_lossy(active.len());
            let mut worst = (T::zero(), None);
            for i in 0..j {
                if theta[i] != 0 {
                    continue;
                }
                let v = g[i] + nu;
                let viol = if self.nonneg {
                    -(v + self.lam[i])
                } else {
                    v.abs() - self.lam[i]
                };
                if viol > worst.0 {
                    worst = (viol, Some(i));
                }
            }
            match worst {
                (v, Some(i)) if v > tol => {
                    theta[i] = if self.nonneg || g[i] + nu < T::zero() {
                        1
                    } else {
                        -1
                    };
                }
                _ => {
                    let stationary = active
                        .iter()
                        .all(|&i| (g[i] + nu + self.lam[i] * sign(theta[i])).abs() <= tol);
                    if stationary {
                        return Some(Refined {
                            w,
                            nu,
                            steps: step + 1,
                        });
                    }
                }
            }
        }
        None
    }
}

/// Removes rounding drift from `sum(w) = 1` on the active coordinates.
fn renormalise<T: Scalar>(w: &mut DVector<T>, theta: &[i8]) {
    let active: Vec<usize> = (0..w.len()).filter(|&i| theta[i] != 0).collect();
    if active.is_empty() {
        return;
    }
    let shift = (T::one() - w.sum()) / T::from_usize_lossy(active.len());
    for &i in &active {
        w[i] += shift;
    }
}

/// Equality-constrained Newton step `-H^{-1}(g + nu 1)` with `1'd = 0`,
/// when `H` is comfortably positive definite.
fn newton_by_cholesky<T: Scalar>(h: &DMatrix<T>, g: &DVector<T>) -> Option<DVector<T>> {
    let hmax = h.diagonal().amax();
    let chol = h.clone().cholesky()?;
    let lmin = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(T::max_value()?, |s, &v| s.min(v));
    if !(lmin * lmin > hmax * T::lit(1e-10)) {
        return None;
    }
    let hg = chol.solve(g);
    let h1 = chol.solve(&DVector::from_element(g.len(), T::one()));
    let nu = -hg.sum() / h1.sum();
    Some(-(hg + h1 * nu))
}
