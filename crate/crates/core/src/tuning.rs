//! Cross-validated choice of the normalised penalties `(a*, b*)`.
//!
//! Folds are prepared once (matching matrix, Gram eigendecomposition,
//! distances) and then solved for every grid point the search visits.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::estimators::{Estimator, Method};
use crate::panel::MatchingColumn;
use crate::solvers::{EigenScaling, PreparedProblem, Spectrum};
use crate::{Error, MatchingMatrix, PanelData, Result, Scalar};

/// Rounds of the coordinate search before giving up on convergence.
pub const MAX_ROUNDS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CvScheme {
    /// Predict each donor's posttreatment path from the other donors.
    #[default]
    ControlUnits,
    /// Predict each pretreatment outcome of the treated unit with that
    /// period left out of the matching set.
    PretreatmentPeriods,
}

impl CvScheme {
    pub fn name(self) -> &'static str {
        match self {
            CvScheme::ControlUnits => "controls",
            CvScheme::PretreatmentPeriods => "pretreat",
        }
    }
}

impl fmt::Display for CvScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CvScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "controls" | "control_units" => Ok(CvScheme::ControlUnits),
            "pretreat" | "pretreatment" | "pretreatment_periods" => {
                Ok(CvScheme::PretreatmentPeriods)
            }
            _ => Err(Error::validation(format!(
                "unknown cv scheme '{s}' (expected controls or pretreat)"
            ))),
        }
    }
}

/// Normalised pair, realised penalties and how they were obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningParams<T: Scalar> {
    pub a_star: T,
    pub b_star: T,
    pub a: T,
    pub b: T,
    pub scaling: EigenScaling<T>,
    /// Set when the pair came out of cross-validation.
    pub scheme: Option<CvScheme>,
    pub grid_step: Option<T>,
}

impl<T: Scalar> TuningParams<T> {
    /// Realises `(a*, b*)` against a Gram spectrum.
    pub fn realize(a_star: T, b_star: T, spectrum: &Spectrum<T>) -> Result<Self> {
        for (name, v) in [("a*", a_star), ("b*", b_star)] {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(Error::validation(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        let scaling = spectrum.scale(a_star, b_star);
        Ok(TuningParams {
            a_star,
            b_star,
            a: scaling.a,
            b: scaling.b,
            scaling,
            scheme: None,
            grid_step: None,
        })
    }

    pub fn for_matching(m: &MatchingMatrix<T>, a_star: T, b_star: T) -> Result<Self> {
        crate::solvers::eigen_scale(m, a_star, b_star)
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvPoint<T: Scalar> {
    pub a_star: T,
    pub b_star: T,
    pub mspe: T,
}

/// Every grid point the search evaluated, in evaluation order.
#[derive(Debug, Clone, PartialEq)]
pub struct CvSurface<T: Scalar> {
    pub points: Vec<CvPoint<T>>,
    pub a_star: T,
    pub b_star: T,
    pub min_mspe: T,
    /// Pair held at the end of each round.
    pub trace: Vec<(T, T)>,
    pub converged: bool,
}

impl<T: Scalar> CvSurface<T> {
    pub fn value(&self, a_star: T, b_star: T) -> Option<T> {
        let eps = T::lit(1e-9);
        self.points
            .iter()
            .find(|p| (p.a_star - a_star).abs() < eps && (p.b_star - b_star).abs() < eps)
            .map(|p| p.mspe)
    }
}

/// Grid `{0, step, ..., 1}` as `(i, n)` pairs, value `i / n`.
fn grid_size<T: Scalar>(step: T) -> Result<usize> {
    let s = step.as_f64();
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::validation(format!(
            "grid step must lie in (0, 1], got {s}"
        )));
    }
    let n = (1.0 / s).round();
    if (n * s - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "grid step {s} does not divide 1"
        )));
    }
    Ok(n as usize)
}

fn grid_value<T: Scalar>(i: usize, n: usize) -> T {
    T::from_usize_lossy(i) / T::from_usize_lossy(n)
}

/// Coordinate search over the unit grid for any MSPE evaluator.
///
/// Starts from `b* = 0`, scans `a*` with `b*` fixed, then `b*` with `a*`
/// fixed, until a scan leaves the pair unchanged. Ties go to the smaller
/// value. Methods without an L2 term keep `b* = 0`; OSC is not searched.
pub fn coordinate_search<T, F>(method: Method, grid_step: T, mut eval: F) -> Result<CvSurface<T>>
where
    T: Scalar,
    F: FnMut(T, T) -> Result<T>,
{
    let n = grid_size(grid_step)?;
    let mut cache: HashMap<(usize, usize), T> = HashMap::new();
    let mut points = Vec::new();
    let mut value = |ia: usize, ib: usize| -> Result<T> {
        if let Some(&v) = cache.get(&(ia, ib)) {
            return Ok(v);
        }
        let (a, b) = (grid_value(ia, n), grid_value(ib, n));
        let v = eval(a, b)?;
        if v.as_f64().is_nan() {
            return Err(Error::Numerical(format!(
                "cross-validation error is NaN at ({a}, {b})"
            )));
        }
        cache.insert((ia, ib), v);
        points.push(CvPoint {
            a_star: a,
            b_star: b,
            mspe: v,
        });
        Ok(v)
    };

    if !method.tunes_a() {
        let v = value(0, 0)?;
        return Ok(CvSurface {
            points,
            a_star: T::zero(),
            b_star: T::zero(),
            min_mspe: v,
            trace: Vec::new(),
            converged: true,
        });
    }

    let scan = |value: &mut dyn FnMut(usize) -> Result<T>| -> Result<(usize, T)> {
        let mut best = (0, value(0)?);
        for i in 1..=n {
            let v = value(i)?;
            if v < best.1 {
                best = (i, v);
            }
        }
        Ok(best)
    };

    let (mut ia, mut ib) = (0usize, 0usize);
    let mut best = T::zero();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..MAX_ROUNDS {
        let (na, va) = scan(&mut |i| value(i, ib))?;
        ia = na;
        best = va;
        if !method.tunes_b() {
            trace.push((grid_value(ia, n), grid_value(ib, n)));
            converged = true;
            break;
        }
        let (nb, vb) = scan(&mut |i| value(ia, i))?;
        let unchanged = nb == ib;
        ib = nb;
        best = vb;
        trace.push((grid_value(ia, n), grid_value(ib, n)));
        if unchanged {
            converged = true;
            break;
        }
    }
    Ok(CvSurface {
        points,
        a_star: grid_value(ia, n),
        b_star: grid_value(ib, n),
        min_mspe: best,
        trace,
        converged,
    })
}

/// A prepared prediction problem: a target predicted from a pool.
#[derive(Debug, Clone)]
struct Fold<T: Scalar> {
    prepared: PreparedProblem<T>,
    distances: DVector<T>,
    /// Target values in the evaluated periods.
    target: DVector<T>,
    /// Pool values in the evaluated periods, one row per pool unit.
    pool: DMatrix<T>,
}

/// Cached folds of one cross-validation scheme.
#[derive(Debug, Clone)]
pub struct CvFolds<T: Scalar> {
    estimator: Estimator<T>,
    folds: Vec<Fold<T>>,
}

impl<T: Scalar> CvFolds<T> {
    /// One fold per donor, pooled over the other donors (treated excluded),
    /// evaluated on `periods`.
    fn per_donor(
        panel: &PanelData<T>,
        est: &Estimator<T>,
        periods: &[usize],
    ) -> Result<Vec<Fold<T>>> {
        let donors = panel.donor_indices();
        if donors.len() < 2 {
            return Err(Error::validation(
                "cross-validation over control units needs at least two donors",
            ));
        }
        let columns = est.matching.columns(panel)?;
        let y = panel.outcomes();
        donors
            .iter()
            .map(|&j| {
                let pool: Vec<usize> = donors.iter().copied().filter(|&k| k != j).collect();
                make_fold(panel, est, j, &pool, &columns, periods, y)
            })
            .collect()
    }

    pub fn control_units(panel: &PanelData<T>, est: &Estimator<T>) -> Result<Self> {
        if panel.n_periods() <= panel.t0() {
            return Err(Error::validation("no posttreatment periods to predict"));
        }
        let post: Vec<usize> = (panel.t0()..panel.n_periods()).collect();
        Ok(CvFolds {
            estimator: est.clone(),
            folds: Self::per_donor(panel, est, &post)?,
        })
    }

    /// Per-donor folds evaluated on every period of the window.
    pub fn all_periods(panel: &PanelData<T>, est: &Estimator<T>) -> Result<Self> {
        let all: Vec<usize> = (0..panel.n_periods()).collect();
        Ok(CvFolds {
            estimator: est.clone(),
            folds: Self::per_donor(panel, est, &all)?,
        })
    }

    pub fn pretreatment(panel: &PanelData<T>, est: &Estimator<T>) -> Result<Self> {
        let t0 = panel.t0();
        if t0 < 2 {
            return Err(Error::validation(
                "leave-one-period-out needs at least two pretreatment periods",
            ));
        }
        let columns = est.matching.columns(panel)?;
        let target = panel.treated_index();
        let pool = panel.donor_indices();
        let y = panel.outcomes();
        let folds = (0..t0)
            .map(|s| {
                let cols: Vec<MatchingColumn> = columns
                    .iter()
                    .copied()
                    .filter(|c| *c != MatchingColumn::Period(s))
                    .collect();
                if cols.is_empty() {
                    return Err(Error::validation(format!(
                        "matching set is empty once period {s} is left out"
                    )));
                }
                make_fold(panel, est, target, &pool, &cols, &[s], y)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CvFolds {
            estimator: est.clone(),
            folds,
        })
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Squared prediction errors, one row per fold, one column per
    /// evaluated period.
    pub fn squared_errors(&self, a_star: T, b_star: T) -> Result<DMatrix<T>> {
        self.squared_errors_for(self.estimator.method, a_star, b_star)
    }

    /// As [`CvFolds::squared_errors`] but for another method on the same
    /// folds. Folds only depend on the matching set, not on the method.
    pub fn squared_errors_for(&self, method: Method, a_star: T, b_star: T) -> Result<DMatrix<T>> {
        let (a_star, b_star) = method.restrict(a_star, b_star);
        let cols = self.folds.first().map_or(0, |f| f.target.len());
        let mut out = DMatrix::zeros(self.folds.len(), cols);
        for (k, f) in self.folds.iter().enumerate() {
            let t = TuningParams::realize(a_star, b_star, f.prepared.spectrum())?;
            let d = if method.weighted_l1() {
                f.distances.clone()
            } else {
                DVector::from_element(f.prepared.n_pool(), T::one())
            };
            let res = f
                .prepared
                .solve(t.a, t.b, &d, method.nonneg(), &self.estimator.solver)?;
            let pred = f.pool.tr_mul(&res.w);
            for (c, (&y, &p)) in f.target.iter().zip(pred.iter()).enumerate() {
                out[(k, c)] = (y - p) * (y - p);
            }
        }
        Ok(out)
    }

    /// Mean squared prediction error over folds and evaluated periods.
    pub fn mspe(&self, a_star: T, b_star: T) -> Result<T> {
        self.mspe_for(self.estimator.method, a_star, b_star)
    }

    pub fn mspe_for(&self, method: Method, a_star: T, b_star: T) -> Result<T> {
        Ok(self.squared_errors_for(method, a_star, b_star)?.mean())
    }
}

fn make_fold<T: Scalar>(
    panel: &PanelData<T>,
    est: &Estimator<T>,
    target: usize,
    pool: &[usize],
    columns: &[MatchingColumn],
    periods: &[usize],
    y: &DMatrix<T>,
) -> Result<Fold<T>> {
    let m = MatchingMatrix::for_units(panel, target, pool, columns, est.matching.standardize)?;
    let prepared = PreparedProblem::new(m.z0, m.z1)?;
    Ok(Fold {
        distances: prepared.distances(),
        prepared,
        target: DVector::from_iterator(periods.len(), periods.iter().map(|&t| y[(target, t)])),
        pool: DMatrix::from_fn(pool.len(), periods.len(), |j, c| y[(pool[j], periods[c])]),
    })
}

/// Mean squared error of predicting each donor's posttreatment outcomes
/// from the remaining donors.
pub fn cv_control_units<T: Scalar>(
    panel: &PanelData<T>,
    est: &Estimator<T>,
    a_star: T,
    b_star: T,
) -> Result<T> {
    CvFolds::control_units(panel, est)?.mspe(a_star, b_star)
}

/// Mean squared error of predicting each pretreatment outcome of the
/// treated unit with that period left out of the matching set.
pub fn cv_pretreatment<T: Scalar>(
    panel: &PanelData<T>,
    est: &Estimator<T>,
    a_star: T,
    b_star: T,
) -> Result<T> {
    CvFolds::pretreatment(panel, est)?.mspe(a_star, b_star)
}

/// Selects `(a*, b*)` by coordinate search and realises it on the
/// treated unit's matching matrix.
pub fn select_tuning<T: Scalar>(
    panel: &PanelData<T>,
    est: &Estimator<T>,
    scheme: CvScheme,
    grid_step: T,
) -> Result<(TuningParams<T>, CvSurface<T>)> {
    let surface = if est.method.tunes_a() {
        let folds = match scheme {
            CvScheme::ControlUnits => CvFolds::control_units(panel, est)?,
            CvScheme::PretreatmentPeriods => CvFolds::pretreatment(panel, est)?,
        };
        coordinate_search(est.method, grid_step, |a, b| folds.mspe(a, b))?
    } else {
        grid_size(grid_step)?;
        CvSurface {
            points: Vec::new(),
            a_star: T::zero(),
            b_star: T::zero(),
            min_mspe: T::zero(),
            trace: Vec::new(),
            converged: true,
        }
    };
    let m = crate::estimators::treated_matching(panel, est)?;
    let mut tuning = TuningParams::for_matching(&m, surface.a_star, surface.b_star)?;
    tuning.scheme = Some(scheme);
    tuning.grid_step = Some(grid_step);
    Ok((tuning, surface))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::MatchingSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_panel(n: usize, t: usize, t0: usize, seed: u64) -> PanelData<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(n, t, |_, _| rng.random_range(0.0..1.0));
        PanelData::new(
            (0..n).map(|i| format!("u{i}")).collect(),
            (0..t).map(|s| format!("t{s}")).collect(),
            y,
            0,
            t0,
        )
        .unwrap()
    }

    /// Straight-line reimplementation of leave-one-donor-out prediction.
    fn brute_control_units(p: &PanelData<f64>, method: Method, a: f64, b: f64) -> f64 {
        let donors = p.donor_indices();
        let y = p.outcomes();
        let mut total = 0.0;
        let mut count = 0;
        for &j in &donors {
            let pool: Vec<usize> = donors.iter().copied().filter(|&k| k != j).collect();
            let z0 = DMatrix::from_fn(pool.len(), p.t0(), |r, c| y[(pool[r], c)]);
            let z1 = DVector::from_fn(p.t0(), |c, _| y[(j, c)]);
            let m = MatchingMatrix::from_parts(z1.clone(), z0.clone()).unwrap();
            let (ra, rb) = method.restrict(a, b);
            let t = crate::solvers::eigen_scale(&m, ra, rb).unwrap();
            let d = if method.weighted_l1() {
                crate::solvers::pairwise_distances(&m)
            } else {
                DVector::from_element(pool.len(), 1.0)
            };
            let prob = crate::SolverProblem {
                z0,
                z1,
                a: t.a,
                b: t.b,
                d,
                nonneg: method.nonneg(),
            };
            let w = crate::solvers::solve(&prob, &Default::default()).unwrap().w;
            for s in p.t0()..p.n_periods() {
                let pred: f64 = pool
                    .iter()
                    .zip(w.iter())
                    .map(|(&k, &wk)| wk * y[(k, s)])
                    .sum();
                total += (y[(j, s)] - pred).powi(2);
                count += 1;
            }
        }
        total / count as f64
    }

    fn brute_pretreatment(p: &PanelData<f64>, method: Method, a: f64, b: f64) -> f64 {
        let y = p.outcomes();
        let pool = p.donor_indices();
        let mut total = 0.0;
        for s in 0..p.t0() {
            let keep: Vec<usize> = (0..p.t0()).filter(|&c| c != s).collect();
            let z0 = DMatrix::from_fn(pool.len(), keep.len(), |r, c| y[(pool[r], keep[c])]);
            let z1 = DVector::from_fn(keep.len(), |c, _| y[(0, keep[c])]);
            let m = MatchingMatrix::from_parts(z1.clone(), z0.clone()).unwrap();
            let (ra, rb) = method.restrict(a, b);
            let t = crate::solvers::eigen_scale(&m, ra, rb).unwrap();
            let d = if method.weighted_l1() {
                crate::solvers::pairwise_distances(&m)
            } else {
                DVector::from_element(pool.len(), 1.0)
            };
            let prob = crate::SolverProblem {
                z0,
                z1,
                a: t.a,
                b: t.b,
                d,
                nonneg: method.nonneg(),
            };
            let w = crate::solvers::solve(&prob, &Default::default()).unwrap().w;
            let pred: f64 = pool
                .iter()
                .zip(w.iter())
                .map(|(&k, &wk)| wk * y[(k, s)])
                .sum();
            total += (y[(0, s)] - pred).powi(2);
        }
        total / p.t0() as f64
    }

    #[test]
    fn control_units_matches_brute_force() {
        let p = random_panel(7, 12, 8, 3);
        for method in Method::ALL {
            let est = Estimator::new(method);
            for (a, b) in [(0.0, 0.0), (0.3, 0.5), (1.0, 0.2)] {
                let got = cv_control_units(&p, &est, a, b).unwrap();
                let want = brute_control_units(&p, method, a, b);
                assert!(
                    (got - want).abs() < 1e-7 * want.max(1.0),
                    "{method} {a} {b}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn pretreatment_matches_brute_force() {
        let p = random_panel(6, 9, 6, 5);
        for method in Method::ALL {
            let est = Estimator::new(method);
            let got = cv_pretreatment(&p, &est, 0.4, 0.3).unwrap();
            let want = brute_pretreatment(&p, method, 0.4, 0.3);
            assert!(
                (got - want).abs() < 1e-7 * want.max(1.0),
                "{method}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn exact_reconstruction_has_zero_error() {
        // three factors, every unit an affine mix of them
        let f = DMatrix::from_fn(3, 14, |k, s| {
            ((k + 2) as f64 * 0.37 * s as f64).cos() + k as f64
        });
        let load = DMatrix::from_fn(9, 3, |i, k| {
            (1.3 * (i * (k + 1)) as f64 + 0.4 * k as f64).sin() + 1.0
        });
        let y = &load * &f;
        let p = PanelData::new(
            (0..9).map(|i| format!("u{i}")).collect(),
            (0..14).map(|s| format!("{s}")).collect(),
            y,
            0,
            10,
        )
        .unwrap();
        let est = Estimator::new(Method::Nsc);
        assert!(cv_control_units(&p, &est, 0.0, 0.0).unwrap() < 1e-12);
        assert!(cv_pretreatment(&p, &est, 0.0, 0.0).unwrap() < 1e-12);
    }

    #[test]
    fn two_donors_are_forced() {
        let p = random_panel(3, 6, 4, 11);
        let y = p.outcomes();
        let want = (4..6)
            .map(|s| (y[(1, s)] - y[(2, s)]).powi(2) * 2.0)
            .sum::<f64>()
            / 4.0;
        let got = cv_control_units(&p, &Estimator::new(Method::Nsc), 0.7, 0.1).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn boundaries() {
        let p = random_panel(2, 5, 3, 1);
        assert!(cv_control_units(&p, &Estimator::new(Method::Nsc), 0.0, 0.0).is_err());
        let p = random_panel(5, 5, 1, 1);
        assert!(cv_pretreatment(&p, &Estimator::new(Method::Nsc), 0.0, 0.0).is_err());
        let p = random_panel(5, 5, 2, 1);
        let folds = CvFolds::pretreatment(&p, &Estimator::new(Method::Nsc)).unwrap();
        assert_eq!(folds.len(), 2);
    }

    #[test]
    fn grid_step_must_divide_one() {
        assert_eq!(grid_size(0.1).unwrap(), 10);
        assert_eq!(grid_size(0.25).unwrap(), 4);
        assert!(grid_size(0.3).is_err());
        assert!(grid_size(0.0).is_err());
    }

    /// Bowl with a strict minimum at grid point (ia, ib), n = 10.
    fn bowl(a0: f64, b0: f64) -> impl FnMut(f64, f64) -> Result<f64> {
        move |a, b| Ok((a - a0).powi(2) + 2.0 * (b - b0).powi(2) + 0.5 * (a - a0) * (b - b0))
    }

    #[test]
    fn planted_minimum_is_found() {
        // exhaustive evaluation first confirms the planted point
        let mut f = bowl(0.3, 0.7);
        let mut best = (0, 0, f64::INFINITY);
        for i in 0..=10 {
            for j in 0..=10 {
                let v = f(i as f64 / 10.0, j as f64 / 10.0).unwrap();
                if v < best.2 {
                    best = (i, j, v);
                }
            }
        }
        assert_eq!((best.0, best.1), (3, 7));
        let s = coordinate_search(Method::Nsc, 0.1, bowl(0.3, 0.7)).unwrap();
        assert!((s.a_star - 0.3).abs() < 1e-12 && (s.b_star - 0.7).abs() < 1e-12);
        assert!(s.converged);
    }

    #[test]
    fn psc_pins_b_and_osc_skips() {
        // the b = 0 slice of this bowl bottoms out at a = 0.3 + 0.35 * 0.5 = 0.475
        let s = coordinate_search(Method::Psc, 0.1, bowl(0.3, 0.7)).unwrap();
        assert_eq!(s.b_star, 0.0);
        assert!((s.a_star - 0.5).abs() < 1e-12);
        let s = coordinate_search(Method::Psc, 0.1, bowl(0.3, 0.0)).unwrap();
        assert!(s.points.iter().all(|p| p.b_star == 0.0));
        assert!((s.a_star - 0.3).abs() < 1e-12);
        let mut calls = 0;
        let s = coordinate_search(Method::Osc, 0.1, |_: f64, _: f64| {
            calls += 1;
            Ok(1.0)
        })
        .unwrap();
        assert_eq!((s.a_star, s.b_star, calls), (0.0, 0.0, 1));
    }

    #[test]
    fn ties_go_to_smaller_values() {
        let s = coordinate_search(Method::Nsc, 0.1, |_: f64, _: f64| Ok(1.0)).unwrap();
        assert_eq!((s.a_star, s.b_star), (0.0, 0.0));
        let s = coordinate_search(Method::Nsc, 0.1, |a: f64, _: f64| {
            Ok(if a >= 0.5 { 0.0 } else { 1.0 })
        })
        .unwrap();
        assert!((s.a_star - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_convergence_is_flagged() {
        // staircase descending along (i, i) -> (i + 1, i) -> (i + 1, i + 1)
        let stair = |a: f64, b: f64| {
            let (i, j) = ((a * 100.0).round() as i64, (b * 100.0).round() as i64);
            Ok(if i == j {
                -2.0 * j as f64
            } else if i == j + 1 {
                -2.0 * j as f64 - 1.0
            } else {
                0.0
            })
        };
        let s = coordinate_search(Method::Nsc, 0.01, stair).unwrap();
        assert!(!s.converged);
        assert_eq!(s.trace.len(), MAX_ROUNDS);
    }

    #[test]
    fn select_tuning_psc_and_osc() {
        let p = random_panel(6, 10, 7, 9);
        let (t, s) = select_tuning(
            &p,
            &Estimator::new(Method::Psc),
            CvScheme::ControlUnits,
            0.1,
        )
        .unwrap();
        assert_eq!(t.b_star, 0.0);
        assert_eq!(t.b, 0.0);
        assert_eq!(s.a_star, t.a_star);
        let (t, s) = select_tuning(
            &p,
            &Estimator::new(Method::Osc),
            CvScheme::ControlUnits,
            0.1,
        )
        .unwrap();
        assert_eq!((t.a_star, t.b_star, t.a, t.b), (0.0, 0.0, 0.0, 0.0));
        assert!(s.points.is_empty());
    }

    #[test]
    fn selection_is_deterministic_and_realised() {
        let p = random_panel(7, 12, 8, 21);
        let est = Estimator::new(Method::Nsc).with_matching(MatchingSpec::outcomes_only());
        let (t1, s1) = select_tuning(&p, &est, CvScheme::ControlUnits, 0.1).unwrap();
        let (t2, _) = select_tuning(&p, &est, CvScheme::ControlUnits, 0.1).unwrap();
        assert_eq!(t1, t2);
        let m = crate::build_matching(&p, &est.matching).unwrap();
        let again = crate::solvers::eigen_scale(&m, t1.a_star, t1.b_star).unwrap();
        assert_eq!((again.a, again.b), (t1.a, t1.b));
        // the chosen pair attains the minimum over everything evaluated
        let min = s1
            .points
            .iter()
            .map(|p| p.mspe)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(s1.value(s1.a_star, s1.b_star).unwrap(), min);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn search_attains_min_of_evaluated(coefs in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let f = |a: f64, b: f64| Ok(coefs[0] * a + coefs[1] * b + coefs[2] * a * a
                + coefs[3] * b * b + coefs[4] * a * b + coefs[5] * (7.0 * a * b).sin());
            let s = coordinate_search(Method::Nsc, 0.1, f).unwrap();
            let min = s.points.iter().map(|p| p.mspe).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(s.value(s.a_star, s.b_star).unwrap(), min);
            prop_assert_eq!(s.min_mspe, min);
        }
    }
}
