//! Placebo permutation tests and per-period confidence intervals.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::estimators::{EffectEstimate, Estimator};
use crate::tuning::{select_tuning, CvFolds, CvScheme};
use crate::{Error, PanelData, Result, Scalar, TuningParams};

/// Normal quantile for a two-sided interval at `level`.
pub fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::validation(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf((1.0 + level) / 2.0))
}

/// Root mean squared entry.
pub fn rmspe<T: Scalar>(errors: &[T]) -> Result<T> {
    if errors.is_empty() {
        return Err(Error::validation("RMSPE of an empty window"));
    }
    Ok(crate::estimators::rms(errors))
}

/// How placebo fits obtain their tuning pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TuningPolicy {
    /// Apply the treated unit's `(a*, b*)` to every placebo fit.
    #[default]
    Reuse,
    /// Cross-validate afresh for every pseudo-treated unit.
    Reselect,
}

impl fmt::Display for TuningPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TuningPolicy::Reuse => "reuse",
            TuningPolicy::Reselect => "reselect",
        })
    }
}

impl FromStr for TuningPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reuse" => Ok(TuningPolicy::Reuse),
            "reselect" => Ok(TuningPolicy::Reselect),
            _ => Err(Error::validation(format!(
                "unknown tuning policy '{s}' (expected reuse or reselect)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitRatio<T: Scalar> {
    pub unit: String,
    pub pre_rmspe: T,
    pub post_rmspe: T,
    /// `post / pre`, `+inf` when the pretreatment fit is exact.
    pub ratio: T,
    /// Set when the unit's fit failed; such units leave the denominator.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationResult<T: Scalar> {
    /// One record per unit, in panel order.
    pub units: Vec<UnitRatio<T>>,
    /// 1 = largest ratio among included units.
    pub treated_rank: usize,
    pub p_value: T,
    pub n_included: usize,
    pub warnings: Vec<String>,
}

/// Options for [`permutation_test`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaceboOptions<T: Scalar> {
    pub a_star: T,
    pub b_star: T,
    pub policy: TuningPolicy,
    pub scheme: CvScheme,
    pub grid_step: T,
}

impl<T: Scalar> PlaceboOptions<T> {
    pub fn reuse(a_star: T, b_star: T) -> Self {
        PlaceboOptions {
            a_star,
            b_star,
            policy: TuningPolicy::Reuse,
            scheme: CvScheme::ControlUnits,
            grid_step: T::lit(0.1),
        }
    }
}

/// Reassigns treatment to every unit in turn (all other units as pool) and
/// ranks the treated unit's post/pre RMSPE ratio.
pub fn permutation_test<T: Scalar>(
    panel: &PanelData<T>,
    est: &Estimator<T>,
    opts: &PlaceboOptions<T>,
) -> Result<PermutationResult<T>> {
    let n = panel.n_units();
    if n < 2 {
        return Err(Error::validation(
            "permutation test needs at least two units",
        ));
    }
    let columns = est.matching.columns(panel)?;
    let ids = panel.unit_ids();
    let t0 = panel.t0();
    let fits: Vec<Result<(T, T)>> = (0..n)
        .into_par_iter()
        .map(|u| {
            let pool: Vec<usize> = (0..n).filter(|&k| k != u).collect();
            let (a_star, b_star) = match opts.policy {
                TuningPolicy::Reuse => (opts.a_star, opts.b_star),
                TuningPolicy::Reselect => {
                    let p = panel.with_treated(u)?;
                    let (t, _) = select_tuning(&p, est, opts.scheme, opts.grid_step)?;
                    (t.a_star, t.b_star)
                }
            };
            let w = est.fit_unit(panel, u, &pool, &columns, a_star, b_star)?;
            let y = panel.outcomes();
            let gap: Vec<T> = (0..panel.n_periods())
                .map(|t| {
                    let s = pool
                        .iter()
                        .zip(w.w.iter())
                        .fold(T::zero(), |s, (&j, &wj)| s + wj * y[(j, t)]);
                    y[(u, t)] - s
                })
                .collect();
            Ok((rmspe(&gap[..t0])?, rmspe(&gap[t0..])?))
        })
        .collect();

    // pre gaps at roundoff level count as exact fits
    let y = panel.outcomes();
    let scale = (0..t0).fold(T::zero(), |m, t| {
        (0..n).fold(m, |m, i| m.max(y[(i, t)].abs()))
    });
    let floor = scale * T::default_epsilon() * T::lit(1e3);
    let mut units = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for (u, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok((pre, post)) => {
                let ratio = if pre > floor { post / pre } else { infinity() };
                units.push(UnitRatio {
                    unit: ids[u].clone(),
                    pre_rmspe: pre,
                    post_rmspe: post,
                    ratio,
                    failure: None,
                });
            }
            Err(e) => {
                if u == panel.treated_index() {
                    return Err(e);
                }
                warnings.push(format!(
                    "placebo fit for '{}' failed and was excluded: {e}",
                    ids[u]
                ));
                units.push(UnitRatio {
                    unit: ids[u].clone(),
                    pre_rmspe: T::lit(f64::NAN),
                    post_rmspe: T::lit(f64::NAN),
                    ratio: T::lit(f64::NAN),
                    failure: Some(e.to_string()),
                });
            }
        }
    }
    let included: Vec<&UnitRatio<T>> = units.iter().filter(|r| r.failure.is_none()).collect();
    let own = units[panel.treated_index()].ratio;
    let at_least = included.iter().filter(|r| r.ratio >= own).count();
    let n_included = included.len();
    Ok(PermutationResult {
        treated_rank: at_least,
        p_value: T::from_usize_lossy(at_least) / T::from_usize_lossy(n_included),
        n_included,
        units,
        warnings,
    })
}

fn infinity<T: Scalar>() -> T {
    T::one() / T::zero()
}

/// Per-period prediction variance from leave-one-donor-out fits.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate<T: Scalar> {
    /// Length T.
    pub variance: DVector<T>,
    /// J x T, row j holds donor j's squared prediction errors.
    pub squared_errors: DMatrix<T>,
}

/// Predicts every donor from the other donors (treated excluded) over the
/// whole window and averages squared errors per period.
pub fn estimate_variance<T: Scalar>(
    panel: &PanelData<T>,
    est: &Estimator<T>,
    tuning: &TuningParams<T>,
) -> Result<VarianceEstimate<T>> {
    let folds = CvFolds::all_periods(panel, est)?;
    let squared_errors = folds.squared_errors(tuning.a_star, tuning.b_star)?;
    let j = T::from_usize_lossy(squared_errors.nrows());
    let variance = DVector::from_fn(squared_errors.ncols(), |t, _| {
        squared_errors.column(t).sum() / j
    });
    Ok(VarianceEstimate {
        variance,
        squared_errors,
    })
}

/// `gap_t -/+ z * sqrt(variance_t)` with `z` the two-sided normal quantile.
pub fn confidence_intervals<T: Scalar>(
    e: &EffectEstimate<T>,
    v: &VarianceEstimate<T>,
    level: T,
) -> Result<EffectEstimate<T>> {
    if v.variance.len() != e.gap.len() {
        return Err(Error::validation(format!(
            "variance has {} periods but the estimate has {}",
            v.variance.len(),
            e.gap.len()
        )));
    }
    let z = T::lit(z_for_level(level.as_f64())?);
    let half = v.variance.map(|s| z * s.max(T::zero()).sqrt());
    let mut out = e.clone();
    out.ci_lower = Some(&e.gap - &half);
    out.ci_upper = Some(&e.gap + &half);
    out.variance = Some(v.variance.clone());
    out.level = Some(level);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{estimate_effect, Method};
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn panel(y: DMatrix<f64>, t0: usize) -> PanelData<f64> {
        let (n, t) = y.shape();
        PanelData::new(
            (0..n).map(|i| format!("u{i}")).collect(),
            (0..t).map(|s| format!("t{s}")).collect(),
            y,
            0,
            t0,
        )
        .unwrap()
    }

    #[test]
    fn rmspe_examples() {
        assert_eq!(rmspe(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((rmspe(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmspe(&[-2.5]).unwrap(), 2.5);
        assert!(rmspe::<f64>(&[]).is_err());
    }

    #[test]
    fn z_matches_reference() {
        assert!((z_for_level(0.95).unwrap() - 1.959964).abs() < 1e-6);
        assert!(z_for_level(1.0).is_err());
    }

    fn effect(gap: Vec<f64>) -> EffectEstimate<f64> {
        let g = DVector::from_vec(gap);
        EffectEstimate {
            treated: g.clone(),
            synthetic: DVector::zeros(g.len()),
            gap: g,
            variance: None,
            ci_lower: None,
            ci_upper: None,
            level: None,
        }
    }

    fn variance(v: Vec<f64>) -> VarianceEstimate<f64> {
        let n = v.len();
        VarianceEstimate {
            variance: DVector::from_vec(v),
            squared_errors: DMatrix::zeros(1, n),
        }
    }

    #[test]
    fn interval_arithmetic() {
        let e = confidence_intervals(&effect(vec![0.1, 0.3]), &variance(vec![0.0025, 0.0]), 0.95)
            .unwrap();
        let (lo, hi) = (e.ci_lower.unwrap(), e.ci_upper.unwrap());
        let z = z_for_level(0.95).unwrap();
        assert!((lo[0] - (0.1 - z * 0.05)).abs() < 1e-15);
        assert!((hi[0] - (0.1 + z * 0.05)).abs() < 1e-15);
        // rounded to three places this is the textbook interval
        assert_eq!(((lo[0] * 1e3).round(), (hi[0] * 1e3).round()), (2.0, 198.0));
        assert_eq!((lo[1], hi[1]), (0.3, 0.3));
    }

    #[test]
    fn wider_level_nests() {
        let e = effect(vec![0.5, -0.2, 0.0]);
        let v = variance(vec![0.1, 0.02, 1.5]);
        let a = confidence_intervals(&e, &v, 0.95).unwrap();
        let b = confidence_intervals(&e, &v, 0.99).unwrap();
        for t in 0..3 {
            assert!(b.ci_lower.as_ref().unwrap()[t] <= a.ci_lower.as_ref().unwrap()[t]);
            assert!(b.ci_upper.as_ref().unwrap()[t] >= a.ci_upper.as_ref().unwrap()[t]);
        }
    }

    #[test]
    fn strictly_largest_ratio_gives_one_over_n() {
        // treated jumps after t0, nobody else does
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut y = DMatrix::from_fn(20, 12, |_, _| rng.random_range(0.0..1.0));
        for t in 8..12 {
            y[(0, t)] += 50.0;
        }
        let p = panel(y, 8);
        let r = permutation_test(
            &p,
            &Estimator::new(Method::Osc),
            &PlaceboOptions::reuse(0.0, 0.0),
        )
        .unwrap();
        assert_eq!(r.units.len(), 20);
        assert_eq!(r.treated_rank, 1);
        assert!((r.p_value - 0.05).abs() < 1e-15);
    }

    #[test]
    fn two_units() {
        let p = panel(
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 5.0, 1.5, 2.0, 2.0]),
            2,
        );
        let r = permutation_test(
            &p,
            &Estimator::new(Method::Nsc),
            &PlaceboOptions::reuse(0.0, 0.0),
        )
        .unwrap();
        assert!(r.p_value == 0.5 || r.p_value == 1.0);
        assert_eq!(r.units.len(), 2);
    }

    #[test]
    fn exact_pretreatment_fit_ranks_first() {
        // u0 equals u1 before treatment, so its pre RMSPE is zero
        let y = DMatrix::from_row_slice(
            3,
            4,
            &[1.0, 2.0, 3.0, 9.0, 1.0, 2.0, 3.0, 4.0, 0.0, 5.0, 1.0, 2.0],
        );
        let p = panel(y, 3);
        let est = Estimator::new(Method::Osc);
        let r = permutation_test(&p, &est, &PlaceboOptions::reuse(0.0, 0.0)).unwrap();
        assert!(r.units[0].ratio.is_infinite(), "{:?}", r.units[0]);
        // u1 is reproduced exactly by u0 as well, and ties count against the treated unit
        assert!(r.units[1].ratio.is_infinite());
        assert!(r.units[2].ratio.is_finite());
        assert_eq!(r.treated_rank, 2);
        assert!((r.p_value - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn p_value_invariant_to_monotone_transform() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let y = DMatrix::from_fn(8, 10, |_, _| rng.random_range(0.0..1.0));
        let r = permutation_test(
            &panel(y, 7),
            &Estimator::new(Method::Nsc),
            &PlaceboOptions::reuse(0.2, 0.2),
        )
        .unwrap();
        let own = r.units[0].ratio;
        let f = |x: f64| x.powi(3) * 2.0 + 1.0;
        let count = r.units.iter().filter(|u| f(u.ratio) >= f(own)).count();
        assert!((count as f64 / 8.0 - r.p_value).abs() < 1e-15);
    }

    #[test]
    fn reselect_runs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let y = DMatrix::from_fn(5, 8, |_, _| rng.random_range(0.0..1.0));
        let mut o = PlaceboOptions::reuse(0.0, 0.0);
        o.policy = TuningPolicy::Reselect;
        o.grid_step = 0.5;
        let r = permutation_test(&panel(y, 6), &Estimator::new(Method::Psc), &o).unwrap();
        assert_eq!(r.n_included, 5);
    }

    /// Independent loop: each donor predicted from the others, all periods.
    fn brute_variance(p: &PanelData<f64>, method: Method, a: f64, b: f64) -> DVector<f64> {
        let est = Estimator::new(method);
        let donors = p.donor_indices();
        let cols = est.matching.columns(p).unwrap();
        let mut v = DVector::zeros(p.n_periods());
        for &j in &donors {
            let pool: Vec<usize> = donors.iter().copied().filter(|&k| k != j).collect();
            let w = est.fit_unit(p, j, &pool, &cols, a, b).unwrap();
            for t in 0..p.n_periods() {
                let pred: f64 = pool
                    .iter()
                    .zip(w.w.iter())
                    .map(|(&k, &wk)| wk * p.outcomes()[(k, t)])
                    .sum();
                v[t] += (p.outcomes()[(j, t)] - pred).powi(2) / donors.len() as f64;
            }
        }
        v
    }

    #[test]
    fn variance_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let y = DMatrix::from_fn(5, 9, |_, _| rng.sample::<f64, _>(StandardNormal));
        let p = panel(y, 6);
        let est = Estimator::new(Method::Nsc);
        let m = crate::build_matching(&p, &est.matching).unwrap();
        let t = crate::solvers::eigen_scale(&m, 0.4, 0.3).unwrap();
        let v = estimate_variance(&p, &est, &t).unwrap();
        let want = brute_variance(&p, Method::Nsc, 0.4, 0.3);
        assert!((&v.variance - &want).amax() < 1e-9);
        assert_eq!(v.squared_errors.shape(), (4, 9));
    }

    #[test]
    fn variance_two_donors_and_errors() {
        let y = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 2.0, 2.0, 5.0]);
        let p = panel(y.clone(), 2);
        let est = Estimator::new(Method::Esc);
        let m = crate::build_matching(&p, &est.matching).unwrap();
        let t = crate::solvers::eigen_scale(&m, 0.0, 0.0).unwrap();
        let v = estimate_variance(&p, &est, &t).unwrap();
        for s in 0..3 {
            let d = y[(1, s)] - y[(2, s)];
            assert!((v.variance[s] - d * d).abs() < 1e-12);
        }
        let p2 = panel(
            DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 1.0, 1.0, 1.0]),
            2,
        );
        assert!(estimate_variance(&p2, &est, &t).is_err());
    }

    #[test]
    fn exact_donors_have_zero_variance() {
        let f = DMatrix::from_fn(2, 10, |k, s| (s as f64 * (k + 1) as f64 * 0.5).sin() + 2.0);
        let load = DMatrix::from_fn(7, 2, |i, k| {
            (1.3 * (i * (k + 1)) as f64 + 0.4 * k as f64).sin() + 1.0
        });
        let p = panel(&load * &f, 7);
        let est = Estimator::new(Method::Nsc);
        let m = crate::build_matching(&p, &est.matching).unwrap();
        let t = crate::solvers::eigen_scale(&m, 0.0, 0.0).unwrap();
        let v = estimate_variance(&p, &est, &t).unwrap();
        assert!(v.variance.amax() < 1e-12, "{}", v.variance);
        let w = est.fit(&p, 0.0, 0.0).unwrap();
        let e = confidence_intervals(&estimate_effect(&p, &w).unwrap(), &v, 0.95).unwrap();
        assert!((e.ci_upper.unwrap() - e.ci_lower.unwrap()).amax() < 1e-5);
    }
}
