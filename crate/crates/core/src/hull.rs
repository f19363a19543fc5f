//! Convex-hull membership of the treated unit and the hull sample-size
//! experiment.
//!
//! Membership is decided by the phase-1 program
//!
//! ```text
//! minimise  sum(s+) + sum(s-)
//! subject to z0' w + s+ - s- = z1,  sum(w) = 1,  w, s+, s- >= 0
//! ```
//!
//! solved with a dense tableau simplex. The optimal value is the L1
//! distance from `z1` to the hull, so the point is inside iff it is zero.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::simulation::{self, stream_seed};
use crate::{Error, Result, Scalar};

/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct HullQuery<T: Scalar> {
    /// Length L.
    pub z1: DVector<T>,
    /// J x L, one row per donor.
    pub z0: DMatrix<T>,
    /// Threshold on the phase-1 optimum, relative to the largest absolute
    /// coordinate.
    pub tol: T,
}

impl<T: Scalar> HullQuery<T> {
    pub fn new(z1: DVector<T>, z0: DMatrix<T>) -> Self {
        HullQuery {
            z1,
            z0,
            tol: T::lit(1e-7),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HullVerdict<T: Scalar> {
    /// `w` is a convex combination reproducing `z1`.
    Inside { w: DVector<T> },
    /// `w` is the closest convex combination in L1; `residual = z1 - z0' w`.
    Outside {
        w: DVector<T>,
        residual: DVector<T>,
        distance: T,
    },
}

impl<T: Scalar> HullVerdict<T> {
    pub fn is_inside(&self) -> bool {
        matches!(self, HullVerdict::Inside { .. })
    }

    pub fn weights(&self) -> &DVector<T> {
        match self {
            HullVerdict::Inside { w } | HullVerdict::Outside { w, .. } => w,
        }
    }
}

/// Solves the phase-1 program for a hull query.
pub fn in_convex_hull<T: Scalar>(q: &HullQuery<T>) -> Result<HullVerdict<T>> {
    let (j, l) = q.z0.shape();
    if j == 0 || l == 0 {
        return Err(Error::validation(
            "hull query needs at least one donor and one coordinate",
        ));
    }
    if q.z1.len() != l {
        return Err(Error::validation(format!(
            "z1 has length {} but z0 has {l} columns",
            q.z1.len()
        )));
    }
    let scale = q.z0.amax().max(q.z1.amax());
    let scale = if scale > T::zero() { scale } else { T::one() };
    let (w, distance) = phase_one(&(&q.z0 / scale), &(&q.z1 / scale))?;
    if distance <= q.tol {
        let w = w.map(|v| v.max(T::zero()));
        let s = w.sum();
        return Ok(HullVerdict::Inside { w: w / s });
    }
    let residual = &q.z1 - q.z0.tr_mul(&w);
    Ok(HullVerdict::Outside {
        w,
        residual,
        distance: distance * scale,
    })
}

/// Dense simplex tableau in canonical form.
struct Tableau<T: Scalar> {
    /// m x n constraint rows.
    a: DMatrix<T>,
    rhs: DVector<T>,
    /// Reduced costs, length n.
    cost: DVector<T>,
    basis: Vec<usize>,
}

impl<T: Scalar> Tableau<T> {
    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.a[(row, col)];
        let n = self.a.ncols();
        for c in 0..n {
            self.a[(row, c)] /= p;
        }
        self.rhs[row] /= p;
        for r in 0..self.a.nrows() {
            if r == row {
                continue;
            }
            let f = self.a[(r, col)];
            if f != T::zero() {
                for c in 0..n {
                    let v = self.a[(row, c)];
                    self.a[(r, c)] -= f * v;
                }
                let v = self.rhs[row];
                self.rhs[r] -= f * v;
            }
        }
        let f = self.cost[col];
        if f != T::zero() {
            for c in 0..n {
                let v = self.a[(row, c)];
                self.cost[c] -= f * v;
            }
        }
        self.basis[row] = col;
    }
}

/// Returns the optimal `w` and the optimal value.
fn phase_one<T: Scalar>(z0: &DMatrix<T>, z1: &DVector<T>) -> Result<(DVector<T>, T)> {
    let (j, l) = z0.shape();
    let m = l + 1;
    let n = j + 2 * l;
    let mut a = DMatrix::zeros(m, n);
    let mut rhs = DVector::zeros(m);
    for i in 0..l {
        for k in 0..j {
            a[(i, k)] = z0[(k, i)];
        }
        a[(i, j + i)] = T::one();
        a[(i, j + l + i)] = -T::one();
        rhs[i] = z1[i];
    }
    for k in 0..j {
        a[(l, k)] = T::one();
    }
    rhs[l] = T::one();
    // w_0 enters the basis on the adding-up row
    for i in 0..l {
        let f = a[(i, 0)];
        for k in 0..n {
            let v = a[(l, k)];
            a[(i, k)] -= f * v;
        }
        rhs[i] -= f;
    }
    let mut basis = vec![0; m];
    for i in 0..l {
        if rhs[i] < T::zero() {
            for k in 0..n {
                a[(i, k)] = -a[(i, k)];
            }
            rhs[i] = -rhs[i];
        }
        basis[i] = if a[(i, j + i)] > T::zero() {
            j + i
        } else {
            j + l + i
        };
    }
    let price = |k: usize| if k >= j { T::one() } else { T::zero() };
    let cost = DVector::from_fn(n, |k, _| {
        price(k) - (0..l).fold(T::zero(), |s, i| s + price(basis[i]) * a[(i, k)])
    });
    let mut tab = Tableau {
        a,
        rhs,
        cost,
        basis,
    };

    let eps = T::lit(1e-11);
    let max_iter = 50 * (m + n) + 1000;
    let mut bland = false;
    let mut degenerate = 0;
    for _ in 0..max_iter {
        let entering = if bland {
            (0..n).find(|&k| tab.cost[k] < -eps)
        } else {
            (0..n).filter(|&k| tab.cost[k] < -eps).min_by(|&x, &y| {
                tab.cost[x]
                    .partial_cmp(&tab.cost[y])
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        };
        let Some(col) = entering else {
            let mut w = DVector::zeros(j);
            let mut value = T::zero();
            for (i, &b) in tab.basis.iter().enumerate() {
                if b < j {
                    w[b] = tab.rhs[i];
                } else {
                    value += tab.rhs[i];
                }
            }
            return Ok((w, value.max(T::zero())));
        };
        let mut leave: Option<(usize, T)> = None;
        for r in 0..m {
            let coef = tab.a[(r, col)];
            if coef > eps {
                let ratio = tab.rhs[r] / coef;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((br, bv)) => {
                        if ratio < bv - eps
                            || ((ratio - bv).abs() <= eps && tab.basis[r] < tab.basis[br])
                        {
                            Some((r, ratio))
                        } else {
                            Some((br, bv))
                        }
                    }
                }
            }
        }
        let Some((row, step)) = leave else {
            return Err(Error::Lp {
                iterations: 0,
                message: "phase-1 program reported unbounded".into(),
            });
        };
        if step <= eps {
            degenerate += 1;
            if degenerate >= DEGENERATE_LIMIT {
                bland = true;
            }
        } else {
            degenerate = 0;
        }
        tab.pivot(row, col);
    }
    Err(Error::Lp {
        iterations: max_iter,
        message: "simplex iteration limit reached".into(),
    })
}

/// Settings of the hull sample-size experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct HullExperimentConfig {
    pub n_samples: usize,
    /// Donors drawn per sample; also the censoring point.
    pub max_controls: usize,
    /// Pretreatment periods generated per sample.
    pub n_periods: usize,
    /// Numbers of leading periods matched on.
    pub periods: Vec<usize>,
    /// Nonlinearity degree of the outcome transform.
    pub r: u32,
    pub seed: u64,
}

impl Default for HullExperimentConfig {
    fn default() -> Self {
        HullExperimentConfig {
            n_samples: 100,
            max_controls: 10_000,
            n_periods: 10,
            periods: (1..=10).collect(),
            r: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HullExperimentRow {
    /// Number of matched pretreatment periods.
    pub t0: usize,
    pub median_min_controls: f64,
    pub censored_fraction: f64,
    /// Per-sample minimal pool sizes, `max_controls` when censored.
    pub minimal: Vec<usize>,
}

/// For every sample and every `p`, the smallest prefix of the shuffled
/// donor list whose hull contains the treated unit's first `p` outcomes.
pub fn hull_sample_experiment(cfg: &HullExperimentConfig) -> Result<Vec<HullExperimentRow>> {
    if cfg.n_samples == 0 || cfg.max_controls == 0 || cfg.n_periods == 0 {
        return Err(Error::validation("hull experiment needs positive sizes"));
    }
    if let Some(&p) = cfg.periods.iter().find(|&&p| p == 0 || p > cfg.n_periods) {
        return Err(Error::validation(format!(
            "matched periods {p} outside 1..={}",
            cfg.n_periods
        )));
    }
    let per_sample: Vec<Result<Vec<(usize, bool)>>> = (0..cfg.n_samples)
        .into_par_iter()
        .map(|s| {
            let y = experiment_sample(cfg, s as u64);
            cfg.periods
                .iter()
                .map(|&p| minimal_pool(&y, p, cfg.max_controls))
                .collect()
        })
        .collect();
    let per_sample = per_sample.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(cfg
        .periods
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let minimal: Vec<usize> = per_sample.iter().map(|r| r[k].0).collect();
            let censored = per_sample.iter().filter(|r| r[k].1).count();
            HullExperimentRow {
                t0: p,
                median_min_controls: median(&minimal),
                censored_fraction: censored as f64 / cfg.n_samples as f64,
                minimal,
            }
        })
        .collect())
}

/// Outcomes of one sample, treated unit in row 0, donors shuffled.
fn experiment_sample(cfg: &HullExperimentConfig, sample: u64) -> DMatrix<f64> {
    let n = cfg.max_controls + 1;
    let mut rng = ChaCha8Rng::from_seed(stream_seed(cfg.seed, sample, 0, 3));
    let params = simulation::draw_parameters(n, cfg.n_periods, 2, 4, &mut rng);
    let (_, mut y) = simulation::untreated_outcomes(&params, 1.0, cfg.r, &mut rng);
    let donor_mean = y.view((1, 0), (cfg.max_controls, 1)).mean();
    let shift = donor_mean - y[(0, 0)];
    for t in 0..cfg.n_periods {
        y[(0, t)] += shift;
    }
    let mut order: Vec<usize> = (1..n).collect();
    order.shuffle(&mut rng);
    let rows: Vec<usize> = std::iter::once(0).chain(order).collect();
    y.select_rows(rows.iter())
}

/// Doubling then bisection on the prefix size. Returns the size and
/// whether the search was censored at `cap`.
fn minimal_pool(y: &DMatrix<f64>, p: usize, cap: usize) -> Result<(usize, bool)> {
    let z1 = DVector::from_fn(p, |c, _| y[(0, c)]);
    let inside = |m: usize| -> Result<bool> {
        let z0 = y.view((1, 0), (m, p)).into_owned();
        Ok(in_convex_hull(&HullQuery::new(z1.clone(), z0))?.is_inside())
    };
    let mut lo = 0;
    let mut hi = 1;
    loop {
        if inside(hi)? {
            break;
        }
        if hi == cap {
            return Ok((cap, true));
        }
        lo = hi;
        hi = (hi * 2).min(cap);
    }
    // inside(hi) holds, inside(lo) fails (lo = 0 is vacuous)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if inside(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, false))
}

fn median(v: &[usize]) -> f64 {
    let mut s = v.to_vec();
    s.sort_unstable();
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2] as f64
    } else {
        (s[n / 2 - 1] + s[n / 2]) as f64 / 2.0
    }
}

/// CSV with header `t0,median_min_controls,censored_fraction`.
pub fn experiment_csv(rows: &[HullExperimentRow]) -> String {
    let mut out = String::from("t0,median_min_controls,censored_fraction\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.t0, r.median_min_controls, r.censored_fraction
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn q(z1: &[f64], rows: &[&[f64]]) -> HullQuery<f64> {
        let l = z1.len();
        let z0 = DMatrix::from_fn(rows.len(), l, |r, c| rows[r][c]);
        HullQuery::new(DVector::from_column_slice(z1), z0)
    }

    #[test]
    fn one_dimensional_examples() {
        assert!(!in_convex_hull(&q(&[5.0], &[&[6.0], &[7.0]]))
            .unwrap()
            .is_inside());
        let v = in_convex_hull(&q(&[5.0], &[&[2.0], &[6.0]])).unwrap();
        let w = v.weights();
        assert!((w[0] - 0.25).abs() < 1e-12 && (w[1] - 0.75).abs() < 1e-12);
        if let HullVerdict::Outside {
            distance, residual, ..
        } = in_convex_hull(&q(&[5.0], &[&[6.0], &[7.0]])).unwrap()
        {
            assert!((distance - 1.0).abs() < 1e-12);
            assert!((residual[0] + 1.0).abs() < 1e-12);
        } else {
            panic!("expected outside");
        }
    }

    #[test]
    fn centroid_is_inside() {
        let v = in_convex_hull(&q(&[1.0, 1.0], &[&[0.0, 0.0], &[3.0, 0.0], &[0.0, 3.0]])).unwrap();
        let w = v.weights();
        assert!(v.is_inside());
        for k in 0..3 {
            assert!((w[k] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vertex_and_negative_coordinates() {
        assert!(in_convex_hull(&q(&[-1.0, 2.0], &[&[-1.0, 2.0]]))
            .unwrap()
            .is_inside());
        assert!(in_convex_hull(&q(
            &[-1.0, -1.0],
            &[&[-2.0, 0.0], &[0.0, -2.0], &[0.0, 0.0]]
        ))
        .unwrap()
        .is_inside());
        assert!(!in_convex_hull(&q(
            &[-1.5, -1.5],
            &[&[-2.0, 0.0], &[0.0, -2.0], &[0.0, 0.0]]
        ))
        .unwrap()
        .is_inside());
    }

    #[test]
    fn degenerate_repeated_donors() {
        let rows: Vec<Vec<f64>> = (0..30).map(|k| vec![(k % 3) as f64, 1.0]).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        assert!(in_convex_hull(&q(&[1.5, 1.0], &refs)).unwrap().is_inside());
        assert!(!in_convex_hull(&q(&[1.5, 1.1], &refs)).unwrap().is_inside());
    }

    /// Minimal L1 distance over the simplex grid with step 1/100.
    fn grid_distance(z1: &DVector<f64>, z0: &DMatrix<f64>) -> f64 {
        let j = z0.nrows();
        let n = 100;
        let mut best = f64::INFINITY;
        let mut eval = |w: &[f64]| {
            let d: f64 = (0..z1.len())
                .map(|c| (z1[c] - (0..j).map(|k| w[k] * z0[(k, c)]).sum::<f64>()).abs())
                .sum();
            best = best.min(d);
        };
        match j {
            1 => eval(&[1.0]),
            2 => (0..=n).for_each(|i| eval(&[i as f64 / n as f64, 1.0 - i as f64 / n as f64])),
            _ => {
                for i in 0..=n {
                    for k in 0..=n - i {
                        let (a, b) = (i as f64 / n as f64, k as f64 / n as f64);
                        eval(&[a, b, 1.0 - a - b]);
                    }
                }
            }
        }
        best
    }

    /// Verdict of the grid: `None` when the grid cannot decide.
    pub(crate) fn grid_verdict(z1: &DVector<f64>, z0: &DMatrix<f64>) -> (Option<bool>, f64) {
        let d = grid_distance(z1, z0);
        // moving one grid step changes the L1 distance by at most this much
        let mut spread = 0.0f64;
        for a in 0..z0.nrows() {
            for b in 0..z0.nrows() {
                spread = spread.max((z0.row(a) - z0.row(b)).abs().sum());
            }
        }
        let res = spread * 2.0 / 100.0;
        if d <= 1e-12 {
            (Some(true), d)
        } else if d > res {
            (Some(false), d)
        } else {
            (None, d)
        }
    }

    #[test]
    fn agrees_with_grid_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut checked = 0;
        while checked < 100 {
            let j = rng.random_range(1..=3);
            let l = rng.random_range(1..=2);
            let z0 = DMatrix::from_fn(j, l, |_, _| rng.random_range(-2.0..2.0));
            let z1 = if rng.random_bool(0.5) {
                // a grid point of the simplex, inside by construction
                let mut w = vec![0usize; j];
                let mut left = 100;
                for wk in w.iter_mut().take(j - 1) {
                    *wk = rng.random_range(0..=left);
                    left -= *wk;
                }
                w[j - 1] = left;
                let wf = DVector::from_iterator(j, w.iter().map(|&v| v as f64 / 100.0));
                z0.tr_mul(&wf)
            } else {
                DVector::from_fn(l, |_, _| rng.random_range(-2.0..2.0))
            };
            let (want, d) = grid_verdict(&z1, &z0);
            let Some(want) = want else { continue };
            let v = in_convex_hull(&HullQuery::new(z1.clone(), z0.clone())).unwrap();
            assert_eq!(v.is_inside(), want, "z1={z1} z0={z0} grid distance {d}");
            if let HullVerdict::Outside { distance, .. } = v {
                assert!(distance <= d + 1e-9);
            }
            checked += 1;
        }
    }

    #[test]
    fn median_and_csv() {
        assert_eq!(median(&[3, 1, 2]), 2.0);
        assert_eq!(median(&[4, 1, 2, 3]), 2.5);
        let rows = vec![HullExperimentRow {
            t0: 1,
            median_min_controls: 3.0,
            censored_fraction: 0.0,
            minimal: vec![3],
        }];
        assert_eq!(
            experiment_csv(&rows),
            "t0,median_min_controls,censored_fraction\n1,3,0\n"
        );
    }

    #[test]
    fn planted_vertex_bounds_the_minimum() {
        // treated equals donor 3 exactly
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut y = DMatrix::from_fn(9, 4, |_, _| rng.random_range(0.0..1.0));
        for t in 0..4 {
            y[(0, t)] = y[(3, t)];
        }
        let (m, censored) = minimal_pool(&y, 4, 8).unwrap();
        assert!(m <= 3 && !censored);
    }

    #[test]
    fn censoring_is_recorded() {
        let y = DMatrix::from_row_slice(3, 1, &[10.0, 0.0, 1.0]);
        assert_eq!(minimal_pool(&y, 1, 2).unwrap(), (2, true));
    }

    #[test]
    fn one_period_needs_few_donors() {
        let cfg = HullExperimentConfig {
            n_samples: 20,
            max_controls: 500,
            periods: vec![1, 2, 3],
            seed: 5,
            ..Default::default()
        };
        let rows = hull_sample_experiment(&cfg).unwrap();
        assert!(rows[0].median_min_controls <= 10.0, "{:?}", rows[0]);
        assert!(rows[0].median_min_controls <= rows[1].median_min_controls);
        assert!(rows[1].median_min_controls <= rows[2].median_min_controls);
        let again = hull_sample_experiment(&cfg).unwrap();
        assert_eq!(rows, again);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn verdict_is_scale_invariant(
            pts in proptest::collection::vec(-5.0f64..5.0, 8),
            c in 0.01f64..100.0,
        ) {
            let z0 = DMatrix::from_row_slice(3, 2, &pts[..6]);
            let z1 = DVector::from_column_slice(&pts[6..]);
            let a = in_convex_hull(&HullQuery::new(z1.clone(), z0.clone())).unwrap();
            let b = in_convex_hull(&HullQuery::new(z1 * c, z0 * c)).unwrap();
            prop_assert_eq!(a.is_inside(), b.is_inside());
        }

        #[test]
        fn adding_a_donor_keeps_inside(
            pts in proptest::collection::vec(-5.0f64..5.0, 10),
            w in proptest::collection::vec(0.0f64..1.0, 3),
        ) {
            let z0 = DMatrix::from_row_slice(3, 2, &pts[..6]);
            let s: f64 = w.iter().sum::<f64>().max(1e-9);
            let wv = DVector::from_iterator(3, w.iter().map(|v| v / s));
            let z1 = z0.tr_mul(&wv);
            let before = in_convex_hull(&HullQuery::new(z1.clone(), z0.clone())).unwrap();
            prop_assert!(before.is_inside());
            let bigger = DMatrix::from_fn(4, 2, |r, c| if r < 3 { z0[(r, c)] } else { pts[6 + c] });
            prop_assert!(in_convex_hull(&HullQuery::new(z1, bigger)).unwrap().is_inside());
        }

        #[test]
        fn certificate_is_valid(pts in proptest::collection::vec(-5.0f64..5.0, 10)) {
            let z0 = DMatrix::from_row_slice(4, 2, &pts[..8]);
            let z1 = DVector::from_column_slice(&pts[8..]);
            let v = in_convex_hull(&HullQuery::new(z1.clone(), z0.clone())).unwrap();
            let w = v.weights();
            prop_assert!(w.min() >= -1e-12);
            prop_assert!((w.sum() - 1.0).abs() < 1e-9);
            match v {
                HullVerdict::Inside { w } => prop_assert!((z1 - z0.tr_mul(&w)).amax() < 1e-6),
                HullVerdict::Outside { residual, distance, .. } => {
                    prop_assert!((residual.abs().sum() - distance).abs() < 1e-8);
                }
            }
        }
    }
}
