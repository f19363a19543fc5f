//! The four weight estimators, counterfactual paths and robustness runs.
//!
//! | method | sign restriction | L1 multipliers | L2 |
//! |--------|------------------|----------------|----|
//! | OSC    | `w >= 0`         | none           | no |
//! | ESC    | none             | all ones       | yes|
//! | PSC    | none             | distances      | no |
//! | NSC    | none             | distances      | yes|

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::panel::{build_matching, MatchingColumn};
use crate::solvers::PreparedProblem;
use crate::{
    Error, MatchingMatrix, MatchingSpec, PanelData, Result, Scalar, SolverOptions, TuningParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Osc,
    Esc,
    Psc,
    Nsc,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Osc, Method::Esc, Method::Psc, Method::Nsc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Osc => "OSC",
            Method::Esc => "ESC",
            Method::Psc => "PSC",
            Method::Nsc => "NSC",
        }
    }

    pub fn nonneg(self) -> bool {
        self == Method::Osc
    }

    /// L1 terms weighted by pairwise matching discrepancies.
    pub fn weighted_l1(self) -> bool {
        matches!(self, Method::Psc | Method::Nsc)
    }

    pub fn tunes_a(self) -> bool {
        self != Method::Osc
    }

    pub fn tunes_b(self) -> bool {
        matches!(self, Method::Esc | Method::Nsc)
    }

    /// Zeroes the normalised parameters the method does not use.
    pub fn restrict<T: Scalar>(self, a_star: T, b_star: T) -> (T, T) {
        let a = if self.tunes_a() { a_star } else { T::zero() };
        let b = if self.tunes_b() { b_star } else { T::zero() };
        (a, b)
    }

    fn check_penalties<T: Scalar>(self, a: T, b: T) -> Result<()> {
        if !self.tunes_a() && a != T::zero() {
            return Err(Error::validation(format!("{self} takes no L1 penalty")));
        }
        if !self.tunes_b() && b != T::zero() {
            return Err(Error::validation(format!("{self} takes no L2 penalty")));
        }
        Ok(())
    }

    /// L1 multipliers for a prepared pool.
    pub(crate) fn multipliers<T: Scalar>(self, prepared: &PreparedProblem<T>) -> DVector<T> {
        if self.weighted_l1() {
            prepared.distances()
        } else {
            DVector::from_element(prepared.n_pool(), T::one())
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "osc" => Ok(Method::Osc),
            "esc" => Ok(Method::Esc),
            "psc" => Ok(Method::Psc),
            "nsc" => Ok(Method::Nsc),
            _ => Err(Error::validation(format!(
                "unknown method '{s}' (expected osc, esc, psc or nsc)"
            ))),
        }
    }
}

/// Solved donor weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector<T: Scalar> {
    /// One weight per pool unit, in pool order.
    pub w: DVector<T>,
    pub method: Method,
    pub tuning: TuningParams<T>,
    /// Panel indices of the pool units.
    pub pool: Vec<usize>,
    pub pool_ids: Vec<String>,
    /// RMSPE of the outcome gap over the pretreatment periods.
    pub pre_rmspe: T,
    /// Euclidean norm of `z1 - z0' w`.
    pub fit_residual: T,
    pub objective: T,
    pub iterations: usize,
    pub unique: bool,
}

impl<T: Scalar> WeightVector<T> {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Per-period effect estimate over the whole window.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate<T: Scalar> {
    pub treated: DVector<T>,
    pub synthetic: DVector<T>,
    /// `treated - synthetic`.
    pub gap: DVector<T>,
    pub variance: Option<DVector<T>>,
    pub ci_lower: Option<DVector<T>>,
    pub ci_upper: Option<DVector<T>>,
    pub level: Option<T>,
}

/// Method plus the matching and solver settings shared by every fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator<T: Scalar> {
    pub method: Method,
    pub matching: MatchingSpec,
    pub solver: SolverOptions<T>,
}

impl<T: Scalar> Estimator<T> {
    pub fn new(method: Method) -> Self {
        Estimator {
            method,
            matching: MatchingSpec::default(),
            solver: SolverOptions::default(),
        }
    }

    pub fn with_matching(mut self, matching: MatchingSpec) -> Self {
        self.matching = matching;
        self
    }

    pub fn with_solver(mut self, solver: SolverOptions<T>) -> Self {
        self.solver = solver;
        self
    }

    /// Fits the treated unit against the donor pool with normalised
    /// parameters realised on that pool.
    pub fn fit(&self, panel: &PanelData<T>, a_star: T, b_star: T) -> Result<WeightVector<T>> {
        let columns = self.matching.columns(panel)?;
        self.fit_unit(
            panel,
            panel.treated_index(),
            &panel.donor_indices(),
            &columns,
            a_star,
            b_star,
        )
    }

    /// Fits an arbitrary target unit against an arbitrary pool.
    pub fn fit_unit(
        &self,
        panel: &PanelData<T>,
        target: usize,
        pool: &[usize],
        columns: &[MatchingColumn],
        a_star: T,
        b_star: T,
    ) -> Result<WeightVector<T>> {
        let m = MatchingMatrix::for_units(panel, target, pool, columns, self.matching.standardize)?;
        let prepared = PreparedProblem::new(m.z0, m.z1)?;
        let (a_star, b_star) = self.method.restrict(a_star, b_star);
        let tuning = TuningParams::realize(a_star, b_star, prepared.spectrum())?;
        self.solve_prepared(panel, target, pool, &prepared, tuning)
    }

    pub(crate) fn solve_prepared(
        &self,
        panel: &PanelData<T>,
        target: usize,
        pool: &[usize],
        prepared: &PreparedProblem<T>,
        tuning: TuningParams<T>,
    ) -> Result<WeightVector<T>> {
        self.method.check_penalties(tuning.a, tuning.b)?;
        let d = self.method.multipliers(prepared);
        let res = prepared.solve(tuning.a, tuning.b, &d, self.method.nonneg(), &self.solver)?;
        let fit_residual = (prepared.z1() - prepared.z0().tr_mul(&res.w)).norm();
        let y = panel.outcomes();
        let t0 = panel.t0();
        let pre_gap: Vec<T> = (0..t0)
            .map(|t| y[(target, t)] - weighted(y, pool, &res.w, t))
            .collect();
        Ok(WeightVector {
            pre_rmspe: rms(&pre_gap),
            fit_residual,
            objective: res.objective,
            iterations: res.iterations,
            unique: res.unique,
            w: res.w,
            method: self.method,
            tuning,
            pool: pool.to_vec(),
            pool_ids: pool.iter().map(|&i| panel.unit_ids()[i].clone()).collect(),
        })
    }

    /// Fit plus effect for the treated unit.
    pub fn estimate(
        &self,
        panel: &PanelData<T>,
        a_star: T,
        b_star: T,
    ) -> Result<(WeightVector<T>, EffectEstimate<T>)> {
        let w = self.fit(panel, a_star, b_star)?;
        let e = estimate_effect(panel, &w)?;
        Ok((w, e))
    }

    /// One estimate per donor, each with that donor removed from the pool.
    /// The realised penalties `(a, b)` are reused unchanged on every reduced
    /// pool.
    pub fn leave_one_out(
        &self,
        panel: &PanelData<T>,
        tuning: &TuningParams<T>,
    ) -> Result<Vec<LeaveOneOut<T>>> {
        if panel.n_donors() < 2 {
            return Err(Error::validation("leave-one-out needs at least two donors"));
        }
        let columns = self.matching.columns(panel)?;
        let treated = panel.treated_index();
        let donors = panel.donor_indices();
        donors
            .iter()
            .map(|&drop| {
                let pool: Vec<usize> = donors.iter().copied().filter(|&j| j != drop).collect();
                let m = MatchingMatrix::for_units(
                    panel,
                    treated,
                    &pool,
                    &columns,
                    self.matching.standardize,
                )?;
                let prepared = PreparedProblem::new(m.z0, m.z1)?;
                let w = self.solve_prepared(panel, treated, &pool, &prepared, tuning.clone())?;
                let effect = estimate_effect(panel, &w)?;
                Ok(LeaveOneOut {
                    excluded: panel.unit_ids()[drop].clone(),
                    weights: w,
                    effect,
                })
            })
            .collect()
    }
}

/// Result of one leave-one-out refit.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaveOneOut<T: Scalar> {
    pub excluded: String,
    pub weights: WeightVector<T>,
    pub effect: EffectEstimate<T>,
}

fn weighted<T: Scalar>(y: &DMatrix<T>, pool: &[usize], w: &DVector<T>, t: usize) -> T {
    pool.iter()
        .zip(w.iter())
        .fold(T::zero(), |s, (&j, &wj)| s + wj * y[(j, t)])
}

pub(crate) fn rms<T: Scalar>(v: &[T]) -> T {
    if v.is_empty() {
        return T::zero();
    }
    let ss = v.iter().fold(T::zero(), |s, &x| s + x * x);
    (ss / T::from_usize_lossy(v.len())).sqrt()
}

/// Solves the weight program for a prebuilt matching matrix of the treated
/// unit. `tuning` must already be realised against `m`.
pub fn fit_weights<T: Scalar>(
    panel: &PanelData<T>,
    m: &MatchingMatrix<T>,
    method: Method,
    tuning: &TuningParams<T>,
) -> Result<WeightVector<T>> {
    if m.n_pool() != panel.n_donors() {
        return Err(Error::validation(format!(
            "matching matrix has {} rows but the panel has {} donors",
            m.n_pool(),
            panel.n_donors()
        )));
    }
    let prepared = PreparedProblem::new(m.z0.clone(), m.z1.clone())?;
    Estimator::new(method).solve_prepared(
        panel,
        panel.treated_index(),
        &panel.donor_indices(),
        &prepared,
        tuning.clone(),
    )
}

/// Weighted pool outcome in every period.
pub fn synthetic_outcomes<T: Scalar>(
    panel: &PanelData<T>,
    w: &WeightVector<T>,
) -> Result<DVector<T>> {
    if w.pool.len() != w.w.len() {
        return Err(Error::validation("weight vector and pool differ in length"));
    }
    if let Some(&bad) = w.pool.iter().find(|&&j| j >= panel.n_units()) {
        return Err(Error::validation(format!("pool unit {bad} out of range")));
    }
    let y = panel.outcomes();
    Ok(DVector::from_fn(panel.n_periods(), |t, _| {
        weighted(y, &w.pool, &w.w, t)
    }))
}

/// Gap between the treated unit and its synthetic control. Variance and
/// interval fields are left empty.
pub fn estimate_effect<T: Scalar>(
    panel: &PanelData<T>,
    w: &WeightVector<T>,
) -> Result<EffectEstimate<T>> {
    let synthetic = synthetic_outcomes(panel, w)?;
    let treated = panel.outcome_path(panel.treated_index());
    let gap = &treated - &synthetic;
    Ok(EffectEstimate {
        treated,
        synthetic,
        gap,
        variance: None,
        ci_lower: None,
        ci_upper: None,
        level: None,
    })
}

/// Moves the treatment date earlier; matching then uses only periods before
/// `new_t0`.
pub fn backdate<T: Scalar>(panel: &PanelData<T>, new_t0: usize) -> Result<PanelData<T>> {
    if new_t0 == 0 || new_t0 >= panel.t0() {
        return Err(Error::validation(format!(
            "backdated t0 must lie in [1, {}), got {new_t0}",
            panel.t0()
        )));
    }
    panel.with_t0(new_t0)
}

/// Leave-one-out over the donor pool with the default matching set.
pub fn leave_one_out<T: Scalar>(
    panel: &PanelData<T>,
    method: Method,
    tuning: &TuningParams<T>,
) -> Result<Vec<LeaveOneOut<T>>> {
    Estimator::new(method).leave_one_out(panel, tuning)
}

/// Matching matrix of the treated unit under an estimator's matching spec.
pub fn treated_matching<T: Scalar>(
    panel: &PanelData<T>,
    est: &Estimator<T>,
) -> Result<MatchingMatrix<T>> {
    build_matching(panel, &est.matching)
}
