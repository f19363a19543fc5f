//! Interactive fixed effects Monte Carlo.
//!
//! Latent outcomes `Y* = X' beta_t + mu' lambda_t + eps` are rescaled to
//! `[0, 1]` over the whole sample and raised to the power `r`. The treated
//! unit (row 0) receives effects `0.02, 0.04, ...` after `t0`.
//!
//! Every sample is drawn from its own ChaCha stream keyed by
//! `(seed, param_seed, shock_seed)`, so results do not depend on how
//! replications are scheduled.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal, Uniform};
use rayon::prelude::*;

use crate::estimators::{estimate_effect, Estimator, Method};
use crate::inference::{confidence_intervals, estimate_variance};
use crate::panel::{MatchingSpec, PeriodSelection, PredictorSelection};
use crate::tuning::{coordinate_search, CvFolds};
use crate::{Error, PanelData, Result, Scalar};

/// 32-byte seed for one stream. `tag` separates parameter, shock and
/// auxiliary streams.
pub fn stream_seed(seed: u64, a: u64, b: u64, tag: u64) -> [u8; 32] {
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut out = [0u8; 32];
    for (k, word) in [a, b, tag, 0x5851_f42d_4c95_7f2d].into_iter().enumerate() {
        state = splitmix(state ^ word.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        out[8 * k..8 * k + 8].copy_from_slice(&state.to_le_bytes());
    }
    out
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One Monte Carlo setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// Donor pool size.
    pub j: usize,
    pub t0: usize,
    /// Degree of nonlinearity.
    pub r: u32,
    pub n_param_sets: usize,
    pub n_shock_draws: usize,
    pub t_post: usize,
    /// Observed predictors.
    pub k: usize,
    /// Unobserved factors.
    pub f: usize,
    pub seed: u64,
    pub tuning_grid_step: f64,
    /// Standard deviation of the transitory shocks.
    pub noise_sd: f64,
    /// Match on the observed predictors as well as pretreatment outcomes.
    pub match_predictors: bool,
}

impl SimulationConfig {
    /// 5 parameter sets x 50 shock draws.
    pub fn desk(j: usize, t0: usize, r: u32) -> Self {
        SimulationConfig {
            j,
            t0,
            r,
            n_param_sets: 5,
            n_shock_draws: 50,
            t_post: 10,
            k: 2,
            f: 4,
            seed: 0,
            tuning_grid_step: 0.1,
            noise_sd: 1.0,
            match_predictors: false,
        }
    }

    /// 20 parameter sets x 250 shock draws.
    pub fn paper(j: usize, t0: usize, r: u32) -> Self {
        SimulationConfig {
            n_param_sets: 20,
            n_shock_draws: 250,
            ..Self::desk(j, t0, r)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("J", self.j),
            ("T0", self.t0),
            ("parameter sets", self.n_param_sets),
            ("shock draws", self.n_shock_draws),
            ("posttreatment periods", self.t_post),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("{name} must be positive")));
        }
        if !(1..=2).contains(&self.r) {
            return Err(Error::validation(format!(
                "r must be 1 or 2, got {}",
                self.r
            )));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::validation("noise sd must be non-negative"));
        }
        Ok(())
    }

    pub fn n_periods(&self) -> usize {
        self.t0 + self.t_post
    }

    pub fn matching(&self) -> MatchingSpec {
        MatchingSpec {
            predictors: if self.match_predictors {
                PredictorSelection::All
            } else {
                PredictorSelection::None
            },
            periods: PeriodSelection::AllPretreatment,
            standardize: false,
        }
    }
}

/// The eight `(J, T0, r)` settings of the study.
pub fn study_settings() -> Vec<(usize, usize, u32)> {
    let mut out = Vec::new();
    for r in [1, 2] {
        for t0 in [15, 30] {
            for j in [25, 50] {
                out.push((j, t0, r));
            }
        }
    }
    out
}

/// Unit and time parameters of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// N x k observed predictors.
    pub x: DMatrix<f64>,
    /// N x f unobserved loadings.
    pub mu: DMatrix<f64>,
    /// T x k.
    pub beta: DMatrix<f64>,
    /// T x f.
    pub lambda: DMatrix<f64>,
}

pub fn draw_parameters<R: Rng>(n: usize, t: usize, k: usize, f: usize, rng: &mut R) -> Parameters {
    let u = Uniform::new(0.0, 2.0 * 3f64.sqrt()).expect("valid range");
    let c = Normal::new(10.0, 1.0).expect("valid sd");
    let x = DMatrix::from_fn(n, k, |_, _| rng.sample(u));
    let mu = DMatrix::from_fn(n, f, |_, _| rng.sample(u));
    let beta = DMatrix::from_fn(t, k, |_, _| rng.sample(c));
    let lambda = DMatrix::from_fn(t, f, |_, _| rng.sample(c));
    Parameters {
        x,
        mu,
        beta,
        lambda,
    }
}

/// Latent and untreated outcomes, both N x T.
pub fn untreated_outcomes<R: Rng>(
    p: &Parameters,
    noise_sd: f64,
    r: u32,
    rng: &mut R,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut latent = &p.x * p.beta.transpose() + &p.mu * p.lambda.transpose();
    if noise_sd > 0.0 {
        for v in latent.iter_mut() {
            *v += noise_sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let (lo, hi) = (latent.min(), latent.max());
    let span = if hi > lo { hi - lo } else { 1.0 };
    let untreated = latent.map(|v| ((v - lo) / span).powi(r as i32));
    (latent, untreated)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSample<T: Scalar> {
    pub panel: PanelData<T>,
    /// Length `t_post`.
    pub true_effects: DVector<T>,
    /// N x T latent outcomes.
    pub latent: DMatrix<T>,
    /// N x T outcomes without treatment.
    pub untreated: DMatrix<T>,
    pub parameters: Parameters,
}

/// `0.02, 0.04, ...`, one per posttreatment period.
pub fn true_effects(t_post: usize) -> Vec<f64> {
    (1..=t_post).map(|s| 0.02 * s as f64).collect()
}

pub fn generate_sample<T: Scalar>(
    cfg: &SimulationConfig,
    param_seed: u64,
    shock_seed: u64,
) -> Result<SimulatedSample<T>> {
    cfg.validate()?;
    let n = cfg.j + 1;
    let t = cfg.n_periods();
    let mut prng = ChaCha8Rng::from_seed(stream_seed(cfg.seed, param_seed, 0, 1));
    let params = draw_parameters(n, t, cfg.k, cfg.f, &mut prng);
    let mut srng = ChaCha8Rng::from_seed(stream_seed(cfg.seed, param_seed, shock_seed, 2));
    let (latent, untreated) = untreated_outcomes(&params, cfg.noise_sd, cfg.r, &mut srng);
    let tau = true_effects(cfg.t_post);
    let mut y = untreated.clone();
    for (s, &e) in tau.iter().enumerate() {
        y[(0, cfg.t0 + s)] += e;
    }
    let conv = |m: &DMatrix<f64>| m.map(T::lit);
    let ids = std::iter::once("treated".to_string())
        .chain((1..n).map(|i| format!("c{i}")))
        .collect();
    let labels = (1..=t).map(|s| s.to_string()).collect();
    let names = (1..=cfg.k).map(|i| format!("x{i}")).collect();
    let panel = PanelData::new(ids, labels, conv(&y), 0, cfg.t0)?
        .with_predictors(names, conv(&params.x))?;
    Ok(SimulatedSample {
        panel,
        true_effects: DVector::from_iterator(cfg.t_post, tau.into_iter().map(T::lit)),
        latent: conv(&latent),
        untreated: conv(&untreated),
        parameters: params,
    })
}

/// How the bias column aggregates errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasMode {
    /// `|mean over shock draws|`, averaged over periods and parameter sets.
    AbsMean,
    /// Mean absolute error over every replication and period. The default:
    /// only this reading gives bias figures on the scale of the SD column.
    #[default]
    MeanAbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOptions {
    pub methods: Vec<Method>,
    pub bias_mode: BiasMode,
    /// Compute interval coverage (one variance fit per donor and draw).
    pub coverage: bool,
    pub level: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            methods: Method::ALL.to_vec(),
            bias_mode: BiasMode::MeanAbs,
            coverage: true,
            level: 0.95,
        }
    }
}

/// Aggregates for one setting and method.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub j: usize,
    pub t0: usize,
    pub r: u32,
    pub method: Method,
    /// x100.
    pub bias: f64,
    /// x100.
    pub sd: f64,
    pub coverage: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationFailure {
    pub j: usize,
    pub t0: usize,
    pub r: u32,
    pub method: Method,
    pub param_seed: u64,
    /// `None` when tuning selection itself failed.
    pub shock_seed: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningRecord {
    pub j: usize,
    pub t0: usize,
    pub r: u32,
    pub method: Method,
    pub param_seed: u64,
    pub a_star: f64,
    pub b_star: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub tuning: Vec<TuningRecord>,
    pub failures: Vec<ReplicationFailure>,
}

impl StudyResult {
    pub fn row(&self, j: usize, t0: usize, r: u32, method: Method) -> Option<&StudyRow> {
        self.rows
            .iter()
            .find(|x| x.j == j && x.t0 == t0 && x.r == r && x.method == method)
    }

    /// CSV with header `J,T0,r,method,bias,sd,coverage`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("J,T0,r,method,bias,sd,coverage\n");
        for row in &self.rows {
            let cov = row.coverage.map(|c| format!("{c:.4}")).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{:.4},{:.4},{}\n",
                row.j, row.t0, row.r, row.method, row.bias, row.sd, cov
            ));
        }
        out
    }
}

/// Per-replication outcome of one method.
#[derive(Debug, Clone)]
struct Replication {
    /// `tau_hat - tau` per posttreatment period.
    errors: Vec<f64>,
    covered: Option<Vec<bool>>,
}

/// Tuning for every method on shock draw 0 of a parameter set.
fn select_for_params(
    cfg: &SimulationConfig,
    methods: &[Method],
    param_seed: u64,
) -> Vec<std::result::Result<(f64, f64), String>> {
    let sample = match generate_sample::<f64>(cfg, param_seed, 0) {
        Ok(s) => s,
        Err(e) => return methods.iter().map(|_| Err(e.to_string())).collect(),
    };
    let base = Estimator::<f64>::new(Method::Nsc).with_matching(cfg.matching());
    let folds = match CvFolds::control_units(&sample.panel, &base) {
        Ok(f) => f,
        Err(e) => return methods.iter().map(|_| Err(e.to_string())).collect(),
    };
    methods
        .iter()
        .map(|&m| {
            coordinate_search(m, cfg.tuning_grid_step, |a, b| folds.mspe_for(m, a, b))
                .map(|s| (s.a_star, s.b_star))
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn replicate(
    cfg: &SimulationConfig,
    opts: &StudyOptions,
    tuning: &[Option<(f64, f64)>],
    param_seed: u64,
    shock_seed: u64,
) -> Vec<Option<std::result::Result<Replication, String>>> {
    let sample = match generate_sample::<f64>(cfg, param_seed, shock_seed) {
        Ok(s) => s,
        Err(e) => {
            return opts
                .methods
                .iter()
                .map(|_| Some(Err(e.to_string())))
                .collect()
        }
    };
    let p = &sample.panel;
    let folds = if opts.coverage {
        Some(
            CvFolds::all_periods(
                p,
                &Estimator::new(Method::Nsc).with_matching(cfg.matching()),
            )
            .map_err(|e| e.to_string()),
        )
    } else {
        None
    };
    opts.methods
        .iter()
        .zip(tuning)
        .map(|(&m, t)| {
            let (a, b) = (*t)?;
            let run = || -> Result<Replication> {
                let est = Estimator::new(m).with_matching(cfg.matching());
                let w = est.fit(p, a, b)?;
                let e = estimate_effect(p, &w)?;
                let errors: Vec<f64> = (0..cfg.t_post)
                    .map(|s| e.gap[cfg.t0 + s] - sample.true_effects[s])
                    .collect();
                let covered = match &folds {
                    None => None,
                    Some(f) => {
                        let f = f.as_ref().map_err(|e| Error::Numerical(e.clone()))?;
                        let sq = f.squared_errors_for(m, a, b)?;
                        let j = sq.nrows() as f64;
                        let variance = DVector::from_fn(sq.ncols(), |t, _| sq.column(t).sum() / j);
                        let v = crate::inference::VarianceEstimate {
                            variance,
                            squared_errors: sq,
                        };
                        let ci = confidence_intervals(&e, &v, opts.level)?;
                        let (lo, hi) = (ci.ci_lower.expect("set"), ci.ci_upper.expect("set"));
                        Some(
                            (0..cfg.t_post)
                                .map(|s| {
                                    let t = cfg.t0 + s;
                                    let tau = sample.true_effects[s];
                                    lo[t] <= tau && tau <= hi[t]
                                })
                                .collect(),
                        )
                    }
                };
                Ok(Replication { errors, covered })
            };
            Some(run().map_err(|e| e.to_string()))
        })
        .collect()
}

/// Runs every configuration for every method.
pub fn run_study(configs: &[SimulationConfig], opts: &StudyOptions) -> Result<StudyResult> {
    if opts.methods.is_empty() {
        return Err(Error::validation("no methods requested"));
    }
    crate::inference::z_for_level(opts.level)?;
    for c in configs {
        c.validate()?;
    }
    let mut result = StudyResult::default();
    for cfg in configs {
        let params: Vec<u64> = (0..cfg.n_param_sets as u64).collect();
        let selected: Vec<Vec<std::result::Result<(f64, f64), String>>> = params
            .par_iter()
            .map(|&ps| select_for_params(cfg, &opts.methods, ps))
            .collect();
        let tasks: Vec<(u64, u64)> = params
            .iter()
            .flat_map(|&ps| (0..cfg.n_shock_draws as u64).map(move |ss| (ps, ss)))
            .collect();
        let reps: Vec<Vec<Option<std::result::Result<Replication, String>>>> = tasks
            .par_iter()
            .map(|&(ps, ss)| {
                let tuning: Vec<Option<(f64, f64)>> = selected[ps as usize]
                    .iter()
                    .map(|r| r.as_ref().ok().copied())
                    .collect();
                replicate(cfg, opts, &tuning, ps, ss)
            })
            .collect();

        for (mi, &m) in opts.methods.iter().enumerate() {
            for (ps, sel) in params.iter().zip(&selected) {
                match &sel[mi] {
                    Ok((a, b)) => result.tuning.push(TuningRecord {
                        j: cfg.j,
                        t0: cfg.t0,
                        r: cfg.r,
                        method: m,
                        param_seed: *ps,
                        a_star: *a,
                        b_star: *b,
                    }),
                    Err(msg) => result.failures.push(ReplicationFailure {
                        j: cfg.j,
                        t0: cfg.t0,
                        r: cfg.r,
                        method: m,
                        param_seed: *ps,
                        shock_seed: None,
                        message: msg.clone(),
                    }),
                }
            }
            let mut per_param: Vec<Vec<&Replication>> = vec![Vec::new(); cfg.n_param_sets];
            let mut n_failed = 0;
            for (&(ps, ss), rep) in tasks.iter().zip(&reps) {
                match &rep[mi] {
                    Some(Ok(r)) => per_param[ps as usize].push(r),
                    Some(Err(msg)) => {
                        n_failed += 1;
                        result.failures.push(ReplicationFailure {
                            j: cfg.j,
                            t0: cfg.t0,
                            r: cfg.r,
                            method: m,
                            param_seed: ps,
                            shock_seed: Some(ss),
                            message: msg.clone(),
                        });
                    }
                    None => n_failed += 1,
                }
            }
            result
                .rows
                .push(aggregate(cfg, m, &per_param, n_failed, opts.bias_mode));
        }
    }
    Ok(result)
}

fn aggregate(
    cfg: &SimulationConfig,
    method: Method,
    per_param: &[Vec<&Replication>],
    n_failed: usize,
    mode: BiasMode,
) -> StudyRow {
    let mut bias_terms = Vec::new();
    let mut sd_terms = Vec::new();
    let mut covered = 0usize;
    let mut cover_total = 0usize;
    for reps in per_param.iter().filter(|r| !r.is_empty()) {
        let n = reps.len() as f64;
        for s in 0..cfg.t_post {
            let errs: Vec<f64> = reps.iter().map(|r| r.errors[s]).collect();
            let mean = errs.iter().sum::<f64>() / n;
            match mode {
                BiasMode::AbsMean => bias_terms.push(mean.abs()),
                BiasMode::MeanAbs => bias_terms.extend(errs.iter().map(|e| e.abs())),
            }
            if reps.len() > 1 {
                let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
                sd_terms.push(var.sqrt());
            }
        }
        for r in reps {
            if let Some(c) = &r.covered {
                covered += c.iter().filter(|&&x| x).count();
                cover_total += c.len();
            }
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    StudyRow {
        j: cfg.j,
        t0: cfg.t0,
        r: cfg.r,
        method,
        bias: 100.0 * mean(&bias_terms),
        sd: 100.0 * mean(&sd_terms),
        coverage: (cover_total > 0).then(|| covered as f64 / cover_total as f64),
        n_ok: per_param.iter().map(Vec::len).sum(),
        n_failed,
    }
}

/// Runs the study with variance estimation through the public inference
/// API; slower than [`run_study`] but handy for checking it.
pub fn replicate_reference(
    cfg: &SimulationConfig,
    method: Method,
    a_star: f64,
    b_star: f64,
    param_seed: u64,
    shock_seed: u64,
    level: f64,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let sample = generate_sample::<f64>(cfg, param_seed, shock_seed)?;
    let p = &sample.panel;
    let est = Estimator::new(method).with_matching(cfg.matching());
    let w = est.fit(p, a_star, b_star)?;
    let e = estimate_effect(p, &w)?;
    let v = estimate_variance(p, &est, &w.tuning)?;
    let ci = confidence_intervals(&e, &v, level)?;
    let (lo, hi) = (ci.ci_lower.expect("set"), ci.ci_upper.expect("set"));
    let mut errors = Vec::new();
    let mut covered = Vec::new();
    for s in 0..cfg.t_post {
        let t = cfg.t0 + s;
        let tau = sample.true_effects[s];
        errors.push(e.gap[t] - tau);
        covered.push(lo[t] <= tau && tau <= hi[t]);
    }
    Ok((errors, covered))
}
