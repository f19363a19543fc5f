use std::fs::File;
use std::path::Path;

use nsynth::estimators::{backdate, EffectEstimate};
use nsynth::hull::{experiment_csv, hull_sample_experiment, in_convex_hull, HullExperimentConfig};
use nsynth::inference::{
    confidence_intervals, estimate_variance, permutation_test, PlaceboOptions,
};
use nsynth::panel::{assemble_panel, read_wide, WideTable};
use nsynth::simulation::{run_study, study_settings, BiasMode, SimulationConfig, StudyOptions};
use nsynth::tuning::select_tuning;
use nsynth::{
    build_matching, CvScheme, CvSurface, Estimator, HullQuery, HullVerdict, MatchingSpec, Method,
    Panel, SolverOptions, T0Spec, TuningParams, TuningPolicy, Weights,
};
use serde_json::{json, Value};

use crate::cli::{
    BiasArg, CvArg, DataArgs, EstimateArgs, FitArgs, HullArgs, MatchArg, PlaceboArgs, PolicyArg,
    RobustArgs, RobustMode, ScaleArg, SimulateArgs,
};
use crate::error::CliError;
use crate::output::{cell, num, opt, OutDir};

pub const ESTIMATE_HEADER: [&str; 6] = ["period", "treated", "synthetic", "gap", "ci_lo", "ci_hi"];
pub const PLACEBO_HEADER: [&str; 4] = ["unit", "pre_rmspe", "post_rmspe", "ratio"];

fn read_table(path: &Path) -> Result<WideTable<f64>, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(read_wide(f)?)
}

fn load_panel(
    data: &Path,
    predictors: Option<&Path>,
    treated: &str,
    t0: &str,
) -> Result<Panel, CliError> {
    let outcomes = read_table(data)?;
    let t0 = T0Spec::parse(t0, &outcomes.columns)?;
    let x = predictors.map(read_table).transpose()?;
    Ok(assemble_panel(outcomes, x, treated, &t0)?)
}

fn load(d: &DataArgs) -> Result<Panel, CliError> {
    load_panel(&d.data, d.predictors.as_deref(), &d.treated, &d.t0)
}

fn matching(m: MatchArg, standardize: bool) -> MatchingSpec {
    let base = match m {
        MatchArg::All => MatchingSpec::default(),
        MatchArg::Outcomes => MatchingSpec::outcomes_only(),
        MatchArg::Predictors => MatchingSpec::predictors_only(),
    };
    MatchingSpec {
        standardize,
        ..base
    }
}

fn estimator(fit: &FitArgs, d: &DataArgs) -> Estimator<f64> {
    Estimator::new(fit.method.into())
        .with_matching(matching(d.r#match, d.standardize))
        .with_solver(SolverOptions {
            tol: fit.tol,
            max_iter: fit.max_iter,
        })
}

fn scheme(cv: CvArg) -> CvScheme {
    match cv {
        CvArg::Controls => CvScheme::ControlUnits,
        CvArg::Pretreat => CvScheme::PretreatmentPeriods,
    }
}

/// `None` for cross-validation, otherwise the explicit pair. A missing
/// value next to an explicit one is 0.
fn explicit_stars(fit: &FitArgs) -> Result<Option<(f64, f64)>, CliError> {
    let parse = |name: &str, v: &Option<String>| -> Result<Option<Option<f64>>, CliError> {
        match v.as_deref() {
            None => Ok(None),
            Some(s) if s.eq_ignore_ascii_case("auto") => Ok(Some(None)),
            Some(s) => s.parse::<f64>().map(|x| Some(Some(x))).map_err(|_| {
                CliError::Usage(format!(
                    "--{name} must be a number in [0, 1] or 'auto', got '{s}'"
                ))
            }),
        }
    };
    let a = parse("a-star", &fit.a_star)?;
    let b = parse("b-star", &fit.b_star)?;
    match (a, b) {
        (None, None) | (Some(None), None) | (None, Some(None)) | (Some(None), Some(None)) => {
            Ok(None)
        }
        (Some(None), Some(Some(_))) | (Some(Some(_)), Some(None)) => Err(CliError::Usage(
            "--a-star and --b-star must both be explicit or both 'auto'".into(),
        )),
        (a, b) => Ok(Some((
            a.flatten().unwrap_or(0.0),
            b.flatten().unwrap_or(0.0),
        ))),
    }
}

struct Chosen {
    a_star: f64,
    b_star: f64,
    surface: Option<CvSurface<f64>>,
}

fn choose(panel: &Panel, est: &Estimator<f64>, fit: &FitArgs) -> Result<Chosen, CliError> {
    match explicit_stars(fit)? {
        Some((a_star, b_star)) => Ok(Chosen {
            a_star,
            b_star,
            surface: None,
        }),
        None => {
            let (t, s) = select_tuning(panel, est, scheme(fit.cv), fit.grid_step)?;
            Ok(Chosen {
                a_star: t.a_star,
                b_star: t.b_star,
                surface: Some(s),
            })
        }
    }
}

fn tuning_json(t: &TuningParams<f64>, chosen: &Chosen, fit: &FitArgs) -> Value {
    let cv = chosen.surface.as_ref().map(|s| {
        json!({
            "scheme": scheme(fit.cv).name(),
            "grid_step": num(fit.grid_step),
            "min_mspe": num(s.min_mspe),
            "converged": s.converged,
            "evaluations": s.points.len(),
            "points": s.points.iter().map(|p| json!({
                "a_star": num(p.a_star),
                "b_star": num(p.b_star),
                "mspe": num(p.mspe),
            })).collect::<Vec<_>>(),
        })
    });
    json!({
        "source": if chosen.surface.is_some() { "cv" } else { "fixed" },
        "a_star": num(t.a_star),
        "b_star": num(t.b_star),
        "a": num(t.a),
        "b": num(t.b),
        "cv": cv.unwrap_or(Value::Null),
    })
}

fn weights_json(w: &Weights) -> Value {
    Value::Array(
        w.pool_ids
            .iter()
            .zip(w.w.iter())
            .map(|(u, &x)| json!({ "unit": u, "weight": num(x) }))
            .collect(),
    )
}

fn series_rows(panel: &Panel, e: &EffectEstimate<f64>) -> Vec<Vec<String>> {
    panel
        .time_labels()
        .iter()
        .enumerate()
        .map(|(t, label)| {
            vec![
                label.clone(),
                e.treated[t].to_string(),
                e.synthetic[t].to_string(),
                e.gap[t].to_string(),
                cell(e.ci_lower.as_ref().map(|v| v[t])),
                cell(e.ci_upper.as_ref().map(|v| v[t])),
            ]
        })
        .collect()
}

fn series_json(panel: &Panel, e: &EffectEstimate<f64>) -> Value {
    Value::Array(
        panel
            .time_labels()
            .iter()
            .enumerate()
            .map(|(t, label)| {
                json!({
                    "period": label,
                    "treated": num(e.treated[t]),
                    "synthetic": num(e.synthetic[t]),
                    "gap": num(e.gap[t]),
                    "ci_lo": opt(e.ci_lower.as_ref().map(|v| v[t])),
                    "ci_hi": opt(e.ci_upper.as_ref().map(|v| v[t])),
                })
            })
            .collect(),
    )
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn estimate(args: &EstimateArgs) -> Result<String, CliError> {
    let panel = load(&args.data)?;
    let est = estimator(&args.fit, &args.data);
    let chosen = choose(&panel, &est, &args.fit)?;
    let (w, mut e) = est.estimate(&panel, chosen.a_star, chosen.b_star)?;
    let mut warnings = Vec::new();
    if !args.no_ci {
        match estimate_variance(&panel, &est, &w.tuning) {
            Ok(v) => e = confidence_intervals(&e, &v, args.level)?,
            Err(err) if !err.is_solver_failure() => warnings.push(format!("no intervals: {err}")),
            Err(err) => return Err(err.into()),
        }
    }
    if !w.unique {
        warnings.push("weights are not unique; the reported vector is one minimiser".to_string());
    }
    let out = OutDir::create(&args.out)?;
    let t0 = panel.t0();
    let doc = json!({
        "command": "estimate",
        "method": w.method.name(),
        "treated": panel.treated_id(),
        "t0": t0,
        "first_treated_period": panel.time_labels()[t0],
        "weights": weights_json(&w),
        "tuning": tuning_json(&w.tuning, &chosen, &args.fit),
        "pre_rmspe": num(w.pre_rmspe),
        "fit_residual": num(w.fit_residual),
        "objective": num(w.objective),
        "unique": w.unique,
        "level": if e.level.is_some() { num(args.level) } else { Value::Null },
        "series": series_json(&panel, &e),
        "warnings": warnings,
    });
    let json_path = out.write_json("estimate.json", &doc)?;
    out.write_csv("estimate.csv", &ESTIMATE_HEADER, &series_rows(&panel, &e))?;
    let post_gap = mean(e.gap.iter().skip(t0).copied());
    Ok(format!(
        "estimate: method={} treated={} donors={} a*={} b*={} pre_rmspe={:.6} mean_post_gap={:.6} -> {}",
        w.method,
        panel.treated_id(),
        w.len(),
        w.tuning.a_star,
        w.tuning.b_star,
        w.pre_rmspe,
        post_gap,
        json_path.display()
    ))
}

pub fn placebo(args: &PlaceboArgs) -> Result<String, CliError> {
    let panel = load(&args.data)?;
    let est = estimator(&args.fit, &args.data);
    let policy = match args.tuning_policy {
        PolicyArg::Reuse => TuningPolicy::Reuse,
        PolicyArg::Reselect => TuningPolicy::Reselect,
    };
    // reselect tunes every unit itself, so the treated search is skipped
    let chosen = match (policy, explicit_stars(&args.fit)?) {
        (TuningPolicy::Reselect, None) => Chosen {
            a_star: 0.0,
            b_star: 0.0,
            surface: None,
        },
        _ => choose(&panel, &est, &args.fit)?,
    };
    let opts = PlaceboOptions {
        a_star: chosen.a_star,
        b_star: chosen.b_star,
        policy,
        scheme: scheme(args.fit.cv),
        grid_step: args.fit.grid_step,
    };
    let r = permutation_test(&panel, &est, &opts)?;
    let rows: Vec<Vec<String>> = r
        .units
        .iter()
        .map(|u| {
            let ok = u.failure.is_none();
            let f = |v: f64| if ok { v.to_string() } else { String::new() };
            vec![u.unit.clone(), f(u.pre_rmspe), f(u.post_rmspe), f(u.ratio)]
        })
        .collect();
    let out = OutDir::create(&args.out)?;
    out.write_csv("placebo.csv", &PLACEBO_HEADER, &rows)?;
    let doc = json!({
        "command": "placebo",
        "method": Method::from(args.fit.method).name(),
        "treated": panel.treated_id(),
        "policy": policy.to_string(),
        "a_star": if policy == TuningPolicy::Reuse { num(chosen.a_star) } else { Value::Null },
        "b_star": if policy == TuningPolicy::Reuse { num(chosen.b_star) } else { Value::Null },
        "p_value": num(r.p_value),
        "treated_rank": r.treated_rank,
        "n_included": r.n_included,
        "n_units": r.units.len(),
        "units": r.units.iter().map(|u| json!({
            "unit": u.unit,
            "pre_rmspe": num(u.pre_rmspe),
            "post_rmspe": num(u.post_rmspe),
            "ratio": num(u.ratio),
            "ratio_infinite": u.ratio.is_infinite(),
            "failure": u.failure,
        })).collect::<Vec<_>>(),
        "warnings": r.warnings,
    });
    let json_path = out.write_json("placebo.json", &doc)?;
    Ok(format!(
        "placebo: p={} rank={}/{} -> {}",
        r.p_value,
        r.treated_rank,
        r.n_included,
        json_path.display()
    ))
}

fn parse_periods(s: &str) -> Result<Vec<usize>, CliError> {
    let bad = || {
        CliError::Usage(format!(
            "--periods expects 'a-b' or a comma list, got '{s}'"
        ))
    };
    if let Some((lo, hi)) = s.split_once('-') {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().parse().map_err(|_| bad())?;
        if lo == 0 || lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| bad()))
        .collect()
}

pub fn hull(args: &HullArgs) -> Result<String, CliError> {
    let out = OutDir::create(&args.out)?;
    if args.experiment {
        let periods = parse_periods(&args.periods)?;
        let cfg = HullExperimentConfig {
            n_samples: args.samples,
            max_controls: args.max_controls,
            // the sample width stays fixed so a subset of periods reproduces
            n_periods: periods.iter().copied().max().unwrap_or(0).max(10),
            periods,
            r: args.r,
            seed: args.seed,
        };
        let rows = hull_sample_experiment(&cfg)?;
        let path = out.write_text("hull_experiment.csv", &experiment_csv(&rows))?;
        let medians: Vec<String> = rows
            .iter()
            .map(|r| format!("{}:{}", r.t0, r.median_min_controls))
            .collect();
        return Ok(format!(
            "hull experiment: median minimal J {} -> {}",
            medians.join(" "),
            path.display()
        ));
    }
    let (Some(data), Some(treated), Some(t0)) = (&args.data, &args.treated, &args.t0) else {
        return Err(CliError::Usage(
            "--data, --treated and --t0 are required without --experiment".into(),
        ));
    };
    let panel = load_panel(data, args.predictors.as_deref(), treated, t0)?;
    let m = build_matching(&panel, &matching(args.r#match, args.standardize))?;
    let verdict = in_convex_hull(&HullQuery::new(m.z1.clone(), m.z0.clone()))?;
    let donors = panel.donor_ids();
    let weights: Vec<Value> = donors
        .iter()
        .zip(verdict.weights().iter())
        .map(|(u, &w)| json!({ "unit": u, "weight": num(w) }))
        .collect();
    let (label, residual, distance) = match &verdict {
        HullVerdict::Inside { .. } => ("inside", Value::Null, Value::Null),
        HullVerdict::Outside {
            residual, distance, ..
        } => (
            "outside",
            Value::Array(residual.iter().map(|&r| num(r)).collect()),
            num(*distance),
        ),
    };
    let doc = json!({
        "command": "hull",
        "treated": panel.treated_id(),
        "verdict": label,
        "n_columns": m.n_columns(),
        "weights": weights,
        "residual": residual,
        "distance": distance,
    });
    let path = out.write_json("hull.json", &doc)?;
    Ok(format!("{label}: certificate -> {}", path.display()))
}

fn parse_settings(items: &[String]) -> Result<Vec<(usize, usize, u32)>, CliError> {
    let mut out = Vec::new();
    for item in items
        .iter()
        .flat_map(|s| s.split(';'))
        .map(str::trim)
        .filter(|s| !s.is_empty())
    {
        if item.eq_ignore_ascii_case("paper") {
            out.extend(study_settings());
            continue;
        }
        let parts: Vec<&str> = item.split(',').map(str::trim).collect();
        let bad = || CliError::Usage(format!("setting '{item}' is not a J,T0,r triple"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let j = parts[0].parse().map_err(|_| bad())?;
        let t0 = parts[1].parse().map_err(|_| bad())?;
        let r = parts[2].parse().map_err(|_| bad())?;
        out.push((j, t0, r));
    }
    if out.is_empty() {
        return Err(CliError::Usage("no settings given".into()));
    }
    Ok(out)
}

pub fn simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let settings = parse_settings(&args.settings)?;
    let methods = args
        .methods
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage("no methods given".into()));
    }
    let configs = settings
        .iter()
        .map(|&(j, t0, r)| {
            let base = match args.scale {
                ScaleArg::Desk => SimulationConfig::desk(j, t0, r),
                ScaleArg::Paper => SimulationConfig::paper(j, t0, r),
            };
            let cfg = SimulationConfig {
                n_param_sets: args.param_sets.unwrap_or(base.n_param_sets),
                n_shock_draws: args.shock_draws.unwrap_or(base.n_shock_draws),
                match_predictors: args.match_predictors,
                ..base
            }
            .with_seed(args.seed);
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let opts = StudyOptions {
        methods: methods.clone(),
        bias_mode: match args.bias {
            BiasArg::AbsMean => BiasMode::AbsMean,
            BiasArg::MeanAbs => BiasMode::MeanAbs,
        },
        coverage: !args.no_coverage,
        level: 0.95,
    };
    let res = run_study(&configs, &opts)?;
    let out = OutDir::create(&args.out)?;
    let csv_path = out.write_text("study.csv", &res.to_csv())?;
    let doc = json!({
        "command": "simulate",
        "scale": match args.scale { ScaleArg::Desk => "desk", ScaleArg::Paper => "paper" },
        "seed": args.seed,
        "settings": configs.iter().map(|c| json!({
            "J": c.j, "T0": c.t0, "r": c.r,
            "param_sets": c.n_param_sets, "shock_draws": c.n_shock_draws,
        })).collect::<Vec<_>>(),
        "rows": res.rows.iter().map(|r| json!({
            "J": r.j, "T0": r.t0, "r": r.r, "method": r.method.name(),
            "bias": num(r.bias), "sd": num(r.sd), "coverage": opt(r.coverage),
            "n_ok": r.n_ok, "n_failed": r.n_failed,
        })).collect::<Vec<_>>(),
        "tuning": res.tuning.iter().map(|t| json!({
            "J": t.j, "T0": t.t0, "r": t.r, "method": t.method.name(),
            "param_seed": t.param_seed, "a_star": num(t.a_star), "b_star": num(t.b_star),
        })).collect::<Vec<_>>(),
        "failures": res.failures.iter().map(|f| json!({
            "J": f.j, "T0": f.t0, "r": f.r, "method": f.method.name(),
            "param_seed": f.param_seed, "shock_seed": f.shock_seed, "message": f.message,
        })).collect::<Vec<_>>(),
    });
    out.write_json("study.json", &doc)?;
    Ok(format!(
        "simulate: {} settings x {} methods, {} failed replications -> {}",
        configs.len(),
        methods.len(),
        res.failures.len(),
        csv_path.display()
    ))
}

pub fn robust(args: &RobustArgs) -> Result<String, CliError> {
    let panel = load(&args.data)?;
    let est = estimator(&args.fit, &args.data);
    let out = OutDir::create(&args.out)?;
    match args.mode {
        RobustMode::Backdate => {
            let spec = args.new_t0.as_deref().ok_or_else(|| {
                CliError::Usage("--new-t0 is required for --mode backdate".into())
            })?;
            let new_t0 = T0Spec::parse(spec, panel.time_labels())?.resolve(panel.time_labels())?;
            let shifted = backdate(&panel, new_t0)?;
            let chosen = choose(&shifted, &est, &args.fit)?;
            let (w, e) = est.estimate(&shifted, chosen.a_star, chosen.b_star)?;
            let t0 = panel.t0();
            let window = |t: usize| {
                if t < new_t0 {
                    "pre"
                } else if t < t0 {
                    "placebo"
                } else {
                    "post"
                }
            };
            let rows: Vec<Vec<String>> = (0..panel.n_periods())
                .map(|t| {
                    vec![
                        panel.time_labels()[t].clone(),
                        e.treated[t].to_string(),
                        e.synthetic[t].to_string(),
                        e.gap[t].to_string(),
                        window(t).to_string(),
                    ]
                })
                .collect();
            out.write_csv(
                "robust_backdate.csv",
                &["period", "treated", "synthetic", "gap", "window"],
                &rows,
            )?;
            let doc = json!({
                "command": "robust",
                "mode": "backdate",
                "method": w.method.name(),
                "treated": panel.treated_id(),
                "t0": t0,
                "new_t0": new_t0,
                "weights": weights_json(&w),
                "tuning": tuning_json(&w.tuning, &chosen, &args.fit),
                "pre_rmspe": num(w.pre_rmspe),
                "series": [{ "excluded": Value::Null, "gap": e.gap.iter().map(|&g| num(g)).collect::<Vec<_>>() }],
            });
            let path = out.write_json("robust.json", &doc)?;
            let placebo_gap = mean((new_t0..t0).map(|t| e.gap[t].abs()));
            Ok(format!(
                "robust backdate: new_t0={} mean_abs_placebo_gap={:.6} -> {}",
                panel.time_labels()[new_t0],
                placebo_gap,
                path.display()
            ))
        }
        RobustMode::Loo => {
            let chosen = choose(&panel, &est, &args.fit)?;
            let full = est.fit(&panel, chosen.a_star, chosen.b_star)?;
            let runs = est.leave_one_out(&panel, &full.tuning)?;
            let mut rows = Vec::new();
            for r in &runs {
                for (t, label) in panel.time_labels().iter().enumerate() {
                    rows.push(vec![
                        r.excluded.clone(),
                        label.clone(),
                        r.effect.treated[t].to_string(),
                        r.effect.synthetic[t].to_string(),
                        r.effect.gap[t].to_string(),
                    ]);
                }
            }
            out.write_csv(
                "robust_loo.csv",
                &["excluded", "period", "treated", "synthetic", "gap"],
                &rows,
            )?;
            let doc = json!({
                "command": "robust",
                "mode": "loo",
                "method": full.method.name(),
                "treated": panel.treated_id(),
                "t0": panel.t0(),
                "new_t0": Value::Null,
                "weights": weights_json(&full),
                "tuning": tuning_json(&full.tuning, &chosen, &args.fit),
                "pre_rmspe": num(full.pre_rmspe),
                "series": runs.iter().map(|r| json!({
                    "excluded": r.excluded,
                    "gap": r.effect.gap.iter().map(|&g| num(g)).collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
            });
            let path = out.write_json("robust.json", &doc)?;
            Ok(format!(
                "robust loo: {} series -> {}",
                runs.len(),
                path.display()
            ))
        }
    }
}
