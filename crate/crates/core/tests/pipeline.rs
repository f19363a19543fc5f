use nsynth::estimators::estimate_effect;
use nsynth::inference::{
    confidence_intervals, estimate_variance, permutation_test, PlaceboOptions,
};
use nsynth::panel::{load_panel, write_panel, PanelSource, T0Spec};
use nsynth::simulation::{generate_sample, SimulationConfig};
use nsynth::tuning::select_tuning;
use nsynth::{CvScheme, Estimator, Method, PanelData};
use tempfile::TempDir;

fn sample() -> PanelData<f64> {
    let cfg = SimulationConfig::desk(12, 15, 2);
    generate_sample::<f64>(&cfg, 2, 3).unwrap().panel
}

#[test]
fn panel_survives_a_disk_round_trip() {
    let dir = TempDir::new().unwrap();
    let p = sample();
    let path = dir.path().join("y.csv");
    write_panel(&p, &path, None).unwrap();
    let back: PanelData<f64> = load_panel(&PanelSource {
        outcomes: path,
        predictors: None,
        treated: p.treated_id().to_string(),
        t0: T0Spec::Label(p.time_labels()[p.t0()].clone()),
    })
    .unwrap();
    assert_eq!(back.unit_ids(), p.unit_ids());
    assert_eq!(back.t0(), p.t0());
    assert_eq!(back.treated_index(), p.treated_index());
    // shortest round-trip text, so values come back bit for bit
    assert_eq!(back.outcomes(), p.outcomes());
}

#[test]
fn loaded_panel_runs_the_whole_pipeline() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("y.csv");
    let original = sample();
    write_panel(&original, &path, None).unwrap();
    let p: PanelData<f64> = load_panel(&PanelSource {
        outcomes: path,
        predictors: None,
        treated: original.treated_id().to_string(),
        t0: T0Spec::Count(15),
    })
    .unwrap();

    let est = Estimator::new(Method::Nsc);
    let (tuning, surface) = select_tuning(&p, &est, CvScheme::ControlUnits, 0.25).unwrap();
    assert!(!surface.points.is_empty());
    assert!((0.0..=1.0).contains(&tuning.a_star) && (0.0..=1.0).contains(&tuning.b_star));

    let w = est.fit(&p, tuning.a_star, tuning.b_star).unwrap();
    assert!((w.w.sum() - 1.0).abs() < 1e-9);
    let e = estimate_effect(&p, &w).unwrap();
    assert_eq!(e.gap.len(), p.n_periods());

    let v = estimate_variance(&p, &est, &tuning).unwrap();
    let ci = confidence_intervals(&e, &v, 0.9).unwrap();
    let (lo, hi) = (ci.ci_lower.unwrap(), ci.ci_upper.unwrap());
    for t in 0..p.n_periods() {
        assert!(lo[t] <= e.gap[t] && e.gap[t] <= hi[t]);
    }

    let r = permutation_test(
        &p,
        &est,
        &PlaceboOptions::reuse(tuning.a_star, tuning.b_star),
    )
    .unwrap();
    assert_eq!(r.units.len(), p.n_units());
    assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    assert!((r.p_value * r.n_included as f64 - r.treated_rank as f64).abs() < 1e-9);
}

#[test]
fn single_precision_agrees_with_double() {
    let cfg = SimulationConfig::desk(8, 15, 1);
    let p64 = generate_sample::<f64>(&cfg, 0, 0).unwrap().panel;
    let p32 = generate_sample::<f32>(&cfg, 0, 0).unwrap().panel;
    let w64 = Estimator::new(Method::Nsc).fit(&p64, 0.4, 0.4).unwrap();
    let w32 = Estimator::<f32>::new(Method::Nsc)
        .with_solver(nsynth::SolverOptions {
            tol: 1e-5,
            max_iter: 10_000,
        })
        .fit(&p32, 0.4, 0.4)
        .unwrap();
    for (a, b) in w64.w.iter().zip(w32.w.iter()) {
        assert!((a - *b as f64).abs() < 1e-2, "{a} vs {b}");
    }
}
