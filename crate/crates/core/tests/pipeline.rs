//! In-memory pipeline checks against independently computed quantities.

use alsfrs_core::config::PipelineConfig;
use alsfrs_core::featurize::FeatureMode;
use alsfrs_core::harness::{evaluate, grid_search, plan_folds};
use alsfrs_core::solver::{fit, ElasticNetParams};
use alsfrs_core::synth::{self, ChannelTerm, StaticTerm, SynthConfig};
use alsfrs_core::{pipeline, MetricMode, QuestionId};
use ndarray::Array2;

#[test]
fn generator_coefficients_are_recoverable_without_noise() {
    let mut cfg = SynthConfig {
        n_patients: 30,
        noise_std: 0.0,
        sensor_missing_frac: 0.0,
        static_missing_frac: 0.0,
        ..SynthConfig::default()
    };
    for sig in &mut cfg.signals {
        sig.intercept = 0.4;
        sig.previous_weight = 0.8;
        sig.channel_terms = vec![
            ChannelTerm::Linear { channel: 0, coef: 0.15 },
            ChannelTerm::Linear { channel: 1, coef: -0.05 },
        ];
        sig.static_terms = vec![StaticTerm {
            field: "age_at_diagnosis".into(),
            coef: 0.01,
        }];
    }
    let cohort = synth::generate(&cfg).unwrap();
    let age = |pid: &str| cohort.statics.get(pid).unwrap().numeric[0].unwrap();
    let rows: Vec<_> = cohort
        .manifest
        .transitions
        .iter()
        .filter(|t| t.question == 1 && t.channel_means.iter().take(2).all(Option::is_some))
        .collect();
    assert!(rows.len() > 50);
    let x = Array2::from_shape_fn((rows.len(), 4), |(i, j)| {
        let t = rows[i];
        match j {
            0 => f64::from(t.previous_value),
            1 => t.channel_means[0].unwrap(),
            2 => t.channel_means[1].unwrap(),
            _ => age(&t.patient_id),
        }
    });
    let y: Vec<f64> = rows.iter().map(|t| t.latent).collect();
    let names: Vec<String> = ["prev", "ch1", "ch2", "age"].map(String::from).to_vec();
    let params = ElasticNetParams {
        lambda: 0.0,
        alpha: 1.0,
        tol: 1e-12,
        max_iter: 1_000_000,
    };
    let m = fit(x.view(), &y, &names, &params).unwrap();
    let raw: Vec<f64> = m.coefficients.iter().zip(&m.feature_stds).map(|(c, s)| c / s).collect();
    for (got, want) in raw.iter().zip([0.8, 0.15, -0.05, 0.01]) {
        assert!((got - want).abs() < 0.05, "{raw:?}");
    }
}

fn small_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.seed = seed;
    for (k, v) in [
        ("synth.n_patients", "24"),
        ("lambda_count", "4"),
        ("outer_k", "3"),
        ("inner_k", "2"),
        ("alphas", "0.5,1"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

#[test]
fn evaluation_matches_independent_error_computation() {
    let cfg = small_config(8);
    let cohort = synth::generate(&cfg.synth_config().unwrap()).unwrap().to_cohort().unwrap();
    let run = pipeline::run(&cohort, &cfg).unwrap();
    let preds = &run.evaluation.predictions;
    assert!(!preds.is_empty());
    let sq: f64 = preds.iter().map(|p| (p.emitted - p.truth.as_f64()).powi(2)).sum();
    let abs: f64 = preds.iter().map(|p| (p.emitted - p.truth.as_f64()).abs()).sum();
    let n = preds.len() as f64;
    let overall = run.evaluation.overall;
    assert_eq!(overall.n, preds.len());
    assert!((overall.rmse - (sq / n).sqrt()).abs() < 1e-12);
    assert!((overall.mae - abs / n).abs() < 1e-12);

    // raw mode scores unrounded outputs
    let raw = evaluate(&run.bundle, &run.datasets, &run.holdout_patients, MetricMode::Raw).unwrap();
    let sq: f64 = raw.predictions.iter().map(|p| (p.raw - p.truth.as_f64()).powi(2)).sum();
    assert!((raw.overall.rmse - (sq / n).sqrt()).abs() < 1e-12);

    // held-out patients never appear in training
    for p in &run.holdout_patients {
        assert!(!run.train_patients.contains(p));
    }
}

#[test]
fn single_cell_grid_selects_that_cell() {
    let cfg = small_config(3);
    let cohort = synth::generate(&cfg.synth_config().unwrap()).unwrap().to_cohort().unwrap();
    let (_, windows) = pipeline::clinical_windows(&cohort, &cfg);
    let ds = pipeline::extract(&cohort, &windows, None, &cfg).unwrap();
    let table = ds.eval_table(FeatureMode::Median).unwrap();
    let ids = pipeline::eligible_patients(&ds);
    let plan = plan_folds(&ids, 3, 2, 1).unwrap();
    let q = QuestionId::new(4).unwrap();
    let r = grid_search(q, table, table, &plan.outer[0].inner, &[0.05], &[0.5], &cfg.train_config()).unwrap();
    assert_eq!(r.cells.len(), 1);
    let best = r.best;
    assert_eq!((best.lambda, best.alpha), (0.05, 0.5));
    assert_eq!(best.n_folds, 2);
}

#[test]
fn planted_signal_prefers_moderate_penalty_over_the_largest() {
    let cfg = small_config(42);
    let cohort = synth::generate(&cfg.synth_config().unwrap()).unwrap().to_cohort().unwrap();
    let (_, windows) = pipeline::clinical_windows(&cohort, &cfg);
    let ds = pipeline::extract(&cohort, &windows, None, &cfg).unwrap();
    let table = ds.eval_table(FeatureMode::Median).unwrap();
    let ids = pipeline::eligible_patients(&ds);
    let plan = plan_folds(&ids, 3, 2, 1).unwrap();
    let tc = cfg.train_config();
    let lambdas = [1e-3, 10.0];
    let q = QuestionId::new(1).unwrap();
    let r = grid_search(q, table, table, &plan.outer[0].inner, &lambdas, &[1.0], &tc).unwrap();
    let score = |l: f64| r.cells.iter().find(|c| c.lambda == l).unwrap().mean_rmse().unwrap();
    // at lambda 10 every coefficient is zero and the model predicts the training mean
    assert!(score(1e-3) < score(10.0), "{} vs {}", score(1e-3), score(10.0));
    assert_eq!(r.best.lambda, 1e-3);
}
