//! Cross-module integration: empirical quantiles against the exact
//! transition law, training labels against the oracle, a small end-to-end
//! train/predict cycle, and the CLI pipeline.

use sevenleague::ann::{train, TrainConfig};
use sevenleague::collocation::{empirical_collocation, gauss_hermite_grid, normal_cdf};
use sevenleague::harness::cli_main;
use sevenleague::models::{ou_conditional_moments, ou_exact_collocation, ModelParams};
use sevenleague::runtime::Backend;
use sevenleague::scheme::{simulate_7l, CollocationPredictor, RunStats, SchemeConfig};
use sevenleague::simulate::{
    draw_standard_normal, generate_training_set, RngStream, SamplingRanges, SchemeKind,
    TrainingGenConfig,
};

/// Standard error of the p-quantile estimated from `n` samples of a
/// Gaussian with the given standard deviation.
fn quantile_se(p: f64, n: usize, std: f64) -> f64 {
    let x = sevenleague::collocation::normal_quantile(p);
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (p * (1.0 - p) / n as f64).sqrt() * std / density
}

#[test]
fn empirical_collocation_matches_exact_law_on_ou_samples() {
    let grid = gauss_hermite_grid::<f64>(5).unwrap();
    let params = ModelParams::new(0.0, 1.0, 0.5).unwrap();
    let (y0, dt) = (1.0, 0.5);
    let moments = ou_conditional_moments(y0, dt, &params).unwrap();

    let n = 1_000_000usize;
    let mut stream = RngStream::new(2718, 0);
    let samples: Vec<f64> = (0..n)
        .map(|_| moments.mean + moments.std * draw_standard_normal::<f64>(&mut stream))
        .collect();

    let empirical = empirical_collocation(&samples, &grid).unwrap();
    let exact = ou_exact_collocation(y0, dt, &params, &grid).unwrap();
    for j in 0..5 {
        let se = quantile_se(normal_cdf(grid.nodes()[j]), n, moments.std);
        assert!(
            (empirical[j] - exact[j]).abs() < 3.0 * se,
            "point {j}: empirical {} vs exact {} (3se = {})",
            empirical[j],
            exact[j],
            3.0 * se
        );
    }
}

#[test]
fn training_labels_match_exact_collocation() {
    // One fixed feature row: point ranges collapse the sampling.
    let grid = gauss_hermite_grid::<f64>(5).unwrap();
    let (y0, dt, lambda, sigma) = (1.0, 0.5, 1.0, 0.5);
    let config = TrainingGenConfig {
        ranges: SamplingRanges {
            y_start: (y0, y0),
            dt: (dt, dt),
            mean_level: (0.0, 0.0),
            reversion_speed: (lambda, lambda),
            volatility: (sigma, sigma),
        },
        n_samples: 1,
        inner_paths: 100_000,
        fine_step: 1e-3,
        seed: 99,
    };
    let dataset = generate_training_set(&config, &grid, &Backend::Sequential).unwrap();
    let params = ModelParams::new(0.0, lambda, sigma).unwrap();
    let exact = ou_exact_collocation(y0, dt, &params, &grid).unwrap();
    let std = ou_conditional_moments(y0, dt, &params).unwrap().std;

    // Tolerance: Monte Carlo quantile noise plus a small allowance for the
    // first-order discretization bias of the fine-step label simulation.
    let labels = dataset.label_row(0);
    for j in 0..5 {
        let se = quantile_se(normal_cdf(grid.nodes()[j]), config.inner_paths, std);
        let tolerance = 3.0 * se + 1e-3;
        assert!(
            (labels[j] - exact[j]).abs() < tolerance,
            "label {j}: {} vs exact {} (tolerance {tolerance})",
            labels[j],
            exact[j]
        );
    }
}

#[test]
fn trained_network_tracks_oracle_within_its_validation_rmse() {
    let grid = gauss_hermite_grid::<f64>(5).unwrap();
    let gen = TrainingGenConfig {
        ranges: SamplingRanges::default(),
        n_samples: 4_000,
        inner_paths: 8_192,
        fine_step: 0.05,
        seed: 12,
    };
    let dataset = generate_training_set(&gen, &grid, &Backend::Sequential).unwrap();
    let tc = TrainConfig {
        epochs: 60,
        batch_size: 256,
        hidden_layers: vec![32, 32],
        seed: 4,
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &tc).unwrap();
    let rmse = outcome.val_rmse_label_units;
    assert!(rmse.is_finite() && rmse > 0.0);

    let predictor = CollocationPredictor::ann(&outcome.mlp, &outcome.normalization, &grid).unwrap();
    let params = ModelParams::new(0.25, 0.8, 0.4).unwrap();
    let mut stats = RunStats::default();
    let mut sq_acc = 0.0f64;
    let mut count = 0usize;
    for &dt in &[0.125f64, 0.5, 1.0] {
        for i in 0..9 {
            let y = -1.0 + 0.25 * i as f64;
            let predicted = predictor
                .predict_points(y, dt, &params, true, &mut stats)
                .unwrap();
            let exact = ou_exact_collocation(y, dt, &params, &grid).unwrap();
            for (p, e) in predicted.iter().zip(&exact) {
                sq_acc += (p - e) * (p - e);
                count += 1;
            }
        }
    }
    let eval_rmse = (sq_acc / count as f64).sqrt();
    assert!(
        eval_rmse <= 3.0 * rmse,
        "held-out rmse {eval_rmse} vs 3x validation rmse {}",
        3.0 * rmse
    );
}

#[test]
fn exact_predictor_flat_error_ratio_over_dt_grid() {
    let grid = gauss_hermite_grid::<f64>(5).unwrap();
    let predictor = CollocationPredictor::exact_ou(&grid);
    let params = ModelParams::new(0.0, 1.0, 0.5).unwrap();
    let model = sevenleague::models::ou_model(1.0);
    let config = sevenleague::harness::ConvergenceConfig {
        horizon: 2.0,
        dt_values: vec![0.25, 0.5, 1.0, 2.0],
        schemes: vec![SchemeKind::SevenLeague],
        n_paths: 10_000,
        seed: 2024,
    };
    let reports = sevenleague::harness::convergence_study(
        &model,
        &params,
        Some(&predictor),
        &config,
        &Backend::Sequential,
    )
    .unwrap();
    let max = reports.iter().map(|r| r.strong_error).fold(0.0, f64::max);
    let min = reports
        .iter()
        .map(|r| r.strong_error)
        .fold(f64::INFINITY, f64::min);
    assert!(max < 1e-9, "all errors sit at the rounding floor: {max}");
    assert!(
        max / min < 10.0,
        "strong error is flat over the dt grid: max {max} / min {min}"
    );
}

#[test]
fn pool_scaling_is_monotone_up_to_core_count() {
    // With one core this reduces to a single cell; on wider machines it
    // checks that adding workers never costs time beyond measurement noise.
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let grid = gauss_hermite_grid::<f64>(5).unwrap();
    let predictor = CollocationPredictor::exact_ou(&grid);
    let params = ModelParams::new(0.0, 1.0, 0.5).unwrap();
    let model = sevenleague::models::ou_model(1.0);
    let cfg = SchemeConfig::new(2.0, 4, 100_000, SchemeKind::SevenLeague, 5);
    let mut medians = Vec::new();
    for k in 1..=cores {
        let backend = Backend::pool(k).unwrap();
        simulate_7l(&model, &params, &predictor, &cfg, &backend).unwrap(); // warm-up
        let mut times: Vec<f64> = (0..3)
            .map(|_| {
                sevenleague::runtime::timed(|| {
                    simulate_7l(&model, &params, &predictor, &cfg, &backend).unwrap()
                })
                .1
            })
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(times[1]);
    }
    for pair in medians.windows(2) {
        assert!(
            pair[1] <= pair[0] * 1.10,
            "pool scaling regressed: {medians:?}"
        );
    }
}

#[test]
fn single_precision_sampler_runs() {
    let grid = gauss_hermite_grid::<f32>(5).unwrap();
    let pred = CollocationPredictor::exact_ou(&grid);
    let params = ModelParams::new(0.0f32, 1.0, 0.5).unwrap();
    let model = sevenleague::models::ou_model(1.0f32);
    let cfg = SchemeConfig::new(2.0f32, 4, 500, SchemeKind::SevenLeague, 3);
    let paths = simulate_7l(&model, &params, &pred, &cfg, &Backend::Sequential).unwrap();
    let err = sevenleague::harness::strong_error(&paths, &params).unwrap();
    assert!(err < 1e-4, "f32 coupled error {err}");
}

#[test]
fn cli_pipeline_end_to_end() {
    let dir = std::env::temp_dir().join("sevenleague_test_pipeline");
    std::fs::create_dir_all(&dir).unwrap();
    let data = dir.join("data.csv");
    let model = dir.join("model.json");
    let paths_csv = dir.join("paths.csv");
    let conv_csv = dir.join("convergence.csv");
    let argv = |parts: &[&str]| -> Vec<String> { parts.iter().map(|s| s.to_string()).collect() };

    // m=3 keeps the tail requirement small for a quick dataset.
    assert_eq!(
        cli_main(&argv(&[
            "sevenleague",
            "gen-data",
            "--samples",
            "400",
            "--inner-paths",
            "256",
            "--fine-step",
            "0.05",
            "--m",
            "3",
            "--seed",
            "2",
            "--workers",
            "1",
            "--out",
            data.to_str().unwrap(),
        ])),
        0
    );
    assert!(data.exists());
    assert!(dir.join("data.meta.json").exists(), "meta sidecar");

    assert_eq!(
        cli_main(&argv(&[
            "sevenleague",
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--epochs",
            "10",
            "--batch-size",
            "64",
            "--seed",
            "3",
        ])),
        0
    );
    assert!(model.exists());

    assert_eq!(
        cli_main(&argv(&[
            "sevenleague",
            "simulate",
            "--scheme",
            "7l",
            "--dt",
            "0.5",
            "--paths",
            "200",
            "--seed",
            "5",
            "--model",
            model.to_str().unwrap(),
            "--backend",
            "pool:2",
            "--out",
            paths_csv.to_str().unwrap(),
        ])),
        0
    );
    let text = std::fs::read_to_string(&paths_csv).unwrap();
    assert_eq!(text.lines().count(), 201, "header plus one row per path");

    assert_eq!(
        cli_main(&argv(&[
            "sevenleague",
            "convergence",
            "--dts",
            "0.5,1.0",
            "--schemes",
            "exact,euler",
            "--paths",
            "500",
            "--seed",
            "8",
            "--out",
            conv_csv.to_str().unwrap(),
        ])),
        0
    );
    let text = std::fs::read_to_string(&conv_csv).unwrap();
    assert_eq!(text.lines().count(), 5, "header plus 2 dts x 2 schemes");

    std::fs::remove_dir_all(&dir).ok();
}
