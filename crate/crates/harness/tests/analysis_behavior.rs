//! Behavior of the head analysis on models at the two extremes: fresh
//! initialization (near-flat positional factors) and a position-dominated
//! construction.

use pape_core::encodings::EncodingSpec;
use pape_core::model::TransformerClassifier;
use pape_harness::analyze::analyze_model;
use pape_harness::config::{ExperimentConfig, TaskConfig, TrainerConfig};
use pape_harness::train::model_config;

fn config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 11,
        encodings: vec![EncodingSpec::Pape {
            m: 2,
            ablation: None,
        }],
        task: TaskConfig {
            grid: vec![4, 4],
            train_samples: 16,
            test_samples: 16,
        },
        trainer: TrainerConfig {
            steps: 1,
            lr: 3e-4,
            warmup: 1,
            weight_decay: 0.05,
            decay_positional: false,
            batch: 4,
            seeds: 1,
        },
        out_dir: std::env::temp_dir(),
        ..Default::default()
    }
}

#[test]
fn untrained_heads_have_small_uniform_z() {
    // zero coefficient maps at init: the quadratic coefficients sit at the
    // softplus floor and the small projection keeps P near one
    let cfg = config();
    let encoding = cfg.encodings[0].clone();
    let model =
        TransformerClassifier::<f64>::init(model_config(&cfg, &encoding), cfg.seed).unwrap();
    let rows = analyze_model(&model, &cfg, 0.8, 8).unwrap();
    assert_eq!(rows.len(), cfg.model.layers * cfg.model.heads);
    let zs: Vec<f64> = rows.iter().map(|r| r.z).collect();
    for z in &zs {
        assert!(z.abs() < 0.2, "untrained |z| should be small, got {z}");
    }
    let mean = zs.iter().sum::<f64>() / zs.len() as f64;
    let spread = zs.iter().map(|z| (z - mean).abs()).fold(0.0f64, f64::max);
    assert!(
        spread < 0.1,
        "untrained z should be uniform, spread {spread}"
    );
    // both mask columns populated
    for r in &rows {
        assert!(r.mask_fraction > 0.0 && r.mask_fraction <= 1.0);
    }
}

#[test]
fn analysis_rejects_non_pape_models() {
    let mut cfg = config();
    cfg.encodings = vec![EncodingSpec::NdAlibi];
    let encoding = cfg.encodings[0].clone();
    let model =
        TransformerClassifier::<f64>::init(model_config(&cfg, &encoding), cfg.seed).unwrap();
    assert!(analyze_model(&model, &cfg, 0.8, 4).is_err());
}
