//! Extrapolation runner consistency on a tiny budget: the factor-1 row
//! reproduces the training accuracy exactly, rescaling factors are applied
//! uniformly, and the position-blind control is immune to grid growth.

use pape_core::encodings::EncodingSpec;
use pape_harness::config::{ExperimentConfig, TaskConfig, TrainerConfig};
use pape_harness::extrapolate::run_extrapolation;

fn tiny_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 21,
        encodings: vec![
            EncodingSpec::None,
            EncodingSpec::Pape {
                m: 2,
                ablation: None,
            },
        ],
        task: TaskConfig {
            grid: vec![4, 4],
            train_samples: 16,
            test_samples: 16,
        },
        trainer: TrainerConfig {
            steps: 10,
            lr: 3e-4,
            warmup: 2,
            weight_decay: 0.05,
            decay_positional: false,
            batch: 4,
            seeds: 1,
        },
        out_dir: tempfile::tempdir().unwrap().keep(),
        ..Default::default()
    }
}

#[test]
fn factor_one_reproduces_training_accuracy_and_factors_are_uniform() {
    let config = tiny_config();
    let outcome = run_extrapolation(&config, &[1, 2]).unwrap();

    for train in &outcome.train_results {
        let base_row = outcome
            .rows
            .iter()
            .find(|r| {
                r.encoding == train.encoding.kind_name()
                    && r.seed == train.seed
                    && r.grid_factor == 1
            })
            .expect("factor-1 row present");
        assert_eq!(
            base_row.accuracy, train.test_accuracy,
            "frozen evaluation at the training grid must reproduce the training accuracy"
        );
        assert_eq!(base_row.applied_factor, 1.0);
    }

    // the rescaling factor is the same number for every encoding
    let factors: std::collections::BTreeSet<String> = outcome
        .rows
        .iter()
        .filter(|r| r.grid_factor == 2 && r.interpolated)
        .map(|r| format!("{}", r.applied_factor))
        .collect();
    assert_eq!(
        factors.len(),
        1,
        "interpolation factor differed: {factors:?}"
    );
    assert!(factors.contains("0.5"));

    // the position-blind control cannot move off chance on any grid
    for r in outcome.rows.iter().filter(|r| r.encoding == "none") {
        assert_eq!(r.accuracy, 0.25, "control drifted: {r:?}");
    }
}
