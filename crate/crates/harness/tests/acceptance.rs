//! Acceptance gate: one test per criterion, each printing a PASS/FAIL line
//! (visible with `--nocapture`). Shared property-suite results are computed
//! once; the statistical toy experiment runs its own trimmed-but-sufficient
//! budget.

use std::sync::OnceLock;
use std::time::Instant;

use pape_core::encodings::{count_positional_params, feature_width, EncodingSpec, ModelShape};
use pape_harness::alloc_meter::CountingAllocator;
use pape_harness::config::{ExperimentConfig, TaskConfig, TrainerConfig};
use pape_harness::extrapolate;
use pape_harness::verify::{
    memory_contract_points, pape_param_audit, run_property_suite, PropertyOutcome,
};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

const SUITE_SEED: u64 = 42;

fn suite() -> &'static Vec<PropertyOutcome> {
    static SUITE: OnceLock<Vec<PropertyOutcome>> = OnceLock::new();
    SUITE.get_or_init(|| run_property_suite(SUITE_SEED, None).expect("property suite runs"))
}

fn outcome(name: &str) -> &'static PropertyOutcome {
    suite()
        .iter()
        .find(|o| o.name == name)
        .unwrap_or_else(|| panic!("property {name} missing from the suite"))
}

fn report(criterion: u32, title: &str, passed: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion:2} ({title}): {} — {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {criterion} failed: {detail}");
}

fn require(criterion: u32, title: &str, names: &[&str]) {
    let mut passed = true;
    let mut details = Vec::new();
    for name in names {
        let o = outcome(name);
        passed &= o.passed && !o.skipped;
        details.push(format!(
            "{} dev {:.3e} (tol {:.1e})",
            o.name, o.max_deviation, o.tolerance
        ));
    }
    report(criterion, title, passed, &details.join("; "));
}

#[test]
fn criterion_01_feature_map_equivalence() {
    // timed standalone so the one-minute budget is measured, not assumed
    let start = Instant::now();
    let o = pape_harness::verify::feature_map_equivalence(SUITE_SEED);
    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        "feature-map equivalence over 200 random configurations",
        o.passed && elapsed < 60.0,
        &format!(
            "max |<f_q,f_k> - (qk + bias)| = {:.3e} <= 1e-10 in {elapsed:.1}s",
            o.max_deviation
        ),
    );
}

#[test]
fn criterion_02_rotation_invariance() {
    require(
        2,
        "rotation invariance of the constrained variant; direction term breaks it",
        &[
            "encodings.rotation_invariance.pape_ri",
            "encodings.pape_rotation_variance",
        ],
    );
}

#[test]
fn criterion_03_translation_invariance() {
    require(
        3,
        "translation invariance of all relative encodings; sinusoidal fails",
        &[
            "encodings.translation_invariance.pape",
            "encodings.translation_invariance.pape_ri",
            "encodings.translation_invariance.rope_axial",
            "encodings.translation_invariance.rope_mixed",
            "encodings.translation_invariance.nd_alibi",
            "encodings.translation_invariance.poly",
            "encodings.sincos_translation_failure",
        ],
    );
}

#[test]
fn criterion_04_vanilla_reduction() {
    require(
        4,
        "dead coefficients reduce to vanilla attention",
        &[
            "attention.vanilla_reduction",
            "encodings.context_off_reduction",
        ],
    );
}

#[test]
fn criterion_05_head_widths() {
    let cases = [(64usize, 50usize, 216usize), (32, 2, 40), (16, 8, 42)];
    let ok = cases.iter().all(|&(h, m, w)| feature_width(h, m) == w);
    report(
        5,
        "augmented head widths h + 3m + 2",
        ok,
        "widths (64,50)->216, (32,2)->40, (16,8)->42",
    );
}

#[test]
fn criterion_06_param_counts() {
    let shape = ModelShape::vit_b(2);
    let mixed = count_positional_params(&EncodingSpec::RopeMixed { base: 10_000.0 }, &shape);
    let zeros_ok = [
        EncodingSpec::NdSincos { base: 10_000.0 },
        EncodingSpec::RopeAxial { base: 10_000.0 },
        EncodingSpec::NdAlibi,
    ]
    .iter()
    .all(|s| count_positional_params(s, &shape) == 0);
    let audit = pape_param_audit();
    let gated_ok = audit
        .iter()
        .filter(|r| matches!(r.m, 4 | 8 | 16 | 32))
        .all(|r| r.within_5pct);
    let discrepancies_reported = audit
        .iter()
        .filter(|r| matches!(r.m, 2 | 64))
        .all(|r| r.flagged_discrepancy);
    let exact_ok = audit.iter().all(|r| {
        r.exact
            == match r.m {
                2 => 442_944,
                4 => 885_888,
                8 => 1_771_776,
                16 => 3_543_552,
                32 => 7_087_104,
                64 => 14_174_208,
                _ => unreachable!(),
            }
    });
    let detail = format!(
        "mixed-rotary = {mixed} (want 18432); zero baselines: {zeros_ok}; \
         m in {{4,8,16,32}} within 5%: {gated_ok}; m in {{2,64}} flagged: {discrepancies_reported}"
    );
    report(
        6,
        "positional parameter counts",
        mixed == 18_432 && zeros_ok && gated_ok && discrepancies_reported && exact_ok,
        &detail,
    );
}

#[test]
fn criterion_07_decomposition() {
    require(
        7,
        "decomposition reconstructs attention; z-score matches the double-loop oracle",
        &[
            "analysis.decomposition_reconstruction",
            "analysis.z_score_oracle",
            "analysis.mask_minimality",
        ],
    );
}

#[test]
fn criterion_08_gradients() {
    require(
        8,
        "learnable-parameter gradients match central differences",
        &[
            "attention.parameter_gradients",
            "numeric.gradient_vs_finite_difference",
        ],
    );
}

#[test]
fn criterion_09_memory_contract() {
    let points = memory_contract_points(SUITE_SEED, &[64, 256, 1024]);
    let mut ok = true;
    let mut ratios = Vec::new();
    for w in points.windows(2) {
        let ratio = w[1].peak_bytes as f64 / w[0].peak_bytes.max(1) as f64;
        ratios.push(format!("{:.2}", ratio));
        ok &= ratio <= 4.5;
    }
    let max_dev = points.iter().map(|p| p.deviation).fold(0.0f64, f64::max);
    ok &= max_dev <= 1e-8;
    ok &= points.iter().all(|p| p.peak_bytes > 0);
    report(
        9,
        "streaming-path memory grows linearly while matching the direct path",
        ok,
        &format!(
            "peak bytes {:?} at n [64,256,1024]; per-4x ratios [{}] <= 4.5; max deviation {max_dev:.3e}",
            points.iter().map(|p| p.peak_bytes).collect::<Vec<_>>(),
            ratios.join(", ")
        ),
    );
}

#[test]
fn criterion_10_interpolation() {
    let factor = pape_core::geometry::interpolation_factor(224, 448).unwrap();
    // the runner applies interpolation through one encoding-agnostic path
    let grid: pape_core::Positions = pape_core::geometry::PositionSet::grid(&[16, 16]).unwrap();
    let (scaled, applied) = extrapolate::eval_positions(&grid, 8, 16, true).unwrap();
    let max = scaled
        .positions()
        .data()
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max);
    let ok = factor == 0.5 && applied == 0.5 && (max - 8.0).abs() < 1e-12;
    report(
        10,
        "interpolation factor is exact and shared across encodings",
        ok,
        &format!(
            "factor(224,448) = {factor}; runner applied {applied}; rescaled max coordinate {max}"
        ),
    );
}

#[test]
fn criterion_11_toy_experiment() {
    let start = Instant::now();
    let config = toy_config();
    let outcome = extrapolate::run_extrapolation(&config, &[1, 2]).expect("toy runs");

    let acc = |kind: &str, factor: usize, interp: bool| -> Vec<f64> {
        let mut v: Vec<(u64, f64)> = outcome
            .rows
            .iter()
            .filter(|r| r.encoding == kind && r.grid_factor == factor && r.interpolated == interp)
            .map(|r| (r.seed, r.accuracy))
            .collect();
        v.sort_by_key(|(s, _)| *s);
        v.into_iter().map(|(_, a)| a).collect()
    };
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;

    let chance = 1.0 / pape_harness::task::NUM_CLASSES as f64;
    let pooled = config.trainer.seeds as usize * config.task.test_samples;
    let sigma = (chance * (1.0 - chance) / pooled as f64).sqrt();

    let none_acc = acc("none", 1, false);
    let pape_acc = acc("pape", 1, false);
    let sincos_acc = acc("nd_sincos", 1, false);
    assert_eq!(none_acc.len(), 5, "expected 5 seeds");

    // (a) no encoding stays at chance
    let a_dev = (mean(&none_acc) - chance).abs();
    let a_ok = a_dev <= 3.0 * sigma;

    // (b) the parabolic encoding clears chance by a wide margin
    let b_margin = mean(&pape_acc) - chance;
    let b_ok = b_margin > 10.0 * sigma;

    // (c) raw 2x-grid evaluation: smaller drop than the sinusoidal baseline,
    // per-seed sign test plus the mean
    let pape_2x = acc("pape", 2, false);
    let sincos_2x = acc("nd_sincos", 2, false);
    let drops = |base: &[f64], wide: &[f64]| -> Vec<f64> {
        base.iter().zip(wide).map(|(b, w)| b - w).collect()
    };
    let pape_drops = drops(&pape_acc, &pape_2x);
    let sincos_drops = drops(&sincos_acc, &sincos_2x);
    let wins = pape_drops
        .iter()
        .zip(&sincos_drops)
        .filter(|(p, s)| p < s)
        .count();
    let c_ok = mean(&pape_drops) < mean(&sincos_drops) && wins >= 4;

    let elapsed = start.elapsed().as_secs_f64();
    let detail = format!(
        "chance {chance}; sigma {sigma:.4}; none mean {:.3} (|dev| {:.3} <= {:.3}); \
         pape mean {:.3} (margin {:.3} > {:.3}); drops pape {:.3} vs sincos {:.3}, sign {}/5; {:.0}s",
        mean(&none_acc),
        a_dev,
        3.0 * sigma,
        mean(&pape_acc),
        b_margin,
        10.0 * sigma,
        mean(&pape_drops),
        mean(&sincos_drops),
        wins,
        elapsed
    );
    report(
        11,
        "toy directional experiment over 5 seeds",
        a_ok && b_ok && c_ok && elapsed < 900.0,
        &detail,
    );
}

fn toy_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 42,
        encodings: vec![
            EncodingSpec::None,
            EncodingSpec::NdSincos { base: 10_000.0 },
            EncodingSpec::Pape {
                m: 4,
                ablation: None,
            },
        ],
        task: TaskConfig {
            grid: vec![5, 5],
            train_samples: 256,
            test_samples: 200,
        },
        trainer: TrainerConfig {
            steps: 1200,
            lr: 3e-4,
            warmup: 50,
            weight_decay: 0.05,
            decay_positional: false,
            batch: 16,
            seeds: 5,
        },
        out_dir: std::env::temp_dir().join(format!("pape-acceptance-{}", std::process::id())),
        ..Default::default()
    }
}

#[test]
fn criterion_12_ablation_structure() {
    require(
        12,
        "ablation switches produce the structurally expected biases",
        &["encodings.ablation_structure"],
    );
}

/// The reduction claim behind criterion 11's control arm: with the
/// quadratic coefficients saturated to zero and the direction map zero, the
/// model computes exactly what the no-encoding model computes, and the
/// saturation also zeroes the coefficient-map gradients, so training cannot
/// wake the terms back up — the two runs are the same trajectory.
#[test]
fn dead_positional_terms_reduce_to_the_no_encoding_model() {
    use pape_core::geometry::PositionSet;
    use pape_core::model::{ModelConfig, TransformerClassifier};
    use pape_core::rng::SeedRng;
    use pape_core::tape::Tape;

    let base = ModelConfig {
        layers: 1,
        heads: 2,
        d: 8,
        h: 4,
        mlp_hidden: 16,
        classes: 4,
        p: 2,
        encoding: EncodingSpec::None,
    };
    let mut with_dead_terms = base.clone();
    with_dead_terms.encoding = EncodingSpec::Pape {
        m: 2,
        ablation: None,
    };
    let plain = TransformerClassifier::<f64>::init(base, 3).unwrap();
    let mut dead = TransformerClassifier::<f64>::init(with_dead_terms, 3).unwrap();
    // dead regime: preactivations of the quadratic map at or below -30
    // (tokens are non-negative here, so a uniformly negative map saturates)
    for i in 0..dead.params.len() {
        let name = dead.params.entry(i).name.clone();
        if name.contains(".w_a") {
            *dead.params.value_mut(i) = pape_core::Array::full(dead.params.value(i).shape(), -50.0);
        }
    }
    let mut rng = SeedRng::new(4);
    let x = rng.array_normal(&[6, 8], 0.0, 1.0).map(f64::abs);
    let ps: PositionSet<f64> = PositionSet::grid(&[2, 3]).unwrap();
    let l0 = plain.logits(&x, &ps).unwrap();
    let l1 = dead.logits(&x, &ps).unwrap();
    assert!(
        l0.max_abs_diff(&l1) <= 1e-6,
        "dead positional terms should reproduce the no-encoding model"
    );

    // saturated softplus has zero slope: the dead terms stay dead
    let mut tape = Tape::new();
    let binds = dead.bind(&mut tape);
    let loss = dead
        .batch_loss(&mut tape, &binds, &[(&x, &ps, 1usize)])
        .unwrap();
    let grads = tape.backward(loss).unwrap();
    for i in 0..dead.params.len() {
        let name = dead.params.entry(i).name.clone();
        if name.contains(".w_a") {
            let g = grads.wrt(binds.var(i)).unwrap();
            assert_eq!(g.max_abs(), 0.0, "{name} gradient should be exactly zero");
        }
    }
}
