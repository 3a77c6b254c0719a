//! The property suite behind `pape verify`: every module-level invariant,
//! executed against seeded random instances, reporting one named outcome
//! (with the instance seed) and the worst observed deviation per property.

use pape_core::analysis::{decompose, head_z_score, top_tau_mask};
use pape_core::array::{softmax_rows, softplus_scalar, DenseArray};
use pape_core::attention::{
    attention_direct, attention_kernelized, multi_head_attention, AttentionConfig, AttentionPath,
    HeadEncoding, MhaParams,
};
use pape_core::encodings::{
    ablation_variant, count_positional_params, feature_map_scores, feature_width, nd_sincos_embed,
    pape_bias, pape_bias_terms, pape_coefficients, pape_feature_maps, pape_ri_bias, Ablation,
    AlphaKind, EncodingSpec, ModelShape, PapeParams, PapeRiParams,
};
use pape_core::fdiff::{finite_diff_grad, max_rel_error};
use pape_core::geometry::{interpolation_factor, PositionSet, RigidRotation};
use pape_core::model::{ModelConfig, TransformerClassifier};
use pape_core::rng::SeedRng;
use pape_core::tape::Tape;

use crate::alloc_meter;

type A = DenseArray<f64>;

#[derive(Clone, Debug)]
pub struct PropertyOutcome {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub skipped: bool,
    pub seed: u64,
    pub detail: String,
}

impl PropertyOutcome {
    fn pass(name: &str, seed: u64, max_deviation: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_deviation,
            tolerance,
            passed: max_deviation <= tolerance,
            skipped: false,
            seed,
            detail: String::new(),
        }
    }

    fn threshold_exceeds(name: &str, seed: u64, observed: f64, must_exceed: f64) -> Self {
        Self {
            name: name.into(),
            max_deviation: observed,
            tolerance: must_exceed,
            passed: observed > must_exceed,
            skipped: false,
            seed,
            detail: "pass requires deviation above tolerance".into(),
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// Known fault injections, used to demonstrate that the suite catches and
/// names violations.
pub const FAULTS: &[&str] = &["positive-a"];

pub fn run_property_suite(seed: u64, fault: Option<&str>) -> anyhow::Result<Vec<PropertyOutcome>> {
    if let Some(f) = fault {
        if !FAULTS.contains(&f) {
            anyhow::bail!("unknown fault '{f}'; known: {FAULTS:?}");
        }
    }
    let mut out = vec![gradient_fdiff(seed)];
    out.push(softmax_stochastic(seed));
    out.push(softplus_shape(seed));
    out.push(translate_roundtrip(seed));
    out.push(rotation_distance_preservation(seed));
    out.push(interpolation_range(seed));
    out.push(interpolation_factor_exact(seed));
    for spec in translation_invariant_specs() {
        out.push(translation_invariance(seed, &spec));
    }
    out.push(sincos_translation_failure(seed));
    out.push(rotation_invariance(
        seed,
        EncodingSpec::PapeRi {
            alpha: AlphaKind::TokenDerived,
        },
    ));
    out.push(rotation_invariance(seed, EncodingSpec::NdAlibi));
    out.push(pape_rotation_variance(seed));
    out.push(distance_decay(seed));
    out.push(directionality(seed));
    out.push(context_off_reduction(seed));
    out.push(feature_map_equivalence(seed));
    out.push(pape_ri_constrained(seed));
    out.push(head_widths(seed));
    out.push(param_counts(seed));
    out.push(coefficient_negativity(seed, fault == Some("positive-a")));
    out.push(ablation_structure(seed));
    out.push(cross_path_equivalence(seed));
    out.push(permutation_equivariance(seed));
    out.push(attention_gradients(seed));
    out.push(vanilla_reduction(seed));
    out.push(memory_contract(seed));
    out.push(decomposition_reconstruction(seed));
    out.push(z_score_oracle(seed));
    out.push(mask_minimality(seed));
    Ok(out)
}

fn translation_invariant_specs() -> Vec<EncodingSpec> {
    vec![
        EncodingSpec::Pape {
            m: 3,
            ablation: None,
        },
        EncodingSpec::PapeRi {
            alpha: AlphaKind::TokenDerived,
        },
        EncodingSpec::RopeAxial { base: 10_000.0 },
        EncodingSpec::RopeMixed { base: 10_000.0 },
        EncodingSpec::NdAlibi,
        EncodingSpec::Poly { degree: 2 },
    ]
}

/// Pre-softmax single-head score matrix under one encoding.
fn head_scores(enc: &HeadEncoding<f64>, q: &A, k: &A, x: &A, ps: &PositionSet<f64>) -> A {
    let (qr, kr) = enc.rotate(q, k, ps).unwrap();
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let mut logits = qr.matmul(&kr.transpose()).unwrap().scale(scale);
    if let Some(bias) = enc.bias(x, ps).unwrap() {
        logits = logits.add(&bias).unwrap();
    }
    logits
}

fn gradient_fdiff(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for trial in 0..50u64 {
        let mut rng = SeedRng::derive(seed, &format!("gradcheck-{trial}"));
        let rows = 1 + rng.usize_below(4);
        let cols = 1 + rng.usize_below(8);
        let mid = 1 + rng.usize_below(6);
        let x: A = rng.array_normal(&[rows, cols], 0.0, 1.0);
        let w1: A = rng.array_normal(&[cols, mid], 0.0, 0.8);
        let w2: A = rng.array_normal(&[mid, cols], 0.0, 0.8);
        let eval = |input: &A| -> (f64, Option<A>) {
            let mut tape = Tape::new();
            let xv = tape.param(input.clone());
            let w1v = tape.constant(w1.clone());
            let w2v = tape.constant(w2.clone());
            let lin = tape.matmul(xv, w1v);
            let act = tape.softplus(lin);
            let back = tape.matmul(act, w2v);
            let gate = tape.mul(back, xv);
            let soft = tape.softmax_rows(gate);
            let mixed = tape.mul(soft, back);
            let loss = tape.sum_all(mixed);
            let v = tape.value(loss).data()[0];
            let g = tape.backward(loss).unwrap().wrt(xv).unwrap();
            (v, Some(g))
        };
        let (_, analytic) = eval(&x);
        let numeric = finite_diff_grad(|p| Ok(eval(p).0), &x, 1e-5).unwrap();
        worst = worst.max(max_rel_error(&analytic.unwrap(), &numeric, 1e-2));
    }
    PropertyOutcome::pass("numeric.gradient_vs_finite_difference", seed, worst, 1e-6)
}

fn softmax_stochastic(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = SeedRng::derive(seed, &format!("softmax-{trial}"));
        let rows = 1 + rng.usize_below(6);
        let cols = 1 + rng.usize_below(8);
        let spread = if trial % 2 == 0 { 2_000.0 } else { 5.0 };
        let s: A = rng.array_uniform(&[rows, cols], -spread, spread);
        let y = softmax_rows(&s).unwrap();
        for i in 0..rows {
            let total: f64 = y.row(i).iter().sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    PropertyOutcome::pass("numeric.softmax_rows_stochastic", seed, worst, 1e-12)
}

fn softplus_shape(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    let mut prev_gap = f64::INFINITY;
    for x in [-30.0, -5.0, 0.0, 2.0, 10.0, 40.0, 100.0] {
        let y = softplus_scalar(x);
        if y <= 0.0 {
            worst = worst.max(1.0);
        }
        let gap = y - x;
        if gap > prev_gap + 1e-15 {
            worst = worst.max(gap - prev_gap);
        }
        prev_gap = gap;
    }
    PropertyOutcome::pass("numeric.softplus_positive_monotone", seed, worst, 0.0)
}

fn translate_roundtrip(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = SeedRng::derive(seed, &format!("translate-{trial}"));
        let n = 1 + rng.usize_below(12);
        let p = 1 + rng.usize_below(4);
        let ps = PositionSet::new(rng.array_uniform(&[n, p], -5.0, 5.0)).unwrap();
        let t: Vec<f64> = (0..p).map(|_| rng.uniform(-50.0, 50.0)).collect();
        let back = ps.translate(&t).unwrap();
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        let back = back.translate(&neg).unwrap();
        worst = worst.max(ps.positions().max_abs_diff(back.positions()));
    }
    PropertyOutcome::pass("geometry.translate_roundtrip", seed, worst, 1e-12)
}

fn rotation_distance_preservation(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    let mut trials = 0;
    for p in 1..=4usize {
        for t in 0..25u64 {
            let mut rng = SeedRng::derive(seed, &format!("rotdist-{p}-{t}"));
            let n = 2 + rng.usize_below(8);
            let ps = PositionSet::new(rng.array_uniform(&[n, p], -5.0, 5.0)).unwrap();
            let rot = RigidRotation::random(p, seed ^ (t * 131 + p as u64));
            let d0 = ps.pairwise_sq_dists().map(f64::sqrt);
            let d1 = ps.rotate(&rot).unwrap().pairwise_sq_dists().map(f64::sqrt);
            worst = worst.max(d0.max_abs_diff(&d1));
            trials += 1;
        }
    }
    PropertyOutcome::pass(
        "geometry.rotation_distance_preservation",
        seed,
        worst,
        1e-10,
    )
    .with_detail(format!("{trials} random (p, seed) draws"))
}

fn interpolation_range(seed: u64) -> PropertyOutcome {
    let patch = 16;
    let mut worst = 0.0f64;
    for (s, k) in [(8usize, 2usize), (8, 4), (14, 2), (6, 8)] {
        let eval: PositionSet<f64> = PositionSet::grid(&[k * s]).unwrap();
        let scaled = eval.interpolate(s * patch, k * s * patch).unwrap();
        let max = scaled
            .positions()
            .data()
            .iter()
            .cloned()
            .fold(f64::MIN, f64::max);
        worst = worst.max((max - s as f64).abs());
    }
    PropertyOutcome::pass("geometry.interpolation_range", seed, worst, 1e-12)
}

fn interpolation_factor_exact(seed: u64) -> PropertyOutcome {
    let mut worst = (interpolation_factor(224, 448).unwrap() - 0.5).abs();
    worst = worst.max((interpolation_factor(224, 1024).unwrap() - 0.21875).abs());
    worst = worst.max((interpolation_factor(224, 224).unwrap() - 1.0).abs());
    PropertyOutcome::pass("harness.interpolation_factor_exact", seed, worst, 0.0)
}

fn translation_invariance(seed: u64, spec: &EncodingSpec) -> PropertyOutcome {
    let name = format!("encodings.translation_invariance.{}", spec.kind_name());
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = SeedRng::derive(seed, &format!("ti-{}-{trial}", spec.kind_name()));
        let (h, d, p) = (8, 6, 2);
        let n = 2 + rng.usize_below(10);
        let enc = HeadEncoding::init_random(spec, h, d, p, 0, 1, &mut rng).unwrap();
        let x: A = rng.array_normal(&[n, d], 0.0, 1.0);
        let q: A = rng.array_normal(&[n, h], 0.0, 1.0);
        let k: A = rng.array_normal(&[n, h], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, p], -4.0, 4.0)).unwrap();
        let base = head_scores(&enc, &q, &k, &x, &ps);
        let t = [
            rng.uniform::<f64>(-30.0, 30.0),
            rng.uniform::<f64>(-30.0, 30.0),
        ];
        let shifted = ps.translate(&t).unwrap();
        let moved = head_scores(&enc, &q, &k, &x, &shifted);
        worst = worst.max(base.max_abs_diff(&moved));
    }
    PropertyOutcome::pass(&name, seed, worst, 1e-8)
}

fn sincos_translation_failure(seed: u64) -> PropertyOutcome {
    let ps: PositionSet<f64> = PositionSet::grid(&[3, 3]).unwrap();
    let shifted = ps.translate(&[5.0, 5.0]).unwrap();
    let e0 = nd_sincos_embed(&ps, 8, 10_000.0).unwrap();
    let e1 = nd_sincos_embed(&shifted, 8, 10_000.0).unwrap();
    PropertyOutcome::threshold_exceeds(
        "encodings.sincos_translation_failure",
        seed,
        e0.max_abs_diff(&e1),
        1e-3,
    )
}

fn rotation_invariance(seed: u64, spec: EncodingSpec) -> PropertyOutcome {
    let name = format!("encodings.rotation_invariance.{}", spec.kind_name());
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let p = if trial % 2 == 0 { 2 } else { 3 };
        let mut rng = SeedRng::derive(seed, &format!("ri-{}-{trial}", spec.kind_name()));
        let (h, d) = (8, 6);
        let n = 2 + rng.usize_below(8);
        let enc = HeadEncoding::init_random(&spec, h, d, p, 0, 1, &mut rng).unwrap();
        let x: A = rng.array_normal(&[n, d], 0.0, 1.0);
        let q: A = rng.array_normal(&[n, h], 0.0, 1.0);
        let k: A = rng.array_normal(&[n, h], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, p], -3.0, 3.0)).unwrap();
        let base = head_scores(&enc, &q, &k, &x, &ps);
        let rot = RigidRotation::random(p, seed ^ (trial * 277 + 5));
        let turned = head_scores(&enc, &q, &k, &x, &ps.rotate(&rot).unwrap());
        worst = worst.max(base.max_abs_diff(&turned));
    }
    PropertyOutcome::pass(&name, seed, worst, 1e-8)
}

fn pape_rotation_variance(seed: u64) -> PropertyOutcome {
    // a direction term must break rotation invariance somewhere
    let mut rng = SeedRng::derive(seed, "pape-rot-variance");
    let (n, d, m, p) = (8, 5, 3, 2);
    let x: A = rng.array_normal(&[n, d], 0.0, 1.0);
    let ps = PositionSet::new(rng.array_uniform(&[n, p], -3.0, 3.0)).unwrap();
    let params = PapeParams::new(
        rng.array_normal(&[m, p], 0.0, 0.8),
        rng.array_normal(&[m, d], 0.0, 0.8),
        rng.array_normal(&[m, d], 0.0, 0.8),
    )
    .unwrap();
    let coef = pape_coefficients(&x, &params).unwrap();
    assert!(coef.b().max_abs() > 0.0);
    let base = pape_bias(&coef, &ps, &params.w_p).unwrap();
    let mut max_dev = 0.0f64;
    for t in 0..20 {
        let rot = RigidRotation::random(p, seed ^ (t * 13 + 1));
        let turned = pape_bias(&coef, &ps.rotate(&rot).unwrap(), &params.w_p).unwrap();
        max_dev = max_dev.max(base.max_abs_diff(&turned));
    }
    PropertyOutcome::threshold_exceeds("encodings.pape_rotation_variance", seed, max_dev, 1e-3)
}

fn distance_decay(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for trial in 0..30u64 {
        let mut rng = SeedRng::derive(seed, &format!("decay-{trial}"));
        let (d, m, p) = (5, 3, 2);
        let x: A = rng.array_normal(&[2, d], 0.0, 1.0);
        let params = PapeParams::new(
            rng.array_normal(&[m, p], 0.0, 0.8),
            rng.array_normal(&[m, d], 0.0, 0.8),
            A::zeros(&[m, d]),
        )
        .unwrap();
        let coef = pape_coefficients(&x, &params).unwrap();
        let u = [rng.uniform::<f64>(-1.0, 1.0), rng.uniform::<f64>(-1.0, 1.0)];
        let mut prev = f64::INFINITY;
        for step in 0..12 {
            let t = step as f64 * 0.5;
            let pos = A::from_vec(&[2, 2], vec![0.0, 0.0, t * u[0], t * u[1]]).unwrap();
            let ps = PositionSet::new(pos).unwrap();
            let bias = pape_bias(&coef, &ps, &params.w_p).unwrap();
            let v = bias.at(0, 1);
            if v > prev {
                worst = worst.max(v - prev);
            }
            prev = v;
        }
    }
    PropertyOutcome::pass("encodings.distance_decay_along_rays", seed, worst, 1e-12)
}

fn directionality(seed: u64) -> PropertyOutcome {
    let mut rng = SeedRng::derive(seed, "directionality");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let b = [rng.uniform::<f64>(-2.0, 2.0), rng.uniform::<f64>(-2.0, 2.0)];
        let norm = (b[0] * b[0] + b[1] * b[1]).sqrt();
        if norm < 1e-3 {
            continue;
        }
        let radius = rng.uniform::<f64>(0.5, 4.0);
        let expect = radius * norm;
        let mut best = f64::NEG_INFINITY;
        for k in 0..720 {
            let th = k as f64 * std::f64::consts::PI / 360.0;
            let dr = [radius * th.cos(), radius * th.sin()];
            best = best.max(b[0] * dr[0] + b[1] * dr[1]);
        }
        worst = worst.max((best - expect).abs() / expect);
    }
    PropertyOutcome::pass("encodings.directionality_cosine", seed, worst, 1e-4)
}

fn context_off_reduction(seed: u64) -> PropertyOutcome {
    let mut rng = SeedRng::derive(seed, "context-off");
    let (n, d, h, m, p) = (9, 6, 8, 3, 2);
    let x = A::full(&[n, d], 1.0);
    let q: A = rng.array_normal(&[n, h], 0.0, 1.0);
    let k: A = rng.array_normal(&[n, h], 0.0, 1.0);
    let v: A = rng.array_normal(&[n, h], 0.0, 1.0);
    let ps = PositionSet::new(rng.array_uniform(&[n, p], -3.0, 3.0)).unwrap();
    let params = PapeParams::new(
        rng.array_normal(&[m, p], 0.0, 0.8),
        A::full(&[m, d], -35.0 / d as f64),
        A::zeros(&[m, d]),
    )
    .unwrap();
    let coef = pape_coefficients(&x, &params).unwrap();
    let bias = pape_bias(&coef, &ps, &params.w_p).unwrap();
    let with_bias = attention_direct(&q, &k, &v, Some(&bias)).unwrap();
    let vanilla = attention_direct(&q, &k, &v, None).unwrap();
    PropertyOutcome::pass(
        "encodings.context_off_reduction",
        seed,
        with_bias.output.max_abs_diff(&vanilla.output),
        1e-6,
    )
}

/// Standalone entry for the exact-identity check, so callers can time it.
pub fn feature_map_equivalence(seed: u64) -> PropertyOutcome {
    let mut rng = SeedRng::derive(seed, "feature-map");
    let mut worst = 0.0f64;
    for _ in 0..200u64 {
        let n = 1 + rng.usize_below(32);
        let h = 1 + rng.usize_below(64);
        let p = 1 + rng.usize_below(3);
        let m = 1 + rng.usize_below(8);
        let d = 1 + rng.usize_below(16);
        let x: A = rng.array_normal(&[n, d], 0.0, 1.0);
        let q: A = rng.array_normal(&[n, h], 0.0, 1.0);
        let k: A = rng.array_normal(&[n, h], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, p], -4.0, 4.0)).unwrap();
        let params = PapeParams::new(
            rng.array_normal(&[m, p], 0.0, 0.7),
            rng.array_normal(&[m, d], 0.0, 0.7),
            rng.array_normal(&[m, d], 0.0, 0.7),
        )
        .unwrap();
        let coef = pape_coefficients(&x, &params).unwrap();
        let bias = pape_bias(&coef, &ps, &params.w_p).unwrap();
        let direct = q.matmul(&k.transpose()).unwrap().add(&bias).unwrap();
        let (qp, kp) = pape_feature_maps(&q, &k, &coef, &ps, &params.w_p, 1.0).unwrap();
        let kernel = feature_map_scores(&qp, &kp).unwrap();
        worst = worst.max(kernel.max_abs_diff(&direct));
    }
    PropertyOutcome::pass("encodings.feature_map_equivalence", seed, worst, 1e-10)
        .with_detail("200 random configurations, n<=32 h<=64 p<=3 m<=8")
}

fn pape_ri_constrained(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for trial in 0..30u64 {
        let mut rng = SeedRng::derive(seed, &format!("ri-constrained-{trial}"));
        let p = 2 + (trial % 2) as usize;
        let n = 3 + rng.usize_below(6);
        let d = 4;
        let x: A = rng.array_normal(&[n, d], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, p], -3.0, 3.0)).unwrap();
        let params = PapeRiParams::token_derived(
            rng.uniform::<f64>(0.2, 1.4),
            rng.array_normal(&[1, d], 0.0, 1.0),
        )
        .unwrap();
        let ri = pape_ri_bias(&x, &ps, &params).unwrap();
        let (coef, full) = pape_core::encodings::constrained_pape(&x, p, &params).unwrap();
        let general = pape_bias(&coef, &ps, &full.w_p).unwrap();
        worst = worst.max(ri.max_abs_diff(&general));
    }
    PropertyOutcome::pass(
        "encodings.pape_ri_equals_constrained_pape",
        seed,
        worst,
        1e-12,
    )
}

fn head_widths(seed: u64) -> PropertyOutcome {
    let cases = [(64usize, 50usize, 216usize), (32, 2, 40), (16, 8, 42)];
    let mut worst = 0.0f64;
    for (h, m, expect) in cases {
        if feature_width(h, m) != expect {
            worst = 1.0;
        }
    }
    // also verify a constructed map really has that width
    let mut rng = SeedRng::derive(seed, "width");
    let (n, d, p) = (3, 4, 2);
    let x: A = rng.array_normal(&[n, d], 0.0, 1.0);
    let q: A = rng.array_normal(&[n, 16], 0.0, 1.0);
    let k: A = rng.array_normal(&[n, 16], 0.0, 1.0);
    let ps = PositionSet::new(rng.array_uniform(&[n, p], -1.0, 1.0)).unwrap();
    let params = PapeParams::new(
        rng.array_normal(&[8, p], 0.0, 0.5),
        rng.array_normal(&[8, d], 0.0, 0.5),
        rng.array_normal(&[8, d], 0.0, 0.5),
    )
    .unwrap();
    let coef = pape_coefficients(&x, &params).unwrap();
    let (qp, _) = pape_feature_maps(&q, &k, &coef, &ps, &params.w_p, 1.0).unwrap();
    if qp.cols() != 42 {
        worst = 1.0;
    }
    PropertyOutcome::pass("encodings.head_width_overhead", seed, worst, 0.0)
}

/// Published reference totals for the audit table, in millions.
pub const PUBLISHED_PAPE_COUNTS: [(usize, f64); 6] = [
    (2, 0.5e6),
    (4, 0.9e6),
    (8, 1.8e6),
    (16, 3.6e6),
    (32, 7.1e6),
    (64, 13.6e6),
];

pub struct ParamAuditRow {
    pub m: usize,
    pub exact: u64,
    pub published: f64,
    pub rel_diff: f64,
    pub within_5pct: bool,
    /// Flagged rows are reported as discrepancies, never hidden.
    pub flagged_discrepancy: bool,
}

pub fn pape_param_audit() -> Vec<ParamAuditRow> {
    let shape = ModelShape::vit_b(2);
    PUBLISHED_PAPE_COUNTS
        .iter()
        .map(|&(m, published)| {
            let exact = count_positional_params(&EncodingSpec::Pape { m, ablation: None }, &shape);
            let rel_diff = (exact as f64 - published).abs() / published;
            ParamAuditRow {
                m,
                exact,
                published,
                rel_diff,
                within_5pct: rel_diff <= 0.05,
                // the published 0.5M / 13.6M totals do not match any sharing
                // layout derived here; reported exactly, gated on the others
                flagged_discrepancy: m == 2 || m == 64,
            }
        })
        .collect()
}

fn param_counts(seed: u64) -> PropertyOutcome {
    let shape = ModelShape::vit_b(2);
    let mut worst = 0.0f64;
    let mixed = count_positional_params(&EncodingSpec::RopeMixed { base: 10_000.0 }, &shape);
    if mixed != 18_432 {
        worst = 1.0;
    }
    for spec in [
        EncodingSpec::NdSincos { base: 10_000.0 },
        EncodingSpec::RopeAxial { base: 10_000.0 },
        EncodingSpec::NdAlibi,
    ] {
        if count_positional_params(&spec, &shape) != 0 {
            worst = 1.0;
        }
    }
    for row in pape_param_audit() {
        if matches!(row.m, 4 | 8 | 16 | 32) && !row.within_5pct {
            worst = worst.max(row.rel_diff);
        }
        if row.flagged_discrepancy && row.m == 2 && row.rel_diff <= 0.05 {
            // the known mismatch disappearing would itself be surprising
            worst = worst.max(1.0);
        }
    }
    PropertyOutcome::pass("encodings.positional_param_counts", seed, worst, 0.05)
        .with_detail("m in {2, 64} reported as discrepancies in the audit table")
}

fn coefficient_negativity(seed: u64, inject_positive_a: bool) -> PropertyOutcome {
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..50u64 {
        let mut rng = SeedRng::derive(seed, &format!("coef-{trial}"));
        let (n, d, m, p) = (6, 5, 4, 2);
        let x: A = rng.array_normal(&[n, d], 0.0, 1.5);
        let params = PapeParams::new(
            rng.array_normal(&[m, p], 0.0, 0.8),
            rng.array_normal(&[m, d], 0.0, 0.8),
            rng.array_normal(&[m, d], 0.0, 0.8),
        )
        .unwrap();
        let coef = pape_coefficients(&x, &params).unwrap();
        let mut a = coef.a().clone();
        if inject_positive_a {
            a = a.neg(); // deliberately break the sign convention
        }
        let max_entry = a.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(max_entry);
    }
    // pass requires every coefficient strictly negative
    PropertyOutcome {
        name: "encodings.coefficient_negativity".into(),
        max_deviation: worst,
        tolerance: 0.0,
        passed: worst < 0.0,
        skipped: false,
        seed,
        detail: if inject_positive_a {
            "fault injection: coefficients negated".into()
        } else {
            String::new()
        },
    }
}

fn ablation_structure(seed: u64) -> PropertyOutcome {
    let mut rng = SeedRng::derive(seed, "ablation");
    let (n, d, h, m, p) = (7, 6, 8, 3, 2);
    let x: A = rng.array_normal(&[n, d], 0.0, 1.0);
    let x_other: A = rng.array_normal(&[n, d], 0.0, 1.0);
    let ps = PositionSet::new(rng.array_uniform(&[n, p], -2.0, 2.0)).unwrap();
    let doubled = PositionSet::new(ps.positions().scale(2.0)).unwrap();
    let base_spec = EncodingSpec::Pape { m, ablation: None };
    let mut worst = 0.0f64;
    let mut detail = String::new();

    for switch in Ablation::ALL {
        let spec = ablation_variant(&base_spec, switch).unwrap();
        let mut enc_rng = SeedRng::derive(seed, &format!("ablation-enc-{}", switch.name()));
        let enc = HeadEncoding::init_random(&spec, h, d, p, 0, 1, &mut enc_rng).unwrap();
        let bias = enc.bias(&x, &ps).unwrap().unwrap();
        let bias2 = enc.bias(&x, &doubled).unwrap().unwrap();
        match switch {
            Ablation::RemoveQuadratic => {
                // purely linear in the displacement: doubling positions
                // doubles the bias
                let dev = bias2.max_abs_diff(&bias.scale(2.0));
                worst = worst.max(dev);
                // and the remaining term matches the literal direction oracle
                let (a, b) = enc.pape_coefficient_arrays(&x).unwrap();
                if a.is_some() {
                    worst = worst.max(1.0);
                }
                let b = b.unwrap();
                if let HeadEncoding::Pape { params, .. } = &enc {
                    let oracle = pape_bias_terms(None, Some(&b), &ps, &params.w_p).unwrap();
                    worst = worst.max(bias.max_abs_diff(&oracle));
                }
            }
            Ablation::RemoveLinear => {
                // purely quadratic: doubling positions quadruples the bias
                let dev = bias2.max_abs_diff(&bias.scale(4.0));
                worst = worst.max(dev);
                if bias.data().iter().any(|&v| v > 0.0) {
                    worst = worst.max(1.0);
                    detail = "quadratic-only bias went positive".into();
                }
            }
            Ablation::RemoveContext => {
                // identical bias for identical positions regardless of content
                let other = enc.bias(&x_other, &ps).unwrap().unwrap();
                worst = worst.max(bias.max_abs_diff(&other));
            }
            Ablation::RemoveSoftplus => {
                // coefficients come straight from the linear map
                let (a, _) = enc.pape_coefficient_arrays(&x).unwrap();
                let a = a.unwrap();
                if let HeadEncoding::Pape { params, .. } = &enc {
                    let raw = x.matmul(&params.w_a.transpose()).unwrap();
                    worst = worst.max(a.max_abs_diff(&raw));
                    if a.data().iter().all(|&v| v < 0.0) {
                        detail = "warning: no positive coefficient in sample".into();
                    }
                }
            }
            Ablation::RemoveProjection => {
                if spec.effective_m(p) != Some(p) {
                    worst = worst.max(1.0);
                }
                // identity projection: bias equals evaluation with W_p = I
                let (a, b) = enc.pape_coefficient_arrays(&x).unwrap();
                let oracle = pape_bias_terms(a.as_ref(), b.as_ref(), &ps, &A::eye(p)).unwrap();
                worst = worst.max(bias.max_abs_diff(&oracle));
            }
        }
        // diagonals vanish under every switch
        for i in 0..n {
            worst = worst.max(bias.at(i, i).abs());
        }
    }
    PropertyOutcome::pass("encodings.ablation_structure", seed, worst, 1e-10).with_detail(detail)
}

fn cross_path_equivalence(seed: u64) -> PropertyOutcome {
    let specs = [
        EncodingSpec::None,
        EncodingSpec::Pape {
            m: 3,
            ablation: None,
        },
        EncodingSpec::PapeRi {
            alpha: AlphaKind::TokenDerived,
        },
        EncodingSpec::NdSincos { base: 10_000.0 },
        EncodingSpec::RopeAxial { base: 10_000.0 },
        EncodingSpec::RopeMixed { base: 10_000.0 },
        EncodingSpec::Poly { degree: 2 },
    ];
    let mut worst = 0.0f64;
    let mut trials = 0;
    'outer: for round in 0..15u64 {
        for (si, spec) in specs.iter().enumerate() {
            if trials >= 100 {
                break 'outer;
            }
            let mut rng = SeedRng::derive(seed, &format!("xpath-{round}-{si}"));
            let n = 1 + rng.usize_below(64);
            let config_d = AttentionConfig::new(2, 8, spec.clone(), AttentionPath::Direct);
            let mut config_k = config_d.clone();
            config_k.path = AttentionPath::Kernelized;
            config_k.tile = 1 + rng.usize_below(70);
            let params =
                MhaParams::init_random(&config_d, 2, seed ^ (round * 97 + si as u64)).unwrap();
            let x: A = rng.array_normal(&[n, config_d.d], 0.0, 1.0);
            let ps = PositionSet::new(rng.array_uniform(&[n, 2], -3.0, 3.0)).unwrap();
            let direct = multi_head_attention(&x, &ps, &params, &config_d).unwrap();
            let streamed = multi_head_attention(&x, &ps, &params, &config_k).unwrap();
            worst = worst.max(direct.max_abs_diff(&streamed));
            trials += 1;
        }
    }
    PropertyOutcome::pass("attention.cross_path_equivalence", seed, worst, 1e-8)
        .with_detail(format!("{trials} random configurations, n in 1..=64"))
}

fn permutation_equivariance(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let mut rng = SeedRng::derive(seed, &format!("perm-{trial}"));
        let n = 2 + rng.usize_below(8);
        let config = AttentionConfig::new(
            2,
            6,
            EncodingSpec::Pape {
                m: 2,
                ablation: None,
            },
            AttentionPath::Direct,
        );
        let params = MhaParams::init_random(&config, 2, seed ^ trial).unwrap();
        let x: A = rng.array_normal(&[n, config.d], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, 2], -2.0, 2.0)).unwrap();
        let out = multi_head_attention(&x, &ps, &params, &config).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let xp = A::from_fn(&[n, config.d], |i| x.at(perm[i / config.d], i % config.d));
        let pp = PositionSet::new(A::from_fn(&[n, 2], |i| ps.row(perm[i / 2])[i % 2])).unwrap();
        let outp = multi_head_attention(&xp, &pp, &params, &config).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for j in 0..config.d {
                worst = worst.max((outp.at(i, j) - out.at(src, j)).abs());
            }
        }
    }
    PropertyOutcome::pass("attention.permutation_equivariance", seed, worst, 1e-12)
}

fn attention_gradients(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    let mut largest_gradient = 0.0f64;
    for trial in 0..20u64 {
        let mut rng = SeedRng::derive(seed, &format!("attgrad-{trial}"));
        let heads = 2;
        let h = 1 + rng.usize_below(8).min(7);
        let d = heads * h;
        let m = 1 + rng.usize_below(3);
        let n = 1 + rng.usize_below(8);
        let config = ModelConfig {
            layers: 1,
            heads,
            d,
            h,
            mlp_hidden: 8,
            classes: 2,
            p: 2,
            encoding: EncodingSpec::Pape { m, ablation: None },
        };
        let mut model = TransformerClassifier::<f64>::init(config, seed ^ trial).unwrap();
        // perturb every table off its init: the zero-initialized classifier
        // head would otherwise block all upstream gradients and make the
        // comparison vacuous
        for i in 0..model.params.len() {
            let noise = rng.array_normal(model.params.value(i).shape(), 0.0, 0.3);
            *model.params.value_mut(i) = model.params.value(i).add(&noise).unwrap();
        }
        let x: A = rng.array_normal(&[n, d], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, 2], -2.0, 2.0)).unwrap();
        let mut tape = Tape::new();
        let binds = model.bind(&mut tape);
        let loss = model
            .batch_loss(&mut tape, &binds, &[(&x, &ps, 0usize)])
            .unwrap();
        let grads = tape.backward(loss).unwrap();
        for idx in 0..model.params.len() {
            let name = &model.params.entry(idx).name;
            let interesting = name.contains("w_q")
                || name.contains("w_k")
                || name.contains("w_v")
                || name.starts_with("pos.");
            if !interesting {
                continue;
            }
            let analytic = grads.wrt(binds.var(idx)).unwrap();
            largest_gradient = largest_gradient.max(analytic.max_abs());
            let base = model.params.value(idx).clone();
            let numeric = finite_diff_grad(
                |probe| {
                    let mut tape = Tape::new();
                    let mut vars = Vec::new();
                    for i in 0..model.params.len() {
                        let v = if i == idx {
                            probe.clone()
                        } else {
                            model.params.value(i).clone()
                        };
                        vars.push(tape.param(v));
                    }
                    let binds = pape_core::model::Bindings::from_vars(vars);
                    let loss = model
                        .batch_loss(&mut tape, &binds, &[(&x, &ps, 0usize)])
                        .unwrap();
                    Ok(tape.value(loss).data()[0])
                },
                &base,
                1e-5,
            )
            .unwrap();
            worst = worst.max(max_rel_error(&analytic, &numeric, 1e-2));
        }
    }
    let mut outcome = PropertyOutcome::pass("attention.parameter_gradients", seed, worst, 1e-4)
        .with_detail(format!(
            "20 instances, n<=8 d<=16 m<=3; largest analytic gradient {largest_gradient:.3e}"
        ));
    if largest_gradient == 0.0 {
        outcome.passed = false;
        outcome.detail = "vacuous: every checked gradient was zero".into();
    }
    outcome
}

fn vanilla_reduction(seed: u64) -> PropertyOutcome {
    let mut rng = SeedRng::derive(seed, "vanilla-reduction");
    let n = 6;
    let config = AttentionConfig::new(
        1,
        8,
        EncodingSpec::Pape {
            m: 2,
            ablation: None,
        },
        AttentionPath::Direct,
    );
    let mut params = MhaParams::init_random(&config, 2, seed).unwrap();
    let x = A::ones(&[n, config.d]).scale(0.5);
    let w_a = A::full(&[2, config.d], -40.0 / (0.5 * config.d as f64));
    let w_b = A::zeros(&[2, config.d]);
    let w_p = rng.array_normal(&[2, 2], 0.0, 1.0);
    if let HeadEncoding::Pape { params: p, .. } = &mut params.heads[0] {
        *p = PapeParams::new(w_p, w_a, w_b).unwrap();
    }
    let ps: PositionSet<f64> = PositionSet::grid(&[2, 3]).unwrap();
    let with_enc = multi_head_attention(&x, &ps, &params, &config).unwrap();
    let mut vanilla_cfg = config.clone();
    vanilla_cfg.encoding = EncodingSpec::None;
    let mut vanilla_params = params.clone();
    vanilla_params.heads = vec![HeadEncoding::None];
    let vanilla = multi_head_attention(&x, &ps, &vanilla_params, &vanilla_cfg).unwrap();
    PropertyOutcome::pass(
        "attention.vanilla_reduction",
        seed,
        with_enc.max_abs_diff(&vanilla),
        1e-6,
    )
}

/// One streaming-path measurement: peak transient bytes and deviation from
/// the direct path at a given n.
pub struct MemoryPoint {
    pub n: usize,
    pub peak_bytes: usize,
    pub deviation: f64,
}

/// Kernelized-path memory/correctness points at the contract sizes.
pub fn memory_contract_points(seed: u64, sizes: &[usize]) -> Vec<MemoryPoint> {
    let (h, m, p, d) = (16usize, 4usize, 2usize, 6usize);
    sizes
        .iter()
        .map(|&n| {
            let mut rng = SeedRng::derive(seed, &format!("memory-{n}"));
            let x: A = rng.array_normal(&[n, d], 0.0, 1.0);
            let q: A = rng.array_normal(&[n, h], 0.0, 1.0);
            let k: A = rng.array_normal(&[n, h], 0.0, 1.0);
            let v: A = rng.array_normal(&[n, h], 0.0, 1.0);
            let ps = PositionSet::new(rng.array_uniform(&[n, p], -4.0, 4.0)).unwrap();
            let params = PapeParams::new(
                rng.array_normal(&[m, p], 0.0, 0.6),
                rng.array_normal(&[m, d], 0.0, 0.6),
                rng.array_normal(&[m, d], 0.0, 0.6),
            )
            .unwrap();
            let coef = pape_coefficients(&x, &params).unwrap();
            let scale = 1.0 / (h as f64).sqrt();
            let (qp, kp) = pape_feature_maps(&q, &k, &coef, &ps, &params.w_p, scale).unwrap();
            let (out, peak_bytes) =
                alloc_meter::measure_peak(|| attention_kernelized(&qp, &kp, &v, 64).unwrap());
            let bias = pape_bias(&coef, &ps, &params.w_p).unwrap();
            let direct = attention_direct(&q, &k, &v, Some(&bias)).unwrap();
            MemoryPoint {
                n,
                peak_bytes,
                deviation: direct.output.max_abs_diff(&out.output),
            }
        })
        .collect()
}

fn memory_contract(seed: u64) -> PropertyOutcome {
    if !alloc_meter::is_active() {
        return PropertyOutcome {
            name: "attention.memory_contract".into(),
            max_deviation: 0.0,
            tolerance: 4.5,
            passed: false,
            skipped: true,
            seed,
            detail: "counting allocator not registered in this binary".into(),
        };
    }
    let points = memory_contract_points(seed, &[64, 256, 1024]);
    let mut worst_ratio = 0.0f64;
    let mut worst_dev = 0.0f64;
    for w in points.windows(2) {
        let ratio = w[1].peak_bytes as f64 / w[0].peak_bytes.max(1) as f64;
        worst_ratio = worst_ratio.max(ratio);
    }
    for pt in &points {
        worst_dev = worst_dev.max(pt.deviation);
    }
    let passed = worst_ratio <= 4.5 && worst_dev <= 1e-8;
    PropertyOutcome {
        name: "attention.memory_contract".into(),
        max_deviation: worst_ratio,
        tolerance: 4.5,
        passed,
        skipped: false,
        seed,
        detail: format!(
            "peaks {:?} bytes at n {:?}; max output deviation {:.3e}",
            points.iter().map(|p| p.peak_bytes).collect::<Vec<_>>(),
            points.iter().map(|p| p.n).collect::<Vec<_>>(),
            worst_dev
        ),
    }
}

fn random_decomposition(
    seed: u64,
    n: usize,
) -> (
    pape_core::analysis::AttentionDecomposition<f64>,
    A,
    A,
    PositionSet<f64>,
    PapeParams<f64>,
    pape_core::encodings::PapeCoefficients<f64>,
) {
    let mut rng = SeedRng::new(seed);
    let (d, h, m, p) = (5, 6, 3, 2);
    let x: A = rng.array_normal(&[n, d], 0.0, 1.0);
    let q: A = rng.array_normal(&[n, h], 0.0, 1.0);
    let k: A = rng.array_normal(&[n, h], 0.0, 1.0);
    let ps = PositionSet::new(rng.array_uniform(&[n, p], -2.0, 2.0)).unwrap();
    let params = PapeParams::new(
        rng.array_normal(&[m, p], 0.0, 0.6),
        rng.array_normal(&[m, d], 0.0, 0.6),
        rng.array_normal(&[m, d], 0.0, 0.6),
    )
    .unwrap();
    let coef = pape_coefficients(&x, &params).unwrap();
    let dec = decompose(&coef, &q, &k, &ps, &params.w_p).unwrap();
    (dec, q, k, ps, params, coef)
}

fn decomposition_reconstruction(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let n = 4 + (trial % 6) as usize;
        let (dec, q, k, ps, params, coef) = random_decomposition(seed ^ (trial * 17 + 3), n);
        let bias = pape_bias(&coef, &ps, &params.w_p).unwrap();
        let reference = attention_direct(&q, &k, &k, Some(&bias)).unwrap();
        worst = worst.max(dec.attn.max_abs_diff(reference.scores.as_ref().unwrap()));
    }
    PropertyOutcome::pass("analysis.decomposition_reconstruction", seed, worst, 1e-8)
        .with_detail("100 random instances")
}

fn z_score_oracle(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let n = 5 + (trial % 4) as usize;
        let (dec, ..) = random_decomposition(seed ^ (trial * 29 + 7), n);
        let z = head_z_score(&dec, 0.8).unwrap();
        // literal double loop
        let mask = top_tau_mask(&dec.attn, 0.8).unwrap();
        let mut acc = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            let mut c = 0usize;
            for j in 0..n {
                if mask.at(i, j) {
                    s += (dec.positional.at(i, j) - dec.semantic.at(i, j)) / dec.gamma.at(i, 0);
                    c += 1;
                }
            }
            acc += s / c as f64;
        }
        worst = worst.max((z.z - acc / n as f64).abs());
        // swapping the factors negates z exactly
        let swapped = head_z_score(&dec.swapped(), 0.8).unwrap();
        if z.z != -swapped.z {
            worst = worst.max(1.0);
        }
    }
    PropertyOutcome::pass("analysis.z_score_oracle", seed, worst, 1e-10)
}

fn mask_minimality(seed: u64) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let n = 4 + (trial % 6) as usize;
        let (dec, ..) = random_decomposition(seed ^ (trial * 41 + 11), n);
        let mask = top_tau_mask(&dec.attn, 0.8).unwrap();
        for i in 0..n {
            let selected: Vec<f64> = (0..n)
                .filter(|&j| mask.at(i, j))
                .map(|j| dec.attn.at(i, j))
                .collect();
            let total: f64 = selected.iter().sum();
            if total < 0.8 - 1e-12 {
                worst = worst.max(0.8 - total);
            }
            if selected.len() > 1 {
                let smallest = selected.iter().cloned().fold(f64::MAX, f64::min);
                if total - smallest >= 0.8 {
                    worst = worst.max(total - smallest - 0.8 + 1e-12);
                }
            }
        }
    }
    PropertyOutcome::pass("analysis.mask_minimality", seed, worst, 1e-12)
        .with_detail("100 random instances, all rows")
}
