//! Timing, memory, and parameter-count benchmark. Absolute times are
//! hardware-dependent and carry no pass/fail; what the suite pins down is
//! parameter counts (exact) and the streaming path's memory growth.

use std::time::Instant;

use anyhow::Result;

use pape_core::attention::{multi_head_attention, AttentionConfig, AttentionPath, MhaParams};
use pape_core::encodings::{count_positional_params, AlphaKind, EncodingSpec, ModelShape};
use pape_core::geometry::PositionSet;
use pape_core::rng::SeedRng;
use pape_core::scalar::Scalar;

use crate::alloc_meter;

pub struct BenchRow {
    pub encoding: String,
    pub m: usize,
    pub n: usize,
    pub path: &'static str,
    pub mean_time_s: f64,
    pub peak_extra_bytes: usize,
    pub pos_params: u64,
}

pub struct BenchPlan {
    pub m_list: Vec<usize>,
    pub n_list: Vec<usize>,
    /// Restrict to one execution path; both when None.
    pub path: Option<AttentionPath>,
    pub warmup: usize,
    pub reps: usize,
}

impl Default for BenchPlan {
    fn default() -> Self {
        Self {
            m_list: vec![2, 8, 50],
            n_list: vec![64, 256, 1024],
            path: None,
            warmup: 3,
            reps: 30,
        }
    }
}

fn bench_specs(m_list: &[usize]) -> Vec<(EncodingSpec, usize)> {
    let mut specs: Vec<(EncodingSpec, usize)> = vec![
        (EncodingSpec::NdSincos { base: 10_000.0 }, 0),
        (EncodingSpec::RopeAxial { base: 10_000.0 }, 0),
        (EncodingSpec::RopeMixed { base: 10_000.0 }, 0),
        (EncodingSpec::NdAlibi, 0),
        (
            EncodingSpec::PapeRi {
                alpha: AlphaKind::TokenDerived,
            },
            0,
        ),
    ];
    for &m in m_list {
        specs.push((EncodingSpec::Pape { m, ablation: None }, m));
    }
    specs
}

/// Run the full benchmark grid. `Scalar`-generic so `--float32` exercises
/// the single-precision build of the same code.
pub fn run_benchmark<T: Scalar>(seed: u64, plan: &BenchPlan) -> Result<Vec<BenchRow>> {
    assert!(
        plan.warmup >= 3 && plan.reps >= 30,
        "benchmark preconditions"
    );
    let shape = ModelShape::vit_b(2);
    let mut rows = Vec::new();
    for (spec, m) in bench_specs(&plan.m_list) {
        for &n in &plan.n_list {
            let grid = (n as f64).sqrt().ceil() as usize;
            for path in [AttentionPath::Direct, AttentionPath::Kernelized] {
                if plan.path.is_some_and(|p| p != path) {
                    continue;
                }
                if path == AttentionPath::Kernelized && matches!(spec, EncodingSpec::NdAlibi) {
                    continue;
                }
                let config = AttentionConfig::new(1, 64, spec.clone(), path);
                let params = MhaParams::<T>::init_random(&config, 2, seed)?;
                let mut rng = SeedRng::derive(seed, &format!("bench-{}-{}", spec.kind_name(), n));
                let x = rng.array_normal(&[n, config.d], 0.0, 1.0);
                let full: PositionSet<T> = PositionSet::grid(&[grid, grid])?;
                let ps = PositionSet::new(pape_core::array::DenseArray::from_fn(&[n, 2], |i| {
                    full.positions().data()[i]
                }))?;
                for _ in 0..plan.warmup {
                    let _ = multi_head_attention(&x, &ps, &params, &config)?;
                }
                let (_, peak) = alloc_meter::measure_peak(|| {
                    multi_head_attention(&x, &ps, &params, &config).unwrap()
                });
                let start = Instant::now();
                for _ in 0..plan.reps {
                    let _ = multi_head_attention(&x, &ps, &params, &config)?;
                }
                let mean = start.elapsed().as_secs_f64() / plan.reps as f64;
                rows.push(BenchRow {
                    encoding: spec.kind_name().to_string(),
                    m,
                    n,
                    path: match path {
                        AttentionPath::Direct => "direct",
                        AttentionPath::Kernelized => "kernelized",
                    },
                    mean_time_s: mean,
                    peak_extra_bytes: peak,
                    pos_params: count_positional_params(&spec, &shape),
                });
            }
        }
    }
    Ok(rows)
}
