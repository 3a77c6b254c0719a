//! Benchmark plumbing on a tiny grid: the table has the documented columns
//! and the parameter counts land in the pos_params column.

use pape_harness::bench::{run_benchmark, BenchPlan};

#[test]
fn small_benchmark_produces_counted_rows() {
    let plan = BenchPlan {
        m_list: vec![2],
        n_list: vec![8],
        path: None,
        warmup: 3,
        reps: 30,
    };
    let rows = run_benchmark::<f64>(3, &plan).unwrap();
    assert!(!rows.is_empty());
    for r in &rows {
        assert!(r.mean_time_s > 0.0);
        assert_eq!(r.n, 8);
    }
    let mixed = rows
        .iter()
        .find(|r| r.encoding == "rope_mixed")
        .expect("mixed rotary benched");
    assert_eq!(mixed.pos_params, 18_432);
    for zero in ["nd_sincos", "rope_axial", "nd_alibi"] {
        let row = rows.iter().find(|r| r.encoding == zero).unwrap();
        assert_eq!(
            row.pos_params, 0,
            "{zero} should have no positional parameters"
        );
    }
    let pape = rows
        .iter()
        .find(|r| r.encoding == "pape" && r.m == 2)
        .unwrap();
    assert_eq!(pape.pos_params, 442_944);
    // the distance bias only runs on the direct path
    assert!(rows
        .iter()
        .all(|r| !(r.encoding == "nd_alibi" && r.path == "kernelized")));
}

#[test]
fn float32_monomorphization_runs() {
    let plan = BenchPlan {
        m_list: vec![2],
        n_list: vec![8],
        path: Some(pape_core::attention::AttentionPath::Direct),
        warmup: 3,
        reps: 30,
    };
    let rows = run_benchmark::<f32>(3, &plan).unwrap();
    assert!(rows.iter().all(|r| r.mean_time_s.is_finite()));
}
