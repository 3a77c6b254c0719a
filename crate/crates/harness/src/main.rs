use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pape_harness::alloc_meter::CountingAllocator;
use pape_harness::config::ExperimentConfig;
use pape_harness::report::{fmt_acc, fmt_f64, write_csv, Manifest};
use pape_harness::{analyze, bench, extrapolate, train, verify};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

#[derive(Parser)]
#[command(
    name = "pape",
    about = "Position-encoding test bench: verification, benchmarks, toy training, extrapolation, head analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; defaults are used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every library invariant and write per-property deviations.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Deliberately break one invariant to demonstrate failure
        /// reporting (known faults: positive-a).
        #[arg(long)]
        inject_fault: Option<String>,
    },
    /// Timing / memory / parameter-count table.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Parabola counts to sweep.
        #[arg(long = "m", value_delimiter = ',')]
        m_list: Vec<usize>,
        /// Token counts to sweep.
        #[arg(long = "n", value_delimiter = ',')]
        n_list: Vec<usize>,
        /// Run the workloads in f32 instead of f64.
        #[arg(long)]
        float32: bool,
        /// Time only one execution path (direct or kernelized).
        #[arg(long, value_parser = ["direct", "kernelized"])]
        path: Option<String>,
    },
    /// Train the toy arrangement task for every configured encoding.
    Train {
        #[command(flatten)]
        common: Common,
        /// Restrict to one encoding kind from the config list.
        #[arg(long)]
        encoding: Option<String>,
        /// Override m for parabolic encodings in the config list.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Evaluate trained models on enlarged grids, raw and interpolated.
    Extrapolate {
        #[command(flatten)]
        common: Common,
        /// Grid enlargement factors to evaluate (factor 1 = training grid).
        #[arg(long = "factor", value_delimiter = ',', default_values_t = vec![1usize, 2])]
        factors: Vec<usize>,
        /// Restrict to one encoding kind.
        #[arg(long)]
        encoding: Option<String>,
        /// Also evaluate with position interpolation (on by default for
        /// factors above 1; this flag restricts output to interpolated rows).
        #[arg(long)]
        interpolate: bool,
    },
    /// Per-head positional/semantic z-scores of a trained checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `pape train` (parabolic encoding only).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cumulative-attention threshold for the key mask.
        #[arg(long, default_value_t = 0.8)]
        tau: f64,
        /// Evaluation samples to average over.
        #[arg(long, default_value_t = 16)]
        samples: usize,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out_dir) = &common.out_dir {
        config.out_dir = out_dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn filter_encodings(
    config: &mut ExperimentConfig,
    kind: &Option<String>,
    m: Option<usize>,
) -> Result<()> {
    if let Some(kind) = kind {
        config.encodings.retain(|e| e.kind_name() == kind);
        if config.encodings.is_empty() {
            anyhow::bail!("no configured encoding of kind '{kind}'");
        }
    }
    if let Some(m) = m {
        for enc in &mut config.encodings {
            if let pape_core::encodings::EncodingSpec::Pape { m: slot, .. } = enc {
                *slot = m;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Verify {
            common,
            inject_fault,
        } => {
            let config = load_config(&common)?;
            let outcomes = verify::run_property_suite(config.seed, inject_fault.as_deref())?;
            let mut rows = Vec::new();
            let mut all_passed = true;
            for o in &outcomes {
                let status = if o.skipped {
                    "SKIP"
                } else if o.passed {
                    "pass"
                } else {
                    all_passed = false;
                    "FAIL"
                };
                println!(
                    "{status:4}  {name:<48} max_dev {dev:>12.3e}  tol {tol:>9.1e}  seed {seed}{detail}",
                    name = o.name,
                    dev = o.max_deviation,
                    tol = o.tolerance,
                    seed = o.seed,
                    detail = if o.detail.is_empty() {
                        String::new()
                    } else {
                        format!("  ({})", o.detail)
                    }
                );
                rows.push(vec![
                    o.name.clone(),
                    fmt_f64(o.max_deviation),
                    fmt_f64(o.tolerance),
                    status.to_string(),
                    o.seed.to_string(),
                    o.detail.clone(),
                ]);
            }
            write_csv(
                &config.out_dir.join("verify.csv"),
                &[
                    "property",
                    "max_deviation",
                    "tolerance",
                    "status",
                    "seed",
                    "detail",
                ],
                &rows,
            )?;
            // parameter audit table alongside
            let audit: Vec<Vec<String>> = verify::pape_param_audit()
                .into_iter()
                .map(|r| {
                    vec![
                        r.m.to_string(),
                        r.exact.to_string(),
                        format!("{:.1}", r.published / 1e6),
                        fmt_f64(r.rel_diff),
                        r.within_5pct.to_string(),
                        r.flagged_discrepancy.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &config.out_dir.join("param_audit.csv"),
                &[
                    "m",
                    "exact_count",
                    "published_millions",
                    "rel_diff",
                    "within_5pct",
                    "flagged_discrepancy",
                ],
                &audit,
            )?;
            let mut manifest = Manifest::new("verify", config.hash(), config.seed);
            for o in &outcomes {
                manifest.record(&o.name, o.passed && !o.skipped);
            }
            manifest.write(&config.out_dir.join("verify_manifest.json"))?;
            if all_passed {
                println!("verify: all {} properties passed", outcomes.len());
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("verify: FAILURES present");
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Bench {
            common,
            m_list,
            n_list,
            float32,
            path,
        } => {
            let config = load_config(&common)?;
            let mut plan = bench::BenchPlan::default();
            if !m_list.is_empty() {
                plan.m_list = m_list;
            }
            if !n_list.is_empty() {
                plan.n_list = n_list;
            }
            plan.path = path.as_deref().map(|p| match p {
                "direct" => pape_core::attention::AttentionPath::Direct,
                _ => pape_core::attention::AttentionPath::Kernelized,
            });
            let rows = if float32 {
                bench::run_benchmark::<f32>(config.seed, &plan)?
            } else {
                bench::run_benchmark::<f64>(config.seed, &plan)?
            };
            let csv_rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.encoding.clone(),
                        r.m.to_string(),
                        r.n.to_string(),
                        r.path.to_string(),
                        fmt_f64(r.mean_time_s),
                        r.peak_extra_bytes.to_string(),
                        r.pos_params.to_string(),
                    ]
                })
                .collect();
            write_csv(
                &config.out_dir.join("bench.csv"),
                &[
                    "encoding",
                    "m",
                    "n",
                    "path",
                    "mean_time",
                    "peak_extra_mem",
                    "pos_params",
                ],
                &csv_rows,
            )?;
            println!(
                "bench: wrote {} rows to {} (dtype {})",
                rows.len(),
                config.out_dir.join("bench.csv").display(),
                if float32 { "f32" } else { "f64" }
            );
            let mut manifest = Manifest::new("bench", config.hash(), config.seed);
            manifest.record("bench", true);
            manifest.write(&config.out_dir.join("bench_manifest.json"))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            common,
            encoding,
            m,
        } => {
            let mut config = load_config(&common)?;
            filter_encodings(&mut config, &encoding, m)?;
            let results = train::run_toy_training(&config).context("toy training")?;
            let mut log_rows = Vec::new();
            let mut result_rows = Vec::new();
            for r in &results {
                for (step, loss) in &r.loss_curve {
                    log_rows.push(vec![
                        r.encoding.kind_name().to_string(),
                        r.seed.to_string(),
                        step.to_string(),
                        fmt_f64(*loss),
                    ]);
                }
                result_rows.push(vec![
                    r.encoding.kind_name().to_string(),
                    r.seed.to_string(),
                    fmt_f64(r.final_loss),
                    fmt_acc(r.test_accuracy),
                    r.shared_state_hash.clone(),
                ]);
                println!(
                    "train: {:<10} seed {} final_loss {:.4} test_acc {:.3}",
                    r.encoding.kind_name(),
                    r.seed,
                    r.final_loss,
                    r.test_accuracy
                );
            }
            write_csv(
                &config.out_dir.join("train_log.csv"),
                &["encoding", "seed", "step", "loss"],
                &log_rows,
            )?;
            write_csv(
                &config.out_dir.join("train_results.csv"),
                &[
                    "encoding",
                    "seed",
                    "final_loss",
                    "test_accuracy",
                    "shared_state_hash",
                ],
                &result_rows,
            )?;
            let mut manifest = Manifest::new("train", config.hash(), config.seed);
            manifest.record("train", true);
            manifest.write(&config.out_dir.join("train_manifest.json"))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Extrapolate {
            common,
            factors,
            encoding,
            interpolate,
        } => {
            let mut config = load_config(&common)?;
            filter_encodings(&mut config, &encoding, None)?;
            let outcome = extrapolate::run_extrapolation(&config, &factors)?;
            let rows: Vec<Vec<String>> = outcome
                .rows
                .iter()
                .filter(|r| !interpolate || r.interpolated || r.grid_factor == 1)
                .map(|r| {
                    vec![
                        r.encoding.clone(),
                        r.seed.to_string(),
                        r.grid_factor.to_string(),
                        r.interpolated.to_string(),
                        fmt_acc(r.accuracy),
                        fmt_f64(r.applied_factor),
                    ]
                })
                .collect();
            write_csv(
                &config.out_dir.join("extrapolation.csv"),
                &[
                    "encoding",
                    "seed",
                    "grid_factor",
                    "interpolated",
                    "accuracy",
                    "applied_factor",
                ],
                &rows,
            )?;
            println!(
                "extrapolate: wrote {} rows to {}",
                rows.len(),
                config.out_dir.join("extrapolation.csv").display()
            );
            let mut manifest = Manifest::new("extrapolate", config.hash(), config.seed);
            manifest.record("extrapolate", true);
            manifest.write(&config.out_dir.join("extrapolation_manifest.json"))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze {
            common,
            checkpoint,
            tau,
            samples,
        } => {
            let config = load_config(&common)?;
            let model = train::load_checkpoint(&checkpoint)?;
            let rows = analyze::analyze_model(&model, &config, tau, samples)?;
            let csv_rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        r.layer.to_string(),
                        r.head.to_string(),
                        fmt_f64(r.z),
                        fmt_f64(r.mask_fraction),
                        fmt_f64(r.z_global),
                        fmt_f64(r.z_unmasked),
                    ]
                })
                .collect();
            write_csv(
                &config.out_dir.join("analysis.csv"),
                &[
                    "layer",
                    "head",
                    "z",
                    "mask_fraction",
                    "z_global",
                    "z_unmasked",
                ],
                &csv_rows,
            )?;
            for r in &rows {
                println!(
                    "analyze: layer {} head {} z {:+.4e} (mask {:.2})",
                    r.layer, r.head, r.z, r.mask_fraction
                );
            }
            let mut manifest = Manifest::new("analyze", config.hash(), config.seed);
            manifest.record("analyze", true);
            manifest.write(&config.out_dir.join("analysis_manifest.json"))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
