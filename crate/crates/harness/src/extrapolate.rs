//! Resolution extrapolation: train on the configured grid, evaluate frozen
//! models on enlarged grids, with positions either raw or rescaled by the
//! train/eval resolution ratio. The rescaling code path is shared by every
//! encoding, so interpolation cannot silently differ between them.

use anyhow::Result;
use rayon::prelude::*;

use pape_core::geometry::{interpolation_factor, PositionSet};

use crate::config::ExperimentConfig;
use crate::task;
use crate::train::{self, TrainResult};

pub const PATCH: usize = 16;

#[derive(Clone, Debug)]
pub struct ExtrapolationRow {
    pub encoding: String,
    pub seed: u64,
    pub grid_factor: usize,
    pub interpolated: bool,
    pub accuracy: f64,
    pub applied_factor: f64,
}

pub struct ExtrapolationOutcome {
    pub rows: Vec<ExtrapolationRow>,
    pub train_results: Vec<TrainResult>,
}

/// Positions for evaluation: raw, or rescaled into the training range by
/// `train_res / eval_res`. One function for every encoding.
pub fn eval_positions(
    raw: &PositionSet<f64>,
    train_grid: usize,
    eval_grid: usize,
    interpolate: bool,
) -> Result<(PositionSet<f64>, f64)> {
    if interpolate {
        let factor = interpolation_factor(train_grid * PATCH, eval_grid * PATCH)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok((
            raw.interpolate(train_grid * PATCH, eval_grid * PATCH)?,
            factor,
        ))
    } else {
        Ok((raw.clone(), 1.0))
    }
}

/// Train every configured encoding per seed, then evaluate at each grid
/// factor with and without interpolation (factor 1 is evaluated raw only:
/// rescaling is the identity there).
pub fn run_extrapolation(
    config: &ExperimentConfig,
    grid_factors: &[usize],
) -> Result<ExtrapolationOutcome> {
    config.validate()?;
    let d = config.model.d;
    let train_grid = config.task.grid[0];

    let mut jobs = Vec::new();
    for encoding in &config.encodings {
        for s in 0..config.trainer.seeds {
            jobs.push((encoding.clone(), config.seed + s));
        }
    }
    let seeds: std::collections::BTreeSet<u64> = jobs.iter().map(|(_, s)| *s).collect();
    let data_by_seed: std::collections::BTreeMap<u64, task::ToyData> = seeds
        .iter()
        .map(|&s| Ok((s, task::generate(&config.task, d, s)?)))
        .collect::<Result<_>>()?;

    let per_job: Result<Vec<(Vec<ExtrapolationRow>, TrainResult)>> = jobs
        .par_iter()
        .map(|(encoding, seed)| {
            let data = &data_by_seed[seed];
            let result = train::train_one(config, encoding, *seed, data)?;
            let model = train::load_checkpoint(&checkpoint(config, encoding, *seed))?;
            let mut rows = Vec::new();
            for &factor in grid_factors {
                let eval_grid = vec![train_grid * factor, config.task.grid[1] * factor];
                let (raw_positions, samples) = if factor == 1 {
                    (data.positions.clone(), data.test.clone())
                } else {
                    task::generate_eval_grid(
                        &eval_grid,
                        config.task.test_samples,
                        d,
                        &data.type_table,
                        *seed,
                    )?
                };
                let variants: &[bool] = if factor == 1 {
                    &[false]
                } else {
                    &[false, true]
                };
                for &interpolate in variants {
                    let (positions, applied) = eval_positions(
                        &raw_positions,
                        train_grid,
                        train_grid * factor,
                        interpolate,
                    )?;
                    let accuracy = train::evaluate(&model, &samples, &positions)?;
                    rows.push(ExtrapolationRow {
                        encoding: encoding.kind_name().to_string(),
                        seed: *seed,
                        grid_factor: factor,
                        interpolated: interpolate,
                        accuracy,
                        applied_factor: applied,
                    });
                }
            }
            Ok((rows, result))
        })
        .collect();
    let per_job = per_job?;
    let mut rows = Vec::new();
    let mut train_results = Vec::new();
    for (r, t) in per_job {
        rows.extend(r);
        train_results.push(t);
    }
    Ok(ExtrapolationOutcome {
        rows,
        train_results,
    })
}

fn checkpoint(
    config: &ExperimentConfig,
    encoding: &pape_core::encodings::EncodingSpec,
    seed: u64,
) -> std::path::PathBuf {
    config
        .out_dir
        .join("checkpoints")
        .join(format!("{}_seed{}.psnp", encoding.kind_name(), seed))
}
