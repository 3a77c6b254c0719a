//! Toy training runs: one fixed task, identical non-positional
//! initialization and optimizer settings across encodings, deterministic
//! per seed.

use anyhow::{anyhow, Context, Result};
use serde_json::json;
use sha2::{Digest, Sha256};

use pape_core::array::DenseArray;
use pape_core::encodings::{write_snapshot, EncodingSpec, Snapshot};
use pape_core::geometry::PositionSet;
use pape_core::model::{ModelConfig, TransformerClassifier};
use pape_core::optim::{AdamW, AdamWConfig, CosineSchedule};
use pape_core::rng::SeedRng;
use pape_core::tape::Tape;

use crate::config::{hex_string, ExperimentConfig};
use crate::task::{self, ToyData, NUM_CLASSES};

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub encoding: EncodingSpec,
    pub seed: u64,
    pub final_loss: f64,
    pub test_accuracy: f64,
    pub loss_curve: Vec<(u64, f64)>,
    /// Hash over everything that must not differ between encodings: task
    /// data, non-positional initialization, optimizer settings.
    pub shared_state_hash: String,
}

pub fn model_config(config: &ExperimentConfig, encoding: &EncodingSpec) -> ModelConfig {
    ModelConfig {
        layers: config.model.layers,
        heads: config.model.heads,
        d: config.model.d,
        h: config.model.h,
        mlp_hidden: 2 * config.model.d,
        classes: NUM_CLASSES,
        p: config.task.grid.len(),
        encoding: encoding.clone(),
    }
}

fn hash_arrays(hasher: &mut Sha256, arrays: impl Iterator<Item = (String, DenseArray<f64>)>) {
    let mut items: Vec<(String, DenseArray<f64>)> = arrays.collect();
    items.sort_by(|a, b| a.0.cmp(&b.0));
    for (name, arr) in items {
        hasher.update(name.as_bytes());
        for v in arr.data() {
            hasher.update(v.to_le_bytes());
        }
    }
}

/// Fairness digest: identical across encodings within one (config, seed).
fn shared_state_hash(
    config: &ExperimentConfig,
    data: &ToyData,
    model: &TransformerClassifier<f64>,
) -> String {
    let mut hasher = Sha256::new();
    // task samples
    for s in data.train.iter().chain(&data.test) {
        hasher.update((s.label as u64).to_le_bytes());
        for v in s.tokens.data() {
            hasher.update(v.to_le_bytes());
        }
    }
    for v in data.positions.positions().data() {
        hasher.update(v.to_le_bytes());
    }
    // non-positional initialization
    hash_arrays(
        &mut hasher,
        model
            .params
            .iter()
            .filter(|e| !e.name.starts_with("pos."))
            .map(|e| (e.name.clone(), e.value.clone())),
    );
    // optimizer settings
    hasher.update(
        serde_json::to_vec(&json!({
            "steps": config.trainer.steps,
            "lr": config.trainer.lr,
            "warmup": config.trainer.warmup,
            "weight_decay": config.trainer.weight_decay,
            "decay_positional": config.trainer.decay_positional,
            "batch": config.trainer.batch,
        }))
        .unwrap(),
    );
    hex_string(&hasher.finalize())
}

pub fn evaluate(
    model: &TransformerClassifier<f64>,
    samples: &[task::ToySample],
    positions: &PositionSet<f64>,
) -> Result<f64> {
    let mut correct = 0usize;
    for s in samples {
        if model.predict(&s.tokens, positions)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Train one encoding on the shared task for one seed.
///
/// Divergence (non-finite loss) aborts with the step index in the error.
pub fn train_one(
    config: &ExperimentConfig,
    encoding: &EncodingSpec,
    seed: u64,
    data: &ToyData,
) -> Result<TrainResult> {
    let mcfg = model_config(config, encoding);
    let mut model =
        TransformerClassifier::<f64>::init(mcfg, seed).map_err(|e| anyhow!("model init: {e}"))?;
    let shared_hash = shared_state_hash(config, data, &model);

    if config.trainer.decay_positional {
        for i in 0..model.params.len() {
            if model.params.entry(i).name.starts_with("pos.") {
                model.params.entry_mut(i).decay = true;
            }
        }
    }

    let mut opt = AdamW::new(
        AdamWConfig {
            lr: config.trainer.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: config.trainer.weight_decay,
        },
        &model.params,
    );
    let schedule = CosineSchedule {
        warmup_steps: config.trainer.warmup,
        total_steps: config.trainer.steps,
        min_factor: 0.05,
    };

    let mut order_rng = SeedRng::derive(seed, "batch-order");
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    order_rng.shuffle(&mut order);
    let mut cursor = 0usize;
    let mut loss_curve = Vec::new();
    let mut final_loss = f64::NAN;

    for step in 0..config.trainer.steps {
        let mut batch = Vec::with_capacity(config.trainer.batch);
        for _ in 0..config.trainer.batch {
            if cursor == order.len() {
                order_rng.shuffle(&mut order);
                cursor = 0;
            }
            let s = &data.train[order[cursor]];
            cursor += 1;
            batch.push((&s.tokens, &data.positions, s.label));
        }
        let mut tape = Tape::new();
        let binds = model.bind(&mut tape);
        let loss_var = model
            .batch_loss(&mut tape, &binds, &batch)
            .map_err(|e| anyhow!("forward failed at step {step}: {e}"))?;
        let loss = tape.value(loss_var).data()[0];
        if !loss.is_finite() {
            return Err(anyhow!(
                "training diverged: non-finite loss at step {step} ({})",
                encoding.kind_name()
            ));
        }
        let grads = tape
            .backward(loss_var)
            .map_err(|e| anyhow!("backward failed at step {step}: {e}"))?;
        let grad_arrays: Vec<DenseArray<f64>> = (0..model.params.len())
            .map(|i| grads.wrt(binds.var(i)))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| anyhow!("gradient extraction failed at step {step}: {e}"))?;
        opt.step(&mut model.params, &grad_arrays, schedule.factor(step));
        if step % 50 == 0 || step + 1 == config.trainer.steps {
            loss_curve.push((step, loss));
        }
        final_loss = loss;
    }

    let test_accuracy = evaluate(&model, &data.test, &data.positions)?;
    let result = TrainResult {
        encoding: encoding.clone(),
        seed,
        final_loss,
        test_accuracy,
        loss_curve,
        shared_state_hash: shared_hash,
    };
    save_checkpoint(config, encoding, seed, &model)?;
    Ok(result)
}

fn checkpoint_path(
    config: &ExperimentConfig,
    encoding: &EncodingSpec,
    seed: u64,
) -> std::path::PathBuf {
    config
        .out_dir
        .join("checkpoints")
        .join(format!("{}_seed{}.psnp", encoding.kind_name(), seed))
}

fn save_checkpoint(
    config: &ExperimentConfig,
    encoding: &EncodingSpec,
    seed: u64,
    model: &TransformerClassifier<f64>,
) -> Result<()> {
    let path = checkpoint_path(config, encoding, seed);
    std::fs::create_dir_all(path.parent().unwrap())?;
    let snapshot = Snapshot {
        tensors: model
            .params
            .iter()
            .map(|e| (e.name.clone(), e.value.clone()))
            .collect(),
        meta: serde_json::to_value(&model.config).context("model config to json")?,
    };
    write_snapshot(&path, &snapshot).map_err(|e| anyhow!("writing checkpoint: {e}"))?;
    Ok(())
}

/// Rebuild a model from a checkpoint written by [`train_one`].
pub fn load_checkpoint(path: &std::path::Path) -> Result<TransformerClassifier<f64>> {
    let snapshot = pape_core::encodings::read_snapshot(path)
        .map_err(|e| anyhow!("reading checkpoint: {e}"))?;
    let mcfg: ModelConfig =
        serde_json::from_value(snapshot.meta.clone()).context("checkpoint lacks model config")?;
    let mut model =
        TransformerClassifier::<f64>::init(mcfg, 0).map_err(|e| anyhow!("model init: {e}"))?;
    let by_name: std::collections::HashMap<&str, &DenseArray<f64>> = snapshot
        .tensors
        .iter()
        .map(|(n, a)| (n.as_str(), a))
        .collect();
    for i in 0..model.params.len() {
        let name = model.params.entry(i).name.clone();
        let tensor = by_name
            .get(name.as_str())
            .ok_or_else(|| anyhow!("checkpoint is missing tensor {name}"))?;
        *model.params.value_mut(i) = (*tensor).clone();
    }
    Ok(model)
}

/// All (encoding x seed) toy-training runs of a config, in parallel, in
/// deterministic order.
pub fn run_toy_training(config: &ExperimentConfig) -> Result<Vec<TrainResult>> {
    use rayon::prelude::*;
    config.validate()?;
    let d = config.model.d;
    let mut jobs = Vec::new();
    for encoding in &config.encodings {
        for s in 0..config.trainer.seeds {
            jobs.push((encoding.clone(), config.seed + s));
        }
    }
    // one task dataset per seed, shared across encodings
    let seeds: std::collections::BTreeSet<u64> = jobs.iter().map(|(_, s)| *s).collect();
    let data_by_seed: std::collections::BTreeMap<u64, ToyData> = seeds
        .into_iter()
        .map(|s| Ok((s, task::generate(&config.task, d, s)?)))
        .collect::<Result<_>>()?;

    let results: Result<Vec<TrainResult>> = jobs
        .par_iter()
        .map(|(encoding, seed)| train_one(config, encoding, *seed, &data_by_seed[seed]))
        .collect();
    let results = results?;

    // fairness: within a seed, every encoding must have seen the same task
    // data, base initialization, and optimizer settings
    let mut by_seed: std::collections::BTreeMap<u64, Vec<&TrainResult>> = Default::default();
    for r in &results {
        by_seed.entry(r.seed).or_default().push(r);
    }
    for (seed, rs) in by_seed {
        let first = &rs[0].shared_state_hash;
        for r in &rs {
            if &r.shared_state_hash != first {
                return Err(anyhow!(
                    "fairness violation at seed {seed}: shared state differs between {} and {}",
                    rs[0].encoding.kind_name(),
                    r.encoding.kind_name()
                ));
            }
        }
    }
    Ok(results)
}
