//! Per-head positional/semantic z-scores of a trained parabolic-encoding
//! model, averaged over an evaluation batch.

use anyhow::{bail, Result};

use pape_core::analysis::{decompose, head_z_score};
use pape_core::encodings::{EncodingSpec, PapeCoefficients};
use pape_core::model::TransformerClassifier;

use crate::config::ExperimentConfig;
use crate::task;

#[derive(Clone, Debug)]
pub struct HeadZRow {
    pub layer: usize,
    pub head: usize,
    pub z: f64,
    pub mask_fraction: f64,
    pub z_global: f64,
    pub z_unmasked: f64,
}

/// z-score table of a model on `samples_used` evaluation samples at
/// threshold `tau`. Requires a parabolic-encoding model (the decomposition
/// is defined by its bias structure).
pub fn analyze_model(
    model: &TransformerClassifier<f64>,
    config: &ExperimentConfig,
    tau: f64,
    samples_used: usize,
) -> Result<Vec<HeadZRow>> {
    match &model.config.encoding {
        EncodingSpec::Pape { ablation: None, .. } => {}
        EncodingSpec::Pape { .. } => {
            bail!("analysis requires the unablated parabolic encoding")
        }
        other => bail!(
            "analysis requires a parabolic-encoding checkpoint, got '{}'",
            other.kind_name()
        ),
    }
    let data = task::generate(&config.task, config.model.d, config.seed)?;
    let count = samples_used.clamp(1, data.test.len());
    let layers = model.config.layers;
    let heads = model.config.heads;
    let mut z_acc = vec![0.0f64; layers * heads];
    let mut mask_acc = vec![0.0f64; layers * heads];
    let mut zg_acc = vec![0.0f64; layers * heads];
    let mut zu_acc = vec![0.0f64; layers * heads];
    for sample in &data.test[..count] {
        let (_, probes) = model.probe(&sample.tokens, &data.positions)?;
        for probe in probes {
            let (Some(a), Some(b), Some(w_p)) = (&probe.a, &probe.b, &probe.w_p) else {
                bail!(
                    "probe for layer {} head {} lacks parabola coefficients",
                    probe.layer,
                    probe.head
                );
            };
            let coef = PapeCoefficients::new(a.clone(), b.clone())
                .map_err(|e| anyhow::anyhow!("invalid coefficients: {e}"))?;
            let dec = decompose(&coef, &probe.q, &probe.k, &data.positions, w_p)
                .map_err(|e| anyhow::anyhow!("decompose: {e}"))?;
            let z = head_z_score(&dec, tau).map_err(|e| anyhow::anyhow!("z-score: {e}"))?;
            let idx = probe.layer * heads + probe.head;
            z_acc[idx] += z.z;
            mask_acc[idx] += z.mask_fraction;
            zg_acc[idx] += z.z_global;
            zu_acc[idx] += z.z_unmasked;
        }
    }
    let scale = 1.0 / count as f64;
    Ok((0..layers * heads)
        .map(|idx| HeadZRow {
            layer: idx / heads,
            head: idx % heads,
            z: z_acc[idx] * scale,
            mask_fraction: mask_acc[idx] * scale,
            z_global: zg_acc[idx] * scale,
            z_unmasked: zu_acc[idx] * scale,
        })
        .collect())
}
