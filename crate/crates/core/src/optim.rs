//! Adam with decoupled weight decay, plus the warmup/cosine learning-rate
//! schedule the toy trainer uses. Decay is applied directly to the weights
//! (not through the gradient) and parameters can opt out of it; positional
//! parameters are excluded by the trainer.

use crate::array::DenseArray;
use crate::scalar::Scalar;

/// Named parameter with its decay membership.
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub value: DenseArray<T>,
    pub decay: bool,
}

/// Flat registry of all learnable parameters of a model, addressed by index.
#[derive(Default)]
pub struct ParamSet<T: Scalar> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: DenseArray<T>, decay: bool) -> usize {
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            decay,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry<T> {
        &self.entries[idx]
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut ParamEntry<T> {
        &mut self.entries[idx]
    }

    pub fn value(&self, idx: usize) -> &DenseArray<T> {
        &self.entries[idx].value
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut DenseArray<T> {
        &mut self.entries[idx].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter()
    }
}

pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

pub struct AdamW<T: Scalar> {
    cfg: AdamWConfig,
    m: Vec<DenseArray<T>>,
    v: Vec<DenseArray<T>>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, params: &ParamSet<T>) -> Self {
        let m = params
            .iter()
            .map(|e| DenseArray::zeros(e.value.shape()))
            .collect();
        let v = params
            .iter()
            .map(|e| DenseArray::zeros(e.value.shape()))
            .collect();
        Self { cfg, m, v, step: 0 }
    }

    /// One update. `grads[i]` is the gradient for `params.entry(i)`;
    /// `lr_scale` multiplies the base learning rate (schedule output).
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[DenseArray<T>], lr_scale: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let t = self.step as i32;
        let lr = T::of(self.cfg.lr * lr_scale);
        let b1 = T::of(self.cfg.beta1);
        let b2 = T::of(self.cfg.beta2);
        let eps = T::of(self.cfg.eps);
        let wd = T::of(self.cfg.weight_decay);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for i in 0..params.len() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let decay = params.entry(i).decay;
            let w = params.value_mut(i);
            assert_eq!(g.shape(), w.shape(), "gradient shape mismatch");
            for ((wj, gj), (mj, vj)) in w
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mj = b1 * *mj + (T::one() - b1) * *gj;
                *vj = b2 * *vj + (T::one() - b2) * *gj * *gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                if decay {
                    *wj = *wj - lr * wd * *wj;
                }
                *wj -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Linear warmup followed by cosine decay to `min_factor` of the base rate.
#[derive(Clone, Copy, Debug)]
pub struct CosineSchedule {
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub min_factor: f64,
}

impl CosineSchedule {
    pub fn factor(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return 1.0;
        }
        if step < self.warmup_steps {
            return (step + 1) as f64 / self.warmup_steps.max(1) as f64;
        }
        let span = (self.total_steps.saturating_sub(self.warmup_steps)).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.min_factor
            + (1.0 - self.min_factor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_descends_a_quadratic() {
        let mut params = ParamSet::new();
        params.push(
            "w",
            DenseArray::from_vec(&[1, 2], vec![4.0_f64, -3.0]).unwrap(),
            false,
        );
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.1,
                ..Default::default()
            },
            &params,
        );
        for _ in 0..200 {
            let g = params.value(0).scale(2.0); // d/dw of w^2
            opt.step(&mut params, &[g], 1.0);
        }
        assert!(params.value(0).max_abs() < 1e-2);
    }

    #[test]
    fn decay_only_touches_flagged_entries() {
        let mut params = ParamSet::new();
        params.push("decayed", DenseArray::scalar(1.0_f64), true);
        params.push("free", DenseArray::scalar(1.0_f64), false);
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 0.01,
                weight_decay: 0.5,
                ..Default::default()
            },
            &params,
        );
        let zero = DenseArray::scalar(0.0_f64);
        opt.step(&mut params, &[zero.clone(), zero], 1.0);
        // With zero gradient the only movement is the decoupled decay term.
        assert!(params.value(0).data()[0] < 1.0);
        assert_eq!(params.value(1).data()[0], 1.0);
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let s = CosineSchedule {
            warmup_steps: 10,
            total_steps: 100,
            min_factor: 0.0,
        };
        assert!(s.factor(0) < s.factor(5));
        assert!((s.factor(9) - 1.0).abs() < 1e-12);
        assert!(s.factor(50) > s.factor(90));
        assert!(s.factor(99) >= 0.0);
    }
}
