//! Trainable transformer classifier built on the tape.
//!
//! Two pre-norm blocks (attention + MLP, RMS normalization), mean pooling,
//! and a linear head. Every encoding the library implements can be trained:
//! positional parameters are recorded on the tape like any other weight, so
//! the projections of the parabolic encoding, the mixed rotary frequency
//! tables, and the rotation-invariant coefficient sources all receive
//! gradients.
//!
//! Initialization: Kaiming-uniform for weight matrices, zeros for the
//! classifier head with bias `-ln(classes)` (uniform initial class
//! probabilities), zero coefficient maps and small-normal projections for
//! the positional tables. Non-positional weights draw from a stream that
//! does not depend on the encoding choice, so runs differing only in
//! encoding share their base initialization.

use crate::array::DenseArray;
use crate::encodings::{
    alibi_slopes, nd_alibi_bias, nd_sincos_embed, rope_axial_freqs, Ablation, AlphaKind,
    EncodingSpec,
};
use crate::error::{Error, Result};
use crate::geometry::PositionSet;
use crate::optim::ParamSet;
use crate::rng::SeedRng;
use crate::scalar::Scalar;
use crate::tape::{Tape, VarId};

const RMS_EPS: f64 = 1e-6;
/// Initial scale of positional projections: large enough to seed gradient
/// flow into the coefficient maps, small enough that an untrained head
/// stays close to vanilla attention.
const POS_PROJ_INIT_STD: f64 = 0.15;
/// Query/key projections start at a fraction of the Kaiming bound so
/// attention begins near-uniform; both exponential factors of the
/// decomposition then sit near one on a fresh model.
const QK_INIT_GAIN: f64 = 0.25;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d: usize,
    pub h: usize,
    pub mlp_hidden: usize,
    pub classes: usize,
    pub p: usize,
    pub encoding: EncodingSpec,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d != self.heads * self.h {
            return Err(Error::InvalidArgument(format!(
                "model: d = {} must equal heads * h = {}",
                self.d,
                self.heads * self.h
            )));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArgument(
                "model: need at least 2 classes".into(),
            ));
        }
        self.encoding.validate()
    }
}

enum AlphaLayout {
    TokenDerived { w_alpha: usize },
    Shared { raw: usize },
}

enum EncLayout {
    None,
    /// Absolute sinusoidal embedding; applied to the inputs, nothing per head.
    Sincos,
    Pape {
        /// None means the identity projection (projection ablation).
        w_p: Option<usize>,
        w_a: usize,
        w_b: usize,
        ablation: Option<Ablation>,
    },
    PapeShared {
        w_p: Option<usize>,
        raw_a: usize,
        raw_b: usize,
    },
    PapeRi {
        w_p: usize,
        alpha: AlphaLayout,
    },
    RopeAxial {
        base: f64,
    },
    RopeMixed {
        freqs: usize,
    },
    NdAlibi {
        slope: f64,
    },
    Poly {
        /// Coefficient map per degree 1..=N (degree 0 cancels in softmax).
        maps: Vec<usize>,
    },
}

struct HeadLayout {
    w_q: usize,
    w_k: usize,
    w_v: usize,
    enc: EncLayout,
}

struct LayerLayout {
    norm1: usize,
    heads: Vec<HeadLayout>,
    w_o: usize,
    norm2: usize,
    mlp_w1: usize,
    mlp_b1: usize,
    mlp_w2: usize,
    mlp_b2: usize,
}

struct Layout {
    layers: Vec<LayerLayout>,
    final_norm: usize,
    w_head: usize,
    b_head: usize,
}

pub struct TransformerClassifier<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
    layout: Layout,
}

/// Tape handles for every parameter, parallel to the [`ParamSet`] indices.
pub struct Bindings {
    vars: Vec<VarId>,
}

impl Bindings {
    /// Wrap externally recorded parameter handles (index-aligned with the
    /// model's [`ParamSet`]).
    pub fn from_vars(vars: Vec<VarId>) -> Self {
        Self { vars }
    }

    pub fn var(&self, idx: usize) -> VarId {
        self.vars[idx]
    }

    pub fn all(&self) -> &[VarId] {
        &self.vars
    }
}

/// Captured per-head intermediates of one forward pass, for the
/// positional/semantic decomposition.
pub struct HeadProbe<T: Scalar> {
    pub layer: usize,
    pub head: usize,
    pub q: DenseArray<T>,
    pub k: DenseArray<T>,
    /// Quadratic coefficients, when the head has a parabolic form.
    pub a: Option<DenseArray<T>>,
    pub b: Option<DenseArray<T>>,
    pub w_p: Option<DenseArray<T>>,
}

impl<T: Scalar> TransformerClassifier<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut weights = SeedRng::derive(seed, "weights");
        let mut positional = SeedRng::derive(seed, "positional");
        let mut params = ParamSet::new();
        let kaiming = |rng: &mut SeedRng, rows: usize, cols: usize| -> DenseArray<T> {
            let bound = (6.0 / cols as f64).sqrt();
            rng.array_uniform(&[rows, cols], -bound, bound)
        };
        let d = config.d;
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let norm1 = params.push(format!("l{l}.norm1.g"), DenseArray::ones(&[1, d]), false);
            let mut heads = Vec::new();
            for hd in 0..config.heads {
                let w_q = params.push(
                    format!("l{l}.h{hd}.w_q"),
                    kaiming(&mut weights, config.h, d).scale(T::of(QK_INIT_GAIN)),
                    true,
                );
                let w_k = params.push(
                    format!("l{l}.h{hd}.w_k"),
                    kaiming(&mut weights, config.h, d).scale(T::of(QK_INIT_GAIN)),
                    true,
                );
                let w_v = params.push(
                    format!("l{l}.h{hd}.w_v"),
                    kaiming(&mut weights, config.h, d),
                    true,
                );
                let enc = Self::init_encoding(&config, l, hd, &mut params, &mut positional)?;
                heads.push(HeadLayout { w_q, w_k, w_v, enc });
            }
            let w_o = params.push(format!("l{l}.w_o"), kaiming(&mut weights, d, d), true);
            let norm2 = params.push(format!("l{l}.norm2.g"), DenseArray::ones(&[1, d]), false);
            let mlp_w1 = params.push(
                format!("l{l}.mlp.w1"),
                kaiming(&mut weights, config.mlp_hidden, d),
                true,
            );
            let mlp_b1 = params.push(
                format!("l{l}.mlp.b1"),
                DenseArray::zeros(&[1, config.mlp_hidden]),
                false,
            );
            let mlp_w2 = params.push(
                format!("l{l}.mlp.w2"),
                kaiming(&mut weights, d, config.mlp_hidden),
                true,
            );
            let mlp_b2 = params.push(format!("l{l}.mlp.b2"), DenseArray::zeros(&[1, d]), false);
            layers.push(LayerLayout {
                norm1,
                heads,
                w_o,
                norm2,
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
            });
        }
        let final_norm = params.push("final_norm.g", DenseArray::ones(&[1, d]), false);
        let w_head = params.push("head.w", DenseArray::zeros(&[config.classes, d]), true);
        let b_head = params.push(
            "head.b",
            DenseArray::full(&[1, config.classes], T::of(-(config.classes as f64).ln())),
            false,
        );
        Ok(Self {
            config,
            params,
            layout: Layout {
                layers,
                final_norm,
                w_head,
                b_head,
            },
        })
    }

    fn init_encoding(
        config: &ModelConfig,
        layer: usize,
        head: usize,
        params: &mut ParamSet<T>,
        rng: &mut SeedRng,
    ) -> Result<EncLayout> {
        let (d, p, h) = (config.d, config.p, config.h);
        Ok(match &config.encoding {
            EncodingSpec::None => EncLayout::None,
            EncodingSpec::NdSincos { .. } => EncLayout::Sincos,
            EncodingSpec::Pape { ablation, .. } => {
                let m = config.encoding.effective_m(p).unwrap();
                let w_p = match ablation {
                    Some(Ablation::RemoveProjection) => None,
                    _ => Some(params.push(
                        format!("pos.l{layer}.h{head}.w_p"),
                        rng.array_normal(&[m, p], 0.0, POS_PROJ_INIT_STD),
                        false,
                    )),
                };
                if matches!(ablation, Some(Ablation::RemoveContext)) {
                    let raw_a = params.push(
                        format!("pos.l{layer}.h{head}.shared_a"),
                        DenseArray::zeros(&[1, m]),
                        false,
                    );
                    let raw_b = params.push(
                        format!("pos.l{layer}.h{head}.shared_b"),
                        DenseArray::zeros(&[1, m]),
                        false,
                    );
                    EncLayout::PapeShared { w_p, raw_a, raw_b }
                } else {
                    let w_a = params.push(
                        format!("pos.l{layer}.h{head}.w_a"),
                        DenseArray::zeros(&[m, d]),
                        false,
                    );
                    let w_b = params.push(
                        format!("pos.l{layer}.h{head}.w_b"),
                        DenseArray::zeros(&[m, d]),
                        false,
                    );
                    EncLayout::Pape {
                        w_p,
                        w_a,
                        w_b,
                        ablation: *ablation,
                    }
                }
            }
            EncodingSpec::PapeRi { alpha } => {
                let w_p = params.push(
                    format!("pos.l{layer}.h{head}.w_p"),
                    DenseArray::scalar(T::of(POS_PROJ_INIT_STD)),
                    false,
                );
                let alpha = match alpha {
                    AlphaKind::TokenDerived => AlphaLayout::TokenDerived {
                        w_alpha: params.push(
                            format!("pos.l{layer}.h{head}.w_alpha"),
                            DenseArray::zeros(&[1, d]),
                            false,
                        ),
                    },
                    AlphaKind::Shared => AlphaLayout::Shared {
                        raw: params.push(
                            format!("pos.l{layer}.h{head}.alpha_raw"),
                            DenseArray::scalar(T::zero()),
                            false,
                        ),
                    },
                };
                EncLayout::PapeRi { w_p, alpha }
            }
            EncodingSpec::RopeAxial { base } => EncLayout::RopeAxial { base: *base },
            EncodingSpec::RopeMixed { base } => EncLayout::RopeMixed {
                freqs: params.push(
                    format!("pos.l{layer}.h{head}.freqs"),
                    rope_axial_freqs(h, p, *base)?,
                    false,
                ),
            },
            EncodingSpec::NdAlibi => EncLayout::NdAlibi {
                slope: alibi_slopes(config.heads)[head],
            },
            EncodingSpec::Poly { degree } => {
                let maps = (1..=*degree)
                    .map(|deg| {
                        params.push(
                            format!("pos.l{layer}.h{head}.poly{deg}"),
                            DenseArray::zeros(&[p, d]),
                            false,
                        )
                    })
                    .collect();
                EncLayout::Poly { maps }
            }
        })
    }

    /// Record every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bindings {
        Bindings {
            vars: (0..self.params.len())
                .map(|i| tape.param(self.params.value(i).clone()))
                .collect(),
        }
    }

    fn rmsnorm(&self, tape: &mut Tape<T>, x: VarId, gain: VarId, n: usize) -> VarId {
        let d = self.config.d;
        let sq = tape.mul(x, x);
        let sums = tape.row_sums(sq);
        let ms = tape.scale(sums, T::one() / T::of(d as f64));
        let r = tape.rsqrt(ms, T::of(RMS_EPS));
        let rb = tape.broadcast_col(r, d);
        let xn = tape.mul(x, rb);
        let g = tape.broadcast_row(gain, n);
        tape.mul(xn, g)
    }

    /// Positional bias of one head on the tape, or None for encodings that
    /// act on q/k instead.
    #[allow(clippy::too_many_arguments)]
    fn head_bias(
        &self,
        tape: &mut Tape<T>,
        enc: &EncLayout,
        binds: &Bindings,
        u: VarId,
        ps: &PositionSet<T>,
        n: usize,
    ) -> Result<Option<VarId>> {
        Ok(match enc {
            EncLayout::None
            | EncLayout::Sincos
            | EncLayout::RopeAxial { .. }
            | EncLayout::RopeMixed { .. } => None,
            EncLayout::Pape {
                w_p,
                w_a,
                w_b,
                ablation,
            } => {
                let s = self.projected_positions(tape, binds, *w_p, ps)?;
                let (a, b) = match ablation {
                    Some(Ablation::RemoveQuadratic) => {
                        (None, Some(self.linear_coeff(tape, binds, *w_b, u)))
                    }
                    Some(Ablation::RemoveLinear) => {
                        (Some(self.concave_coeff(tape, binds, *w_a, u)), None)
                    }
                    Some(Ablation::RemoveSoftplus) => (
                        Some(self.linear_coeff(tape, binds, *w_a, u)),
                        Some(self.linear_coeff(tape, binds, *w_b, u)),
                    ),
                    _ => (
                        Some(self.concave_coeff(tape, binds, *w_a, u)),
                        Some(self.linear_coeff(tape, binds, *w_b, u)),
                    ),
                };
                Some(pape_bias_on_tape(tape, a, b, s, n))
            }
            EncLayout::PapeShared { w_p, raw_a, raw_b } => {
                let s = self.projected_positions(tape, binds, *w_p, ps)?;
                let sp = tape.softplus(binds.var(*raw_a));
                let neg = tape.neg(sp);
                let a = tape.broadcast_row(neg, n);
                let b = tape.broadcast_row(binds.var(*raw_b), n);
                Some(pape_bias_on_tape(tape, Some(a), Some(b), s, n))
            }
            EncLayout::PapeRi { w_p, alpha } => {
                let alpha_col = match alpha {
                    AlphaLayout::TokenDerived { w_alpha } => {
                        let wt = tape.transpose(binds.var(*w_alpha));
                        let pre = tape.matmul(u, wt); // n x 1
                        let sp = tape.softplus(pre);
                        tape.neg(sp)
                    }
                    AlphaLayout::Shared { raw } => {
                        let sp = tape.softplus(binds.var(*raw));
                        let neg = tape.neg(sp);
                        tape.broadcast_row(neg, n)
                    }
                };
                let w_p_var = binds.var(*w_p);
                let wp2 = tape.mul(w_p_var, w_p_var);
                let d2 = tape.constant(ps.pairwise_sq_dists());
                let scaled = tape.mul_scalar_var(d2, wp2);
                let ab = tape.broadcast_col(alpha_col, n);
                Some(tape.mul(ab, scaled))
            }
            EncLayout::NdAlibi { slope } => Some(tape.constant(nd_alibi_bias(ps, T::of(*slope))?)),
            EncLayout::Poly { maps } => {
                let p = ps.p();
                let mut bias: Option<VarId> = None;
                for (k, &map_idx) in maps.iter().enumerate() {
                    let deg = (k + 1) as i32;
                    let wt = tape.transpose(binds.var(map_idx));
                    let coeff = tape.matmul(u, wt); // n x p
                    for c in 0..p {
                        let mut basis = DenseArray::zeros(&[n, n]);
                        for i in 0..n {
                            for j in 0..n {
                                basis.set(i, j, (ps.row(j)[c] - ps.row(i)[c]).powi(deg));
                            }
                        }
                        let basis = tape.constant(basis);
                        let col = tape.slice_cols(coeff, c, c + 1);
                        let colb = tape.broadcast_col(col, n);
                        let term = tape.mul(colb, basis);
                        bias = Some(match bias {
                            Some(b) => tape.add(b, term),
                            None => term,
                        });
                    }
                }
                bias
            }
        })
    }

    fn concave_coeff(&self, tape: &mut Tape<T>, binds: &Bindings, w: usize, u: VarId) -> VarId {
        let wt = tape.transpose(binds.var(w));
        let pre = tape.matmul(u, wt);
        let sp = tape.softplus(pre);
        tape.neg(sp)
    }

    fn linear_coeff(&self, tape: &mut Tape<T>, binds: &Bindings, w: usize, u: VarId) -> VarId {
        let wt = tape.transpose(binds.var(w));
        tape.matmul(u, wt)
    }

    /// `s = positions W_p^T`, with the identity-projection ablation reading
    /// positions directly.
    fn projected_positions(
        &self,
        tape: &mut Tape<T>,
        binds: &Bindings,
        w_p: Option<usize>,
        ps: &PositionSet<T>,
    ) -> Result<VarId> {
        let pos = tape.constant(ps.positions().clone());
        Ok(match w_p {
            Some(idx) => {
                let wt = tape.transpose(binds.var(idx));
                tape.matmul(pos, wt)
            }
            None => pos,
        })
    }

    /// One sample forward pass; returns the 1 x classes logit row.
    pub fn forward_sample(
        &self,
        tape: &mut Tape<T>,
        binds: &Bindings,
        x: &DenseArray<T>,
        ps: &PositionSet<T>,
        mut probes: Option<&mut Vec<HeadProbe<T>>>,
    ) -> Result<VarId> {
        if x.cols() != self.config.d || x.rows() != ps.n() {
            return Err(Error::ShapeMismatch {
                op: "forward_sample",
                lhs: x.shape().to_vec(),
                rhs: vec![ps.n(), self.config.d],
            });
        }
        let n = ps.n();
        let inv_sqrt_h = T::one() / T::of((self.config.h as f64).sqrt());
        let mut stream = match &self.config.encoding {
            EncodingSpec::NdSincos { base } => {
                let pe = nd_sincos_embed(ps, self.config.d, *base)?;
                tape.constant(x.add(&pe)?)
            }
            _ => tape.constant(x.clone()),
        };
        for (l, layer) in self.layout.layers.iter().enumerate() {
            let u = self.rmsnorm(tape, stream, binds.var(layer.norm1), n);
            let mut head_outs = Vec::with_capacity(self.config.heads);
            for (hd, head) in layer.heads.iter().enumerate() {
                let wq = tape.transpose(binds.var(head.w_q));
                let wk = tape.transpose(binds.var(head.w_k));
                let wv = tape.transpose(binds.var(head.w_v));
                let mut q = tape.matmul(u, wq);
                let mut k = tape.matmul(u, wk);
                let v = tape.matmul(u, wv);
                match &head.enc {
                    EncLayout::RopeAxial { base } => {
                        let freqs = rope_axial_freqs::<T>(self.config.h, ps.p(), *base)?;
                        let angles = ps.positions().matmul(&freqs.transpose())?;
                        let cos = tape.constant(angles.map(|a| a.cos()));
                        let sin = tape.constant(angles.map(|a| a.sin()));
                        q = tape.rotate_pairs(q, cos, sin);
                        k = tape.rotate_pairs(k, cos, sin);
                    }
                    EncLayout::RopeMixed { freqs } => {
                        let pos = tape.constant(ps.positions().clone());
                        let ft = tape.transpose(binds.var(*freqs));
                        let angles = tape.matmul(pos, ft);
                        let cos = tape.cos(angles);
                        let sin = tape.sin(angles);
                        q = tape.rotate_pairs(q, cos, sin);
                        k = tape.rotate_pairs(k, cos, sin);
                    }
                    _ => {}
                }
                let bias = self.head_bias(tape, &head.enc, binds, u, ps, n)?;
                let kt = tape.transpose(k);
                let raw = tape.matmul(q, kt);
                let mut logits = tape.scale(raw, inv_sqrt_h);
                if let Some(b) = bias {
                    logits = tape.add(logits, b);
                }
                if let Some(probes) = probes.as_deref_mut() {
                    probes.push(self.make_probe(tape, binds, l, hd, &head.enc, q, k, u)?);
                }
                let attn = tape.softmax_rows(logits);
                head_outs.push(tape.matmul(attn, v));
            }
            let merged = tape.concat_cols(&head_outs);
            let wo = tape.transpose(binds.var(layer.w_o));
            let attn_out = tape.matmul(merged, wo);
            let after_attn = tape.add(stream, attn_out);

            let u2 = self.rmsnorm(tape, after_attn, binds.var(layer.norm2), n);
            let w1 = tape.transpose(binds.var(layer.mlp_w1));
            let pre1 = tape.matmul(u2, w1);
            let b1 = tape.broadcast_row(binds.var(layer.mlp_b1), n);
            let h1 = tape.add(pre1, b1);
            // smooth activation: keeps the model differentiable everywhere,
            // so the finite-difference oracle stays valid at every point
            let act = tape.softplus(h1);
            let w2 = tape.transpose(binds.var(layer.mlp_w2));
            let pre2 = tape.matmul(act, w2);
            let b2 = tape.broadcast_row(binds.var(layer.mlp_b2), n);
            let mlp_out = tape.add(pre2, b2);
            stream = tape.add(after_attn, mlp_out);
        }
        let uf = self.rmsnorm(tape, stream, binds.var(self.layout.final_norm), n);
        let pooled = tape.mean_rows(uf);
        let wht = tape.transpose(binds.var(self.layout.w_head));
        let raw = tape.matmul(pooled, wht);
        Ok(tape.add(raw, binds.var(self.layout.b_head)))
    }

    #[allow(clippy::too_many_arguments)]
    fn make_probe(
        &self,
        tape: &mut Tape<T>,
        binds: &Bindings,
        layer: usize,
        head: usize,
        enc: &EncLayout,
        q: VarId,
        k: VarId,
        u: VarId,
    ) -> Result<HeadProbe<T>> {
        let (a, b, w_p) = match enc {
            EncLayout::Pape { w_p, w_a, w_b, .. } => {
                let a = self.concave_coeff(tape, binds, *w_a, u);
                let b = self.linear_coeff(tape, binds, *w_b, u);
                let p_mat = match w_p {
                    Some(idx) => tape.value(binds.var(*idx)).clone(),
                    None => DenseArray::eye(self.config.p),
                };
                (
                    Some(tape.value(a).clone()),
                    Some(tape.value(b).clone()),
                    Some(p_mat),
                )
            }
            EncLayout::PapeShared { w_p, raw_a, raw_b } => {
                let a_row = crate::array::softplus(tape.value(binds.var(*raw_a))).neg();
                let b_row = tape.value(binds.var(*raw_b)).clone();
                let n = tape.value(q).rows();
                let p_mat = match w_p {
                    Some(idx) => tape.value(binds.var(*idx)).clone(),
                    None => DenseArray::eye(self.config.p),
                };
                (
                    Some(a_row.broadcast_row(n)),
                    Some(b_row.broadcast_row(n)),
                    Some(p_mat),
                )
            }
            _ => (None, None, None),
        };
        Ok(HeadProbe {
            layer,
            head,
            q: tape.value(q).clone(),
            k: tape.value(k).clone(),
            a,
            b,
            w_p,
        })
    }

    /// Mean cross-entropy over a batch of (tokens, positions, label).
    pub fn batch_loss(
        &self,
        tape: &mut Tape<T>,
        binds: &Bindings,
        batch: &[(&DenseArray<T>, &PositionSet<T>, usize)],
    ) -> Result<VarId> {
        let mut rows = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        for (x, ps, label) in batch {
            rows.push(self.forward_sample(tape, binds, x, ps, None)?);
            labels.push(*label);
        }
        let logits = tape.concat_rows(&rows);
        Ok(tape.cross_entropy_mean(logits, &labels))
    }

    /// Inference logits for one sample (fresh tape, no backward).
    pub fn logits(&self, x: &DenseArray<T>, ps: &PositionSet<T>) -> Result<DenseArray<T>> {
        let mut tape = Tape::new();
        let binds = self.bind(&mut tape);
        let out = self.forward_sample(&mut tape, &binds, x, ps, None)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict(&self, x: &DenseArray<T>, ps: &PositionSet<T>) -> Result<usize> {
        let logits = self.logits(x, ps)?;
        let row = logits.row(0);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        Ok(best)
    }

    /// Forward pass that captures per-head probes for the decomposition.
    pub fn probe(
        &self,
        x: &DenseArray<T>,
        ps: &PositionSet<T>,
    ) -> Result<(DenseArray<T>, Vec<HeadProbe<T>>)> {
        let mut tape = Tape::new();
        let binds = self.bind(&mut tape);
        let mut probes = Vec::new();
        let out = self.forward_sample(&mut tape, &binds, x, ps, Some(&mut probes))?;
        Ok((tape.value(out).clone(), probes))
    }

    pub fn positional_param_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|e| e.name.starts_with("pos."))
            .map(|e| e.name.clone())
            .collect()
    }
}

/// Expanded-form bias on the tape, differentiable in all inputs:
/// with t = s*s (elementwise),
/// ```text
/// bias = a t^T + rowsum(a*t) 1^T - 2 (a*s) s^T + b s^T - rowsum(b*s) 1^T
/// ```
/// which equals `<a_i, (s_j - s_i)^2> + <b_i, s_j - s_i>` per pair.
fn pape_bias_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    a: Option<VarId>,
    b: Option<VarId>,
    s: VarId,
    n: usize,
) -> VarId {
    let st = tape.transpose(s);
    let mut terms: Vec<VarId> = Vec::new();
    if let Some(a) = a {
        let t = tape.mul(s, s);
        let tt = tape.transpose(t);
        terms.push(tape.matmul(a, tt));
        let at = tape.mul(a, t);
        let diag = tape.row_sums(at);
        terms.push(tape.broadcast_col(diag, n));
        let as_ = tape.mul(a, s);
        let cross = tape.matmul(as_, st);
        terms.push(tape.scale(cross, T::of(-2.0)));
    }
    if let Some(b) = b {
        terms.push(tape.matmul(b, st));
        let bs = tape.mul(b, s);
        let sums = tape.row_sums(bs);
        let bc = tape.broadcast_col(sums, n);
        terms.push(tape.neg(bc));
    }
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = tape.add(acc, *t);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encodings::pape_bias_terms;

    fn small_config(encoding: EncodingSpec) -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 2,
            d: 8,
            h: 4,
            mlp_hidden: 16,
            classes: 3,
            p: 2,
            encoding,
        }
    }

    #[test]
    fn initial_logits_are_uniform() {
        let model = TransformerClassifier::<f64>::init(
            small_config(EncodingSpec::Pape {
                m: 2,
                ablation: None,
            }),
            7,
        )
        .unwrap();
        let mut rng = SeedRng::new(1);
        let x = rng.array_normal(&[6, 8], 0.0, 1.0);
        let ps = PositionSet::grid(&[2, 3]).unwrap();
        let logits = model.logits(&x, &ps).unwrap();
        let expect = -(3.0f64).ln();
        for &v in logits.data() {
            assert!((v - expect).abs() < 1e-9, "logit {v}");
        }
    }

    #[test]
    fn tape_bias_matches_pairwise_evaluator() {
        let mut rng = SeedRng::new(5);
        let (n, m) = (6, 3);
        let a_raw: DenseArray<f64> = rng.array_uniform(&[n, m], -2.0, -0.1);
        let b_raw: DenseArray<f64> = rng.array_normal(&[n, m], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, 2], -2.0, 2.0)).unwrap();
        let w_p: DenseArray<f64> = rng.array_normal(&[m, 2], 0.0, 0.8);

        let mut tape = Tape::new();
        let a = tape.param(a_raw.clone());
        let b = tape.param(b_raw.clone());
        let pos = tape.constant(ps.positions().clone());
        let wpt = tape.constant(w_p.transpose());
        let s = tape.matmul(pos, wpt);
        let bias_var = pape_bias_on_tape(&mut tape, Some(a), Some(b), s, n);
        let tape_bias = tape.value(bias_var).clone();

        let direct = pape_bias_terms(Some(&a_raw), Some(&b_raw), &ps, &w_p).unwrap();
        assert!(tape_bias.max_abs_diff(&direct) <= 1e-10);
    }

    #[test]
    fn batch_loss_starts_at_ln_classes() {
        let model =
            TransformerClassifier::<f64>::init(small_config(EncodingSpec::None), 3).unwrap();
        let mut rng = SeedRng::new(2);
        let xs: Vec<DenseArray<f64>> = (0..4)
            .map(|_| rng.array_normal(&[6, 8], 0.0, 1.0))
            .collect();
        let ps = PositionSet::grid(&[2, 3]).unwrap();
        let mut tape = Tape::new();
        let binds = model.bind(&mut tape);
        let batch: Vec<_> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| (x, &ps, i % 3))
            .collect();
        let loss = model.batch_loss(&mut tape, &binds, &batch).unwrap();
        let v = tape.value(loss).data()[0];
        assert!((v - (3.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn every_encoding_trains_one_step_without_panicking() {
        use crate::optim::{AdamW, AdamWConfig};
        let specs = [
            EncodingSpec::None,
            EncodingSpec::Pape {
                m: 2,
                ablation: None,
            },
            EncodingSpec::Pape {
                m: 2,
                ablation: Some(Ablation::RemoveContext),
            },
            EncodingSpec::Pape {
                m: 2,
                ablation: Some(Ablation::RemoveProjection),
            },
            EncodingSpec::PapeRi {
                alpha: AlphaKind::TokenDerived,
            },
            EncodingSpec::NdSincos { base: 10_000.0 },
            EncodingSpec::RopeAxial { base: 10_000.0 },
            EncodingSpec::RopeMixed { base: 10_000.0 },
            EncodingSpec::NdAlibi,
            EncodingSpec::Poly { degree: 2 },
        ];
        for spec in specs {
            let mut model =
                TransformerClassifier::<f64>::init(small_config(spec.clone()), 11).unwrap();
            let mut rng = SeedRng::new(4);
            let x = rng.array_normal(&[6, 8], 0.0, 1.0);
            let ps = PositionSet::grid(&[2, 3]).unwrap();
            let mut tape = Tape::new();
            let binds = model.bind(&mut tape);
            let batch = vec![(&x, &ps, 1usize)];
            let loss = model.batch_loss(&mut tape, &binds, &batch).unwrap();
            let grads = tape.backward(loss).unwrap();
            let grad_arrays: Vec<DenseArray<f64>> = (0..model.params.len())
                .map(|i| grads.wrt(binds.var(i)).unwrap())
                .collect();
            let mut opt = AdamW::new(AdamWConfig::default(), &model.params);
            opt.step(&mut model.params, &grad_arrays, 1.0);
            let v = tape.value(loss).data()[0];
            assert!(
                v.is_finite(),
                "{} produced non-finite loss",
                spec.kind_name()
            );
        }
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        use crate::fdiff::{finite_diff_grad, max_rel_error};
        let config = ModelConfig {
            layers: 1,
            heads: 2,
            d: 6,
            h: 3,
            mlp_hidden: 8,
            classes: 2,
            p: 2,
            encoding: EncodingSpec::Pape {
                m: 2,
                ablation: None,
            },
        };
        let mut model = TransformerClassifier::<f64>::init(config, 9).unwrap();
        let mut rng = SeedRng::new(10);
        // perturb everything off the init point: the zero classifier head
        // would otherwise zero out every upstream gradient
        for i in 0..model.params.len() {
            let noise = rng.array_normal(model.params.value(i).shape(), 0.0, 0.3);
            *model.params.value_mut(i) = model.params.value(i).add(&noise).unwrap();
        }
        let x = rng.array_normal(&[4, 6], 0.0, 1.0);
        let ps = PositionSet::grid(&[2, 2]).unwrap();

        // analytic gradients
        let mut tape = Tape::new();
        let binds = model.bind(&mut tape);
        let batch = vec![(&x, &ps, 0usize)];
        let loss = model.batch_loss(&mut tape, &binds, &batch).unwrap();
        let grads = tape.backward(loss).unwrap();

        let mut largest = 0.0f64;
        for idx in 0..model.params.len() {
            let name = model.params.entry(idx).name.clone();
            let analytic = grads.wrt(binds.var(idx)).unwrap();
            largest = largest.max(analytic.max_abs());
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
                    let binds = Bindings { vars };
                    let loss = model
                        .batch_loss(&mut tape, &binds, &[(&x, &ps, 0usize)])
                        .unwrap();
                    Ok(tape.value(loss).data()[0])
                },
                &base,
                1e-5,
            )
            .unwrap();
            let err = max_rel_error(&analytic, &numeric, 1e-2);
            assert!(err <= 1e-4, "{name}: rel err {err:e}");
        }
        assert!(largest > 0.0, "gradient check was vacuous");
    }
}
