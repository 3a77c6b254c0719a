//! Multi-head self-attention with two interchangeable execution paths.
//!
//! The direct path materializes the n x n score matrix (semantic term scaled
//! by 1/sqrt(h), positional bias added unscaled) and is the reference
//! implementation. The kernelized path consumes position-augmented
//! query/key feature maps and computes the identical output with a streaming
//! online softmax: keys are visited in tiles while a running maximum m, a
//! running normalizer l, and a running value accumulator are maintained per
//! query; when a tile raises the maximum, l and the accumulator are rescaled
//! by exp(m_old - m_new). No n x n buffer ever exists on that path, so its
//! transient memory is O(tile * width).

use crate::array::{concat_last_axis, dot, softmax_rows, DenseArray};
use crate::encodings::{
    self, alibi_slopes, nd_alibi_bias, nd_sincos_embed, pape_bias_terms, pape_feature_maps_raw,
    poly::poly_bias, poly_coefficients, poly_feature_maps, rope_apply, rope_axial_freqs, Ablation,
    AlphaKind, EncodingSpec, PapeParams, PapeRiParams, PolyCoeffMap, PolyParams,
    DEFAULT_MAX_POLY_DEGREE,
};
use crate::error::{Error, Result};
use crate::geometry::PositionSet;
use crate::rng::SeedRng;
use crate::scalar::Scalar;

pub const DEFAULT_TILE: usize = 64;

/// Optional quadratic/linear coefficient matrices; a missing side means the
/// term is removed by an ablation.
pub type CoefficientPair<T> = (Option<DenseArray<T>>, Option<DenseArray<T>>);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionPath {
    Direct,
    Kernelized,
}

#[derive(Clone, Debug)]
pub struct AttentionConfig {
    pub num_heads: usize,
    pub h: usize,
    pub d: usize,
    pub encoding: EncodingSpec,
    pub path: AttentionPath,
    /// Keys per streaming tile; correctness does not depend on it.
    pub tile: usize,
    /// Scale the positional bias by 1/sqrt(h) along with the semantic term
    /// instead of adding it unscaled. Off by default.
    pub scale_bias: bool,
}

impl AttentionConfig {
    pub fn new(num_heads: usize, h: usize, encoding: EncodingSpec, path: AttentionPath) -> Self {
        Self {
            num_heads,
            h,
            d: num_heads * h,
            encoding,
            path,
            tile: DEFAULT_TILE,
            scale_bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d != self.num_heads * self.h {
            return Err(Error::InvalidArgument(format!(
                "attention: d = {} must equal num_heads * h = {}",
                self.d,
                self.num_heads * self.h
            )));
        }
        self.encoding.validate()?;
        if self.path == AttentionPath::Kernelized && matches!(self.encoding, EncodingSpec::NdAlibi)
        {
            return Err(Error::InvalidArgument(
                "attention: the distance bias has no feature-map form; use the direct path".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct AttentionOutput<T: Scalar> {
    pub output: DenseArray<T>,
    /// Row-stochastic attention matrix; only the direct path materializes it.
    pub scores: Option<DenseArray<T>>,
}

/// Direct-path single-head attention: softmax(q k^T / sqrt(h) + bias) v.
pub fn attention_direct<T: Scalar>(
    q: &DenseArray<T>,
    k: &DenseArray<T>,
    v: &DenseArray<T>,
    bias: Option<&DenseArray<T>>,
) -> Result<AttentionOutput<T>> {
    let n = q.rows();
    if k.shape() != q.shape() || v.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "attention_direct",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let scale = T::one() / T::of((q.cols() as f64).sqrt());
    let mut logits = q.matmul(&k.transpose())?.scale(scale);
    if let Some(b) = bias {
        logits = logits.add(b)?;
    }
    for i in 0..n {
        if !logits.row(i).iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric(format!(
                "attention_direct: non-finite logits in row {}",
                i
            )));
        }
    }
    let scores = softmax_rows(&logits)?;
    let output = scores.matmul(v)?;
    Ok(AttentionOutput {
        output,
        scores: Some(scores),
    })
}

/// Streaming single-head attention over augmented queries/keys. The logits
/// are `<q'_i, k'_j>` as constructed by the feature maps (semantic scaling
/// already folded in). Matches [`attention_direct`] on the corresponding
/// direct formulation; peak transient memory is O(tile * width).
pub fn attention_kernelized<T: Scalar>(
    q_prime: &DenseArray<T>,
    k_prime: &DenseArray<T>,
    v: &DenseArray<T>,
    tile: usize,
) -> Result<AttentionOutput<T>> {
    if q_prime.cols() != k_prime.cols() || k_prime.rows() != v.rows() {
        return Err(Error::ShapeMismatch {
            op: "attention_kernelized",
            lhs: q_prime.shape().to_vec(),
            rhs: k_prime.shape().to_vec(),
        });
    }
    let tile = tile.max(1);
    let n_q = q_prime.rows();
    let n_k = k_prime.rows();
    let dv = v.cols();
    let mut output = DenseArray::zeros(&[n_q, dv]);
    let mut logits_buf = vec![T::zero(); tile];
    let mut acc = vec![T::zero(); dv];
    for i in 0..n_q {
        let qi = q_prime.row(i);
        let mut running_max = T::neg_infinity();
        let mut running_sum = T::zero();
        acc.iter_mut().for_each(|a| *a = T::zero());
        let mut start = 0;
        while start < n_k {
            let end = (start + tile).min(n_k);
            let width = end - start;
            let mut tile_max = T::neg_infinity();
            for (t, j) in (start..end).enumerate() {
                let z = dot(qi, k_prime.row(j));
                if !z.is_finite() {
                    return Err(Error::Numeric(format!(
                        "attention_kernelized: non-finite logits in row {}",
                        i
                    )));
                }
                logits_buf[t] = z;
                tile_max = tile_max.max(z);
            }
            let new_max = running_max.max(tile_max);
            if new_max > running_max && running_sum > T::zero() {
                let rescale = (running_max - new_max).exp();
                running_sum *= rescale;
                acc.iter_mut().for_each(|a| *a *= rescale);
            }
            running_max = new_max;
            for (t, j) in (start..end).enumerate() {
                let w = (logits_buf[t] - running_max).exp();
                running_sum += w;
                for (a, &vj) in acc.iter_mut().zip(v.row(j)) {
                    *a += w * vj;
                }
            }
            start = end;
            let _ = width;
        }
        for (o, &a) in output.row_mut(i).iter_mut().zip(acc.iter()) {
            *o = a / running_sum;
        }
    }
    Ok(AttentionOutput {
        output,
        scores: None,
    })
}

/// Per-head encoding state: the learnable (or fixed) tables one attention
/// head evaluates its positional term from.
#[derive(Clone, Debug)]
pub enum HeadEncoding<T: Scalar> {
    None,
    Pape {
        params: PapeParams<T>,
        ablation: Option<Ablation>,
        /// Shared learned coefficient rows (1 x m), for the
        /// context-awareness ablation.
        shared_raw_a: Option<DenseArray<T>>,
        shared_raw_b: Option<DenseArray<T>>,
    },
    PapeRi(PapeRiParams<T>),
    RopeAxial {
        base: f64,
    },
    RopeMixed {
        freqs: DenseArray<T>,
    },
    NdAlibi {
        slope: T,
    },
    Poly(PolyParams<T>),
}

impl<T: Scalar> HeadEncoding<T> {
    /// Seeded construction from a declarative spec.
    pub fn init_random(
        spec: &EncodingSpec,
        h: usize,
        d: usize,
        p: usize,
        head: usize,
        num_heads: usize,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            EncodingSpec::None | EncodingSpec::NdSincos { .. } => HeadEncoding::None,
            EncodingSpec::Pape { ablation, .. } => {
                let m = spec.effective_m(p).unwrap();
                let w_p = match ablation {
                    Some(Ablation::RemoveProjection) => DenseArray::eye(p),
                    _ => rng.array_normal(&[m, p], 0.0, 0.6),
                };
                let params = PapeParams::new(
                    w_p,
                    rng.array_normal(&[m, d], 0.0, 0.6),
                    rng.array_normal(&[m, d], 0.0, 0.6),
                )?;
                let (shared_raw_a, shared_raw_b) =
                    if matches!(ablation, Some(Ablation::RemoveContext)) {
                        (
                            Some(rng.array_normal(&[1, m], 0.0, 0.6)),
                            Some(rng.array_normal(&[1, m], 0.0, 0.6)),
                        )
                    } else {
                        (None, None)
                    };
                HeadEncoding::Pape {
                    params,
                    ablation: *ablation,
                    shared_raw_a,
                    shared_raw_b,
                }
            }
            EncodingSpec::PapeRi { alpha } => {
                let w_p = rng.uniform::<T>(0.3, 1.2);
                let params = match alpha {
                    AlphaKind::TokenDerived => {
                        PapeRiParams::token_derived(w_p, rng.array_normal(&[1, d], 0.0, 0.8))?
                    }
                    AlphaKind::Shared => PapeRiParams::shared(w_p, rng.uniform::<T>(-2.0, -0.1))?,
                };
                HeadEncoding::PapeRi(params)
            }
            EncodingSpec::RopeAxial { base } => HeadEncoding::RopeAxial { base: *base },
            EncodingSpec::RopeMixed { base } => HeadEncoding::RopeMixed {
                freqs: encodings::rope_mixed_init(h, p, *base)?,
            },
            EncodingSpec::NdAlibi => HeadEncoding::NdAlibi {
                slope: T::of(alibi_slopes(num_heads)[head]),
            },
            EncodingSpec::Poly { degree } => {
                let mut maps = vec![PolyCoeffMap::Zero];
                for deg in 1..=*degree {
                    let w = rng.array_normal(&[p, d], 0.0, 0.4);
                    maps.push(if deg % 2 == 0 {
                        PolyCoeffMap::NegSoftplusLinear(w)
                    } else {
                        PolyCoeffMap::Linear(w)
                    });
                }
                HeadEncoding::Poly(PolyParams { maps })
            }
        })
    }

    /// Token-derived parabola coefficient matrices under the active
    /// ablation. `None` on a side means that term is removed entirely.
    pub fn pape_coefficient_arrays(&self, x: &DenseArray<T>) -> Result<CoefficientPair<T>> {
        let HeadEncoding::Pape {
            params,
            ablation,
            shared_raw_a,
            shared_raw_b,
        } = self
        else {
            return Err(Error::InvalidArgument(
                "pape coefficients requested from a non-pape head".into(),
            ));
        };
        let n = x.rows();
        let a_full = || -> Result<DenseArray<T>> {
            Ok(crate::array::softplus(&x.matmul(&params.w_a.transpose())?).neg())
        };
        let b_full = || -> Result<DenseArray<T>> { x.matmul(&params.w_b.transpose()) };
        Ok(match ablation {
            None | Some(Ablation::RemoveProjection) => (Some(a_full()?), Some(b_full()?)),
            Some(Ablation::RemoveQuadratic) => (None, Some(b_full()?)),
            Some(Ablation::RemoveLinear) => (Some(a_full()?), None),
            Some(Ablation::RemoveSoftplus) => {
                (Some(x.matmul(&params.w_a.transpose())?), Some(b_full()?))
            }
            Some(Ablation::RemoveContext) => {
                let raw_a = shared_raw_a
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("missing shared a".into()))?;
                let raw_b = shared_raw_b
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("missing shared b".into()))?;
                let a = crate::array::softplus(raw_a).neg().broadcast_row(n);
                let b = raw_b.broadcast_row(n);
                (Some(a), Some(b))
            }
        })
    }

    /// Additive n x n bias for the direct path, if this encoding has one.
    pub fn bias(&self, x: &DenseArray<T>, ps: &PositionSet<T>) -> Result<Option<DenseArray<T>>> {
        Ok(match self {
            HeadEncoding::None
            | HeadEncoding::RopeAxial { .. }
            | HeadEncoding::RopeMixed { .. } => None,
            HeadEncoding::Pape { params, .. } => {
                let (a, b) = self.pape_coefficient_arrays(x)?;
                Some(pape_bias_terms(a.as_ref(), b.as_ref(), ps, &params.w_p)?)
            }
            HeadEncoding::PapeRi(params) => Some(encodings::pape_ri_bias(x, ps, params)?),
            HeadEncoding::NdAlibi { slope } => Some(nd_alibi_bias(ps, *slope)?),
            HeadEncoding::Poly(params) => {
                let coeffs = poly_coefficients(x, params, ps.p())?;
                Some(poly_bias(&coeffs, ps)?)
            }
        })
    }

    /// Rotate queries/keys in place of a bias (rotary encodings).
    pub fn rotate(
        &self,
        q: &DenseArray<T>,
        k: &DenseArray<T>,
        ps: &PositionSet<T>,
    ) -> Result<(DenseArray<T>, DenseArray<T>)> {
        match self {
            HeadEncoding::RopeAxial { base } => {
                let freqs = rope_axial_freqs(q.cols(), ps.p(), *base)?;
                rope_apply(q, k, ps, &freqs)
            }
            HeadEncoding::RopeMixed { freqs } => rope_apply(q, k, ps, freqs),
            _ => Ok((q.clone(), k.clone())),
        }
    }

    /// Feature maps for the kernelized path. `semantic_scale` multiplies the
    /// plain q block; `bias_scale` multiplies the positional blocks (1 unless
    /// the bias is configured to share the 1/sqrt(h) scaling).
    pub fn feature_maps(
        &self,
        q: &DenseArray<T>,
        k: &DenseArray<T>,
        x: &DenseArray<T>,
        ps: &PositionSet<T>,
        semantic_scale: T,
        bias_scale: T,
    ) -> Result<(DenseArray<T>, DenseArray<T>)> {
        let n = q.rows();
        match self {
            HeadEncoding::None => Ok((q.scale(semantic_scale), k.clone())),
            HeadEncoding::RopeAxial { .. } | HeadEncoding::RopeMixed { .. } => {
                let (qr, kr) = self.rotate(q, k, ps)?;
                Ok((qr.scale(semantic_scale), kr))
            }
            HeadEncoding::Pape { params, .. } => {
                let m = params.m();
                let (a, b) = self.pape_coefficient_arrays(x)?;
                let a = a
                    .unwrap_or_else(|| DenseArray::zeros(&[n, m]))
                    .scale(bias_scale);
                let b = b
                    .unwrap_or_else(|| DenseArray::zeros(&[n, m]))
                    .scale(bias_scale);
                pape_feature_maps_raw(q, k, &a, &b, ps, &params.w_p, semantic_scale)
            }
            HeadEncoding::PapeRi(params) => {
                let (coef, full) = encodings::constrained_pape(x, ps.p(), params)?;
                let a = coef.a().scale(bias_scale);
                let b = coef.b().clone();
                pape_feature_maps_raw(q, k, &a, &b, ps, &full.w_p, semantic_scale)
            }
            HeadEncoding::Poly(params) => {
                let coeffs: Vec<DenseArray<T>> = poly_coefficients(x, params, ps.p())?
                    .into_iter()
                    .map(|c| c.scale(bias_scale))
                    .collect();
                poly_feature_maps(q, k, &coeffs, ps, semantic_scale, DEFAULT_MAX_POLY_DEGREE)
            }
            HeadEncoding::NdAlibi { .. } => Err(Error::InvalidArgument(
                "the distance bias has no feature-map form".into(),
            )),
        }
    }
}

/// Full parameter state of one multi-head attention block.
#[derive(Clone, Debug)]
pub struct MhaParams<T: Scalar> {
    pub w_q: Vec<DenseArray<T>>,
    pub w_k: Vec<DenseArray<T>>,
    pub w_v: Vec<DenseArray<T>>,
    pub w_o: DenseArray<T>,
    /// Frequency base of the absolute sinusoidal embedding added to the
    /// inputs, when that encoding is active.
    pub sincos_base: Option<f64>,
    pub heads: Vec<HeadEncoding<T>>,
}

impl<T: Scalar> MhaParams<T> {
    pub fn init_random(config: &AttentionConfig, p: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeedRng::derive(seed, "mha");
        let std = 1.0 / (config.d as f64).sqrt();
        let proj = |rng: &mut SeedRng| rng.array_normal(&[config.h, config.d], 0.0, std);
        let mut w_q = Vec::new();
        let mut w_k = Vec::new();
        let mut w_v = Vec::new();
        let mut heads = Vec::new();
        for head in 0..config.num_heads {
            w_q.push(proj(&mut rng));
            w_k.push(proj(&mut rng));
            w_v.push(proj(&mut rng));
            heads.push(HeadEncoding::init_random(
                &config.encoding,
                config.h,
                config.d,
                p,
                head,
                config.num_heads,
                &mut rng,
            )?);
        }
        let w_o = rng.array_normal(&[config.d, config.d], 0.0, std);
        let sincos_base = match &config.encoding {
            EncodingSpec::NdSincos { base } => Some(*base),
            _ => None,
        };
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_o,
            sincos_base,
            heads,
        })
    }
}

/// Multi-head attention under the configured encoding and execution path.
pub fn multi_head_attention<T: Scalar>(
    x: &DenseArray<T>,
    ps: &PositionSet<T>,
    params: &MhaParams<T>,
    config: &AttentionConfig,
) -> Result<DenseArray<T>> {
    config.validate()?;
    if x.cols() != config.d || x.rows() != ps.n() {
        return Err(Error::ShapeMismatch {
            op: "multi_head_attention",
            lhs: x.shape().to_vec(),
            rhs: vec![ps.n(), config.d],
        });
    }
    let x_in = match params.sincos_base {
        Some(base) => x.add(&nd_sincos_embed(ps, config.d, base)?)?,
        None => x.clone(),
    };
    let inv_sqrt_h = T::one() / T::of((config.h as f64).sqrt());
    let bias_scale = if config.scale_bias {
        inv_sqrt_h
    } else {
        T::one()
    };
    let mut head_outputs = Vec::with_capacity(config.num_heads);
    for head in 0..config.num_heads {
        let q = x_in.matmul(&params.w_q[head].transpose())?;
        let k = x_in.matmul(&params.w_k[head].transpose())?;
        let v = x_in.matmul(&params.w_v[head].transpose())?;
        let enc = &params.heads[head];
        let out = match config.path {
            AttentionPath::Direct => {
                let (qr, kr) = enc.rotate(&q, &k, ps)?;
                let bias = enc.bias(&x_in, ps)?.map(|b| b.scale(bias_scale));
                attention_direct(&qr, &kr, &v, bias.as_ref())?
            }
            AttentionPath::Kernelized => {
                let (qp, kp) = enc.feature_maps(&q, &k, &x_in, ps, inv_sqrt_h, bias_scale)?;
                attention_kernelized(&qp, &kp, &v, config.tile)?
            }
        };
        head_outputs.push(out.output);
    }
    let refs: Vec<&DenseArray<T>> = head_outputs.iter().collect();
    let merged = concat_last_axis(&refs)?;
    merged.matmul(&params.w_o.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    type A = DenseArray<f64>;

    fn rand_qkv(seed: u64, n: usize, h: usize) -> (A, A, A) {
        let mut rng = SeedRng::new(seed);
        (
            rng.array_normal(&[n, h], 0.0, 1.0),
            rng.array_normal(&[n, h], 0.0, 1.0),
            rng.array_normal(&[n, h], 0.0, 1.0),
        )
    }

    #[test]
    fn single_token_returns_its_value() {
        let (q, k, v) = rand_qkv(1, 1, 4);
        let out = attention_direct(&q, &k, &v, None).unwrap();
        assert!(out.output.max_abs_diff(&v) < 1e-15);
    }

    #[test]
    fn zero_bias_equals_no_bias() {
        let (q, k, v) = rand_qkv(2, 5, 4);
        let zero = A::zeros(&[5, 5]);
        let a = attention_direct(&q, &k, &v, None).unwrap();
        let b = attention_direct(&q, &k, &v, Some(&zero)).unwrap();
        assert!(a.output.max_abs_diff(&b.output) < 1e-15);
    }

    #[test]
    fn score_rows_are_stochastic() {
        let (q, k, v) = rand_qkv(3, 6, 4);
        let out = attention_direct(&q, &k, &v, None).unwrap();
        let scores = out.scores.unwrap();
        for i in 0..6 {
            let s: f64 = scores.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn non_finite_bias_reports_row() {
        let (q, k, v) = rand_qkv(4, 3, 4);
        let mut bias = A::zeros(&[3, 3]);
        bias.set(1, 2, f64::INFINITY);
        let err = attention_direct(&q, &k, &v, Some(&bias)).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }

    #[test]
    fn streaming_path_matches_direct_on_vanilla() {
        for n in [1usize, 2, 7, 33, 64] {
            let (q, k, v) = rand_qkv(100 + n as u64, n, 8);
            let direct = attention_direct(&q, &k, &v, None).unwrap();
            let scale = 1.0 / 8.0f64.sqrt();
            let streamed = attention_kernelized(&q.scale(scale), &k, &v, 16).unwrap();
            assert!(direct.output.max_abs_diff(&streamed.output) <= 1e-12);
        }
    }

    #[test]
    fn streaming_path_survives_large_logit_spread() {
        // oracle: max-shifted softmax * V with Kahan-compensated sums
        fn oracle(q: &A, k: &A, v: &A, scale: f64) -> A {
            let n = q.rows();
            let dv = v.cols();
            let mut out = A::zeros(&[n, dv]);
            for i in 0..n {
                let logits: Vec<f64> = (0..n)
                    .map(|j| {
                        q.row(i)
                            .iter()
                            .zip(k.row(j))
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            * scale
                    })
                    .collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                let mut c_denom = 0.0;
                let mut acc = vec![0.0f64; dv];
                let mut c_acc = vec![0.0f64; dv];
                for j in 0..n {
                    let w = (logits[j] - mx).exp();
                    let y = w - c_denom;
                    let t = denom + y;
                    c_denom = (t - denom) - y;
                    denom = t;
                    for (d, (a, ca)) in acc.iter_mut().zip(c_acc.iter_mut()).enumerate() {
                        let y = w * v.at(j, d) - *ca;
                        let t = *a + y;
                        *ca = (t - *a) - y;
                        *a = t;
                    }
                }
                for d in 0..dv {
                    out.set(i, d, acc[d] / denom);
                }
            }
            out
        }

        let mut rng = SeedRng::new(9);
        let n = 12;
        let q: A = rng.array_normal(&[n, 4], 0.0, 1.0);
        let mut k: A = rng.array_normal(&[n, 4], 0.0, 1.0);
        // inflate some keys so raw logits span ~1e3
        for j in 0..4 {
            let v = k.at(3, j) * 400.0;
            k.set(3, j, v);
        }
        let v: A = rng.array_normal(&[n, 4], 0.0, 1.0);
        let scale = 1.0 / 2.0;
        let reference = oracle(&q, &k, &v, scale);
        let direct = attention_direct(&q, &k, &v, None).unwrap();
        let streamed = attention_kernelized(&q.scale(scale), &k, &v, 5).unwrap();
        assert!(streamed.output.all_finite());
        assert!(direct.output.max_abs_diff(&reference) <= 1e-6);
        assert!(streamed.output.max_abs_diff(&reference) <= 1e-6);
        assert!(direct.output.max_abs_diff(&streamed.output) <= 1e-6);
    }

    #[test]
    fn tile_size_does_not_change_results() {
        let (q, k, v) = rand_qkv(11, 30, 6);
        let reference = attention_kernelized(&q, &k, &v, 30).unwrap();
        for tile in [1, 2, 7, 64, 1000] {
            let out = attention_kernelized(&q, &k, &v, tile).unwrap();
            assert!(out.output.max_abs_diff(&reference.output) <= 1e-12);
        }
    }

    #[test]
    fn kernelized_rejects_distance_bias() {
        let config = AttentionConfig::new(2, 4, EncodingSpec::NdAlibi, AttentionPath::Kernelized);
        assert!(config.validate().is_err());
    }

    #[test]
    fn cross_path_equivalence_every_kernelizable_encoding() {
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
        for (si, spec) in specs.iter().enumerate() {
            for seed in 0..4u64 {
                let mut rng = SeedRng::new(7000 + seed * 31 + si as u64);
                let n = 1 + rng.usize_below(12);
                let config_d = AttentionConfig::new(2, 8, spec.clone(), AttentionPath::Direct);
                let mut config_k = config_d.clone();
                config_k.path = AttentionPath::Kernelized;
                config_k.tile = 5;
                let params = MhaParams::init_random(&config_d, 2, 4000 + seed).unwrap();
                let x: A = rng.array_normal(&[n, config_d.d], 0.0, 1.0);
                let ps = PositionSet::new(rng.array_uniform(&[n, 2], -3.0, 3.0)).unwrap();
                let direct = multi_head_attention(&x, &ps, &params, &config_d).unwrap();
                let streamed = multi_head_attention(&x, &ps, &params, &config_k).unwrap();
                let dev = direct.max_abs_diff(&streamed);
                assert!(dev <= 1e-8, "{} seed {seed}: {dev:e}", spec.kind_name());
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = SeedRng::new(55);
        let n = 7;
        let config = AttentionConfig::new(
            2,
            6,
            EncodingSpec::Pape {
                m: 2,
                ablation: None,
            },
            AttentionPath::Direct,
        );
        let params = MhaParams::init_random(&config, 2, 19).unwrap();
        let x: A = rng.array_normal(&[n, config.d], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, 2], -2.0, 2.0)).unwrap();
        let out = multi_head_attention(&x, &ps, &params, &config).unwrap();

        let perm: Vec<usize> = vec![3, 0, 6, 1, 5, 2, 4];
        let xp = A::from_fn(&[n, config.d], |i| x.at(perm[i / config.d], i % config.d));
        let pp = PositionSet::new(A::from_fn(&[n, 2], |i| ps.row(perm[i / 2])[i % 2])).unwrap();
        let outp = multi_head_attention(&xp, &pp, &params, &config).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for j in 0..config.d {
                assert!((outp.at(i, j) - out.at(src, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pape_with_dead_coefficients_reduces_to_vanilla() {
        // drive W_a x <= -30 so a ~ -softplus(-30) ~ -1e-13, and zero W_b
        let mut rng = SeedRng::new(66);
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
        let mut params = MhaParams::init_random(&config, 2, 20).unwrap();
        let x = A::ones(&[n, config.d]).scale(0.5);
        // every row of W_a x = -40: set W_a = -10 * ones / (0.5 * d) entries
        let w_a = A::full(&[2, config.d], -40.0 / (0.5 * config.d as f64));
        let w_b = A::zeros(&[2, config.d]);
        let w_p = rng.array_normal(&[2, 2], 0.0, 1.0);
        if let HeadEncoding::Pape { params: p, .. } = &mut params.heads[0] {
            *p = PapeParams::new(w_p, w_a, w_b).unwrap();
        }
        let ps = PositionSet::grid(&[2, 3]).unwrap();
        let with_enc = multi_head_attention(&x, &ps, &params, &config).unwrap();

        let mut vanilla_cfg = config.clone();
        vanilla_cfg.encoding = EncodingSpec::None;
        let mut vanilla_params = params.clone();
        vanilla_params.heads = vec![HeadEncoding::None];
        let vanilla = multi_head_attention(&x, &ps, &vanilla_params, &vanilla_cfg).unwrap();
        assert!(with_enc.max_abs_diff(&vanilla) <= 1e-6);
    }
}
