//! Parabolic position encoding.
//!
//! Attention logits gain a bias that is a sum of m concave parabolas in the
//! projected relative position `W_p (r_j - r_i)`: a quadratic term with
//! strictly negative, token-derived coefficients (distance decay) and a
//! linear term (directionality). The same bias has an exact inner-product
//! form via widened query/key feature maps, which is what makes it
//! compatible with streaming attention kernels.

use crate::array::{concat_last_axis, softplus, DenseArray};
use crate::error::{Error, Result};
use crate::geometry::PositionSet;
use crate::rng::SeedRng;
use crate::scalar::Scalar;

/// Learnable projections: `w_p` (m x p) maps relative positions into the
/// parabola space, `w_a`/`w_b` (m x d) derive the per-token quadratic and
/// linear coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct PapeParams<T: Scalar> {
    pub w_p: DenseArray<T>,
    pub w_a: DenseArray<T>,
    pub w_b: DenseArray<T>,
}

impl<T: Scalar> PapeParams<T> {
    pub fn new(w_p: DenseArray<T>, w_a: DenseArray<T>, w_b: DenseArray<T>) -> Result<Self> {
        let m = w_p.rows();
        if m == 0 {
            return Err(Error::InvalidArgument(
                "pape: m must be at least 1; use ablation switches for the no-position regime"
                    .into(),
            ));
        }
        if w_a.rows() != m || w_b.rows() != m || w_a.cols() != w_b.cols() {
            return Err(Error::ShapeMismatch {
                op: "pape params",
                lhs: w_a.shape().to_vec(),
                rhs: w_b.shape().to_vec(),
            });
        }
        if !(w_p.all_finite() && w_a.all_finite() && w_b.all_finite()) {
            return Err(Error::Invariant("pape params must be finite".into()));
        }
        Ok(Self { w_p, w_a, w_b })
    }

    /// Seeded initialization: small-normal `w_p`, zero coefficient maps, so
    /// an untrained head starts indistinguishable from vanilla attention up
    /// to a mild distance decay floor.
    pub fn init(m: usize, p: usize, d: usize, rng: &mut SeedRng) -> Result<Self> {
        let w_p = rng.array_normal(&[m, p], 0.0, 0.02);
        Self::new(w_p, DenseArray::zeros(&[m, d]), DenseArray::zeros(&[m, d]))
    }

    pub fn m(&self) -> usize {
        self.w_p.rows()
    }

    pub fn p(&self) -> usize {
        self.w_p.cols()
    }

    pub fn d(&self) -> usize {
        self.w_a.cols()
    }
}

/// Per-token parabola coefficients: rows of `a` are strictly negative.
#[derive(Clone, Debug, PartialEq)]
pub struct PapeCoefficients<T: Scalar> {
    a: DenseArray<T>,
    b: DenseArray<T>,
}

impl<T: Scalar> PapeCoefficients<T> {
    pub fn new(a: DenseArray<T>, b: DenseArray<T>) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(Error::ShapeMismatch {
                op: "pape coefficients",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        if a.data().iter().any(|&v| v >= T::zero()) {
            return Err(Error::Invariant(
                "pape coefficients: every quadratic coefficient must be strictly negative".into(),
            ));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DenseArray<T> {
        &self.a
    }

    pub fn b(&self) -> &DenseArray<T> {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.a.cols()
    }
}

/// Coefficients from token content: `a_i = -softplus(W_a x_i)`,
/// `b_i = W_b x_i`. The negated softplus keeps every parabola concave.
pub fn pape_coefficients<T: Scalar>(
    x: &DenseArray<T>,
    params: &PapeParams<T>,
) -> Result<PapeCoefficients<T>> {
    if x.shape().len() != 2 || x.cols() != params.d() {
        return Err(Error::ShapeMismatch {
            op: "pape_coefficients",
            lhs: x.shape().to_vec(),
            rhs: params.w_a.shape().to_vec(),
        });
    }
    let pre_a = x.matmul(&params.w_a.transpose())?;
    let a = softplus(&pre_a).neg();
    let b = x.matmul(&params.w_b.transpose())?;
    PapeCoefficients::new(a, b)
}

/// The additive attention bias, evaluated pairwise:
/// `bias_ij = <a_i, (W_p (r_j - r_i))^2> + <b_i, W_p (r_j - r_i)>`.
/// Diagonal entries are exactly zero.
pub fn pape_bias<T: Scalar>(
    coef: &PapeCoefficients<T>,
    ps: &PositionSet<T>,
    w_p: &DenseArray<T>,
) -> Result<DenseArray<T>> {
    pape_bias_terms(Some(coef.a()), Some(coef.b()), ps, w_p)
}

/// Bias with either term optional; ablated variants drop one side.
/// Passing raw arrays (rather than [`PapeCoefficients`]) also serves the
/// no-softplus ablation, whose quadratic coefficients are unconstrained.
pub fn pape_bias_terms<T: Scalar>(
    a: Option<&DenseArray<T>>,
    b: Option<&DenseArray<T>>,
    ps: &PositionSet<T>,
    w_p: &DenseArray<T>,
) -> Result<DenseArray<T>> {
    let n = ps.n();
    let p = ps.p();
    let m = w_p.rows();
    if w_p.cols() != p {
        return Err(Error::ShapeMismatch {
            op: "pape_bias",
            lhs: w_p.shape().to_vec(),
            rhs: ps.positions().shape().to_vec(),
        });
    }
    for (name, arr) in [("a", a), ("b", b)] {
        if let Some(arr) = arr {
            if arr.rows() != n || arr.cols() != m {
                return Err(Error::ShapeMismatch {
                    op: match name {
                        "a" => "pape_bias: quadratic coefficients",
                        _ => "pape_bias: linear coefficients",
                    },
                    lhs: arr.shape().to_vec(),
                    rhs: vec![n, m],
                });
            }
        }
    }
    let mut bias = DenseArray::zeros(&[n, n]);
    let mut ds = vec![T::zero(); m];
    for i in 0..n {
        let ri = ps.row(i);
        for j in 0..n {
            if i == j {
                continue; // both terms vanish at the origin
            }
            let rj = ps.row(j);
            for (l, slot) in ds.iter_mut().enumerate() {
                let mut acc = T::zero();
                for c in 0..p {
                    acc += w_p.at(l, c) * (rj[c] - ri[c]);
                }
                *slot = acc;
            }
            let mut v = T::zero();
            if let Some(a) = a {
                let arow = a.row(i);
                for l in 0..m {
                    v += arow[l] * ds[l] * ds[l];
                }
            }
            if let Some(b) = b {
                let brow = b.row(i);
                for l in 0..m {
                    v += brow[l] * ds[l];
                }
            }
            bias.set(i, j, v);
        }
    }
    Ok(bias)
}

/// Width of the augmented queries/keys: h + 3m + 2.
pub fn feature_width(h: usize, m: usize) -> usize {
    h + 3 * m + 2
}

/// Position-aware query/key transformations whose inner product reproduces
/// the biased logit exactly, with `s_i = W_p r_i`:
///
/// ```text
/// q'_i = scale*q_i | <a_i, s_i^2> | a_i | -2 a_i*s_i | <-b_i, s_i> | b_i
/// k'_j =       k_j |           1  | s_j^2 |      s_j  |          1 | s_j
/// ```
///
/// so `<q'_i, k'_j> = scale*<q_i,k_j> + <a_i,(s_j-s_i)^2> + <b_i, s_j-s_i>`.
/// `semantic_scale` lets attention pre-scale the semantic term by 1/sqrt(h)
/// while the bias blocks enter unscaled; pass 1 for the raw identity.
pub fn pape_feature_maps<T: Scalar>(
    q: &DenseArray<T>,
    k: &DenseArray<T>,
    coef: &PapeCoefficients<T>,
    ps: &PositionSet<T>,
    w_p: &DenseArray<T>,
    semantic_scale: T,
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    pape_feature_maps_raw(q, k, coef.a(), coef.b(), ps, w_p, semantic_scale)
}

pub fn pape_feature_maps_raw<T: Scalar>(
    q: &DenseArray<T>,
    k: &DenseArray<T>,
    a: &DenseArray<T>,
    b: &DenseArray<T>,
    ps: &PositionSet<T>,
    w_p: &DenseArray<T>,
    semantic_scale: T,
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    let n = ps.n();
    if q.shape() != k.shape() || q.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "pape_feature_maps",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    if a.rows() != n || a.cols() != w_p.rows() || a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "pape_feature_maps: coefficients",
            lhs: a.shape().to_vec(),
            rhs: vec![n, w_p.rows()],
        });
    }
    let s = ps.positions().matmul(&w_p.transpose())?; // n x m
    let s_sq = s.hadamard_square();
    let ones = DenseArray::ones(&[n, 1]);

    // query-side blocks
    let q_scaled = q.scale(semantic_scale);
    let a_dot_ssq = a.hadamard(&s_sq)?.row_sums(); // n x 1
    let minus_two_a_s = a.hadamard(&s)?.scale(-T::of(2.0));
    let minus_b_dot_s = b.hadamard(&s)?.row_sums().neg(); // n x 1
    let q_prime = concat_last_axis(&[&q_scaled, &a_dot_ssq, a, &minus_two_a_s, &minus_b_dot_s, b])?;

    // key-side blocks
    let k_prime = concat_last_axis(&[k, &ones, &s_sq, &s, &ones, &s])?;
    debug_assert_eq!(q_prime.cols(), feature_width(q.cols(), w_p.rows()));
    debug_assert_eq!(k_prime.cols(), feature_width(k.cols(), w_p.rows()));
    Ok((q_prime, k_prime))
}

/// `<q'_i, k'_j>` for all pairs: the kernel-side score matrix.
pub fn feature_map_scores<T: Scalar>(
    q_prime: &DenseArray<T>,
    k_prime: &DenseArray<T>,
) -> Result<DenseArray<T>> {
    q_prime.matmul(&k_prime.transpose())
}
