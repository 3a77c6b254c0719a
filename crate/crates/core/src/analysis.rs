//! Decomposition of a parabolic-encoding attention head into positional and
//! semantic factors, and the per-head z-score that ranks their relative
//! influence over the top-attended key set.
//!
//! The row-stochastic attention satisfies `A_ij = P_ij Y_ij / gamma_i` with
//! `P_ij = exp(positional bias)`, `Y_ij = exp(<q_i, k_j>/sqrt(h))`, and
//! `gamma_i = sum_j P_ij Y_ij`. The factors are raw exponentials whenever
//! the row's combined logits stay within a safe range; beyond it a per-row
//! shift guards overflow, split between P and Y as the bias/semantic parts
//! of the row's maximal entry. Any consistent split leaves A invariant; raw
//! P and Y magnitudes are shift-convention-dependent, which only matters in
//! the guarded regime and is documented rather than claimed canonical.

use crate::array::DenseArray;
use crate::encodings::{pape_bias, PapeCoefficients};
use crate::error::{Error, Result};
use crate::geometry::PositionSet;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct AttentionDecomposition<T: Scalar> {
    /// Exponentiated positional component, strictly positive.
    pub positional: DenseArray<T>,
    /// Exponentiated semantic component, strictly positive.
    pub semantic: DenseArray<T>,
    /// Row normalizers `gamma_i = sum_j P_ij Y_ij`.
    pub gamma: DenseArray<T>,
    /// Reconstructed attention, row-stochastic.
    pub attn: DenseArray<T>,
}

impl<T: Scalar> AttentionDecomposition<T> {
    /// Swap the roles of the positional and semantic factors. `gamma` and
    /// the reconstructed attention are symmetric in the two, so only the
    /// factor labels move; the z-score negates exactly.
    pub fn swapped(&self) -> Self {
        Self {
            positional: self.semantic.clone(),
            semantic: self.positional.clone(),
            gamma: self.gamma.clone(),
            attn: self.attn.clone(),
        }
    }
}

/// Decompose one head given its parabola coefficients, queries, keys, and
/// positions. The semantic term is scaled by 1/sqrt(h) to match the
/// attention module's logit convention.
pub fn decompose<T: Scalar>(
    coef: &PapeCoefficients<T>,
    q: &DenseArray<T>,
    k: &DenseArray<T>,
    ps: &PositionSet<T>,
    w_p: &DenseArray<T>,
) -> Result<AttentionDecomposition<T>> {
    let n = ps.n();
    if q.shape() != k.shape() || q.rows() != n || coef.n() != n {
        return Err(Error::ShapeMismatch {
            op: "decompose",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    let bias = pape_bias(coef, ps, w_p)?;
    let scale = T::one() / T::of((q.cols() as f64).sqrt());
    let sem = q.matmul(&k.transpose())?.scale(scale);

    // logit magnitude beyond which a row switches to shifted factors
    let guard = T::of(100.0);
    let mut positional = DenseArray::zeros(&[n, n]);
    let mut semantic = DenseArray::zeros(&[n, n]);
    let mut gamma = DenseArray::zeros(&[n, 1]);
    let mut attn = DenseArray::zeros(&[n, n]);
    for i in 0..n {
        let mut jstar = 0;
        let mut best = T::neg_infinity();
        let mut magnitude = T::zero();
        for j in 0..n {
            let l = bias.at(i, j) + sem.at(i, j);
            if l > best {
                best = l;
                jstar = j;
            }
            magnitude = magnitude.max(bias.at(i, j).abs()).max(sem.at(i, j).abs());
        }
        // shift only when raw exponentials would leave the safe range,
        // split at the maximal entry's own bias/semantic parts
        let (shift_p, shift_y) = if magnitude > guard {
            (bias.at(i, jstar), sem.at(i, jstar))
        } else {
            (T::zero(), T::zero())
        };
        let mut g = T::zero();
        for j in 0..n {
            let pv = (bias.at(i, j) - shift_p).exp();
            let yv = (sem.at(i, j) - shift_y).exp();
            if !pv.is_finite() || !yv.is_finite() {
                return Err(Error::Numeric(format!(
                    "decompose: overflow despite row shift in row {}",
                    i
                )));
            }
            if pv <= T::zero() || yv <= T::zero() {
                return Err(Error::Numeric(format!(
                    "decompose: factor underflowed to zero in row {}",
                    i
                )));
            }
            positional.set(i, j, pv);
            semantic.set(i, j, yv);
            g += pv * yv;
        }
        gamma.set(i, 0, g);
        for j in 0..n {
            attn.set(i, j, positional.at(i, j) * semantic.at(i, j) / g);
        }
    }
    Ok(AttentionDecomposition {
        positional,
        semantic,
        gamma,
        attn,
    })
}

/// Boolean key mask per query row.
#[derive(Clone, Debug)]
pub struct KeyMask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl KeyMask {
    pub fn at(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn selected(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.selected() as f64 / (self.rows * self.cols) as f64
    }
}

/// Per row, the minimal prefix of keys (sorted by attention descending,
/// ties broken by key index ascending) whose cumulative attention reaches
/// `tau`.
pub fn top_tau_mask<T: Scalar>(attn: &DenseArray<T>, tau: f64) -> Result<KeyMask> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top_tau_mask: tau must lie in (0, 1], got {}",
            tau
        )));
    }
    let (rows, cols) = (attn.rows(), attn.cols());
    let tau_t = T::of(tau);
    let mut data = vec![false; rows * cols];
    let mut order: Vec<usize> = Vec::with_capacity(cols);
    for i in 0..rows {
        order.clear();
        order.extend(0..cols);
        let row = attn.row(i);
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut cum = T::zero();
        for &j in &order {
            data[i * cols + j] = true;
            cum += row[j];
            if cum >= tau_t {
                break;
            }
        }
    }
    Ok(KeyMask { rows, cols, data })
}

/// z-score variants for one head. `z` is the default convention: per-row
/// mean of `(P_ij - Y_ij) / gamma_i` over the masked keys, then the mean
/// over rows. The global (pair-pooled) and unmasked variants are reported
/// alongside since the averaging weights are a convention, not a theorem.
#[derive(Clone, Copy, Debug)]
pub struct ZScore<T: Scalar> {
    pub z: T,
    pub z_global: T,
    pub z_unmasked: T,
    pub mask_size: usize,
    pub mask_fraction: f64,
}

/// Positional-vs-semantic score of a decomposed head at threshold `tau`.
/// Positive means the head leans on positions, negative on semantics.
pub fn head_z_score<T: Scalar>(dec: &AttentionDecomposition<T>, tau: f64) -> Result<ZScore<T>> {
    let n = dec.attn.rows();
    let mask = top_tau_mask(&dec.attn, tau)?;
    if mask.selected() == 0 {
        return Err(Error::Numeric("head_z_score: empty mask".into()));
    }
    let mut row_mean_sum = T::zero();
    let mut global_sum = T::zero();
    let mut unmasked_sum = T::zero();
    for i in 0..n {
        let g = dec.gamma.at(i, 0);
        let mut row_sum = T::zero();
        let mut row_count = 0usize;
        for j in 0..n {
            let v = (dec.positional.at(i, j) - dec.semantic.at(i, j)) / g;
            unmasked_sum += v;
            if mask.at(i, j) {
                row_sum += v;
                row_count += 1;
            }
        }
        row_mean_sum += row_sum / T::of(row_count as f64);
        global_sum += row_sum;
    }
    Ok(ZScore {
        z: row_mean_sum / T::of(n as f64),
        z_global: global_sum / T::of(mask.selected() as f64),
        z_unmasked: unmasked_sum / T::of((n * n) as f64),
        mask_size: mask.selected(),
        mask_fraction: mask.fraction(),
    })
}
