//! Rotary encodings for multi-dimensional positions.
//!
//! Queries and keys are rotated pairwise; the rotation angle of pair c for a
//! token at position r is `<freqs[c, :], r>`. The axial variant assigns each
//! pair to exactly one position axis with a fixed geometric frequency
//! ladder; the mixed variant makes the full (h/2) x p frequency table
//! learnable, which buys directionality. Scores depend on positions only
//! through differences of angles, hence translation invariance.

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::geometry::PositionSet;
use crate::scalar::Scalar;

/// Fixed axial frequency table, (h/2) x p. Pair c belongs to axis
/// `c / (h / 2p)`; within its axis block the frequencies follow
/// `base^(-2 l / (h/p))`. Entries for all other axes are zero.
pub fn rope_axial_freqs<T: Scalar>(h: usize, p: usize, base: f64) -> Result<DenseArray<T>> {
    if h == 0 || !h.is_multiple_of(2 * p) {
        return Err(Error::InvalidArgument(format!(
            "rope_axial: head width {} must be divisible by 2p = {}",
            h,
            2 * p
        )));
    }
    let pairs_per_axis = h / (2 * p);
    let per_axis_dim = (h / p) as f64;
    let mut f = DenseArray::zeros(&[h / 2, p]);
    for axis in 0..p {
        for l in 0..pairs_per_axis {
            let c = axis * pairs_per_axis + l;
            f.set(c, axis, T::of(base.powf(-2.0 * l as f64 / per_axis_dim)));
        }
    }
    Ok(f)
}

/// Axial-equivalent initialization for the learnable mixed table: identical
/// to [`rope_axial_freqs`], with cross-axis entries zero, so training starts
/// from the axial baseline.
pub fn rope_mixed_init<T: Scalar>(h: usize, p: usize, base: f64) -> Result<DenseArray<T>> {
    rope_axial_freqs(h, p, base)
}

/// Rotate queries and keys by per-token angles `angles = positions freqs^T`.
/// Both sides get the same rotations, so `<q'_i, k'_j>` depends on positions
/// only through `r_j - r_i`.
pub fn rope_apply<T: Scalar>(
    q: &DenseArray<T>,
    k: &DenseArray<T>,
    ps: &PositionSet<T>,
    freqs: &DenseArray<T>,
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    let h = q.cols();
    if q.shape() != k.shape() {
        return Err(Error::ShapeMismatch {
            op: "rope_apply",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    if !h.is_multiple_of(2) || freqs.rows() != h / 2 || freqs.cols() != ps.p() {
        return Err(Error::ShapeMismatch {
            op: "rope_apply: frequency table",
            lhs: freqs.shape().to_vec(),
            rhs: vec![h / 2, ps.p()],
        });
    }
    if q.rows() != ps.n() {
        return Err(Error::ShapeMismatch {
            op: "rope_apply: positions",
            lhs: q.shape().to_vec(),
            rhs: ps.positions().shape().to_vec(),
        });
    }
    let angles = ps.positions().matmul(&freqs.transpose())?; // n x h/2
    Ok((rotate(q, &angles), rotate(k, &angles)))
}

/// Axial rotary application: fixed disjoint per-axis frequency blocks.
pub fn rope_axial_apply<T: Scalar>(
    q: &DenseArray<T>,
    k: &DenseArray<T>,
    ps: &PositionSet<T>,
    base: f64,
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    let freqs = rope_axial_freqs(q.cols(), ps.p(), base)?;
    rope_apply(q, k, ps, &freqs)
}

fn rotate<T: Scalar>(x: &DenseArray<T>, angles: &DenseArray<T>) -> DenseArray<T> {
    let (n, h) = (x.rows(), x.cols());
    let mut out = DenseArray::zeros(&[n, h]);
    for i in 0..n {
        for c in 0..h / 2 {
            let th = angles.at(i, c).as_f64();
            let (s, co) = (T::of(th.sin()), T::of(th.cos()));
            let (a, b) = (x.at(i, 2 * c), x.at(i, 2 * c + 1));
            out.set(i, 2 * c, a * co - b * s);
            out.set(i, 2 * c + 1, a * s + b * co);
        }
    }
    out
}
