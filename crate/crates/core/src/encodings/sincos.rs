//! Multi-dimensional sinusoidal embeddings: the d channels are split evenly
//! across the p position axes and each block carries interleaved sin/cos
//! pairs over a geometric frequency ladder. Added to token embeddings, so
//! this is the one absolute encoding in the collection.

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::geometry::PositionSet;
use crate::scalar::Scalar;

pub const DEFAULT_FREQ_BASE: f64 = 10_000.0;

/// n x d embedding matrix for the given positions. `d` must be divisible by
/// `2p` so every axis gets an equal number of sin/cos pairs.
pub fn nd_sincos_embed<T: Scalar>(
    ps: &PositionSet<T>,
    d: usize,
    base: f64,
) -> Result<DenseArray<T>> {
    let p = ps.p();
    if d == 0 || !d.is_multiple_of(2 * p) {
        return Err(Error::InvalidArgument(format!(
            "nd_sincos: d = {} must be divisible by 2p = {}",
            d,
            2 * p
        )));
    }
    let per_axis = d / p; // even by the check above
    let pairs = per_axis / 2;
    let n = ps.n();
    let mut out = DenseArray::zeros(&[n, d]);
    for i in 0..n {
        let row = ps.row(i);
        for axis in 0..p {
            let pos = row[axis].as_f64();
            let off = axis * per_axis;
            for c in 0..pairs {
                let freq = base.powf(-2.0 * c as f64 / per_axis as f64);
                let angle = pos * freq;
                out.set(i, off + 2 * c, T::of(angle.sin()));
                out.set(i, off + 2 * c + 1, T::of(angle.cos()));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_has_zero_sin_unit_cos() {
        let ps = PositionSet::new(DenseArray::from_vec(&[1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
        let e = nd_sincos_embed(&ps, 8, DEFAULT_FREQ_BASE).unwrap();
        for c in 0..4 {
            assert_eq!(e.at(0, 2 * c), 0.0);
            assert_eq!(e.at(0, 2 * c + 1), 1.0);
        }
    }

    #[test]
    fn equal_positions_equal_embeddings() {
        let ps =
            PositionSet::new(DenseArray::from_vec(&[2, 2], vec![3.0, -1.0, 3.0, -1.0]).unwrap())
                .unwrap();
        let e = nd_sincos_embed(&ps, 12, DEFAULT_FREQ_BASE).unwrap();
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn indivisible_width_rejected() {
        let ps: PositionSet<f64> = PositionSet::grid(&[2, 2]).unwrap();
        assert!(nd_sincos_embed(&ps, 6, DEFAULT_FREQ_BASE).is_err());
    }

    #[test]
    fn matches_independent_per_axis_construction() {
        // oracle: build each axis as a stand-alone 1-D sinusoid table and
        // concatenate
        let ps = PositionSet::new(
            DenseArray::from_vec(&[3, 2], vec![1.0, 7.0, 4.0, 2.0, -2.0, 5.0]).unwrap(),
        )
        .unwrap();
        let d = 8;
        let e = nd_sincos_embed(&ps, d, DEFAULT_FREQ_BASE).unwrap();
        let per_axis = d / 2;
        for i in 0..3 {
            for axis in 0..2 {
                let pos = ps.row(i)[axis];
                for c in 0..per_axis / 2 {
                    let freq = DEFAULT_FREQ_BASE.powf(-2.0 * c as f64 / per_axis as f64);
                    let want_sin = (pos * freq).sin();
                    let want_cos = (pos * freq).cos();
                    assert!((e.at(i, axis * per_axis + 2 * c) - want_sin).abs() < 1e-15);
                    assert!((e.at(i, axis * per_axis + 2 * c + 1) - want_cos).abs() < 1e-15);
                }
            }
        }
    }
}
