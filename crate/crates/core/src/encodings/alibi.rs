//! Distance-penalty bias: each head subtracts a fixed multiple of the
//! Euclidean distance between token positions. Translation and rotation
//! invariant, no learnable parameters.

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::geometry::PositionSet;
use crate::scalar::Scalar;

/// The classic geometric head-slope ladder, negated:
/// head k of H gets `-2^(-8k/H)`, k = 1..H.
pub fn alibi_slopes(num_heads: usize) -> Vec<f64> {
    (1..=num_heads)
        .map(|k| -(2.0f64.powf(-8.0 * k as f64 / num_heads as f64)))
        .collect()
}

/// `bias_ij = slope * ||r_j - r_i||`. Symmetric with a zero diagonal.
pub fn nd_alibi_bias<T: Scalar>(ps: &PositionSet<T>, slope: T) -> Result<DenseArray<T>> {
    if slope >= T::zero() {
        return Err(Error::InvalidArgument(format!(
            "nd_alibi: slope must be strictly negative, got {}",
            slope
        )));
    }
    let d2 = ps.pairwise_sq_dists();
    Ok(d2.map(|v| slope * v.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidRotation;
    use crate::rng::SeedRng;

    #[test]
    fn three_four_five_triangle() {
        let ps = PositionSet::new(DenseArray::from_vec(&[2, 2], vec![0.0, 0.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let bias = nd_alibi_bias(&ps, -1.0).unwrap();
        assert_eq!(bias.at(0, 1), -5.0);
        assert_eq!(bias.at(1, 0), -5.0);
        assert_eq!(bias.at(0, 0), 0.0);
    }

    #[test]
    fn nonnegative_slope_rejected() {
        let ps = PositionSet::grid(&[2, 2]).unwrap();
        assert!(nd_alibi_bias(&ps, 0.0).is_err());
        assert!(nd_alibi_bias(&ps, 0.25).is_err());
    }

    #[test]
    fn rotation_invariant() {
        let mut rng = SeedRng::new(3);
        let ps = PositionSet::new(rng.array_uniform(&[6, 3], -2.0, 2.0)).unwrap();
        let base = nd_alibi_bias(&ps, -0.5).unwrap();
        for seed in 0..20 {
            let r = RigidRotation::random(3, seed);
            let bias = nd_alibi_bias(&ps.rotate(&r).unwrap(), -0.5).unwrap();
            assert!(base.max_abs_diff(&bias) <= 1e-10);
        }
    }

    #[test]
    fn slope_ladder_is_negative_and_geometric() {
        let s = alibi_slopes(8);
        assert_eq!(s.len(), 8);
        assert!(s.iter().all(|&v| v < 0.0));
        for w in s.windows(2) {
            assert!((w[1] / w[0] - 2.0f64.powf(-1.0)).abs() < 1e-12);
        }
        assert!((s[7] + 2.0f64.powi(-8)).abs() < 1e-15);
    }
}
