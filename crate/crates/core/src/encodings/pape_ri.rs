//! Rotation-invariant instantiation of the parabolic encoding.
//!
//! Constraints: no linear term, all parabola coefficients of a token equal a
//! single negative scalar, and the projection is a scalar multiple of the
//! identity. The bias then collapses to
//! `bias_ij = alpha_i * w_p^2 * ||r_j - r_i||^2`, which only sees pairwise
//! distances and is therefore unchanged under any common rotation. What it
//! gives up is directionality.

use crate::array::{dot, softplus_scalar, DenseArray};
use crate::encodings::pape::{PapeCoefficients, PapeParams};
use crate::error::{Error, Result};
use crate::geometry::PositionSet;
use crate::scalar::Scalar;

/// Where the shared negative coefficient comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum AlphaSource<T: Scalar> {
    /// `alpha_i = -softplus(<w_alpha, x_i>)`: context awareness of the
    /// distance term is preserved. The default.
    TokenDerived { w_alpha: DenseArray<T> },
    /// One learned scalar, shared by every token.
    Shared { alpha: T },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PapeRiParams<T: Scalar> {
    pub w_p: T,
    pub alpha: AlphaSource<T>,
}

impl<T: Scalar> PapeRiParams<T> {
    pub fn token_derived(w_p: T, w_alpha: DenseArray<T>) -> Result<Self> {
        if w_alpha.shape().len() != 2 || w_alpha.rows() != 1 {
            return Err(Error::InvalidArgument(format!(
                "w_alpha must be 1 x d, got {:?}",
                w_alpha.shape()
            )));
        }
        Ok(Self {
            w_p,
            alpha: AlphaSource::TokenDerived { w_alpha },
        })
    }

    pub fn shared(w_p: T, alpha: T) -> Result<Self> {
        if alpha >= T::zero() {
            return Err(Error::Invariant(format!(
                "pape-ri: shared alpha must be strictly negative, got {}",
                alpha
            )));
        }
        Ok(Self {
            w_p,
            alpha: AlphaSource::Shared { alpha },
        })
    }

    /// Per-token alpha column (n x 1), strictly negative.
    pub fn alphas(&self, x: &DenseArray<T>) -> Result<DenseArray<T>> {
        let n = x.rows();
        let out = match &self.alpha {
            AlphaSource::TokenDerived { w_alpha } => {
                if w_alpha.cols() != x.cols() {
                    return Err(Error::ShapeMismatch {
                        op: "pape_ri alphas",
                        lhs: x.shape().to_vec(),
                        rhs: w_alpha.shape().to_vec(),
                    });
                }
                DenseArray::from_fn(&[n, 1], |i| -softplus_scalar(dot(x.row(i), w_alpha.row(0))))
            }
            AlphaSource::Shared { alpha } => DenseArray::full(&[n, 1], *alpha),
        };
        if out.data().iter().any(|&v| v >= T::zero()) {
            return Err(Error::Invariant(
                "pape-ri: alpha values must be strictly negative".into(),
            ));
        }
        Ok(out)
    }
}

/// `bias_ij = alpha_i * w_p^2 * ||r_j - r_i||^2`.
pub fn pape_ri_bias<T: Scalar>(
    x: &DenseArray<T>,
    ps: &PositionSet<T>,
    params: &PapeRiParams<T>,
) -> Result<DenseArray<T>> {
    let alphas = params.alphas(x)?;
    let wp2 = params.w_p * params.w_p;
    let d2 = ps.pairwise_sq_dists();
    let n = ps.n();
    let mut out = DenseArray::zeros(&[n, n]);
    for i in 0..n {
        let ai = alphas.data()[i] * wp2;
        for j in 0..n {
            out.set(i, j, ai * d2.at(i, j));
        }
    }
    Ok(out)
}

/// Expand the constrained parameters into a full parabolic-encoding
/// parameter set with m = p: `a_i` rows all equal to `alpha_i`, `b = 0`,
/// `W_p = w_p I`. Feeding these through the general bias reproduces
/// [`pape_ri_bias`], which is how the correspondence is tested.
pub fn constrained_pape<T: Scalar>(
    x: &DenseArray<T>,
    p: usize,
    params: &PapeRiParams<T>,
) -> Result<(PapeCoefficients<T>, PapeParams<T>)> {
    let alphas = params.alphas(x)?;
    let n = x.rows();
    let a = DenseArray::from_fn(&[n, p], |i| alphas.data()[i / p]);
    let b = DenseArray::zeros(&[n, p]);
    let coef = PapeCoefficients::new(a, b)?;
    let w_p = DenseArray::eye(p).scale(params.w_p);
    let full = PapeParams::new(
        w_p,
        DenseArray::zeros(&[p, x.cols()]),
        DenseArray::zeros(&[p, x.cols()]),
    )?;
    Ok((coef, full))
}
