//! Central finite differences, the gradient oracle every analytic gradient
//! in this crate is validated against. Kept independent of the tape: it only
//! ever calls the supplied closure.

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Central-difference gradient `(f(x + eps e_i) - f(x - eps e_i)) / 2 eps`
/// per coordinate. `f` must be pure and deterministic.
pub fn finite_diff_grad<T: Scalar>(
    mut f: impl FnMut(&DenseArray<T>) -> Result<T>,
    at: &DenseArray<T>,
    eps: f64,
) -> Result<DenseArray<T>> {
    let eps_t = T::of(eps);
    let mut probe = at.clone();
    let mut out = DenseArray::zeros(at.shape());
    for i in 0..at.len() {
        let orig = at.data()[i];
        probe.data_mut()[i] = orig + eps_t;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps_t;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "finite_diff_grad: non-finite evaluation at coordinate {}",
                i
            )));
        }
        out.data_mut()[i] = (plus - minus) / (T::of(2.0) * eps_t);
    }
    Ok(out)
}

/// Largest relative disagreement between two gradients, with an absolute
/// floor so near-zero coordinates compare absolutely.
pub fn max_rel_error<T: Scalar>(a: &DenseArray<T>, b: &DenseArray<T>, floor: T) -> T {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .fold(T::zero(), |acc, (&x, &y)| {
            let denom = x.abs().max(y.abs()).max(floor);
            acc.max((x - y).abs() / denom)
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_slope() {
        let at = DenseArray::scalar(3.0_f64);
        let g = finite_diff_grad(|x| Ok(x.data()[0] * x.data()[0]), &at, 1e-5).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let at = DenseArray::from_vec(&[1, 3], vec![1.0_f64, -2.0, 0.5]).unwrap();
        let g = finite_diff_grad(|_| Ok(4.25), &at, 1e-5).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_evaluation_is_reported() {
        let at = DenseArray::scalar(0.0_f64);
        let r = finite_diff_grad(|x| Ok(1.0 / x.data()[0]), &at, 1e-5);
        assert!(r.is_ok()); // 1/eps is finite
        let r = finite_diff_grad(|_| Ok(f64::NAN), &at, 1e-5);
        assert!(r.is_err());
    }
}
