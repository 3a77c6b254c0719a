//! Dense row-major arrays and the elementwise / linear-algebra kernels the
//! rest of the crate builds on.
//!
//! Shapes are explicit and checked; there is no broadcasting beyond the few
//! row/column helpers the attention math needs. Reductions that feed a
//! softmax subtract the per-row maximum before exponentiating.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense array of scalars.
///
/// Invariant: `data.len() == shape.iter().product()`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseArray<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DenseArray<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut out = Self::zeros(&[n, n]);
        for i in 0..n {
            out.data[i * n + i] = T::one();
        }
        out
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows of a 2-D array.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() needs a 2-D array");
        self.shape[0]
    }

    /// Number of columns of a 2-D array.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() needs a 2-D array");
        self.shape[1]
    }

    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    /// Elementwise square; identical to `hadamard(self, self)` by
    /// construction.
    pub fn hadamard_square(&self) -> Self {
        self.map(|x| x * x)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|x| x * c)
    }

    pub fn neg(&self) -> Self {
        self.map(|x| -x)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (n, k, m) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = Self::zeros(&[n, m]);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out.data[i * m..(i + 1) * m];
            for (l, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[l * m..(l + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Self {
        assert_eq!(self.shape.len(), 2, "transpose needs a 2-D array");
        let (n, m) = (self.shape[0], self.shape[1]);
        let mut out = Self::zeros(&[m, n]);
        for i in 0..n {
            for j in 0..m {
                out.data[j * n + i] = self.data[i * m + j];
            }
        }
        out
    }

    /// Sum along the last axis of a 2-D array, returning n x 1.
    pub fn row_sums(&self) -> Self {
        let (n, m) = (self.rows(), self.cols());
        let mut out = Self::zeros(&[n, 1]);
        for i in 0..n {
            out.data[i] = self.data[i * m..(i + 1) * m]
                .iter()
                .fold(T::zero(), |a, &x| a + x);
        }
        out
    }

    /// Column sums of a 2-D array, returning 1 x m.
    pub fn col_sums(&self) -> Self {
        let (n, m) = (self.rows(), self.cols());
        let mut out = Self::zeros(&[1, m]);
        for i in 0..n {
            for j in 0..m {
                out.data[j] += self.data[i * m + j];
            }
        }
        out
    }

    /// Replicate an n x 1 column across `cols` columns.
    pub fn broadcast_col(&self, cols: usize) -> Self {
        assert_eq!(self.shape.len(), 2, "broadcast_col needs 2-D");
        assert_eq!(self.shape[1], 1, "broadcast_col needs an n x 1 column");
        let n = self.shape[0];
        let mut out = Self::zeros(&[n, cols]);
        for i in 0..n {
            let v = self.data[i];
            for j in 0..cols {
                out.data[i * cols + j] = v;
            }
        }
        out
    }

    /// Replicate a 1 x m row across `rows` rows.
    pub fn broadcast_row(&self, rows: usize) -> Self {
        assert_eq!(self.shape.len(), 2, "broadcast_row needs 2-D");
        assert_eq!(self.shape[0], 1, "broadcast_row needs a 1 x m row");
        let m = self.shape[1];
        let mut out = Self::zeros(&[rows, m]);
        for i in 0..rows {
            out.data[i * m..(i + 1) * m].copy_from_slice(&self.data);
        }
        out
    }

    /// Columns `[start, end)` of a 2-D array.
    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        let (n, m) = (self.rows(), self.cols());
        assert!(start <= end && end <= m, "slice_cols out of range");
        let w = end - start;
        let mut out = Self::zeros(&[n, w]);
        for i in 0..n {
            out.data[i * w..(i + 1) * w].copy_from_slice(&self.data[i * m + start..i * m + end]);
        }
        out
    }

    pub fn to_f64(&self) -> DenseArray<f64> {
        DenseArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn from_f64(src: &DenseArray<f64>) -> Self {
        Self {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&x| T::of(x)).collect(),
        }
    }
}

/// Numerically stable softplus, `ln(1 + e^x)`, evaluated as
/// `max(x, 0) + ln(1 + e^{-|x|})`. Strictly positive for finite input.
pub fn softplus<T: Scalar>(x: &DenseArray<T>) -> DenseArray<T> {
    x.map(softplus_scalar)
}

pub fn softplus_scalar<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, the derivative of softplus.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-wise softmax of a 2-D array with per-row max subtraction.
/// Rows sum to 1 for any finite input.
pub fn softmax_rows<T: Scalar>(s: &DenseArray<T>) -> Result<DenseArray<T>> {
    if !s.all_finite() {
        return Err(Error::Numeric("softmax_rows: non-finite input".into()));
    }
    let (n, m) = (s.rows(), s.cols());
    let mut out = DenseArray::zeros(&[n, m]);
    for i in 0..n {
        let row = s.row(i);
        let mx = row.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
        let orow = out.row_mut(i);
        let mut total = T::zero();
        for (o, &x) in orow.iter_mut().zip(row) {
            let e = (x - mx).exp();
            *o = e;
            total += e;
        }
        for o in orow.iter_mut() {
            *o /= total;
        }
    }
    Ok(out)
}

/// Concatenate along the last axis. All inputs must share their leading
/// dimensions: 1-D arrays concatenate end to end, 2-D arrays must have equal
/// row counts.
pub fn concat_last_axis<T: Scalar>(parts: &[&DenseArray<T>]) -> Result<DenseArray<T>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument(
            "concat_last_axis: empty input".into(),
        ));
    }
    let rank = parts[0].shape().len();
    match rank {
        1 => {
            let mut data = Vec::new();
            for p in parts {
                if p.shape().len() != 1 {
                    return Err(Error::ShapeMismatch {
                        op: "concat_last_axis",
                        lhs: parts[0].shape().to_vec(),
                        rhs: p.shape().to_vec(),
                    });
                }
                data.extend_from_slice(p.data());
            }
            let len = data.len();
            DenseArray::from_vec(&[len], data)
        }
        2 => {
            let n = parts[0].shape()[0];
            let mut total = 0usize;
            for p in parts {
                if p.shape().len() != 2 || p.shape()[0] != n {
                    return Err(Error::ShapeMismatch {
                        op: "concat_last_axis",
                        lhs: parts[0].shape().to_vec(),
                        rhs: p.shape().to_vec(),
                    });
                }
                total += p.shape()[1];
            }
            let mut out = DenseArray::zeros(&[n, total]);
            for i in 0..n {
                let mut off = 0;
                for p in parts {
                    let w = p.shape()[1];
                    out.row_mut(i)[off..off + w].copy_from_slice(p.row(i));
                    off += w;
                }
            }
            Ok(out)
        }
        r => Err(Error::InvalidArgument(format!(
            "concat_last_axis: rank {} unsupported",
            r
        ))),
    }
}

/// Dot product of two equal-length slices.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    type A = DenseArray<f64>;

    #[test]
    fn softplus_at_zero_is_ln2() {
        let y = softplus(&A::scalar(0.0));
        assert!((y.data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn softplus_large_input_tracks_asymptote() {
        let y = softplus(&A::scalar(100.0));
        assert!((y.data()[0] - 100.0).abs() < 1e-12);
    }

    #[test]
    fn softplus_negative_tail_matches_extended_precision_oracle() {
        // ln(1 + e^{-20}) evaluated at 50 decimal digits.
        let expected = 2.061_153_620_314_381e-9;
        let y = softplus(&A::scalar(-20.0));
        assert!((y.data()[0] - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn softplus_positive_and_monotone_toward_asymptote() {
        let mut prev_gap = f64::INFINITY;
        for x in [-5.0, 0.0, 1.0, 3.0, 8.0, 20.0, 40.0] {
            let y = softplus_scalar(x);
            assert!(y > 0.0);
            let gap = y - x;
            assert!(gap <= prev_gap);
            prev_gap = gap;
        }
    }

    #[test]
    fn softmax_constant_row_is_uniform() {
        let s = A::from_vec(&[1, 3], vec![7.5, 7.5, 7.5]).unwrap();
        let y = softmax_rows(&s).unwrap();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_analytic_two_entry_row() {
        let s = A::from_vec(&[1, 2], vec![0.0, std::f64::consts::LN_2]).unwrap();
        let y = softmax_rows(&s).unwrap();
        assert!((y.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((y.data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_large_spread_matches_extended_precision_oracle() {
        // softmax([1000, 1000, 999]) at 50 decimal digits.
        let s = A::from_vec(&[1, 3], vec![1000.0, 1000.0, 999.0]).unwrap();
        let y = softmax_rows(&s).unwrap();
        assert!(y.all_finite());
        let expected = [0.4223187982515182, 0.4223187982515182, 0.15536240349696361];
        for (got, want) in y.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((y.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hadamard_square_matches_examples() {
        let x = A::from_vec(&[2], vec![2.0, -3.0]).unwrap();
        let y = x.hadamard_square();
        assert_eq!(y.data(), &[4.0, 9.0]);
        assert_eq!(y, x.hadamard(&x).unwrap());
    }

    #[test]
    fn concat_flat_vectors() {
        let a = A::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = A::from_vec(&[1], vec![3.0]).unwrap();
        let c = concat_last_axis(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[3]);
        assert_eq!(c.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn matmul_identity_is_noop() {
        let m = A::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let i = A::eye(2);
        assert_eq!(i.matmul(&m).unwrap(), m);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = A::zeros(&[2, 3]);
        let b = A::zeros(&[2, 3]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "got: {msg}");
    }

    #[test]
    fn transpose_roundtrip() {
        let m = A::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.transpose().transpose(), m);
    }
}
