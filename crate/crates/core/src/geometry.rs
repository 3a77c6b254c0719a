//! Token positions and rigid motions: integer patch grids, spatio-temporal
//! grids via per-axis scaling, random rotations, and the train/eval
//! position-interpolation rescaling.
//!
//! Grid coordinates start at 1, so a 14x14 patch grid spans [1, 14] per axis
//! and extrapolated grids extend the same integer lattice.

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::rng::SeedRng;
use crate::scalar::Scalar;

/// Positions of n tokens in p-dimensional Euclidean space (one row each).
#[derive(Clone, Debug, PartialEq)]
pub struct PositionSet<T: Scalar> {
    positions: DenseArray<T>,
}

impl<T: Scalar> PositionSet<T> {
    pub fn new(positions: DenseArray<T>) -> Result<Self> {
        if positions.shape().len() != 2 || positions.rows() == 0 || positions.cols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "positions must be a non-empty n x p matrix, got {:?}",
                positions.shape()
            )));
        }
        if !positions.all_finite() {
            return Err(Error::Invariant("positions must be finite".into()));
        }
        Ok(Self { positions })
    }

    /// Cartesian product of integer coordinates `1..=extent` per axis, in
    /// row-major order (last axis fastest).
    pub fn grid(extents: &[usize]) -> Result<Self> {
        if extents.is_empty() {
            return Err(Error::InvalidArgument("grid: no axes given".into()));
        }
        if extents.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "grid: zero extent in {:?}",
                extents
            )));
        }
        let p = extents.len();
        let n: usize = extents.iter().product();
        let mut data = Vec::with_capacity(n * p);
        let mut idx = vec![1usize; p];
        for _ in 0..n {
            data.extend(idx.iter().map(|&c| T::of(c as f64)));
            for axis in (0..p).rev() {
                if idx[axis] < extents[axis] {
                    idx[axis] += 1;
                    break;
                }
                idx[axis] = 1;
            }
        }
        Ok(Self {
            positions: DenseArray::from_vec(&[n, p], data)?,
        })
    }

    pub fn n(&self) -> usize {
        self.positions.rows()
    }

    pub fn p(&self) -> usize {
        self.positions.cols()
    }

    pub fn positions(&self) -> &DenseArray<T> {
        &self.positions
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.positions.row(i)
    }

    /// Shift every position by `t`.
    pub fn translate(&self, t: &[T]) -> Result<Self> {
        if t.len() != self.p() {
            return Err(Error::ShapeMismatch {
                op: "translate",
                lhs: self.positions.shape().to_vec(),
                rhs: vec![t.len()],
            });
        }
        let p = self.p();
        let positions = DenseArray::from_fn(self.positions.shape(), |i| {
            self.positions.data()[i] + t[i % p]
        });
        Ok(Self { positions })
    }

    /// Replace every position r by R r.
    pub fn rotate(&self, r: &RigidRotation<T>) -> Result<Self> {
        if r.p() != self.p() {
            return Err(Error::ShapeMismatch {
                op: "rotate",
                lhs: self.positions.shape().to_vec(),
                rhs: r.matrix().shape().to_vec(),
            });
        }
        // rows are r_i, so rotated rows are r_i R^T
        let positions = self.positions.matmul(&r.matrix().transpose())?;
        Ok(Self { positions })
    }

    /// Rescale all coordinates by `train_res / target_res`, mapping
    /// evaluation-time positions back into the training range.
    pub fn interpolate(&self, train_res: usize, target_res: usize) -> Result<Self> {
        let factor = interpolation_factor(train_res, target_res)?;
        Ok(Self {
            positions: self.positions.scale(T::of(factor)),
        })
    }

    /// Per-axis scaling, e.g. bringing event-camera timestamps to a scale
    /// comparable with the spatial axes.
    pub fn scale_axes(&self, factors: &[T]) -> Result<Self> {
        if factors.len() != self.p() {
            return Err(Error::ShapeMismatch {
                op: "scale_axes",
                lhs: self.positions.shape().to_vec(),
                rhs: vec![factors.len()],
            });
        }
        let p = self.p();
        let positions = DenseArray::from_fn(self.positions.shape(), |i| {
            self.positions.data()[i] * factors[i % p]
        });
        Ok(Self { positions })
    }

    /// n x n matrix of squared Euclidean distances between positions.
    pub fn pairwise_sq_dists(&self) -> DenseArray<T> {
        let n = self.n();
        let mut out = DenseArray::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let d2 = self
                    .row(i)
                    .iter()
                    .zip(self.row(j))
                    .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
                out.set(i, j, d2);
            }
        }
        out
    }
}

/// Interpolation factor `train_res / target_res`.
pub fn interpolation_factor(train_res: usize, target_res: usize) -> Result<f64> {
    if train_res == 0 || target_res == 0 {
        return Err(Error::InvalidArgument(format!(
            "interpolation needs positive resolutions, got {} and {}",
            train_res, target_res
        )));
    }
    Ok(train_res as f64 / target_res as f64)
}

/// A proper rotation: p x p orthogonal with determinant +1.
#[derive(Clone, Debug)]
pub struct RigidRotation<T: Scalar> {
    matrix: DenseArray<T>,
}

const ORTHO_TOL: f64 = 1e-10;

impl<T: Scalar> RigidRotation<T> {
    pub fn identity(p: usize) -> Self {
        Self {
            matrix: DenseArray::eye(p),
        }
    }

    /// Validate and wrap a matrix as a rotation.
    pub fn new(matrix: DenseArray<T>) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.rows() != matrix.cols() || matrix.rows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "rotation must be square, got {:?}",
                matrix.shape()
            )));
        }
        let p = matrix.rows();
        let gram = matrix.transpose().matmul(&matrix)?;
        let dev = gram.max_abs_diff(&DenseArray::eye(p)).as_f64();
        if dev > ORTHO_TOL {
            return Err(Error::Invariant(format!(
                "rotation is not orthogonal: max |R^T R - I| = {:e}",
                dev
            )));
        }
        let det = determinant(&matrix);
        if (det.as_f64() - 1.0).abs() > ORTHO_TOL {
            return Err(Error::Invariant(format!(
                "rotation must have determinant +1, got {}",
                det
            )));
        }
        Ok(Self { matrix })
    }

    /// Deterministic random rotation: Gram-Schmidt on a seeded Gaussian
    /// matrix. The orthonormalization fixes each pivot's sign before the
    /// final determinant correction (negating the last column if needed), so
    /// the result is a function of the seed alone.
    pub fn random(p: usize, seed: u64) -> Self {
        if p == 1 {
            return Self::identity(1);
        }
        let mut rng = SeedRng::derive(seed, "rotation");
        loop {
            let g: DenseArray<T> = rng.array_normal(&[p, p], 0.0, 1.0);
            if let Some(q) = gram_schmidt_columns(&g) {
                let mut m = q;
                if determinant(&m).as_f64() < 0.0 {
                    for i in 0..p {
                        let v = m.at(i, p - 1);
                        m.set(i, p - 1, -v);
                    }
                }
                return Self { matrix: m };
            }
            // near-singular draw; take the next one from the stream
        }
    }

    pub fn p(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &DenseArray<T> {
        &self.matrix
    }
}

/// Modified Gram-Schmidt over columns with positive-diagonal sign fix.
/// Returns None if a column collapses below tolerance.
fn gram_schmidt_columns<T: Scalar>(m: &DenseArray<T>) -> Option<DenseArray<T>> {
    let p = m.rows();
    let mut q = m.clone();
    for k in 0..p {
        for j in 0..k {
            let mut proj = T::zero();
            for i in 0..p {
                proj += q.at(i, j) * q.at(i, k);
            }
            for i in 0..p {
                let v = q.at(i, k) - proj * q.at(i, j);
                q.set(i, k, v);
            }
        }
        let norm = (0..p)
            .fold(T::zero(), |acc, i| acc + q.at(i, k) * q.at(i, k))
            .sqrt();
        if norm.as_f64() < 1e-8 {
            return None;
        }
        // sign fix: make the pivot entry non-negative
        let sign = if q.at(k, k) < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        for i in 0..p {
            let v = q.at(i, k) / norm * sign;
            q.set(i, k, v);
        }
    }
    Some(q)
}

/// Determinant by LU with partial pivoting; positions live in p <= 4 but
/// this works for any square size.
pub fn determinant<T: Scalar>(m: &DenseArray<T>) -> T {
    let p = m.rows();
    let mut a = m.clone();
    let mut det = T::one();
    for k in 0..p {
        let mut pivot = k;
        for i in k + 1..p {
            if a.at(i, k).abs() > a.at(pivot, k).abs() {
                pivot = i;
            }
        }
        if a.at(pivot, k) == T::zero() {
            return T::zero();
        }
        if pivot != k {
            for j in 0..p {
                let tmp = a.at(k, j);
                let v = a.at(pivot, j);
                a.set(k, j, v);
                a.set(pivot, j, tmp);
            }
            det = -det;
        }
        det *= a.at(k, k);
        for i in k + 1..p {
            let f = a.at(i, k) / a.at(k, k);
            for j in k..p {
                let v = a.at(i, j) - f * a.at(k, j);
                a.set(i, j, v);
            }
        }
    }
    det
}
