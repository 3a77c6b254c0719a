//! Univariate polynomial generalization of the parabolic encoding.
//!
//! The bias is `sum_n <a_n(x_i), (r_j - r_i)^(.n)>` for degrees n = 0..=N,
//! with per-degree coefficient maps that depend on the query token only.
//! Each coordinate power expands binomially into products of per-token
//! monomials, so the whole bias separates into query/key feature blocks:
//!
//! ```text
//! degree n, coordinate c, split l in 0..=n:
//!   q-feature = a_n[i, c] * C(n, l) * (-r_i[c])^l
//!   k-feature = r_j[c]^(n - l)
//! ```
//!
//! Block widths are p (n + 1) per degree, so the total query/key width is
//! h + p (N + 1)(N + 2) / 2. The quadratic encoding is the N = 2 member of
//! this family with an identity projection.
//!
//! Only the query-side coefficient family is implemented (key-side maps
//! identically one); coefficients of mixed query-key type and multivariate
//! terms such as bilinear forms stay out of scope and are documented in the
//! repository docs instead.

use crate::array::{concat_last_axis, DenseArray};
use crate::error::{Error, Result};
use crate::geometry::PositionSet;
use crate::scalar::Scalar;

/// Widths above this expand into more feature blocks than the desk-scale
/// harness wants to carry by default.
pub const DEFAULT_MAX_POLY_DEGREE: usize = 4;

/// How the degree-n coefficient row `a_n(x_i)` is produced from the token.
#[derive(Clone, Debug, PartialEq)]
pub enum PolyCoeffMap<T: Scalar> {
    /// Degree contributes nothing.
    Zero,
    /// `a_n(x) = W x` with W of shape p x d.
    Linear(DenseArray<T>),
    /// `a_n(x) = -softplus(W x)`: strictly negative rows, the concave
    /// quadratic regime.
    NegSoftplusLinear(DenseArray<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyParams<T: Scalar> {
    /// Index = degree; length N + 1.
    pub maps: Vec<PolyCoeffMap<T>>,
}

impl<T: Scalar> PolyParams<T> {
    pub fn degree(&self) -> usize {
        self.maps.len().saturating_sub(1)
    }

    pub fn param_count(&self) -> u64 {
        self.maps
            .iter()
            .map(|m| match m {
                PolyCoeffMap::Zero => 0,
                PolyCoeffMap::Linear(w) | PolyCoeffMap::NegSoftplusLinear(w) => w.len() as u64,
            })
            .sum()
    }
}

/// Evaluate the per-degree coefficient rows: one n x p matrix per degree.
pub fn poly_coefficients<T: Scalar>(
    x: &DenseArray<T>,
    params: &PolyParams<T>,
    p: usize,
) -> Result<Vec<DenseArray<T>>> {
    let n = x.rows();
    params
        .maps
        .iter()
        .map(|map| match map {
            PolyCoeffMap::Zero => Ok(DenseArray::zeros(&[n, p])),
            PolyCoeffMap::Linear(w) => {
                check_map_shape(w, p, x.cols())?;
                x.matmul(&w.transpose())
            }
            PolyCoeffMap::NegSoftplusLinear(w) => {
                check_map_shape(w, p, x.cols())?;
                Ok(crate::array::softplus(&x.matmul(&w.transpose())?).neg())
            }
        })
        .collect()
}

fn check_map_shape<T: Scalar>(w: &DenseArray<T>, p: usize, d: usize) -> Result<()> {
    if w.rows() != p || w.cols() != d {
        return Err(Error::ShapeMismatch {
            op: "poly coefficient map",
            lhs: w.shape().to_vec(),
            rhs: vec![p, d],
        });
    }
    Ok(())
}

fn binomial(n: usize, l: usize) -> f64 {
    let mut v = 1.0f64;
    for i in 0..l {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// Extra feature width contributed by the positional blocks.
pub fn poly_extra_width(degree: usize, p: usize) -> usize {
    p * (degree + 1) * (degree + 2) / 2
}

/// Separable query/key feature maps for the polynomial bias. `coeffs[n]` is
/// the n x p coefficient matrix for degree n (see [`poly_coefficients`]).
/// `<q'_i, k'_j> = semantic_scale * <q_i, k_j> + sum_n <a_n_i, (r_j-r_i)^n>`.
pub fn poly_feature_maps<T: Scalar>(
    q: &DenseArray<T>,
    k: &DenseArray<T>,
    coeffs: &[DenseArray<T>],
    ps: &PositionSet<T>,
    semantic_scale: T,
    max_degree: usize,
) -> Result<(DenseArray<T>, DenseArray<T>)> {
    if coeffs.is_empty() {
        return Err(Error::InvalidArgument("poly: no coefficient maps".into()));
    }
    let degree = coeffs.len() - 1;
    if degree > max_degree {
        return Err(Error::InvalidArgument(format!(
            "poly: degree {} exceeds the configured cap {}",
            degree, max_degree
        )));
    }
    let n = ps.n();
    let p = ps.p();
    if q.shape() != k.shape() || q.rows() != n {
        return Err(Error::ShapeMismatch {
            op: "poly_feature_maps",
            lhs: q.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    for c in coeffs {
        if c.rows() != n || c.cols() != p {
            return Err(Error::ShapeMismatch {
                op: "poly_feature_maps: coefficients",
                lhs: c.shape().to_vec(),
                rhs: vec![n, p],
            });
        }
    }
    let extra = poly_extra_width(degree, p);
    let mut q_blocks = DenseArray::zeros(&[n, extra]);
    let mut k_blocks = DenseArray::zeros(&[n, extra]);
    for i in 0..n {
        let r = ps.row(i);
        let mut off = 0;
        for (deg, coeff) in coeffs.iter().enumerate() {
            for c in 0..p {
                let a = coeff.at(i, c);
                let neg_r = -r[c];
                let pos_r = r[c];
                for l in 0..=deg {
                    let qf = a * T::of(binomial(deg, l)) * powi(neg_r, l);
                    let kf = powi(pos_r, deg - l);
                    q_blocks.set(i, off + l, qf);
                    k_blocks.set(i, off + l, kf);
                }
                off += deg + 1;
            }
        }
        debug_assert_eq!(off, extra);
    }
    let q_prime = concat_last_axis(&[&q.scale(semantic_scale), &q_blocks])?;
    let k_prime = concat_last_axis(&[k, &k_blocks])?;
    Ok((q_prime, k_prime))
}

fn powi<T: Scalar>(base: T, exp: usize) -> T {
    let mut out = T::one();
    for _ in 0..exp {
        out *= base;
    }
    out
}

/// Pairwise direct evaluation of the polynomial bias,
/// `bias_ij = sum_n <a_n_i, (r_j - r_i)^n>`. This is the direct-path
/// counterpart that the separable feature maps are checked against.
pub fn poly_bias<T: Scalar>(
    coeffs: &[DenseArray<T>],
    ps: &PositionSet<T>,
) -> Result<DenseArray<T>> {
    let n = ps.n();
    let p = ps.p();
    for c in coeffs {
        if c.rows() != n || c.cols() != p {
            return Err(Error::ShapeMismatch {
                op: "poly_bias",
                lhs: c.shape().to_vec(),
                rhs: vec![n, p],
            });
        }
    }
    let mut out = DenseArray::zeros(&[n, n]);
    for i in 0..n {
        let ri = ps.row(i);
        for j in 0..n {
            let rj = ps.row(j);
            let mut v = T::zero();
            for (deg, coeff) in coeffs.iter().enumerate() {
                let arow = coeff.row(i);
                for c in 0..p {
                    v += arow[c] * powi(rj[c] - ri[c], deg);
                }
            }
            out.set(i, j, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encodings::pape::{
        feature_map_scores, pape_coefficients, pape_feature_maps, PapeParams,
    };
    use crate::rng::SeedRng;

    type A = DenseArray<f64>;

    /// Literal direct evaluation of the polynomial bias, the oracle the
    /// feature maps are checked against.
    fn direct_poly_bias(coeffs: &[A], ps: &PositionSet<f64>) -> A {
        let n = ps.n();
        let p = ps.p();
        let mut out = A::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                for (deg, coeff) in coeffs.iter().enumerate() {
                    for c in 0..p {
                        v += coeff.at(i, c) * (ps.row(j)[c] - ps.row(i)[c]).powi(deg as i32);
                    }
                }
                out.set(i, j, v);
            }
        }
        out
    }

    #[test]
    fn degree_zero_adds_a_per_query_constant() {
        let mut rng = SeedRng::new(41);
        let n = 4;
        let q: A = rng.array_normal(&[n, 6], 0.0, 1.0);
        let k: A = rng.array_normal(&[n, 6], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, 2], -2.0, 2.0)).unwrap();
        let c0: A = rng.array_normal(&[n, 2], 0.0, 1.0);
        let (qp, kp) = poly_feature_maps(
            &q,
            &k,
            std::slice::from_ref(&c0),
            &ps,
            1.0,
            DEFAULT_MAX_POLY_DEGREE,
        )
        .unwrap();
        let scores = feature_map_scores(&qp, &kp).unwrap();
        let plain = q.matmul(&k.transpose()).unwrap();
        for i in 0..n {
            let konst = c0.row(i).iter().sum::<f64>();
            for j in 0..n {
                assert!((scores.at(i, j) - plain.at(i, j) - konst).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn degree_one_matches_directional_oracle() {
        let mut rng = SeedRng::new(42);
        let n = 6;
        let q: A = rng.array_normal(&[n, 4], 0.0, 1.0);
        let k: A = rng.array_normal(&[n, 4], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, 3], -2.0, 2.0)).unwrap();
        let coeffs = vec![A::zeros(&[n, 3]), rng.array_normal(&[n, 3], 0.0, 1.0)];
        let (qp, kp) =
            poly_feature_maps(&q, &k, &coeffs, &ps, 1.0, DEFAULT_MAX_POLY_DEGREE).unwrap();
        let scores = feature_map_scores(&qp, &kp).unwrap();
        let expect = q
            .matmul(&k.transpose())
            .unwrap()
            .add(&direct_poly_bias(&coeffs, &ps))
            .unwrap();
        assert!(scores.max_abs_diff(&expect) <= 1e-10);
    }

    #[test]
    fn higher_degrees_match_direct_oracle() {
        let mut rng = SeedRng::new(43);
        let n = 5;
        for degree in 2..=4 {
            let q: A = rng.array_normal(&[n, 4], 0.0, 1.0);
            let k: A = rng.array_normal(&[n, 4], 0.0, 1.0);
            let ps = PositionSet::new(rng.array_uniform(&[n, 2], -1.5, 1.5)).unwrap();
            let coeffs: Vec<A> = (0..=degree)
                .map(|_| rng.array_normal(&[n, 2], 0.0, 0.5))
                .collect();
            let (qp, kp) =
                poly_feature_maps(&q, &k, &coeffs, &ps, 1.0, DEFAULT_MAX_POLY_DEGREE).unwrap();
            let scores = feature_map_scores(&qp, &kp).unwrap();
            let expect = q
                .matmul(&k.transpose())
                .unwrap()
                .add(&direct_poly_bias(&coeffs, &ps))
                .unwrap();
            assert!(
                scores.max_abs_diff(&expect) <= 1e-9,
                "degree {degree}: {:e}",
                scores.max_abs_diff(&expect)
            );
        }
    }

    #[test]
    fn quadratic_member_equals_parabolic_encoding_with_identity_projection() {
        let mut rng = SeedRng::new(44);
        let (n, d, p, h) = (6, 5, 2, 8);
        let x: A = rng.array_normal(&[n, d], 0.0, 1.0);
        let q: A = rng.array_normal(&[n, h], 0.0, 1.0);
        let k: A = rng.array_normal(&[n, h], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, p], -2.0, 2.0)).unwrap();
        let w_a: A = rng.array_normal(&[p, d], 0.0, 0.8);
        let w_b: A = rng.array_normal(&[p, d], 0.0, 0.8);

        // parabolic path, W_p = I so m = p
        let params = PapeParams::new(A::eye(p), w_a.clone(), w_b.clone()).unwrap();
        let coef = pape_coefficients(&x, &params).unwrap();
        let (qp, kp) = pape_feature_maps(&q, &k, &coef, &ps, &params.w_p, 1.0).unwrap();
        let pape_scores = feature_map_scores(&qp, &kp).unwrap();

        // polynomial path with the same coefficient maps
        let poly = PolyParams {
            maps: vec![
                PolyCoeffMap::Zero,
                PolyCoeffMap::Linear(w_b),
                PolyCoeffMap::NegSoftplusLinear(w_a),
            ],
        };
        let coeffs = poly_coefficients(&x, &poly, p).unwrap();
        let (qq, kk) =
            poly_feature_maps(&q, &k, &coeffs, &ps, 1.0, DEFAULT_MAX_POLY_DEGREE).unwrap();
        let poly_scores = feature_map_scores(&qq, &kk).unwrap();

        assert!(poly_scores.max_abs_diff(&pape_scores) <= 1e-10);
    }

    #[test]
    fn degree_cap_is_enforced() {
        let mut rng = SeedRng::new(45);
        let n = 3;
        let q: A = rng.array_normal(&[n, 4], 0.0, 1.0);
        let k: A = rng.array_normal(&[n, 4], 0.0, 1.0);
        let ps = PositionSet::new(rng.array_uniform(&[n, 2], -1.0, 1.0)).unwrap();
        let coeffs: Vec<A> = (0..=5).map(|_| A::zeros(&[n, 2])).collect();
        assert!(poly_feature_maps(&q, &k, &coeffs, &ps, 1.0, 4).is_err());
        assert!(poly_feature_maps(&q, &k, &coeffs, &ps, 1.0, 5).is_ok());
    }
}
