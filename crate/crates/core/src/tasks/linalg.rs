//! Small dense symmetric-matrix helpers for the quadratic task family.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::scalar::Scalar;

/// Square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Matrix<S> {
    pub n: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![S::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = S::one();
        }
        m
    }

    pub fn diag(values: &[S]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = v;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(FedError::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
            data.extend(r.iter().map(|&v| S::lit(v)));
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.n + j]
    }

    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        debug_assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let row = &self.data[i * self.n..(i + 1) * self.n];
                row.iter()
                    .zip(x)
                    .fold(S::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }

    pub fn scale(&self, a: S) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&v| a * v).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Matrix<T> {
        Matrix {
            n: self.n,
            data: self.data.iter().map(|v| T::lit(v.as_f64())).collect(),
        }
    }

    /// Lower Cholesky factor; fails if the matrix is not positive definite.
    pub fn cholesky(&self) -> Result<Matrix<S>> {
        let n = self.n;
        let mut l = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self.get(i, j);
                for k in 0..j {
                    sum = sum - l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if !(sum > S::zero()) {
                        return Err(FedError::invalid(
                            "curvature",
                            "matrix is not symmetric positive definite",
                        ));
                    }
                    l.data[i * n + i] = sum.sqrt();
                } else {
                    l.data[i * n + j] = sum / l.get(j, j);
                }
            }
        }
        Ok(l)
    }

    /// Solves `self * x = b` for SPD `self`.
    pub fn solve_spd(&self, b: &[S]) -> Result<Vec<S>> {
        let l = self.cholesky()?;
        let n = self.n;
        let mut y = vec![S::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s = s - l.get(i, k) * y[k];
            }
            y[i] = s / l.get(i, i);
        }
        let mut x = vec![S::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - l.get(k, i) * x[k];
            }
            x[i] = s / l.get(i, i);
        }
        Ok(x)
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &Matrix<f64>) -> Vec<f64> {
    let n = m.n;
    let mut a = m.data.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalue"));
    ev
}

/// Haar-ish random orthogonal matrix via Gram-Schmidt on Gaussian columns.
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Matrix<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let proj: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= proj * ci;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
    }
    let mut m = Matrix::zeros(n);
    for (j, c) in cols.iter().enumerate() {
        for i in 0..n {
            m.data[i * n + j] = c[i];
        }
    }
    m
}

/// `Q diag(lambda) Q^T`.
pub fn spd_from_spectrum(q: &Matrix<f64>, lambda: &[f64]) -> Matrix<f64> {
    let n = q.n;
    let mut m = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..n).map(|k| q.get(i, k) * lambda[k] * q.get(j, k)).sum();
            m.data[i * n + j] = v;
        }
    }
    // exact symmetry
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m.data[i * n + j] + m.data[j * n + i]);
            m.data[i * n + j] = avg;
            m.data[j * n + i] = avg;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn solve_matches_matvec() {
        let a = Matrix::<f64>::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ])
        .unwrap();
        let x = vec![1.0, -2.0, 0.5];
        let b = a.matvec(&x);
        let got = a.solve_spd(&b).unwrap();
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn non_spd_is_rejected() {
        let a = Matrix::<f64>::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(a.cholesky().is_err());
    }

    #[test]
    fn spectrum_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(5, &mut rng);
        let lambda = [0.5, 0.9, 1.1, 1.7, 2.0];
        let a = spd_from_spectrum(&q, &lambda);
        let ev = symmetric_eigenvalues(&a);
        for (e, l) in ev.iter().zip(&lambda) {
            assert!((e - l).abs() < 1e-10, "{e} vs {l}");
        }
    }
}
