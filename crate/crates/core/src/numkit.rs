//! Flat dense-vector arithmetic.
//!
//! Every model, gradient and control variate in the simulator is a
//! [`ParamVec`]. Reductions always run in ascending index order so results
//! are bit-reproducible regardless of how the caller schedules work.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};
use crate::scalar::Scalar;

/// Contiguous parameter vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound = "S: Scalar")]
pub struct ParamVec<S> {
    data: Vec<S>,
}

impl<S: Scalar> ParamVec<S> {
    pub fn new(data: Vec<S>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![S::zero(); dim],
        }
    }

    pub fn from_f64(values: &[f64]) -> Self {
        Self::new(values.iter().map(|&v| S::lit(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_inner(self) -> Vec<S> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, S> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub(crate) fn check_dim(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(FedError::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    /// `self - other`
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self::new(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a - b)
                .collect(),
        ))
    }

    /// `self + other`
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_dim(other)?;
        Ok(Self::new(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        ))
    }

    pub fn scale(&self, a: S) -> Self {
        Self::new(self.data.iter().map(|&v| a * v).collect())
    }

    /// In-place `self += a * x`.
    pub fn axpy_assign(&mut self, a: S, x: &Self) -> Result<()> {
        self.check_dim(x)?;
        for (y, &xv) in self.data.iter_mut().zip(&x.data) {
            *y = a * xv + *y;
        }
        Ok(())
    }
}

impl<S> Index<usize> for ParamVec<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.data[i]
    }
}

impl<S> IndexMut<usize> for ParamVec<S> {
    fn index_mut(&mut self, i: usize) -> &mut S {
        &mut self.data[i]
    }
}

impl<S: Scalar> From<Vec<S>> for ParamVec<S> {
    fn from(data: Vec<S>) -> Self {
        Self::new(data)
    }
}

/// `a * x + y`, componentwise.
pub fn axpy<S: Scalar>(a: S, x: &ParamVec<S>, y: &ParamVec<S>) -> Result<ParamVec<S>> {
    let mut out = y.clone();
    out.axpy_assign(a, x)?;
    Ok(out)
}

/// Componentwise arithmetic mean. Summation runs over the list in order.
pub fn mean_vecs<S: Scalar>(vs: &[ParamVec<S>]) -> Result<ParamVec<S>> {
    let first = vs.first().ok_or(FedError::Empty("mean_vecs input"))?;
    let mut acc = ParamVec::zeros(first.len());
    for v in vs {
        acc.check_dim(v)?;
        for (a, &x) in acc.data.iter_mut().zip(&v.data) {
            *a = *a + x;
        }
    }
    let inv = S::one() / S::from_count(vs.len());
    for a in acc.data.iter_mut() {
        *a = *a * inv;
    }
    Ok(acc)
}

pub fn dot<S: Scalar>(x: &ParamVec<S>, y: &ParamVec<S>) -> Result<S> {
    x.check_dim(y)?;
    Ok(x.data
        .iter()
        .zip(&y.data)
        .fold(S::zero(), |acc, (&a, &b)| acc + a * b))
}

pub fn l2_norm<S: Scalar>(x: &ParamVec<S>) -> S {
    x.data.iter().fold(S::zero(), |acc, &v| acc + v * v).sqrt()
}

/// Squared Euclidean distance.
pub fn dist_sq<S: Scalar>(x: &ParamVec<S>, y: &ParamVec<S>) -> Result<S> {
    x.check_dim(y)?;
    Ok(x.data.iter().zip(&y.data).fold(S::zero(), |acc, (&a, &b)| {
        let d = a - b;
        acc + d * d
    }))
}

pub fn dist<S: Scalar>(x: &ParamVec<S>, y: &ParamVec<S>) -> Result<S> {
    Ok(dist_sq(x, y)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVec<f64> {
        ParamVec::from_f64(v)
    }

    #[test]
    fn axpy_examples() {
        let v = pv(&[1.5, -2.0, 7.0]);
        assert_eq!(axpy(0.0, &pv(&[9.0, 9.0, 9.0]), &v).unwrap(), v);
        assert_eq!(
            axpy(1.0, &pv(&[1.0, 2.0]), &pv(&[3.0, 4.0])).unwrap(),
            pv(&[4.0, 6.0])
        );
        assert_eq!(axpy(-1.0, &v, &v).unwrap(), ParamVec::zeros(3));
    }

    #[test]
    fn axpy_dimension_mismatch() {
        let err = axpy(1.0, &pv(&[1.0]), &pv(&[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, FedError::DimensionMismatch { .. }));
    }

    #[test]
    fn mean_examples() {
        let v = pv(&[0.25, -3.0]);
        assert_eq!(mean_vecs(std::slice::from_ref(&v)).unwrap(), v);
        assert_eq!(
            mean_vecs(&[pv(&[0.0, 0.0]), pv(&[2.0, 4.0])]).unwrap(),
            pv(&[1.0, 2.0])
        );
        let copies = vec![pv(&[0.5, 1.0, -2.0]); 8];
        assert_eq!(mean_vecs(&copies).unwrap(), copies[0]);
        assert!(matches!(
            mean_vecs::<f64>(&[]),
            Err(FedError::Empty(_))
        ));
    }

    #[test]
    fn norms() {
        assert_eq!(l2_norm(&pv(&[3.0, 4.0])), 5.0);
        assert_eq!(dot(&pv(&[1.0, 2.0]), &ParamVec::zeros(2)).unwrap(), 0.0);
        assert_eq!(dot(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(dot(&pv(&[1.0]), &pv(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let x = ParamVec::<f32>::from_f64(&[3.0, 4.0]);
        assert_eq!(l2_norm(&x), 5.0f32);
        let m = mean_vecs(&[x.clone(), ParamVec::zeros(2)]).unwrap();
        assert_eq!(m.as_slice(), &[1.5f32, 2.0]);
    }

    fn vecs(dim: usize, count: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-100.0f64..100.0, dim), count)
    }

    proptest! {
        #[test]
        fn mean_minimizes_sum_of_squares(
            vs in vecs(4, 5),
            dir in prop::collection::vec(-1.0f64..1.0, 4),
            step in 1e-3f64..1.0,
        ) {
            let vs: Vec<ParamVec<f64>> = vs.iter().map(|v| pv(v)).collect();
            let mean = mean_vecs(&vs).unwrap();
            let cost = |c: &ParamVec<f64>| -> f64 {
                vs.iter().map(|v| dist_sq(v, c).unwrap()).sum()
            };
            let perturbed = axpy(step, &pv(&dir), &mean).unwrap();
            prop_assert!(cost(&perturbed) >= cost(&mean) - 1e-9);
        }

        #[test]
        fn operations_are_reproducible(vs in vecs(6, 3), a in -5.0f64..5.0) {
            let vs: Vec<ParamVec<f64>> = vs.iter().map(|v| pv(v)).collect();
            let m1 = mean_vecs(&vs).unwrap();
            let m2 = mean_vecs(&vs).unwrap();
            prop_assert_eq!(m1.as_slice(), m2.as_slice());
            let y1 = axpy(a, &vs[0], &vs[1]).unwrap();
            let y2 = axpy(a, &vs[0], &vs[1]).unwrap();
            prop_assert_eq!(y1.as_slice(), y2.as_slice());
            prop_assert_eq!(
                dot(&vs[0], &vs[2]).unwrap().to_bits(),
                dot(&vs[0], &vs[2]).unwrap().to_bits()
            );
        }
    }
}
