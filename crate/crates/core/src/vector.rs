use alloc::vec::Vec;
use core::ops::Index;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Norm {
    L1,
    L2,
}

/// Dense vector of finite `f64` values.
///
/// Every constructor rejects NaN and infinities, so a `Vector` in hand is
/// always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        check_finite(&data)?;
        Ok(Vector(data))
    }

    pub fn zeros(d: usize) -> Self {
        Vector(alloc::vec![0.0; d])
    }

    pub fn filled(d: usize, value: f64) -> Result<Self> {
        Self::from_vec(alloc::vec![value; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self, order: Norm) -> f64 {
        norm_unchecked(&self.0, order)
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        same_len(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Vector) -> Result<Vector> {
        same_len(self.len(), other.len())?;
        let out = self.0.iter().zip(&other.0).map(|(a, b)| a + alpha * b).collect();
        Self::from_vec(out)
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        self.axpy(-1.0, other)
    }

    pub fn hadamard(&self, other: &Vector) -> Result<Vector> {
        same_len(self.len(), other.len())?;
        Self::from_vec(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    pub fn scale(&self, alpha: f64) -> Result<Vector> {
        Self::from_vec(self.0.iter().map(|a| alpha * a).collect())
    }

    pub fn iter(&self) -> core::slice::Iter<'_, f64> {
        self.0.iter()
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Vector::from_vec(v)
    }
}

/// ℓ1 or ℓ2 norm of a raw slice; rejects non-finite entries.
pub fn norm(v: &[f64], order: Norm) -> Result<f64> {
    check_finite(v)?;
    Ok(norm_unchecked(v, order))
}

pub(crate) fn norm_unchecked(v: &[f64], order: Norm) -> f64 {
    match order {
        Norm::L1 => v.iter().map(|a| a.abs()).sum(),
        Norm::L2 => l2(v),
    }
}

/// Scaled two-pass ℓ2 norm, safe against overflow for large entries.
pub(crate) fn l2(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    if (1e-100..1e100).contains(&scale) {
        return libm::sqrt(v.iter().map(|a| a * a).sum());
    }
    let s: f64 = v.iter().map(|a| (a / scale) * (a / scale)).sum();
    scale * libm::sqrt(s)
}

pub(crate) fn check_finite(v: &[f64]) -> Result<()> {
    match v.iter().position(|a| !a.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn same_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn norms_of_small_vectors() {
        assert_eq!(norm(&[3.0, 4.0], Norm::L2).unwrap(), 5.0);
        assert_eq!(norm(&[1.0; 4], Norm::L1).unwrap(), 4.0);
        assert_eq!(norm(&[0.0; 7], Norm::L1).unwrap(), 0.0);
        assert_eq!(norm(&[0.0; 7], Norm::L2).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_is_rejected_with_index() {
        assert_eq!(norm(&[1.0, f64::NAN], Norm::L1), Err(Error::NonFinite { index: 1 }));
        assert!(Vector::from_vec(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn l2_survives_huge_entries() {
        let n = norm(&[3e200, 4e200], Norm::L2).unwrap();
        assert!((n / 5e200 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_lengths() {
        let a = Vector::zeros(2);
        let b = Vector::zeros(3);
        assert_eq!(a.dot(&b), Err(Error::DimensionMismatch { expected: 2, found: 3 }));
    }
}
