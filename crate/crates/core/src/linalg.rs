//! Small dense helpers: vec/Kronecker/commutation utilities, symmetrization
//! and checked inverses.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Row-major nested arrays for JSON output, used through `serialize_with`.
pub mod rows {
    use serde::ser::{Serialize, Serializer};

    use super::Mat;

    fn nested(m: &Mat) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn one<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        nested(m).serialize(s)
    }

    pub fn opt<S: Serializer>(m: &Option<Mat>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(nested).serialize(s)
    }

    pub fn opt_many<S: Serializer>(m: &Option<Vec<Mat>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(|v| v.iter().map(nested).collect::<Vec<_>>()).serialize(s)
    }
}

/// Column-stacking `vec(A)`.
pub fn vec(a: &Mat) -> Vector {
    // nalgebra storage is column-major, so the raw slice already is vec(A).
    Vector::from_column_slice(a.as_slice())
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// The commutation matrix `K_{r,c}`: the `rc × rc` permutation with
/// `K vec(A) = vec(Aᵀ)` for every `r × c` matrix `A`.
pub fn commutation(r: usize, c: usize) -> Mat {
    let n = r * c;
    let mut k = Mat::zeros(n, n);
    for i in 0..r {
        for j in 0..c {
            // A[i,j] sits at j*r + i in vec(A) and at i*c + j in vec(Aᵀ).
            k[(i * c + j, j * r + i)] = 1.0;
        }
    }
    k
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn frobenius_sq(m: &Mat) -> f64 {
    m.iter().map(|v| v * v).sum()
}

pub fn frobenius(m: &Mat) -> f64 {
    frobenius_sq(m).sqrt()
}

/// Inverse of a symmetric positive definite matrix through Cholesky.
pub fn spd_inverse(m: &Mat) -> Option<Mat> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// General inverse with a finiteness check.
pub fn checked_inverse(m: &Mat, what: &str) -> Result<Mat> {
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::Singular(what.to_string()))
    }
}

/// Smallest eigenvalue and its eigenvector for a symmetric matrix.
pub fn min_eigen(m: &Mat) -> (f64, Vector) {
    let eig = symmetrize(m).symmetric_eigen();
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    (val, eig.eigenvectors.column(idx).into_owned())
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}
