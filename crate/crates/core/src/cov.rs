//! Small `d × d` matrices that are either diagonal or dense.
//!
//! Effective-noise covariances, their inverses and the SC-AMP coupling
//! matrices all live here. Large-`d` decoders only ever need diagonals, so
//! keeping the diagonal representation keeps their cost linear in `d`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};

use crate::{par, Error, Result};

/// A `d × d` matrix stored as its diagonal or as a dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum Cov {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

/// The effective noise covariance consumed by the denoisers.
pub type EffectiveNoiseCov = Cov;

impl Cov {
    pub fn scaled_identity(d: usize, value: f64) -> Self {
        Cov::Diagonal(vec![value; d])
    }

    pub fn zeros(d: usize, full: bool) -> Self {
        if full {
            Cov::Full(DMatrix::zeros(d, d))
        } else {
            Cov::Diagonal(vec![0.0; d])
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Cov::Diagonal(v) => v.len(),
            Cov::Full(m) => m.nrows(),
        }
    }

    pub fn is_full(&self) -> bool {
        matches!(self, Cov::Full(_))
    }

    pub fn diag(&self) -> Vec<f64> {
        match self {
            Cov::Diagonal(v) => v.clone(),
            Cov::Full(m) => m.diagonal().iter().copied().collect(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            Cov::Diagonal(v) => {
                if i == j {
                    v[i]
                } else {
                    0.0
                }
            }
            Cov::Full(m) => m[(i, j)],
        }
    }

    pub fn trace(&self) -> f64 {
        self.diag().iter().sum()
    }

    pub fn to_full(&self) -> DMatrix<f64> {
        match self {
            Cov::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)),
            Cov::Full(m) => m.clone(),
        }
    }

    /// Keeps only the diagonal.
    pub fn diagonal_part(&self) -> Cov {
        Cov::Diagonal(self.diag())
    }

    pub fn to_ndarray(&self) -> Array2<f64> {
        let d = self.dim();
        Array2::from_shape_fn((d, d), |(i, j)| self.get(i, j))
    }

    pub fn scale(&self, s: f64) -> Cov {
        match self {
            Cov::Diagonal(v) => Cov::Diagonal(v.iter().map(|x| x * s).collect()),
            Cov::Full(m) => Cov::Full(m * s),
        }
    }

    pub fn add(&self, other: &Cov) -> Cov {
        assert_eq!(self.dim(), other.dim());
        match (self, other) {
            (Cov::Diagonal(a), Cov::Diagonal(b)) => Cov::Diagonal(a.iter().zip(b).map(|(x, y)| x + y).collect()),
            _ => Cov::Full(self.to_full() + other.to_full()),
        }
    }

    pub fn add_identity(&self, s: f64) -> Cov {
        match self {
            Cov::Diagonal(v) => Cov::Diagonal(v.iter().map(|x| x + s).collect()),
            Cov::Full(m) => {
                let mut m = m.clone();
                for i in 0..m.nrows() {
                    m[(i, i)] += s;
                }
                Cov::Full(m)
            }
        }
    }

    /// Matrix product `self · other`.
    pub fn mul(&self, other: &Cov) -> Cov {
        assert_eq!(self.dim(), other.dim());
        match (self, other) {
            (Cov::Diagonal(a), Cov::Diagonal(b)) => Cov::Diagonal(a.iter().zip(b).map(|(x, y)| x * y).collect()),
            _ => Cov::Full(self.to_full() * other.to_full()),
        }
    }

    pub fn transpose(&self) -> Cov {
        match self {
            Cov::Diagonal(_) => self.clone(),
            Cov::Full(m) => Cov::Full(m.transpose()),
        }
    }

    /// `(M + Mᵀ)/2`.
    pub fn symmetrized(&self) -> Cov {
        match self {
            Cov::Diagonal(_) => self.clone(),
            Cov::Full(m) => Cov::Full((m + m.transpose()) * 0.5),
        }
    }

    /// Inverse of a symmetric positive (semi)definite matrix.
    ///
    /// A failed Cholesky factorization is retried once with
    /// `1e-10 · tr/d` added to the diagonal.
    pub fn inverse_spd(&self) -> Result<Cov> {
        let d = self.dim();
        let ridge = 1e-10 * self.trace().abs() / d.max(1) as f64;
        match self {
            Cov::Diagonal(v) => v
                .iter()
                .map(|&x| {
                    let x = if x > 0.0 { x } else { x + ridge };
                    if x > 0.0 && x.is_finite() {
                        Ok(1.0 / x)
                    } else {
                        Err(Error::SingularCovariance)
                    }
                })
                .collect::<Result<Vec<_>>>()
                .map(Cov::Diagonal),
            Cov::Full(m) => {
                if let Some(ch) = m.clone().cholesky() {
                    return Ok(Cov::Full(ch.inverse()));
                }
                let mut reg = m.clone();
                for i in 0..d {
                    reg[(i, i)] += ridge;
                }
                reg.cholesky()
                    .filter(|_| ridge > 0.0)
                    .map(|ch| Cov::Full(ch.inverse()))
                    .ok_or(Error::SingularCovariance)
            }
        }
    }

    /// Projects a symmetric matrix onto the PSD cone by flooring its
    /// eigenvalues at zero. Returns the projection and whether any
    /// eigenvalue was negative.
    pub fn floor_psd(&self) -> (Cov, bool) {
        match self {
            Cov::Diagonal(v) => {
                let floored = v.iter().any(|&x| x < 0.0);
                (Cov::Diagonal(v.iter().map(|&x| x.max(0.0)).collect()), floored)
            }
            Cov::Full(m) => {
                let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
                if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
                    return (self.symmetrized(), false);
                }
                let vals = eig.eigenvalues.map(|l| l.max(0.0));
                let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
                (Cov::Full(rebuilt), true)
            }
        }
    }

    /// Returns `z · self` for every row `z` of `rows`.
    pub fn right_mul_rows(&self, rows: ArrayView2<'_, f64>) -> Array2<f64> {
        assert_eq!(rows.ncols(), self.dim());
        match self {
            Cov::Diagonal(v) => {
                let mut out = rows.to_owned();
                for mut row in out.rows_mut() {
                    for (x, s) in row.iter_mut().zip(v) {
                        *x *= s;
                    }
                }
                out
            }
            Cov::Full(_) => par::matmul(rows, self.to_ndarray().view()),
        }
    }

    /// Factor used to draw `N(0, self)` vectors from standard normals.
    pub fn sampler(&self) -> GaussianFactor {
        match self {
            Cov::Diagonal(v) => GaussianFactor::Diagonal(v.iter().map(|x| x.max(0.0).sqrt()).collect()),
            Cov::Full(m) => {
                if let Some(ch) = m.clone().cholesky() {
                    return GaussianFactor::Lower(ch.l());
                }
                let (psd, floored) = self.floor_psd();
                if floored {
                    log::warn!("covariance is not PSD; negative eigenvalues floored at 0");
                }
                let eig = SymmetricEigen::new(psd.to_full());
                let sq = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                GaussianFactor::Lower(&eig.eigenvectors * DMatrix::from_diagonal(&sq))
            }
        }
    }
}

/// `F` with `F·Fᵀ = Σ`.
#[derive(Clone, Debug)]
pub enum GaussianFactor {
    Diagonal(Vec<f64>),
    Lower(DMatrix<f64>),
}

impl GaussianFactor {
    /// Writes `F · z` into `out`.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        match self {
            GaussianFactor::Diagonal(s) => {
                for ((o, &zi), &si) in out.iter_mut().zip(z).zip(s) {
                    *o = si * zi;
                }
            }
            GaussianFactor::Lower(l) => {
                let d = l.nrows();
                for (i, o) in out.iter_mut().enumerate().take(d) {
                    *o = (0..d).map(|j| l[(i, j)] * z[j]).sum();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_inverse_round_trips() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = Cov::Full(m.clone()).inverse_spd().unwrap().to_full();
        let eye = &m * inv;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_matrix_is_singular() {
        assert!(matches!(Cov::zeros(3, true).inverse_spd(), Err(Error::SingularCovariance)));
        assert!(matches!(Cov::zeros(3, false).inverse_spd(), Err(Error::SingularCovariance)));
    }

    #[test]
    fn rank_deficient_psd_is_regularized() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Cov::Full(m).inverse_spd().is_ok());
    }

    #[test]
    fn floor_psd_removes_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (p, floored) = Cov::Full(m).floor_psd();
        assert!(floored);
        let eig = SymmetricEigen::new(p.to_full());
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
    }

    #[test]
    fn sampler_factor_reproduces_covariance() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let GaussianFactor::Lower(l) = Cov::Full(m.clone()).sampler() else {
            panic!("expected dense factor");
        };
        let back = &l * l.transpose();
        assert!((back - m).abs().max() < 1e-12);
    }
}
