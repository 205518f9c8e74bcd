//! Dense linear-algebra helpers on top of `faer`.
//!
//! Every kernel here runs with `Par::Seq` so results never depend on the
//! number of worker threads.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd::{self, ComputeEigenvectors};
use faer::linalg::matmul::matmul;
use faer::linalg::svd::{self, ComputeSvdVectors};
use faer::{Accum, Mat, MatRef, Par};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// A complex matrix stored as separate real and imaginary parts.
///
/// All Hamiltonians supported by [`crate::model`] are real in the Fock basis,
/// so the imaginary part is usually absent and costs nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMatrix {
    re: Mat<f64>,
    im: Option<Mat<f64>>,
}

impl SplitMatrix {
    pub fn from_real(re: Mat<f64>) -> Self {
        Self { re, im: None }
    }

    /// Builds from both parts; an all-zero imaginary part is dropped.
    pub fn from_parts(re: Mat<f64>, im: Mat<f64>) -> Self {
        assert_eq!(re.shape(), im.shape());
        let im = if max_abs(im.as_ref()) == 0.0 { None } else { Some(im) };
        Self { re, im }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> Complex64) -> Self {
        let mut re = Mat::<f64>::zeros(rows, cols);
        let mut im = Mat::<f64>::zeros(rows, cols);
        for j in 0..cols {
            for i in 0..rows {
                let z = f(i, j);
                re[(i, j)] = z.re;
                im[(i, j)] = z.im;
            }
        }
        Self::from_parts(re, im)
    }

    pub fn nrows(&self) -> usize {
        self.re.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.re.ncols()
    }

    pub fn is_real(&self) -> bool {
        self.im.is_none()
    }

    pub fn re(&self) -> MatRef<'_, f64> {
        self.re.as_ref()
    }

    pub fn im(&self) -> Option<MatRef<'_, f64>> {
        self.im.as_ref().map(|m| m.as_ref())
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let im = self.im.as_ref().map_or(0.0, |m| m[(i, j)]);
        Complex64::new(self.re[(i, j)], im)
    }

    #[inline]
    pub fn norm_sqr(&self, i: usize, j: usize) -> f64 {
        let re = self.re[(i, j)];
        let im = self.im.as_ref().map_or(0.0, |m| m[(i, j)]);
        re * re + im * im
    }

    pub(crate) fn set(&mut self, i: usize, j: usize, z: Complex64) {
        self.re[(i, j)] = z.re;
        if z.im != 0.0 || self.im.is_some() {
            let (r, c) = self.re.shape();
            self.im.get_or_insert_with(|| Mat::zeros(r, c))[(i, j)] = z.im;
        }
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.nrows()).map(|i| self.get(i, j)).collect()
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.ncols());
        let mut out = vec![Complex64::new(0.0, 0.0); self.nrows()];
        for (j, &xj) in x.iter().enumerate() {
            if xj.re == 0.0 && xj.im == 0.0 {
                continue;
            }
            let re = self.re.col(j);
            match &self.im {
                None => {
                    for (o, &a) in out.iter_mut().zip(re.iter()) {
                        *o += xj * a;
                    }
                }
                Some(im) => {
                    for ((o, &a), &b) in out.iter_mut().zip(re.iter()).zip(im.col(j).iter()) {
                        *o += xj * Complex64::new(a, b);
                    }
                }
            }
        }
        out
    }

    /// `self^† * x`.
    pub fn adjoint_mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.nrows());
        (0..self.ncols())
            .map(|j| {
                let re = self.re.col(j);
                match &self.im {
                    None => re.iter().zip(x).map(|(&a, &xi)| xi * a).sum(),
                    Some(im) => re
                        .iter()
                        .zip(im.col(j).iter())
                        .zip(x)
                        .map(|((&a, &b), &xi)| Complex64::new(a, -b) * xi)
                        .sum(),
                }
            })
            .collect()
    }

    /// Largest entrywise modulus of `self - self^†`.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.nrows();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..=j {
                let d = self.get(i, j) - self.get(j, i).conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        let n = self.nrows();
        let m = self.ncols();
        let mut worst: f64 = 0.0;
        for j in 0..m {
            for i in 0..n {
                worst = worst.max(self.norm_sqr(i, j));
            }
        }
        worst.sqrt()
    }
}

pub(crate) fn max_abs(m: MatRef<'_, f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            worst = worst.max(m[(i, j)].abs());
        }
    }
    worst
}

/// Real `a * b`.
pub fn mul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, 1.0, Par::Seq);
    out
}

/// Eigendecomposition of a real symmetric matrix (lower triangle is read).
/// Eigenvalues ascend.
pub fn symmetric_eigen(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    let mut s = faer::diag::Diag::<f64>::zeros(n);
    let mut u = Mat::<f64>::zeros(n, n);
    let par = Par::Seq;
    let req = evd::self_adjoint_evd_scratch::<f64>(n, ComputeEigenvectors::Yes, par, Default::default());
    let mut buf = MemBuffer::new(req);
    evd::self_adjoint_evd(a, s.as_mut(), Some(u.as_mut()), par, MemStack::new(&mut buf), Default::default())
        .map_err(|_| Error::NoConvergence { dim: n, max_abs: max_abs(a) })?;
    Ok((s.column_vector().iter().copied().collect(), u))
}

/// Eigenvalues only of a real symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let n = a.nrows();
    let mut s = faer::diag::Diag::<f64>::zeros(n);
    let par = Par::Seq;
    let req = evd::self_adjoint_evd_scratch::<f64>(n, ComputeEigenvectors::No, par, Default::default());
    let mut buf = MemBuffer::new(req);
    evd::self_adjoint_evd(a, s.as_mut(), None, par, MemStack::new(&mut buf), Default::default())
        .map_err(|_| Error::NoConvergence { dim: n, max_abs: max_abs(a) })?;
    Ok(s.column_vector().iter().copied().collect())
}

/// Eigendecomposition of a complex Hermitian matrix. Eigenvalues ascend.
pub fn hermitian_eigen(a: &SplitMatrix, vectors: bool) -> Result<(Vec<f64>, Option<SplitMatrix>)> {
    let n = a.nrows();
    let Some(im) = a.im() else {
        return if vectors {
            let (e, u) = symmetric_eigen(a.re())?;
            Ok((e, Some(SplitMatrix::from_real(u))))
        } else {
            Ok((symmetric_eigenvalues(a.re())?, None))
        };
    };
    let re = a.re();
    let h = Mat::<Complex64>::from_fn(n, n, |i, j| Complex64::new(re[(i, j)], im[(i, j)]));
    let mut s = faer::diag::Diag::<Complex64>::zeros(n);
    let mut u = vectors.then(|| Mat::<Complex64>::zeros(n, n));
    let par = Par::Seq;
    let compute = if vectors { ComputeEigenvectors::Yes } else { ComputeEigenvectors::No };
    let req = evd::self_adjoint_evd_scratch::<Complex64>(n, compute, par, Default::default());
    let mut buf = MemBuffer::new(req);
    evd::self_adjoint_evd(
        h.as_ref(),
        s.as_mut(),
        u.as_mut().map(|u| u.as_mut()),
        par,
        MemStack::new(&mut buf),
        Default::default(),
    )
    .map_err(|_| Error::NoConvergence { dim: n, max_abs: a.max_abs() })?;
    let energies = s.column_vector().iter().map(|z| z.re).collect();
    let vecs = u.map(|u| {
        let ure = Mat::<f64>::from_fn(n, n, |i, j| u[(i, j)].re);
        let uim = Mat::<f64>::from_fn(n, n, |i, j| u[(i, j)].im);
        SplitMatrix::from_parts(ure, uim)
    });
    Ok((energies, vecs))
}

/// Principal square root of a real symmetric positive semidefinite matrix.
///
/// Eigenvalues in `[-floor, 0)` are clamped to zero; anything more negative
/// is a [`Error::Positivity`] failure.
pub fn psd_sqrt(a: MatRef<'_, f64>, floor: f64) -> Result<Mat<f64>> {
    let (vals, vecs) = symmetric_eigen(a)?;
    let most_negative = vals.first().copied().unwrap_or(0.0);
    if most_negative < -floor {
        return Err(Error::Positivity { most_negative, floor });
    }
    let n = a.nrows();
    let mut scaled = vecs.clone();
    for (j, &v) in vals.iter().enumerate() {
        let r = v.max(0.0).sqrt();
        for i in 0..n {
            scaled[(i, j)] *= r;
        }
    }
    let mut out = Mat::<f64>::zeros(n, n);
    matmul(out.as_mut(), Accum::Replace, scaled.as_ref(), vecs.transpose(), 1.0, Par::Seq);
    symmetrize(&mut out);
    Ok(out)
}

/// Symmetric positive factor `P` of the left polar decomposition `A = P U`,
/// computed from the SVD `A = W S V^T` as `P = W S W^T`.
pub fn left_polar_factor(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut s = faer::diag::Diag::<f64>::zeros(n);
    let mut w = Mat::<f64>::zeros(n, n);
    let par = Par::Seq;
    let req = svd::svd_scratch::<f64>(n, n, ComputeSvdVectors::Full, ComputeSvdVectors::No, par, Default::default());
    let mut buf = MemBuffer::new(req);
    svd::svd(a, s.as_mut(), Some(w.as_mut()), None, par, MemStack::new(&mut buf), Default::default())
        .map_err(|_| Error::NoConvergence { dim: n, max_abs: max_abs(a) })?;
    let sv = s.column_vector();
    let mut scaled = w.clone();
    for j in 0..n {
        for i in 0..n {
            scaled[(i, j)] *= sv[j];
        }
    }
    let mut out = Mat::<f64>::zeros(n, n);
    matmul(out.as_mut(), Accum::Replace, scaled.as_ref(), w.transpose(), 1.0, Par::Seq);
    symmetrize(&mut out);
    Ok(out)
}

pub(crate) fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn max_abs_diff(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut worst: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    worst
}
