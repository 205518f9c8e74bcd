//! Full dense diagonalization and the spectral data derived from it.

use std::io::Write;
use std::ops::Range;

use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, SplitMatrix};
use crate::model::HermitianMatrix;

/// Relative gap below which neighbouring eigenvalues count as degenerate.
pub const DEGENERACY_RTOL: f64 = 1e-9;

/// Eigenvalues (ascending) and eigenvectors (columns, Fock basis).
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub energies: Vec<f64>,
    vectors: SplitMatrix,
    clusters: Vec<Range<usize>>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn vectors(&self) -> &SplitMatrix {
        &self.vectors
    }

    /// `<sigma|n>`.
    #[inline]
    pub fn amplitude(&self, sigma: usize, n: usize) -> Complex64 {
        self.vectors.get(sigma, n)
    }

    /// Index ranges of (numerically) degenerate eigenvalues.
    pub fn clusters(&self) -> &[Range<usize>] {
        &self.clusters
    }

    pub fn is_degenerate(&self) -> bool {
        self.clusters.iter().any(|c| c.len() > 1)
    }

    pub fn bandwidth(&self) -> f64 {
        self.energies.last().unwrap_or(&0.0) - self.energies.first().unwrap_or(&0.0)
    }

    /// Max |V^dag V - I|.
    pub fn orthonormality_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for a in 0..d {
            let ca = self.vectors.column(a);
            for b in a..d {
                let dot: Complex64 = (0..d).map(|s| ca[s].conj() * self.amplitude(s, b)).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).norm());
            }
        }
        worst
    }

    /// Max |V diag(E) V^dag - H|.
    pub fn reconstruction_defect(&self, h: &HermitianMatrix) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let v: Complex64 = (0..d)
                    .map(|n| self.amplitude(i, n) * self.energies[n] * self.amplitude(j, n).conj())
                    .sum();
                worst = worst.max((v - h.get(i, j)).norm());
            }
        }
        worst
    }

    /// Writes `n,E_n` rows.
    pub fn write_energies_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,E_n[J_z]")?;
        for (n, e) in self.energies.iter().enumerate() {
            writeln!(w, "{n},{e:.16e}")?;
        }
        Ok(())
    }

    /// Column-major `(re, im)` pairs of little-endian f64, preceded by the
    /// dimension as a little-endian u64.
    pub fn write_vectors_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        w.write_all(&(d as u64).to_le_bytes())?;
        for n in 0..d {
            for s in 0..d {
                let z = self.amplitude(s, n);
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Groups ascending `energies` into runs whose consecutive gaps are below
/// `DEGENERACY_RTOL * bandwidth`.
pub fn degeneracy_clusters(energies: &[f64]) -> Vec<Range<usize>> {
    if energies.is_empty() {
        return Vec::new();
    }
    let span = energies[energies.len() - 1] - energies[0];
    let tol = DEGENERACY_RTOL * span;
    let mut out = Vec::new();
    let mut start = 0;
    for n in 1..energies.len() {
        if energies[n] - energies[n - 1] > tol {
            out.push(start..n);
            start = n;
        }
    }
    out.push(start..energies.len());
    out
}

/// Diagonalizes `h`. Each eigenvector is rotated so that its largest
/// component is real and positive.
pub fn diagonalize(h: &HermitianMatrix) -> Result<Spectrum> {
    let (energies, vectors) = linalg::hermitian_eigen(h.entries(), true)?;
    let mut vectors = vectors.expect("vectors requested");
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(Error::NoConvergence {
            dim: h.dim(),
            max_abs: h.max_abs(),
        });
    }
    fix_phases(&mut vectors);
    let clusters = degeneracy_clusters(&energies);
    Ok(Spectrum {
        energies,
        vectors,
        clusters,
    })
}

/// Eigenvalues only, ascending. Much cheaper than [`diagonalize`] at large D.
pub fn eigenvalues(h: &HermitianMatrix) -> Result<Vec<f64>> {
    Ok(linalg::hermitian_eigen(h.entries(), false)?.0)
}

fn fix_phases(v: &mut SplitMatrix) {
    let d = v.nrows();
    for n in 0..v.ncols() {
        let mut best = 0;
        let mut best_mag = -1.0;
        for s in 0..d {
            let m = v.norm_sqr(s, n);
            if m > best_mag {
                best_mag = m;
                best = s;
            }
        }
        let z = v.get(best, n);
        let phase = z.conj() / z.norm();
        if phase == Complex64::new(1.0, 0.0) {
            continue;
        }
        for s in 0..d {
            let w = v.get(s, n) * phase;
            v.set(s, n, w);
        }
        v.set(best, n, Complex64::new(z.norm(), 0.0));
    }
}

/// `M_{sigma n} = |<sigma|n>|^2`, row index sigma, column index n.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: Mat<f64>,
}

impl WeightMatrix {
    /// Wraps a matrix after checking it is non-negative and bistochastic to 1e-10.
    pub fn new(entries: Mat<f64>) -> Result<Self> {
        let m = Self { entries };
        if m.dim() != m.entries.ncols() {
            return Err(Error::Mismatch("weight matrix must be square".into()));
        }
        let defect = m.stochasticity_defect();
        if defect > 1e-10 || m.min_entry() < 0.0 {
            return Err(Error::Validation(format!(
                "not bistochastic (row/column sum defect {defect:e}, min entry {:e})",
                m.min_entry()
            )));
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_mat(&self) -> &Mat<f64> {
        &self.entries
    }

    #[inline]
    pub fn get(&self, sigma: usize, n: usize) -> f64 {
        self.entries[(sigma, n)]
    }

    pub fn row(&self, sigma: usize) -> Vec<f64> {
        (0..self.dim()).map(|n| self.entries[(sigma, n)]).collect()
    }

    pub fn min_entry(&self) -> f64 {
        let d = self.dim();
        (0..d)
            .flat_map(|j| (0..d).map(move |i| (i, j)))
            .map(|ij| self.entries[ij])
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest deviation of any row or column sum from one.
    pub fn stochasticity_defect(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for k in 0..d {
            let row: f64 = (0..d).map(|n| self.entries[(k, n)]).sum();
            let col: f64 = (0..d).map(|s| self.entries[(s, k)]).sum();
            worst = worst.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
        worst
    }
}

pub fn weights_matrix(s: &Spectrum) -> WeightMatrix {
    let d = s.dim();
    WeightMatrix {
        entries: Mat::from_fn(d, d, |sigma, n| s.vectors.norm_sqr(sigma, n)),
    }
}

/// `A_n = <n|A|n>`, aligned with the spectrum ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenExpectations {
    pub values: Vec<f64>,
}

impl EigenExpectations {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spread(&self) -> f64 {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

pub fn eigen_expectations(s: &Spectrum, a: &HermitianMatrix) -> Result<EigenExpectations> {
    let d = s.dim();
    if a.dim() != d {
        return Err(Error::Mismatch(format!("observable dimension {} vs spectrum {d}", a.dim())));
    }
    if a.is_diagonal() {
        return Ok(expectations_of_diagonal(s, &a.diagonal_entries()));
    }
    let values = (0..d)
        .map(|n| {
            let v = s.vectors.column(n);
            let av = a.entries().mul_vec(&v);
            v.iter().zip(&av).map(|(x, y)| x.conj() * y).sum::<Complex64>().re
        })
        .collect();
    Ok(EigenExpectations { values })
}

/// `A_n = sum_sigma M_{sigma n} A_{sigma sigma}` for an operator diagonal in the Fock basis.
pub fn expectations_of_diagonal(s: &Spectrum, diag: &[f64]) -> EigenExpectations {
    let d = s.dim();
    assert_eq!(diag.len(), d);
    let values = (0..d)
        .map(|n| (0..d).map(|sigma| s.vectors.norm_sqr(sigma, n) * diag[sigma]).sum())
        .collect();
    EigenExpectations { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_hamiltonian, build_observable_zz, ModelKind, ModelSpec};
    use proptest::prelude::*;

    #[test]
    fn two_level_energies() {
        let s = diagonalize(&build_hamiltonian(&ModelSpec::ising(1, 0.3, 0.0)).unwrap()).unwrap();
        assert!((s.energies[0] + 0.15).abs() < 1e-15);
        assert!((s.energies[1] - 0.15).abs() < 1e-15);
        let m = weights_matrix(&s);
        for sigma in 0..2 {
            for n in 0..2 {
                assert!((m.get(sigma, n) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn classical_chain_is_permutation() {
        let s = diagonalize(&build_hamiltonian(&ModelSpec::ising(2, 0.0, 0.0)).unwrap()).unwrap();
        assert_eq!(s.energies, vec![-0.25, -0.25, 0.25, 0.25]);
        assert_eq!(s.clusters(), &[0..2, 2..4]);
        let m = weights_matrix(&s);
        for sigma in 0..4 {
            let row = m.row(sigma);
            assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&x| x == 0.0).count(), 3);
        }
    }

    #[test]
    fn trace_is_sum_of_energies() {
        let h = build_hamiltonian(&ModelSpec::ising(5, 0.8, 0.3).with_disorder(2.0, 5)).unwrap();
        let s = diagonalize(&h).unwrap();
        assert!((s.energies.iter().sum::<f64>() - h.trace()).abs() < 1e-12);
    }

    #[test]
    fn identity_and_classical_expectations() {
        let s = diagonalize(&build_hamiltonian(&ModelSpec::ising(4, 0.6, 0.1)).unwrap()).unwrap();
        let ones = eigen_expectations(&s, &HermitianMatrix::identity(16)).unwrap();
        assert!(ones.values.iter().all(|&v| (v - 1.0).abs() < 1e-13));

        let h0 = build_hamiltonian(&ModelSpec::ising(4, 0.0, 0.1)).unwrap();
        let s0 = diagonalize(&h0).unwrap();
        let a = build_observable_zz(4).unwrap();
        let an = eigen_expectations(&s0, &a).unwrap();
        for n in 0..16 {
            let sigma = (0..16).find(|&k| s0.amplitude(k, n).norm() > 0.5).unwrap();
            assert_eq!(an.values[n], a.get(sigma, sigma).re);
        }
        assert!(eigen_expectations(&s0, &HermitianMatrix::identity(8)).is_err());
    }

    #[test]
    fn general_and_diagonal_paths_agree() {
        let s = diagonalize(&build_hamiltonian(&ModelSpec::ising(4, 0.7, 0.2)).unwrap()).unwrap();
        let a = build_observable_zz(4).unwrap();
        let fast = eigen_expectations(&s, &a).unwrap();
        let slow: Vec<f64> = (0..16)
            .map(|n| {
                let v = s.vectors().column(n);
                let av = a.entries().mul_vec(&v);
                v.iter().zip(&av).map(|(x, y)| (x.conj() * y).re).sum()
            })
            .collect();
        for (x, y) in fast.values.iter().zip(&slow) {
            assert!((x - y).abs() < 1e-14);
        }
        // a dense Hermitian operator exercises the general route
        let h = build_hamiltonian(&ModelSpec::ising(4, 0.3, 0.0)).unwrap();
        let hn = eigen_expectations(&s, &h).unwrap();
        let tr: f64 = hn.values.iter().sum();
        assert!((tr - h.trace()).abs() < 1e-12);
    }

    #[test]
    fn energies_csv_and_binary_layout() {
        let s = diagonalize(&build_hamiltonian(&ModelSpec::ising(1, 0.3, 0.0)).unwrap()).unwrap();
        let mut csv = Vec::new();
        s.write_energies_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let e0: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
        assert!((e0 + 0.15).abs() < 1e-15);
        let mut bin = Vec::new();
        s.write_vectors_binary(&mut bin).unwrap();
        assert_eq!(bin.len(), 8 + 2 * 2 * 16);
        assert_eq!(u64::from_le_bytes(bin[..8].try_into().unwrap()), 2);
        let first_re = f64::from_le_bytes(bin[8..16].try_into().unwrap());
        assert!((first_re.abs() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    fn arb_spec() -> impl Strategy<Value = ModelSpec> {
        (
            prop_oneof![Just(ModelKind::Ising), Just(ModelKind::Xxz)],
            1usize..=6,
            0.2..2.0f64,
            -1.5..1.5f64,
            -1.5..1.5f64,
            -0.5..0.5f64,
            0.0..5.0f64,
            any::<u64>(),
        )
            .prop_map(|(kind, sites, j_z, j, h_x, h_z, r_z, seed)| ModelSpec {
                kind,
                sites,
                j_z,
                j,
                h_x,
                h_z,
                r_z,
                seed,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn spectrum_invariants(spec in arb_spec()) {
            let h = build_hamiltonian(&spec).unwrap();
            let s = diagonalize(&h).unwrap();
            prop_assert!(s.energies.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(s.orthonormality_defect() < 1e-10);
            let scale = h.max_abs().max(1e-300);
            prop_assert!(s.reconstruction_defect(&h) < 1e-9 * scale.max(1.0));
            let m = weights_matrix(&s);
            prop_assert!(m.stochasticity_defect() < 1e-10);
            prop_assert!(m.min_entry() >= 0.0);
        }

        #[test]
        fn weights_ignore_eigenvector_phases(spec in arb_spec(), theta in 0.0..std::f64::consts::TAU, col in 0usize..64) {
            let s = diagonalize(&build_hamiltonian(&spec).unwrap()).unwrap();
            let col = col % s.dim();
            let mut rotated = s.clone();
            let phase = Complex64::from_polar(1.0, theta);
            for sigma in 0..s.dim() {
                let z = rotated.amplitude(sigma, col) * phase;
                rotated.vectors.set(sigma, col, z);
            }
            let a = weights_matrix(&s);
            let b = weights_matrix(&rotated);
            prop_assert!(linalg::max_abs_diff(a.as_mat().as_ref(), b.as_mat().as_ref()) < 1e-15);
        }

        #[test]
        fn diagonal_observable_identity(spec in arb_spec()) {
            prop_assume!(spec.sites >= 2);
            let s = diagonalize(&build_hamiltonian(&spec).unwrap()).unwrap();
            let a = build_observable_zz(spec.sites).unwrap();
            let an = eigen_expectations(&s, &a).unwrap();
            let m = weights_matrix(&s);
            let diag = a.diagonal_entries();
            for n in 0..s.dim() {
                let direct: f64 = (0..s.dim()).map(|sig| m.get(sig, n) * diag[sig]).sum();
                prop_assert!((direct - an.values[n]).abs() < 1e-14);
            }
            let tr: f64 = an.values.iter().sum();
            prop_assert!((tr - a.trace()).abs() < 1e-9 * s.dim() as f64 * 0.25);
        }
    }
}
