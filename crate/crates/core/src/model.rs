//! Spin-1/2 chains with open boundaries in the Fock (S^z) basis.
//!
//! Basis convention: state index `sum_l b_l 2^l` with `b = 0` for spin up and
//! site 0 as the least significant bit. Spin operators carry the 1/2
//! normalization (`S = sigma / 2`).

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SplitMatrix;

/// Largest chain length stored densely (`D = 2^16`).
pub const MAX_SITES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// `H = -J_z sum S^z S^z - h_x sum S^x - h_z sum S^z + sum h_l S^z_l`
    Ising,
    /// `H = sum [J_z S^z S^z + J (S^x S^x + S^y S^y)]` plus the same field terms.
    Xxz,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ising => "ising",
            ModelKind::Xxz => "xxz",
        })
    }
}

fn default_one() -> f64 {
    1.0
}

/// Full description of one Hamiltonian instance.
///
/// Serialized as the `[model]` section of an experiment config
/// (`kind, L, j_z, j, h_x, h_z, r_z, seed`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(rename = "L")]
    pub sites: usize,
    #[serde(default = "default_one")]
    pub j_z: f64,
    #[serde(default)]
    pub j: f64,
    #[serde(default)]
    pub h_x: f64,
    #[serde(default)]
    pub h_z: f64,
    #[serde(default)]
    pub r_z: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    /// Clean transverse-field Ising chain with `J_z = 1`.
    pub fn ising(sites: usize, h_x: f64, h_z: f64) -> Self {
        Self {
            kind: ModelKind::Ising,
            sites,
            j_z: 1.0,
            j: 0.0,
            h_x,
            h_z,
            r_z: 0.0,
            seed: 0,
        }
    }

    pub fn xxz(sites: usize, j_z: f64, j: f64) -> Self {
        Self {
            kind: ModelKind::Xxz,
            sites,
            j_z,
            j,
            h_x: 0.0,
            h_z: 0.0,
            r_z: 0.0,
            seed: 0,
        }
    }

    pub fn with_disorder(mut self, r_z: f64, seed: u64) -> Self {
        self.r_z = r_z;
        self.seed = seed;
        self
    }

    pub fn dim(&self) -> usize {
        1 << self.sites
    }

    pub fn validate(&self) -> Result<()> {
        if self.sites < 1 || self.sites > MAX_SITES {
            return Err(Error::Dimension(format!(
                "L = {} outside [1, {MAX_SITES}]",
                self.sites
            )));
        }
        for (name, v) in [
            ("j_z", self.j_z),
            ("j", self.j),
            ("h_x", self.h_x),
            ("h_z", self.h_z),
            ("r_z", self.r_z),
        ] {
            if !v.is_finite() {
                return Err(Error::Validation(format!("{name} = {v} is not finite")));
            }
        }
        if self.r_z < 0.0 {
            return Err(Error::Validation(format!("r_z = {} is negative", self.r_z)));
        }
        Ok(())
    }

    /// The random longitudinal fields `h_l` for this instance.
    pub fn disorder(&self) -> Result<Vec<f64>> {
        draw_disorder(self.r_z, self.sites, self.seed)
    }
}

/// A basis state of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FockState {
    index: usize,
    sites: usize,
}

impl FockState {
    pub fn new(index: usize, sites: usize) -> Result<Self> {
        if sites > MAX_SITES || index >> sites != 0 {
            return Err(Error::Validation(format!(
                "Fock index {index} out of range for L = {sites}"
            )));
        }
        Ok(Self { index, sites })
    }

    /// From spins listed site 0 first; `true` means up.
    pub fn from_spins(up: &[bool]) -> Result<Self> {
        let index = up
            .iter()
            .enumerate()
            .fold(0usize, |acc, (l, &u)| if u { acc } else { acc | 1 << l });
        Self::new(index, up.len())
    }

    /// Repeating `up, up, down, down, ...` pattern starting at site 0.
    pub fn neel_pairs(sites: usize) -> Self {
        let up: Vec<bool> = (0..sites).map(|l| l % 4 < 2).collect();
        Self::from_spins(&up).expect("sites checked by caller")
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn is_up(&self, site: usize) -> bool {
        self.index >> site & 1 == 0
    }

    /// S^z eigenvalue of `site`: +1/2 or -1/2.
    pub fn sz(&self, site: usize) -> f64 {
        sz(self.index, site)
    }

    pub fn spins(&self) -> Vec<bool> {
        (0..self.sites).map(|l| self.is_up(l)).collect()
    }
}

impl fmt::Display for FockState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in 0..self.sites {
            f.write_str(if self.is_up(l) { "u" } else { "d" })?;
        }
        Ok(())
    }
}

/// Parses `u`/`d` (or `↑`/`↓`) strings, site 0 first.
impl FromStr for FockState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| match c {
                'u' | 'U' | '↑' | '0' => Ok(true),
                'd' | 'D' | '↓' | '1' => Ok(false),
                other => Err(Error::Validation(format!("bad spin character {other:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if up.is_empty() {
            return Err(Error::Validation("empty Fock state".into()));
        }
        Self::from_spins(&up)
    }
}

#[inline]
fn sz(index: usize, site: usize) -> f64 {
    if index >> site & 1 == 0 {
        0.5
    } else {
        -0.5
    }
}

/// Dense Hermitian operator on the chain's Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    entries: SplitMatrix,
}

impl HermitianMatrix {
    /// Wraps `entries` after checking conjugate symmetry to 1e-12.
    pub fn new(entries: SplitMatrix) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::Mismatch(format!(
                "operator is {}x{}, not square",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let defect = entries.hermiticity_defect();
        if defect > 1e-12 {
            return Err(Error::Validation(format!("matrix is not Hermitian: max |H - H^dag| = {defect:e}")));
        }
        Ok(Self { entries })
    }

    pub fn from_real(m: Mat<f64>) -> Result<Self> {
        Self::new(SplitMatrix::from_real(m))
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let n = values.len();
        Self {
            entries: SplitMatrix::from_real(Mat::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &SplitMatrix {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries.get(i, j)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.entries.re()[(i, i)]).sum()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|j| (0..n).all(|i| i == j || self.entries.norm_sqr(i, j) == 0.0))
    }

    pub fn diagonal_entries(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entries.re()[(i, i)]).collect()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        self.entries.hermiticity_defect()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.max_abs()
    }
}

/// Real symmetric Hamiltonian stored by columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHamiltonian {
    col_start: Vec<usize>,
    rows: Vec<usize>,
    values: Vec<f64>,
}

impl SparseHamiltonian {
    pub fn dim(&self) -> usize {
        self.col_start.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Largest absolute column sum, an upper bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        self.col_start
            .windows(2)
            .map(|w| self.values[w[0]..w[1]].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `out = H x`.
    pub fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        out.fill(Complex64::new(0.0, 0.0));
        for (col, w) in self.col_start.windows(2).enumerate() {
            let xc = x[col];
            for k in w[0]..w[1] {
                out[self.rows[k]] += xc * self.values[k];
            }
        }
    }

    pub fn to_dense(&self) -> HermitianMatrix {
        let d = self.dim();
        let mut h = Mat::<f64>::zeros(d, d);
        for (col, w) in self.col_start.windows(2).enumerate() {
            for k in w[0]..w[1] {
                h[(self.rows[k], col)] += self.values[k];
            }
        }
        HermitianMatrix {
            entries: SplitMatrix::from_real(h),
        }
    }
}

/// Sparse Hamiltonian of `spec`, one diagonal entry plus the spin flips per column.
pub fn build_sparse_hamiltonian(spec: &ModelSpec) -> Result<SparseHamiltonian> {
    spec.validate()?;
    let fields = spec.disorder()?;
    let l = spec.sites;
    let d = spec.dim();
    let mut col_start = Vec::with_capacity(d + 1);
    let mut rows = Vec::new();
    let mut values = Vec::new();

    for s in 0..d {
        col_start.push(rows.len());
        let bonds: f64 = (0..l.saturating_sub(1)).map(|b| sz(s, b) * sz(s, b + 1)).sum();
        let mag: f64 = (0..l).map(|site| sz(s, site)).sum();
        let random: f64 = (0..l).map(|site| fields[site] * sz(s, site)).sum();
        let bond_energy = match spec.kind {
            ModelKind::Ising => -spec.j_z * bonds,
            ModelKind::Xxz => spec.j_z * bonds,
        };
        rows.push(s);
        values.push(bond_energy - spec.h_z * mag + random);

        // -h_x S^x_l flips site l with amplitude -h_x / 2.
        if spec.h_x != 0.0 {
            for site in 0..l {
                rows.push(s ^ 1 << site);
                values.push(-0.5 * spec.h_x);
            }
        }

        // J (S^x S^x + S^y S^y) = (J/2)(S^+ S^- + S^- S^+) swaps antiparallel neighbours.
        if spec.kind == ModelKind::Xxz && spec.j != 0.0 {
            for b in 0..l.saturating_sub(1) {
                if (s >> b & 1) != (s >> (b + 1) & 1) {
                    rows.push(s ^ (0b11 << b));
                    values.push(0.5 * spec.j);
                }
            }
        }
    }
    col_start.push(rows.len());
    Ok(SparseHamiltonian {
        col_start,
        rows,
        values,
    })
}

/// Dense Hamiltonian of `spec`.
pub fn build_hamiltonian(spec: &ModelSpec) -> Result<HermitianMatrix> {
    Ok(build_sparse_hamiltonian(spec)?.to_dense())
}

/// `A = 1/(L-1) sum_l S^z_l S^z_{l+1}`, diagonal in the Fock basis.
pub fn build_observable_zz(sites: usize) -> Result<HermitianMatrix> {
    if !(2..=MAX_SITES).contains(&sites) {
        return Err(Error::Validation(format!(
            "nearest-neighbour observable needs 2 <= L <= {MAX_SITES}, got {sites}"
        )));
    }
    Ok(HermitianMatrix::diagonal(&observable_zz_diagonal(sites)))
}

/// Diagonal of [`build_observable_zz`] without materializing the matrix.
pub fn observable_zz_diagonal(sites: usize) -> Vec<f64> {
    let norm = 1.0 / (sites as f64 - 1.0);
    (0..1usize << sites)
        .map(|s| norm * (0..sites - 1).map(|b| sz(s, b) * sz(s, b + 1)).sum::<f64>())
        .collect()
}

/// Random fields uniform in `[-r_z/2, r_z/2)`.
///
/// Uses ChaCha12 seeded through `seed_from_u64` and maps the top 53 bits of
/// each draw to the unit interval, so the stream is identical on every
/// platform.
pub fn draw_disorder(r_z: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    if !(r_z.is_finite() && r_z >= 0.0) {
        return Err(Error::Validation(format!("disorder width r_z = {r_z} must be finite and >= 0")));
    }
    if r_z == 0.0 {
        return Ok(vec![0.0; count]);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            r_z * (u - 0.5)
        })
        .collect())
}
