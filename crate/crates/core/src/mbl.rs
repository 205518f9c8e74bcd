//! Fock-state localization diagnostics built on the weight matrix
//! `M_{sigma n} = |<sigma|n>|^2`.
//!
//! Time averages are evaluated in closed form through the kernel matrix
//! `S_{nn'} = sinc(T (E_n - E_n'))`; explicit time quadratures are provided
//! only as cross-checks.

use std::io::Write;

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::TimeGrid;
use crate::eigen::{Spectrum, WeightMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, SplitMatrix};
use crate::model::FockState;

/// Relative eigenvalue floor below which `D * Gamma` is declared indefinite.
pub const PSD_FLOOR: f64 = 1e-10;

/// Averaging horizon for time-averaged quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Finite(f64),
    Infinite,
}

impl Horizon {
    fn check(self) -> Result<Self> {
        if let Horizon::Finite(t) = self {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Validation(format!("averaging time T = {t} must be positive")));
            }
        }
        Ok(self)
    }
}

/// `PR_M(sigma) = sum_n M_{sigma n}^2` for every Fock state.
pub fn participation_ratio_m(m: &WeightMatrix) -> Vec<f64> {
    let d = m.dim();
    (0..d)
        .map(|sigma| (0..d).map(|n| m.get(sigma, n).powi(2)).sum())
        .collect()
}

/// `S_{nn'} = (pi/T) delta_T(E_n - E_n')`, or in the infinite limit the
/// projector onto degeneracy clusters.
pub fn kernel_matrix(s: &Spectrum, horizon: Horizon) -> Result<Mat<f64>> {
    let d = s.dim();
    Ok(match horizon.check()? {
        Horizon::Finite(t) => Mat::from_fn(d, d, |n, k| {
            let x = t * (s.energies[n] - s.energies[k]);
            if x.abs() < 1e-4 {
                1.0 - x * x / 6.0
            } else {
                x.sin() / x
            }
        }),
        Horizon::Infinite => {
            let mut p = Mat::<f64>::zeros(d, d);
            for c in s.clusters() {
                for n in c.clone() {
                    for k in c.clone() {
                        p[(n, k)] = 1.0;
                    }
                }
            }
            p
        }
    })
}

/// Which Gamma a [`GammaMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaTag {
    Instantaneous(f64),
    Averaged(f64),
    Infinite,
}

/// `Gamma_{sigma sigma'} = <sigma,sigma|psi(t)><psi(t)|sigma',sigma'>` or a time average of it.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaMatrix {
    pub entries: SplitMatrix,
    pub tag: GammaTag,
}

impl GammaMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|i| self.entries.get(i, i)).sum()
    }

    /// Real part, which is the whole matrix for averaged tags.
    pub fn real(&self) -> MatView<'_> {
        MatView(self.entries.re())
    }
}

/// Borrowed real matrix with a few conveniences.
#[derive(Debug, Clone, Copy)]
pub struct MatView<'a>(pub faer::MatRef<'a, f64>);

impl MatView<'_> {
    pub fn symmetry_defect(&self) -> f64 {
        let m = self.0;
        let mut worst: f64 = 0.0;
        for j in 0..m.ncols() {
            for i in 0..j {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: faer::MatRef<'_, f64>) -> f64 {
        linalg::max_abs_diff(self.0, other)
    }
}

/// `Gamma(t) = (1/D) M C(t) M^T` with `C_{nn'} = e^{-it(E_n - E_n')}`.
///
/// `C` has rank one, so this is `G_sigma(t) conj(G_sigma'(t)) / D` with
/// `G_sigma = sum_n M_{sigma n} e^{-itE_n}`.
pub fn gamma_t(m: &WeightMatrix, s: &Spectrum, t: f64) -> Result<GammaMatrix> {
    let d = check_dims(m, s)?;
    let phases: Vec<Complex64> = s.energies.iter().map(|&e| Complex64::from_polar(1.0, -t * e)).collect();
    let g: Vec<Complex64> = (0..d)
        .map(|sigma| (0..d).map(|n| phases[n] * m.get(sigma, n)).sum())
        .collect();
    let inv = 1.0 / d as f64;
    let entries = SplitMatrix::from_fn(d, d, |a, b| g[a] * g[b].conj() * inv);
    Ok(GammaMatrix {
        entries,
        tag: GammaTag::Instantaneous(t),
    })
}

/// `Gamma-bar = (1/D) M S M^T`.
pub fn gamma_avg(m: &WeightMatrix, s: &Spectrum, horizon: Horizon) -> Result<GammaMatrix> {
    let d = check_dims(m, s)?;
    let kernel = kernel_matrix(s, horizon)?;
    let ms = linalg::mul(m.as_mat().as_ref(), kernel.as_ref());
    let mut g = linalg::mul(ms.as_ref(), m.as_mat().transpose());
    let inv = 1.0 / d as f64;
    for j in 0..d {
        for i in 0..d {
            g[(i, j)] *= inv;
        }
    }
    linalg::symmetrize(&mut g);
    Ok(GammaMatrix {
        entries: SplitMatrix::from_real(g),
        tag: match horizon {
            Horizon::Finite(t) => GammaTag::Averaged(t),
            Horizon::Infinite => GammaTag::Infinite,
        },
    })
}

/// `(1/T) int_0^T Re Gamma(t) dt` by composite Simpson quadrature on `grid`,
/// which needs an even number of steps.
pub fn gamma_time_average(m: &WeightMatrix, s: &Spectrum, grid: TimeGrid) -> Result<Mat<f64>> {
    let d = check_dims(m, s)?;
    let last = grid.steps();
    if last == 0 || last % 2 == 1 {
        return Err(Error::Validation(format!("Simpson quadrature needs an even, nonzero step count, got {last}")));
    }
    let mut acc = Mat::<f64>::zeros(d, d);
    for k in 0..grid.len() {
        let gamma = gamma_t(m, s, grid.time(k))?;
        let w = if k == 0 || k == last {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let re = gamma.entries.re();
        for j in 0..d {
            for i in 0..d {
                acc[(i, j)] += w * re[(i, j)];
            }
        }
    }
    let scale = grid.dt() / (3.0 * grid.t_max());
    for j in 0..d {
        for i in 0..d {
            acc[(i, j)] *= scale;
        }
    }
    Ok(acc)
}

/// The Uhlmann matrix `R = sqrt(D * Gamma-bar)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UhlmannMatrix {
    pub r: Mat<f64>,
}

impl UhlmannMatrix {
    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    /// Largest entry of `|R^2 - target|`.
    pub fn square_defect(&self, target: faer::MatRef<'_, f64>) -> f64 {
        let sq = linalg::mul(self.r.as_ref(), self.r.as_ref());
        linalg::max_abs_diff(sq.as_ref(), target)
    }
}

/// `R = sqrt(D * Gamma-bar)` by eigendecomposition. Eigenvalues down to
/// `-PSD_FLOOR * trace` are clamped to zero.
pub fn uhlmann_r(m: &WeightMatrix, s: &Spectrum, horizon: Horizon) -> Result<UhlmannMatrix> {
    let gamma = gamma_avg(m, s, horizon)?;
    let d = gamma.dim() as f64;
    let dg = scaled(gamma.entries.re(), d);
    let trace: f64 = (0..dg.nrows()).map(|i| dg[(i, i)]).sum();
    let r = linalg::psd_sqrt(dg.as_ref(), PSD_FLOOR * trace)?;
    Ok(UhlmannMatrix { r })
}

/// Symmetric factor of the polar decomposition `M = R U`, i.e. `sqrt(M M^T)`.
pub fn polar_factor(m: &WeightMatrix) -> Result<UhlmannMatrix> {
    Ok(UhlmannMatrix {
        r: linalg::left_polar_factor(m.as_mat().as_ref())?,
    })
}

/// Column participation convention for [`participation_ratio_r`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrConvention {
    /// `sum_{sigma'} (R_{sigma' sigma}^2 / sum_{sigma''} R_{sigma'' sigma}^2)^2`, in `[1/D, 1]`.
    #[default]
    Normalized,
    /// `sum_{sigma'} R_{sigma' sigma}^2`, equal to `PR_M(sigma)` when `R^2 = M M^T`.
    Raw,
}

/// Participation ratio of each column of `R`.
pub fn participation_ratio_r(r: &UhlmannMatrix, convention: PrConvention) -> Result<Vec<f64>> {
    let d = r.dim();
    (0..d)
        .map(|col| {
            let sq: Vec<f64> = (0..d).map(|i| r.r[(i, col)].powi(2)).collect();
            let norm: f64 = sq.iter().sum();
            if !(norm > 0.0) {
                return Err(Error::Degenerate {
                    what: "column norm of R",
                    value: norm,
                    floor: 0.0,
                });
            }
            Ok(match convention {
                PrConvention::Normalized => sq.iter().map(|v| (v / norm).powi(2)).sum(),
                PrConvention::Raw => norm,
            })
        })
        .collect()
}

/// `w_n = <sigma|n><n|sigma'>`.
fn pair_amplitudes(s: &Spectrum, sigma: FockState, sigma_p: FockState) -> Result<Vec<Complex64>> {
    let d = s.dim();
    for f in [sigma, sigma_p] {
        if f.index() >= d {
            return Err(Error::Validation(format!("Fock index {} out of range for D = {d}", f.index())));
        }
    }
    Ok((0..d)
        .map(|n| s.amplitude(sigma.index(), n) * s.amplitude(sigma_p.index(), n).conj())
        .collect())
}

/// `p_{sigma,sigma'}(t) = |<sigma,sigma'|psi(t)>|^2 = |sum_n <sigma|n><n|sigma'> e^{-itE_n}|^2 / D`.
pub fn pair_probabilities(s: &Spectrum, sigma: FockState, sigma_p: FockState, grid: TimeGrid) -> Result<Vec<f64>> {
    let w = pair_amplitudes(s, sigma, sigma_p)?;
    let inv = 1.0 / s.dim() as f64;
    Ok(grid
        .times()
        .map(|t| {
            let amp: Complex64 = w
                .iter()
                .zip(&s.energies)
                .map(|(wn, &e)| wn * Complex64::from_polar(1.0, -t * e))
                .sum();
            amp.norm_sqr() * inv
        })
        .collect())
}

/// Closed-form time average of [`pair_probabilities`]: `(1/D) sum_{nn'} w_n conj(w_n') S_{nn'}`.
///
/// In the infinite limit this is `Gamma-bar(inf)_{sigma sigma'}`; at finite
/// `T` it differs from `Gamma-bar(T)` because the kernel acts on `w` rather
/// than on the rows of `M`.
pub fn pair_probability_average(s: &Spectrum, sigma: FockState, sigma_p: FockState, horizon: Horizon) -> Result<f64> {
    let w = pair_amplitudes(s, sigma, sigma_p)?;
    let kernel = kernel_matrix(s, horizon)?;
    Ok(quadratic_form(&w, &kernel) / s.dim() as f64)
}

fn quadratic_form(w: &[Complex64], kernel: &Mat<f64>) -> f64 {
    let d = w.len();
    let mut total = 0.0;
    for k in 0..d {
        let mut inner = Complex64::new(0.0, 0.0);
        for n in 0..d {
            inner += w[n] * kernel[(n, k)];
        }
        total += (inner * w[k].conj()).re;
    }
    total
}

/// Time-averaged `p~_{sigma,sigma'}(t) = |<sigma'|e^{-iHt}|sigma>|^2` for all
/// pairs. The infinite limit on a non-degenerate spectrum is `M M^T`.
///
/// The finite-`T` path costs `O(D^4)`.
pub fn footnote_probabilities(s: &Spectrum, m: &WeightMatrix, horizon: Horizon) -> Result<Mat<f64>> {
    let d = check_dims(m, s)?;
    if horizon == Horizon::Infinite && !s.is_degenerate() {
        let mut out = linalg::mul(m.as_mat().as_ref(), m.as_mat().transpose());
        linalg::symmetrize(&mut out);
        return Ok(out);
    }
    let kernel = kernel_matrix(s, horizon)?;
    let mut out = Mat::<f64>::zeros(d, d);
    for a in 0..d {
        for b in 0..=a {
            let w: Vec<Complex64> = (0..d)
                .map(|n| s.amplitude(a, n) * s.amplitude(b, n).conj())
                .collect();
            let v = quadratic_form(&w, &kernel);
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    Ok(out)
}

/// Probability carried by the tallest peak of a Fock-state distribution,
/// read off as `max_E rho_sigma(E,T)`. An isolated level contributes exactly
/// its weight `M_{sigma n}`; levels closer than `~1/T` merge.
pub fn dominant_peak_weight(rho_sigma: &crate::reconstruct::CoarseGrained) -> f64 {
    rho_sigma
        .values
        .iter()
        .zip(&rho_sigma.valid)
        .filter(|(_, &ok)| ok)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `sigma_index,pr_m,pr_r`.
pub fn write_pr_csv<W: Write>(mut w: W, pr_m: &[f64], pr_r: &[f64]) -> Result<()> {
    if pr_m.len() != pr_r.len() {
        return Err(Error::Mismatch("PR columns differ in length".into()));
    }
    writeln!(w, "sigma_index,pr_m,pr_r")?;
    for (i, (a, b)) in pr_m.iter().zip(pr_r).enumerate() {
        writeln!(w, "{i},{a:.16e},{b:.16e}")?;
    }
    Ok(())
}

/// `u64` little-endian row count, `u64` column count, then column-major `f64` LE.
pub fn write_matrix_binary<W: Write>(mut w: W, m: faer::MatRef<'_, f64>) -> Result<()> {
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            w.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    Ok(())
}

/// Mean, minimum and maximum of a list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        Self {
            mean: values.iter().sum::<f64>() / n,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

fn check_dims(m: &WeightMatrix, s: &Spectrum) -> Result<usize> {
    if m.dim() != s.dim() {
        return Err(Error::Mismatch(format!("M is {} but the spectrum has {} levels", m.dim(), s.dim())));
    }
    Ok(s.dim())
}

fn scaled(m: faer::MatRef<'_, f64>, factor: f64) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * factor)
}
