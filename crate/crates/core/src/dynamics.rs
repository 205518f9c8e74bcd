//! Time-domain signals and their routes.
//!
//! The default route is the exact spectral sum `sum_n w_n e^{-i t E_n}`.
//! State-vector evolution, the doubled (purified) system and the probe-qubit
//! interferometer are independent routes to the same overlaps and serve as
//! cross-checks and as an emulation of the measurement.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::eigen::{diagonalize, EigenExpectations, Spectrum, WeightMatrix};
use crate::error::{Error, Result};
use crate::linalg::{self, SplitMatrix};
use crate::model::{build_hamiltonian, FockState, ModelSpec, SparseHamiltonian};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Uniform samples `t_k = k * dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Validation(format!("time step dt = {dt} must be positive")));
        }
        Ok(Self { dt, steps })
    }

    /// Grid ending exactly at `t_max` with step at most `max_dt`.
    pub fn covering(t_max: f64, max_dt: f64) -> Result<Self> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::Validation(format!("observation time T = {t_max} must be positive")));
        }
        if !(max_dt.is_finite() && max_dt > 0.0) {
            return Err(Error::Validation(format!("time step dt = {max_dt} must be positive")));
        }
        let steps = (t_max / max_dt).ceil().max(1.0) as usize;
        Self::new(t_max / steps as f64, steps)
    }

    /// Coarsest grid to `t_max` that satisfies the aliasing guard for `span`.
    pub fn for_bandwidth(t_max: f64, span: f64) -> Result<Self> {
        Self::covering(t_max, PI / span.max(f64::MIN_POSITIVE))
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Observation time `T = steps * dt`.
    pub fn t_max(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|k| self.time(k))
    }

    /// Requires `dt * span <= pi` so every frequency up to `span` is resolved.
    pub fn check_aliasing(&self, span: f64) -> Result<()> {
        let product = self.dt * span;
        if product > PI * (1.0 + 1e-12) {
            return Err(Error::Aliasing {
                dt: self.dt,
                span,
                product,
            });
        }
        Ok(())
    }
}

/// Complex signal sampled on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexTimeSeries {
    pub grid: TimeGrid,
    pub values: Vec<Complex64>,
}

impl ComplexTimeSeries {
    pub fn new(grid: TimeGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Mismatch(format!(
                "{} samples for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `alpha * self + beta * other` on the same grid.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::Mismatch("time grids differ".into()));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * alpha + b * beta)
            .collect();
        Ok(Self {
            grid: self.grid,
            values,
        })
    }

    /// `t,re,im` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,re,im")?;
        for (t, z) in self.grid.times().zip(&self.values) {
            writeln!(w, "{t:.16e},{:.16e},{:.16e}", z.re, z.im)?;
        }
        Ok(())
    }
}

/// `sum_n w_n e^{-i t E_n}` at every grid time.
pub fn spectral_signal(energies: &[f64], weights: &[f64], grid: TimeGrid) -> ComplexTimeSeries {
    assert_eq!(energies.len(), weights.len());
    let values = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let t = grid.time(k);
            if k == 0 {
                return Complex64::new(weights.iter().sum(), 0.0);
            }
            let mut re = 0.0;
            let mut im = 0.0;
            for (&e, &w) in energies.iter().zip(weights) {
                let (s, c) = (t * e).sin_cos();
                re += w * c;
                im -= w * s;
            }
            Complex64::new(re, im)
        })
        .collect();
    ComplexTimeSeries { grid, values }
}

/// `G(t) = (1/D) sum_n e^{-i t E_n} = Z(it)/D`.
pub fn loschmidt_g(energies: &[f64], grid: TimeGrid) -> ComplexTimeSeries {
    let w = vec![1.0 / energies.len() as f64; energies.len()];
    spectral_signal(energies, &w, grid)
}

/// `G_sigma(t) = <sigma|e^{-itH}|sigma> = sum_n M_{sigma n} e^{-i t E_n}`.
pub fn loschmidt_g_sigma(s: &Spectrum, m: &WeightMatrix, sigma: FockState, grid: TimeGrid) -> Result<ComplexTimeSeries> {
    if sigma.index() >= s.dim() || m.dim() != s.dim() {
        return Err(Error::Validation(format!(
            "Fock index {} out of range for dimension {}",
            sigma.index(),
            s.dim()
        )));
    }
    Ok(spectral_signal(&s.energies, &m.row(sigma.index()), grid))
}

/// `G_A(t) = Tr(A e^{-itH}) / D = (1/D) sum_n A_n e^{-i t E_n}`.
pub fn loschmidt_g_a(energies: &[f64], a_n: &EigenExpectations, grid: TimeGrid) -> Result<ComplexTimeSeries> {
    if a_n.len() != energies.len() {
        return Err(Error::Mismatch(format!(
            "{} expectation values for {} levels",
            a_n.len(),
            energies.len()
        )));
    }
    let d = energies.len() as f64;
    let w: Vec<f64> = a_n.values.iter().map(|a| a / d).collect();
    Ok(spectral_signal(energies, &w, grid))
}

/// Pure state in the Fock basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// Normalizes `amplitudes`; rejects the zero vector.
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        let norm = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Validation("state vector has zero or non-finite norm".into()));
        }
        Ok(Self {
            amplitudes: amplitudes.into_iter().map(|z| z / norm).collect(),
        })
    }

    pub fn fock(sigma: FockState) -> Self {
        let mut amplitudes = vec![ZERO; 1 << sigma.sites()];
        amplitudes[sigma.index()] = Complex64::new(1.0, 0.0);
        Self { amplitudes }
    }

    /// Normalized complex-Gaussian vector.
    pub fn random(dim: usize, rng: &mut impl rand::Rng) -> Self {
        loop {
            let amps: Vec<Complex64> = (0..dim)
                .map(|_| Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
                .collect();
            if let Ok(v) = Self::new(amps) {
                return v;
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &StateVector) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

fn propagate(s: &Spectrum, psi: &[Complex64], t: f64) -> Vec<Complex64> {
    let mut c = s.vectors().adjoint_mul_vec(psi);
    for (cn, &e) in c.iter_mut().zip(&s.energies) {
        *cn *= Complex64::from_polar(1.0, -t * e);
    }
    s.vectors().mul_vec(&c)
}

/// `psi(t) = V e^{-itE} V^dag psi0`.
pub fn evolve_state(s: &Spectrum, psi0: &StateVector, t: f64) -> Result<StateVector> {
    if psi0.dim() != s.dim() {
        return Err(Error::Mismatch(format!("state of dimension {} vs spectrum {}", psi0.dim(), s.dim())));
    }
    Ok(StateVector {
        amplitudes: propagate(s, &psi0.amplitudes, t),
    })
}

/// Taylor-series propagation under a sparse `H`, for chains too long to
/// diagonalize densely. Substeps keep `|tau| * ||H|| <= 1` and each series
/// is summed until its terms fall below `1e-16`.
pub fn evolve_sparse(h: &SparseHamiltonian, psi0: &StateVector, t: f64) -> Result<StateVector> {
    if psi0.dim() != h.dim() {
        return Err(Error::Mismatch(format!("state of dimension {} vs operator {}", psi0.dim(), h.dim())));
    }
    if !t.is_finite() {
        return Err(Error::Validation(format!("evolution time {t} is not finite")));
    }
    let bound = h.norm_bound();
    let steps = ((t.abs() * bound).ceil() as usize).max(1);
    let tau = t / steps as f64;
    let mut psi = psi0.amplitudes.clone();
    let mut term = vec![ZERO; psi.len()];
    let mut next = vec![ZERO; psi.len()];
    for _ in 0..steps {
        term.copy_from_slice(&psi);
        for k in 1..=TAYLOR_MAX_ORDER {
            h.apply(&term, &mut next);
            let factor = Complex64::new(0.0, -tau / k as f64);
            let mut size = 0.0;
            for (dst, (acc, src)) in term.iter_mut().zip(psi.iter_mut().zip(&next)) {
                *dst = src * factor;
                *acc += *dst;
                size += dst.norm_sqr();
            }
            if size.sqrt() < 1e-16 {
                break;
            }
            if k == TAYLOR_MAX_ORDER {
                return Err(Error::Contract(format!("Taylor series did not converge in {k} terms")));
            }
        }
    }
    Ok(StateVector { amplitudes: psi })
}

const TAYLOR_MAX_ORDER: usize = 60;

/// Half-chain entropy of `e^{-itH} psi0` at every time of `grid`, stepping
/// sequentially between samples.
pub fn entropy_series(h: &SparseHamiltonian, psi0: &StateVector, sites: usize, grid: TimeGrid) -> Result<Vec<f64>> {
    let mut psi = psi0.clone();
    let mut out = Vec::with_capacity(grid.len());
    out.push(half_chain_entropy(&psi, sites)?);
    for _ in 1..grid.len() {
        psi = evolve_sparse(h, &psi, grid.dt())?;
        out.push(half_chain_entropy(&psi, sites)?);
    }
    Ok(out)
}

/// Largest chain that can be doubled densely (`D^2 <= 4096`).
pub const MAX_PURIFIED_SITES: usize = 6;

/// The purified infinite-temperature state on system plus ancilla,
/// `D^{-1/2} sum_sigma |sigma>_S |sigma>_A`, system bits low.
pub fn purified_state(dim: usize) -> StateVector {
    let norm = 1.0 / (dim as f64).sqrt();
    let mut amplitudes = vec![ZERO; dim * dim];
    for sigma in 0..dim {
        amplitudes[sigma + dim * sigma] = Complex64::new(norm, 0.0);
    }
    StateVector { amplitudes }
}

/// `<psi_inf| (e^{-itH} (x) 1) |psi_inf>` computed on the doubled Hilbert space.
pub fn purified_overlap(s: &Spectrum, grid: TimeGrid) -> Result<ComplexTimeSeries> {
    let d = s.dim();
    if d > 1 << MAX_PURIFIED_SITES {
        return Err(Error::Dimension(format!(
            "doubling a {d}-dimensional system exceeds the dense limit of L = {MAX_PURIFIED_SITES}"
        )));
    }
    let psi_inf = purified_state(d);
    let values = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let t = grid.time(k);
            let mut evolved = Vec::with_capacity(d * d);
            for block in psi_inf.amplitudes.chunks(d) {
                evolved.extend(propagate(s, block, t));
            }
            psi_inf.overlap(&StateVector { amplitudes: evolved })
        })
        .collect();
    Ok(ComplexTimeSeries { grid, values })
}

/// Max over the grid of `|<psi_inf|psi(t)> - Z(it)/D|`.
pub fn purified_overlap_check(spec: &ModelSpec, grid: TimeGrid) -> Result<f64> {
    spec.validate()?;
    if spec.sites > MAX_PURIFIED_SITES {
        return Err(Error::Dimension(format!(
            "purified check needs L <= {MAX_PURIFIED_SITES}, got {}",
            spec.sites
        )));
    }
    let s = diagonalize(&build_hamiltonian(spec)?)?;
    let doubled = purified_overlap(&s, grid)?;
    Ok(doubled.max_abs_diff(&loschmidt_g(&s.energies, grid)))
}

/// Probe-qubit Pauli expectations `(<sigma_x>, <sigma_y>)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReadout {
    pub x: f64,
    pub y: f64,
}

/// Simulates the interferometer: Hadamard on the probe, `e^{-itH}` on the
/// system controlled by probe state 1, then the probe's reduced density
/// matrix.
pub fn probe_interferometer(s: &Spectrum, psi0: &StateVector, t: f64) -> Result<ProbeReadout> {
    let d = s.dim();
    if psi0.dim() != d {
        return Err(Error::Mismatch(format!("state of dimension {} vs spectrum {d}", psi0.dim())));
    }
    // joint layout: probe is the high bit, [system x probe0 ; system x probe1]
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut joint: Vec<Complex64> = psi0.amplitudes.iter().map(|z| z * h).collect();
    joint.extend(psi0.amplitudes.iter().map(|z| z * h));
    let controlled = propagate(s, &joint[d..], t);
    joint[d..].copy_from_slice(&controlled);

    let (p0, p1) = joint.split_at(d);
    let rho01: Complex64 = p0.iter().zip(p1).map(|(a, b)| a * b.conj()).sum();
    Ok(ProbeReadout {
        x: 2.0 * rho01.re,
        y: -2.0 * rho01.im,
    })
}

/// Mean and per-sample standard error of a stochastic trace estimate.
#[derive(Debug, Clone)]
pub struct StochasticTrace {
    pub estimate: ComplexTimeSeries,
    pub std_error: Vec<f64>,
    pub samples: usize,
}

/// Estimates `G(t)` by averaging `<r|e^{-itH}|r>` over normalized
/// complex-Gaussian states `r`.
pub fn stochastic_trace_g(s: &Spectrum, grid: TimeGrid, samples: usize, seed: u64) -> Result<StochasticTrace> {
    if samples == 0 {
        return Err(Error::Validation("stochastic trace needs at least one sample".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = grid.len();
    let mut sum = vec![ZERO; n];
    let mut sum_sq = vec![0.0; n];
    for _ in 0..samples {
        let r = StateVector::random(s.dim(), &mut rng);
        let weights: Vec<f64> = s.vectors().adjoint_mul_vec(&r.amplitudes).iter().map(|z| z.norm_sqr()).collect();
        let g = spectral_signal(&s.energies, &weights, grid);
        for ((acc, acc_sq), z) in sum.iter_mut().zip(&mut sum_sq).zip(&g.values) {
            *acc += z;
            *acc_sq += z.norm_sqr();
        }
    }
    let count = samples as f64;
    let values: Vec<Complex64> = sum.iter().map(|z| z / count).collect();
    let std_error = values
        .iter()
        .zip(&sum_sq)
        .map(|(mean, sq)| {
            if samples < 2 {
                return f64::INFINITY;
            }
            let var = (sq / count - mean.norm_sqr()).max(0.0) * count / (count - 1.0);
            (var / count).sqrt()
        })
        .collect();
    Ok(StochasticTrace {
        estimate: ComplexTimeSeries { grid, values },
        std_error,
        samples,
    })
}

/// Von Neumann entropy (nats) of sites `0..floor(L/2)` for a state of an `L`-site chain.
pub fn half_chain_entropy(psi: &StateVector, sites: usize) -> Result<f64> {
    if psi.dim() != 1 << sites {
        return Err(Error::Mismatch(format!("state of dimension {} is not a {sites}-site state", psi.dim())));
    }
    let cut = sites / 2;
    let left = 1usize << cut;
    let right = psi.dim() / left;
    // rho_left = Psi Psi^dag with Psi[i, j] = psi[i + left * j]
    let a = &psi.amplitudes;
    let rho = SplitMatrix::from_fn(left, left, |i, k| (0..right).map(|j| a[i + left * j] * a[k + left * j].conj()).sum());
    let (probs, _) = linalg::hermitian_eigen(&rho, false)?;
    Ok(probs.iter().filter(|&&p| p > 1e-300).map(|&p| -p * p.ln()).sum::<f64>().max(0.0))
}
