//! Finite-time Fourier reconstruction on an energy grid.
//!
//! A signal observed up to time `T` is turned into a sum of sinc kernels
//! `delta_T(e) = sin(T e) / (pi e)` centred on the eigenvalues. Each quantity
//! has two routes: a closed-form kernel sum over a known spectrum (the oracle)
//! and a trapezoid quadrature of the sampled signal (the measurement route).

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::ComplexTimeSeries;
use crate::error::{Error, Result};

/// Gap count averaged by [`critical_time`].
pub const CRITICAL_TIME_GAPS: usize = 5;

/// Relative mask level for [`observable_ac`]: a fraction of one level's peak `T/pi`.
pub const DEFAULT_MASK_FRACTION: f64 = 0.05;

/// `delta_T(e) = sin(T e) / (pi e)`, continuous at `e = 0` where it equals `T/pi`.
pub fn sinc_kernel(eps: f64, t: f64) -> f64 {
    let x = t * eps;
    if x.abs() < 1e-4 {
        let x2 = x * x;
        t / PI * (1.0 - x2 / 6.0 * (1.0 - x2 / 20.0))
    } else {
        x.sin() / (PI * eps)
    }
}

/// Uniform energy grid with `count` points from `e_min` to `e_max` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    e_min: f64,
    e_max: f64,
    count: usize,
}

impl EnergyGrid {
    pub fn new(e_min: f64, e_max: f64, count: usize) -> Result<Self> {
        if !(e_min.is_finite() && e_max.is_finite() && e_min < e_max) {
            return Err(Error::Validation(format!(
                "energy grid needs finite e_min < e_max, got [{e_min}, {e_max}]"
            )));
        }
        if count < 2 {
            return Err(Error::Validation(format!("energy grid needs at least 2 points, got {count}")));
        }
        Ok(Self { e_min, e_max, count })
    }

    /// Finest count such that the spacing does not exceed `max_spacing`.
    pub fn with_spacing(e_min: f64, e_max: f64, max_spacing: f64) -> Result<Self> {
        if !(max_spacing.is_finite() && max_spacing > 0.0) {
            return Err(Error::Validation(format!("grid spacing {max_spacing} must be positive")));
        }
        let intervals = ((e_max - e_min) / max_spacing).ceil().max(1.0);
        if !(intervals < 1e9) {
            return Err(Error::Validation(format!(
                "energy grid over [{e_min}, {e_max}] with spacing {max_spacing} is too large"
            )));
        }
        Self::new(e_min, e_max, intervals as usize + 1)
    }

    /// `[E_0 - 10/T, E_max + 10/T]` with spacing at most `1/(8T)`.
    pub fn default_for(energies: &[f64], t: f64) -> Result<Self> {
        check_time(t)?;
        let (lo, hi) = band(energies)?;
        Self::with_spacing(lo - 10.0 / t, hi + 10.0 / t, 1.0 / (8.0 * t))
    }

    pub fn e_min(&self) -> f64 {
        self.e_min
    }

    pub fn e_max(&self) -> f64 {
        self.e_max
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn spacing(&self) -> f64 {
        (self.e_max - self.e_min) / (self.count - 1) as f64
    }

    pub fn span(&self) -> f64 {
        self.e_max - self.e_min
    }

    pub fn energy(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.e_max
        } else {
            self.e_min + i as f64 * self.spacing()
        }
    }

    pub fn energies(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.energy(i)).collect()
    }

    pub fn contains(&self, e: f64) -> bool {
        e >= self.e_min && e <= self.e_max
    }

    /// The sinc main lobe needs `spacing <= 1/(4T)`.
    pub fn check_resolution(&self, t: f64) -> Result<()> {
        let limit = 1.0 / (4.0 * t);
        if self.spacing() > limit * (1.0 + 1e-12) {
            return Err(Error::Validation(format!(
                "energy spacing {} is coarser than 1/(4T) = {limit} for T = {t}",
                self.spacing()
            )));
        }
        Ok(())
    }
}

/// What a [`CoarseGrained`] curve represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseKind {
    Dos,
    #[serde(rename = "a_r")]
    ARaw,
    #[serde(rename = "a_c")]
    ACoarse,
    FockSigma,
}

impl CoarseKind {
    fn label(self) -> &'static str {
        match self {
            CoarseKind::Dos => "dos",
            CoarseKind::ARaw => "a_r",
            CoarseKind::ACoarse => "a_c",
            CoarseKind::FockSigma => "fock_sigma",
        }
    }
}

/// A real function on an [`EnergyGrid`] reconstructed at observation time `t_obs`.
///
/// Points with `valid[i] == false` hold `0.0` and must not be interpreted.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrained {
    pub grid: EnergyGrid,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub t_obs: f64,
    pub kind: CoarseKind,
}

impl CoarseGrained {
    fn dense(grid: EnergyGrid, values: Vec<f64>, t_obs: f64, kind: CoarseKind) -> Self {
        let valid = vec![true; values.len()];
        Self {
            grid,
            values,
            valid,
            t_obs,
            kind,
        }
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    /// Linear interpolation; `None` outside the grid or next to an invalid point.
    pub fn value_at(&self, e: f64) -> Option<f64> {
        if !self.grid.contains(e) {
            return None;
        }
        let x = (e - self.grid.e_min) / self.grid.spacing();
        let i = (x.floor() as usize).min(self.grid.count - 2);
        let f = x - i as f64;
        if !(self.valid[i] && self.valid[i + 1]) {
            return None;
        }
        Some(self.values[i] * (1.0 - f) + self.values[i + 1] * f)
    }

    /// Trapezoid integral over the whole grid.
    pub fn integral(&self) -> f64 {
        self.integrate(self.grid.e_min, self.grid.e_max)
            .expect("full-range integral is always inside the grid")
    }

    /// Trapezoid integral of the piecewise-linear interpolant over `[a, b]`.
    ///
    /// Invalid points contribute zero.
    pub fn integrate(&self, a: f64, b: f64) -> Result<f64> {
        integrate_piecewise(&self.grid, a, b, |i| if self.valid[i] { self.values[i] } else { 0.0 })
    }

    /// Running trapezoid integral from the bottom of the grid; for a density
    /// of states this is the integrated count `phi(E)`.
    pub fn cumulative(&self) -> Vec<f64> {
        let h = self.grid.spacing();
        let v = |i: usize| if self.valid[i] { self.values[i] } else { 0.0 };
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = 0.0;
        out.push(acc);
        for i in 1..self.values.len() {
            acc += 0.5 * h * (v(i - 1) + v(i));
            out.push(acc);
        }
        out
    }

    /// Largest difference to another curve on the same grid.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        same_grid(self, other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Indices of strict interior local maxima.
    pub fn local_maxima(&self) -> Vec<usize> {
        (1..self.values.len() - 1)
            .filter(|&i| {
                self.valid[i - 1..=i + 1].iter().all(|&v| v)
                    && self.values[i] > self.values[i - 1]
                    && self.values[i] >= self.values[i + 1]
            })
            .collect()
    }

    /// Position of the highest local maximum within `radius` of `e`, refined
    /// by a parabola through the three surrounding samples.
    pub fn peak_near(&self, e: f64, radius: f64) -> Option<f64> {
        let best = self
            .local_maxima()
            .into_iter()
            .filter(|&i| (self.grid.energy(i) - e).abs() <= radius)
            .max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]))?;
        let (y0, y1, y2) = (self.values[best - 1], self.values[best], self.values[best + 1]);
        let curvature = y0 - 2.0 * y1 + y2;
        let shift = if curvature < 0.0 { 0.5 * (y0 - y2) / curvature } else { 0.0 };
        Some(self.grid.energy(best) + shift * self.grid.spacing())
    }

    /// `E,value,valid_flag` with full round-trip precision.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "E[J_z],value,valid_flag")?;
        for (i, (&v, &ok)) in self.values.iter().zip(&self.valid).enumerate() {
            writeln!(w, "{:.16e},{v:.16e},{}", self.grid.energy(i), u8::from(ok))?;
        }
        Ok(())
    }

    /// Sidecar describing how the curve was produced.
    pub fn metadata(&self, model_hash: Option<&str>) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind.label(),
            "T": self.t_obs,
            "grid": {
                "e_min": self.grid.e_min,
                "e_max": self.grid.e_max,
                "count": self.grid.count,
                "spacing": self.grid.spacing(),
            },
            "valid_points": self.valid.iter().filter(|&&v| v).count(),
            "model_hash": model_hash,
        })
    }
}

fn same_grid(a: &CoarseGrained, b: &CoarseGrained) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::Mismatch("coarse-grained curves live on different energy grids".into()));
    }
    if (a.t_obs - b.t_obs).abs() > 1e-12 * a.t_obs.abs().max(b.t_obs.abs()) {
        return Err(Error::Mismatch(format!(
            "observation times differ: {} vs {}",
            a.t_obs, b.t_obs
        )));
    }
    Ok(())
}

/// Trapezoid integral of the linear interpolant of `f(i)` over `[a, b]`.
pub(crate) fn integrate_piecewise(grid: &EnergyGrid, a: f64, b: f64, f: impl Fn(usize) -> f64) -> Result<f64> {
    let tol = 1e-12 * grid.span();
    if a > b || a < grid.e_min - tol || b > grid.e_max + tol {
        return Err(Error::Validation(format!(
            "integration range [{a}, {b}] is not inside the grid [{}, {}]",
            grid.e_min, grid.e_max
        )));
    }
    let (a, b) = (a.max(grid.e_min), b.min(grid.e_max));
    let h = grid.spacing();
    let lerp = |x: f64| {
        let u = (x - grid.e_min) / h;
        let i = (u.floor() as usize).min(grid.count - 2);
        let s = u - i as f64;
        (i, f(i) * (1.0 - s) + f(i + 1) * s)
    };
    let (ia, fa) = lerp(a);
    let (ib, fb) = lerp(b);
    if ia == ib {
        return Ok(0.5 * (fa + fb) * (b - a));
    }
    let mut total = 0.5 * (fa + f(ia + 1)) * (grid.energy(ia + 1) - a);
    for i in ia + 1..ib {
        total += 0.5 * (f(i) + f(i + 1)) * h;
    }
    total += 0.5 * (f(ib) + fb) * (b - grid.energy(ib));
    Ok(total)
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Validation(format!("observation time T = {t} must be positive")));
    }
    Ok(())
}

fn band(energies: &[f64]) -> Result<(f64, f64)> {
    let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Validation("spectrum is empty or not finite".into()));
    }
    Ok((lo, hi))
}

/// `sum_n w_n delta_T(E - E_n)` at every grid point.
///
/// Away from the peak `sin(T(E - E_n))` is expanded by angle addition so each
/// term costs one division; rounding of `T E` then limits the relative error
/// to about `|T E| * 1e-16`.
fn kernel_sum(energies: &[f64], weights: &[f64], grid: &EnergyGrid, t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    if energies.len() != weights.len() {
        return Err(Error::Mismatch(format!(
            "{} weights for {} levels",
            weights.len(),
            energies.len()
        )));
    }
    grid.check_resolution(t)?;
    let phases: Vec<(f64, f64)> = energies.iter().map(|&e| (t * e).sin_cos()).collect();
    Ok((0..grid.count)
        .into_par_iter()
        .map(|i| {
            let e = grid.energy(i);
            let (se, ce) = (t * e).sin_cos();
            let (mut near, mut far) = (0.0, 0.0);
            for ((&en, &w), &(sn, cn)) in energies.iter().zip(weights).zip(&phases) {
                let eps = e - en;
                if (t * eps).abs() < 1.0 {
                    near += w * sinc_kernel(eps, t);
                } else {
                    far += w * (se * cn - ce * sn) / eps;
                }
            }
            near + far / PI
        })
        .collect())
}

/// Phase recurrence is re-seeded from `sin_cos` this often.
const RESYNC: usize = 64;

/// `(scale/pi) * int_0^T Re{s(t) e^{itE}} dt` by the trapezoid rule.
fn transform(series: &ComplexTimeSeries, scale: f64, grid: &EnergyGrid) -> Result<Vec<f64>> {
    let tg = series.grid;
    if tg.steps() == 0 {
        return Err(Error::Validation("signal needs at least two samples".into()));
    }
    tg.check_aliasing(grid.span())?;
    grid.check_resolution(tg.t_max())?;
    let dt = tg.dt();
    let last = tg.steps();
    Ok((0..grid.count)
        .into_par_iter()
        .map(|i| {
            let e = grid.energy(i);
            let (rs, rc) = (dt * e).sin_cos();
            let (mut s, mut c) = (0.0, 1.0);
            let mut acc = 0.0;
            for (k, z) in series.values.iter().enumerate() {
                if k % RESYNC == 0 {
                    (s, c) = (tg.time(k) * e).sin_cos();
                }
                let term = z.re * c - z.im * s;
                acc += if k == 0 || k == last { 0.5 * term } else { term };
                (s, c) = (s * rc + c * rs, c * rc - s * rs);
            }
            acc * dt * scale / PI
        })
        .collect())
}

/// `rho_c(E,T) = sum_n delta_T(E - E_n)`.
pub fn dos_closed_form(energies: &[f64], grid: &EnergyGrid, t: f64) -> Result<CoarseGrained> {
    let w = vec![1.0; energies.len()];
    let values = kernel_sum(energies, &w, grid, t)?;
    Ok(CoarseGrained::dense(*grid, values, t, CoarseKind::Dos))
}

/// `rho_c` from a sampled `G(t) = Z(it)/D`; `T` is the last sample time.
pub fn dos_from_series(g: &ComplexTimeSeries, dim: usize, grid: &EnergyGrid) -> Result<CoarseGrained> {
    let values = transform(g, dim as f64, grid)?;
    Ok(CoarseGrained::dense(*grid, values, g.grid.t_max(), CoarseKind::Dos))
}

/// `A_r(E,T) = sum_n A_n delta_T(E - E_n)`.
pub fn observable_ar(energies: &[f64], a_n: &[f64], grid: &EnergyGrid, t: f64) -> Result<CoarseGrained> {
    let values = kernel_sum(energies, a_n, grid, t)?;
    Ok(CoarseGrained::dense(*grid, values, t, CoarseKind::ARaw))
}

/// `A_r` from a sampled `G_A(t) = Tr(A e^{-itH})/D`.
pub fn observable_ar_from_series(g_a: &ComplexTimeSeries, dim: usize, grid: &EnergyGrid) -> Result<CoarseGrained> {
    let values = transform(g_a, dim as f64, grid)?;
    Ok(CoarseGrained::dense(*grid, values, g_a.grid.t_max(), CoarseKind::ARaw))
}

/// `A_c = A_r / rho_c`, masked where `|rho_c| < mask`.
///
/// `mask` defaults to `0.05 * T/pi`.
pub fn observable_ac(a_r: &CoarseGrained, rho: &CoarseGrained, mask: Option<f64>) -> Result<CoarseGrained> {
    same_grid(a_r, rho)?;
    if a_r.kind != CoarseKind::ARaw || rho.kind != CoarseKind::Dos {
        return Err(Error::Mismatch(format!(
            "A_c needs (a_r, dos) inputs, got ({}, {})",
            a_r.kind.label(),
            rho.kind.label()
        )));
    }
    let t = rho.t_obs;
    let threshold = mask.unwrap_or(DEFAULT_MASK_FRACTION * t / PI);
    let mut values = Vec::with_capacity(rho.values.len());
    let mut valid = Vec::with_capacity(rho.values.len());
    for i in 0..rho.values.len() {
        let ok = rho.valid[i] && a_r.valid[i] && rho.values[i].abs() >= threshold;
        values.push(if ok { a_r.values[i] / rho.values[i] } else { 0.0 });
        valid.push(ok);
    }
    Ok(CoarseGrained {
        grid: rho.grid,
        values,
        valid,
        t_obs: t,
        kind: CoarseKind::ACoarse,
    })
}

/// `rho_sigma(E,T) = (pi/T) sum_n M_{sigma n} delta_T(E - E_n)` for one row of `M`.
pub fn fock_distribution(energies: &[f64], m_row: &[f64], grid: &EnergyGrid, t: f64) -> Result<CoarseGrained> {
    let mut values = kernel_sum(energies, m_row, grid, t)?;
    let norm = PI / t;
    values.iter_mut().for_each(|v| *v *= norm);
    Ok(CoarseGrained::dense(*grid, values, t, CoarseKind::FockSigma))
}

/// `rho_sigma` from a sampled `G_sigma(t)`.
pub fn fock_distribution_from_series(g_sigma: &ComplexTimeSeries, grid: &EnergyGrid) -> Result<CoarseGrained> {
    let t = g_sigma.grid.t_max();
    let values = transform(g_sigma, PI / t, grid)?;
    Ok(CoarseGrained::dense(*grid, values, t, CoarseKind::FockSigma))
}

/// Local density of states `T_c(E)`, estimated as the inverse mean of the
/// [`CRITICAL_TIME_GAPS`] level gaps nearest `E`.
///
/// `energies` must be ascending. Returns `+inf` inside an exactly degenerate
/// stretch.
pub fn critical_time(energies: &[f64], e: f64) -> Result<f64> {
    let d = energies.len();
    if d < 2 {
        return Err(Error::Validation("critical time needs at least two levels".into()));
    }
    let (lo, hi) = (energies[0], energies[d - 1]);
    if !(e >= lo && e <= hi) {
        return Err(Error::Validation(format!(
            "energy {e} lies outside the spectrum [{lo}, {hi}]"
        )));
    }
    let gaps = d - 1;
    let k = CRITICAL_TIME_GAPS.min(gaps);
    // Gap j sits between levels j and j+1; centre the window on the gap containing e.
    let j = energies.partition_point(|&x| x <= e).clamp(1, d - 1) - 1;
    let start = j.saturating_sub(k / 2).min(gaps - k);
    let mean = (energies[start + k] - energies[start]) / k as f64;
    Ok(1.0 / mean)
}

/// Whether the curve dips below `0.95` of the lower endpoint between two energies.
pub fn pair_resolved(c: &CoarseGrained, e_a: f64, e_b: f64) -> Result<bool> {
    let (a, b) = if e_a <= e_b { (e_a, e_b) } else { (e_b, e_a) };
    let (Some(va), Some(vb)) = (c.value_at(a), c.value_at(b)) else {
        return Err(Error::Validation(format!("[{a}, {b}] is not inside the valid grid")));
    };
    let h = c.grid.spacing();
    let first = ((a - c.grid.e_min) / h).ceil() as usize;
    let last = ((b - c.grid.e_min) / h).floor() as usize;
    let dip = (first..=last.min(c.grid.count - 1))
        .filter(|&i| c.valid[i])
        .map(|i| c.values[i])
        .fold(f64::INFINITY, f64::min);
    Ok(dip < 0.95 * va.min(vb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{loschmidt_g, loschmidt_g_a, TimeGrid};
    use crate::eigen::EigenExpectations;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn kernel_values() {
        assert!((sinc_kernel(0.0, PI) - 1.0).abs() < 1e-15);
        assert!(sinc_kernel(PI / 3.0, 3.0).abs() < 1e-15);
        // Series branch meets the direct branch.
        let t: f64 = 7.0;
        let e = 1e-4 / t;
        let direct = (t * e).sin() / (PI * e);
        assert!((sinc_kernel(e * 0.999_999, t) - direct).abs() < 1e-12);
        let g = EnergyGrid::new(-50.0 / t, 50.0 / t, 200_001).unwrap();
        let total = integrate_piecewise(&g, g.e_min(), g.e_max(), |i| sinc_kernel(g.energy(i), t)).unwrap();
        // Truncating at +-X/T leaves a tail bounded by 2/(pi X).
        assert!((total - 1.0).abs() < 2.0 / (PI * 50.0), "{total}");
        let x = 100.5 * PI;
        let wide = EnergyGrid::new(-x / t, x / t, 400_001).unwrap();
        let total = integrate_piecewise(&wide, wide.e_min(), wide.e_max(), |i| sinc_kernel(wide.energy(i), t)).unwrap();
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn grid_rules() {
        let g = EnergyGrid::default_for(&[-1.0, 2.0], 4.0).unwrap();
        assert!(g.spacing() <= 1.0 / 32.0 + 1e-15);
        assert_eq!(g.e_min(), -3.5);
        assert_eq!(g.energy(g.count() - 1), 4.5);
        assert!(g.check_resolution(4.0).is_ok());
        assert!(g.check_resolution(16.0).is_err());
        assert!(EnergyGrid::new(1.0, 1.0, 5).is_err());
        assert!(EnergyGrid::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn single_level_is_the_kernel() {
        let t = 6.0;
        let grid = EnergyGrid::with_spacing(-3.0, 3.0, 0.01).unwrap();
        let rho = dos_closed_form(&[0.4], &grid, t).unwrap();
        for i in (0..grid.count()).step_by(37) {
            assert!((rho.values[i] - sinc_kernel(grid.energy(i) - 0.4, t)).abs() < 1e-14);
        }
        // G == 1 with a single level at zero gives delta_T(E).
        let tg = TimeGrid::covering(t, 0.001).unwrap();
        let ones = ComplexTimeSeries::new(tg, vec![Complex64::new(1.0, 0.0); tg.len()]).unwrap();
        let rec = dos_from_series(&ones, 1, &grid).unwrap();
        for i in (0..grid.count()).step_by(41) {
            assert!((rec.values[i] - sinc_kernel(grid.energy(i), t)).abs() < 1e-5);
        }
    }

    #[test]
    fn integrated_dos_counts_levels() {
        let energies = [-0.8, -0.1, 0.2, 0.75];
        let t = 200.0;
        let grid = EnergyGrid::with_spacing(-1.5, 1.5, 1.0 / (8.0 * t)).unwrap();
        let rho = dos_closed_form(&energies, &grid, t).unwrap();
        let phi = rho.cumulative();
        assert_eq!(phi[0], 0.0);
        assert!((phi[phi.len() - 1] - rho.integral()).abs() < 1e-9);
        // Between levels the staircase sits near an integer.
        for (e, steps) in [(-0.5, 1.0), (0.0, 2.0), (0.5, 3.0), (1.2, 4.0)] {
            let i = ((e - grid.e_min()) / grid.spacing()).round() as usize;
            assert!((phi[i] - steps).abs() < 0.02, "{e}: {}", phi[i]);
        }
    }

    #[test]
    fn short_time_limit_counts_levels() {
        let energies = [-1.0, -0.2, 0.3, 0.9];
        let t = 1e-3;
        let grid = EnergyGrid::new(-1.0, 1.0, 5).unwrap();
        let rho = dos_closed_form(&energies, &grid, t).unwrap();
        for v in rho.values {
            assert!((v - t / PI * 4.0).abs() < 1e-9);
        }
    }

    #[test]
    fn observable_reductions() {
        let energies = [-1.2, -0.3, 0.5, 1.1];
        let t = 5.0;
        let grid = EnergyGrid::default_for(&energies, t).unwrap();
        let rho = dos_closed_form(&energies, &grid, t).unwrap();
        let ar_id = observable_ar(&energies, &[1.0; 4], &grid, t).unwrap();
        assert_eq!(ar_id.values, rho.values);
        let ar = observable_ar(&energies, &[0.7; 4], &grid, t).unwrap();
        for (a, r) in ar.values.iter().zip(&rho.values) {
            assert!((a - 0.7 * r).abs() < 1e-14);
        }
        let ac = observable_ac(&ar, &rho, None).unwrap();
        assert!(ac.valid.iter().any(|&v| v));
        for (v, ok) in ac.values.iter().zip(&ac.valid) {
            if *ok {
                assert!((v - 0.7).abs() < 1e-12);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(observable_ac(&rho, &ar, None).is_err());
        let other = dos_closed_form(&energies, &grid, 5.5).unwrap();
        assert!(observable_ac(&ar, &other, None).is_err());
    }

    #[test]
    fn isolated_peak_heights() {
        let energies = [-2.0, 0.0, 3.0];
        let t = 200.0;
        let grid = EnergyGrid::default_for(&energies, t).unwrap();
        let ar = observable_ar(&energies, &[0.25, -0.5, 0.75], &grid, t).unwrap();
        for (e, a) in energies.iter().zip([0.25, -0.5, 0.75]) {
            assert!((PI / t * ar.value_at(*e).unwrap() - a).abs() < 5e-3);
        }
        // Two-level Fock distribution with weights one half.
        let t = 400.0;
        let grid = EnergyGrid::with_spacing(-0.15 - 200.0 / t, 0.15 + 200.0 / t, 1.0 / (8.0 * t)).unwrap();
        let fock = fock_distribution(&[-0.15, 0.15], &[0.5, 0.5], &grid, t).unwrap();
        for e in [-0.15, 0.15] {
            assert!((fock.value_at(e).unwrap() - 0.5).abs() < 1e-2);
            assert!((fock.peak_near(e, 0.01).unwrap() - e).abs() < 1.0 / t);
        }
        assert!((fock.integral() * t / PI - 1.0).abs() < 1e-2);
    }

    #[test]
    fn critical_time_rules() {
        let uniform: Vec<f64> = (0..20).map(|k| 0.3 * k as f64).collect();
        for e in [0.0, 1.0, 2.95, 5.7] {
            assert!((critical_time(&uniform, e).unwrap() - 1.0 / 0.3).abs() < 1e-9);
        }
        assert!(critical_time(&uniform, -0.1).is_err());
        assert!(critical_time(&[1.0], 1.0).is_err());
        assert!((critical_time(&[0.0, 0.5], 0.2).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gap_resolution_threshold() {
        // Two equal levels a gap g apart: resolved near T = 4.2/g, not at pi/g.
        let g = 0.1;
        let levels = [0.0, g];
        let check = |t: f64| {
            let grid = EnergyGrid::default_for(&levels, t).unwrap();
            let rho = dos_closed_form(&levels, &grid, t).unwrap();
            pair_resolved(&rho, 0.0, g).unwrap()
        };
        assert!(!check(PI / g));
        assert!(check(2.0 * PI / g));
        assert!(check(50.0 / g));
    }

    #[test]
    fn signal_matches_closed_form() {
        let energies = [-1.1, -0.4, 0.05, 0.6, 1.3];
        let t = 8.0;
        let grid = EnergyGrid::default_for(&energies, t).unwrap();
        let tg = TimeGrid::covering(t, 2e-3).unwrap();
        let g = loschmidt_g(&energies, tg);
        let rec = dos_from_series(&g, energies.len(), &grid).unwrap();
        let exact = dos_closed_form(&energies, &grid, t).unwrap();
        assert!(rec.max_abs_diff(&exact).unwrap() < 1e-5 * t / PI);

        let a = EigenExpectations { values: vec![0.3, -0.2, 0.9, 0.1, -0.6] };
        let ga = loschmidt_g_a(&energies, &a, tg).unwrap();
        let rec_a = observable_ar_from_series(&ga, 5, &grid).unwrap();
        let exact_a = observable_ar(&energies, &a.values, &grid, t).unwrap();
        assert!(rec_a.max_abs_diff(&exact_a).unwrap() < 1e-5 * t / PI);

        let w = [0.1, 0.2, 0.3, 0.25, 0.15];
        let gs = crate::dynamics::spectral_signal(&energies, &w, tg);
        let rec_s = fock_distribution_from_series(&gs, &grid).unwrap();
        let exact_s = fock_distribution(&energies, &w, &grid, t).unwrap();
        assert!(rec_s.max_abs_diff(&exact_s).unwrap() < 1e-5);
    }

    #[test]
    fn aliasing_is_refused() {
        let energies = [-3.0, 3.0];
        let grid = EnergyGrid::default_for(&energies, 4.0).unwrap();
        let tg = TimeGrid::covering(4.0, 1.0).unwrap();
        let g = loschmidt_g(&energies, tg);
        assert!(matches!(dos_from_series(&g, 2, &grid), Err(Error::Aliasing { .. })));
    }

    #[test]
    fn csv_and_metadata() {
        let grid = EnergyGrid::new(0.0, 1.0, 3).unwrap();
        let c = CoarseGrained {
            grid,
            values: vec![1.0, 2.0, 0.0],
            valid: vec![true, true, false],
            t_obs: 2.0,
            kind: CoarseKind::ACoarse,
        };
        let mut out = Vec::new();
        c.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().nth(3).unwrap(), "1.0000000000000000e0,0.0000000000000000e0,0");
        let meta = c.metadata(Some("abc"));
        assert_eq!(meta["kind"], "a_c");
        assert_eq!(meta["valid_points"], 2);
        assert!(c.value_at(0.75).is_none());
        assert_eq!(c.value_at(0.25), Some(1.5));
        assert!((c.integrate(0.25, 0.75).unwrap() - (0.25 * 1.75 + 0.25 * 1.5)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn kernel_sum_matches_direct_evaluation(
            e in prop::collection::vec(-4.0..4.0f64, 1..40),
            t in 1.0..3000.0f64,
        ) {
            let w: Vec<f64> = (0..e.len()).map(|k| 1.0 + 0.1 * k as f64).collect();
            let grid = EnergyGrid::with_spacing(-4.0, 4.0, 1.0 / (4.0 * t)).unwrap();
            let fast = kernel_sum(&e, &w, &grid, t).unwrap();
            let scale: f64 = w.iter().sum::<f64>() * t / PI;
            for i in (0..grid.count()).step_by(97) {
                let x = grid.energy(i);
                let direct: f64 = e.iter().zip(&w).map(|(en, wn)| wn * sinc_kernel(x - en, t)).sum();
                prop_assert!((fast[i] - direct).abs() < 1e-11 * scale);
            }
        }

        #[test]
        fn reconstruction_is_linear(
            e in prop::collection::vec(-2.0..2.0f64, 1..6),
            alpha in -3.0..3.0f64,
            beta in -3.0..3.0f64,
        ) {
            let t = 4.0;
            let tg = TimeGrid::covering(t, 0.05).unwrap();
            let grid = EnergyGrid::with_spacing(-2.5, 2.5, 1.0 / (8.0 * t)).unwrap();
            let g1 = loschmidt_g(&e, tg);
            let shifted: Vec<f64> = e.iter().map(|x| -x * 0.5).collect();
            let g2 = loschmidt_g(&shifted, tg);
            let mix = g1.combine(alpha, &g2, beta).unwrap();
            let r = dos_from_series(&mix, 3, &grid).unwrap();
            let r1 = dos_from_series(&g1, 3, &grid).unwrap();
            let r2 = dos_from_series(&g2, 3, &grid).unwrap();
            let scale = (alpha.abs() + beta.abs() + 1.0) * 3.0 * t / PI;
            for i in 0..grid.count() {
                prop_assert!((r.values[i] - alpha * r1.values[i] - beta * r2.values[i]).abs() < 1e-12 * scale);
            }
        }

        #[test]
        fn dos_counts_levels_and_lobes_stay_bounded(
            mut e in prop::collection::vec(-3.0..3.0f64, 2..12),
        ) {
            e.sort_by(f64::total_cmp);
            let t = 120.0 / (e[e.len() - 1] - e[0]).max(0.5);
            let grid = EnergyGrid::with_spacing(e[0] - 20.0 / t, e[e.len() - 1] + 20.0 / t, 1.0 / (8.0 * t)).unwrap();
            let rho = dos_closed_form(&e, &grid, t).unwrap();
            let d = e.len() as f64;
            prop_assert!((rho.integral() - d).abs() < 0.02 * d);
            // Each level dips to at most -0.21724 T/pi and its tail to -1/(pi |E - E_n|).
            for (i, v) in rho.values.iter().enumerate() {
                let x = grid.energy(i);
                let floor: f64 = e.iter().map(|en| (0.21724 * t / PI).min(1.0 / (PI * (x - en).abs()))).sum();
                prop_assert!(*v >= -floor);
            }
        }
    }
}
