//! Thermodynamics from a spectral measure.
//!
//! Averages `A(beta) = int dE rho(E) f(E) e^{-beta E} / Z(beta)` are evaluated
//! either on the exact levels (canonical ensemble) or on a coarse-grained
//! `rho_c(E,T)` between two energy bounds. Both use the same code, so the
//! exact-level case doubles as the canonical oracle.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::reconstruct::{integrate_piecewise, CoarseGrained, CoarseKind};

/// Largest `beta J_z` accepted on a reconstructed density of states.
pub const MAX_SIGNAL_BETA: f64 = 10.0;

/// Relative floor below which `Z` is declared degenerate.
pub const Z_FLOOR: f64 = 1e-12;

/// Integration range `[lower, upper]` for a coarse-grained density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ThermoBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Validation(format!("bounds [{lower}, {upper}] are not an interval")));
        }
        Ok(Self { lower, upper })
    }

    /// Lowest and highest eigenvalue.
    pub fn from_levels(energies: &[f64]) -> Result<Self> {
        let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(lo, hi)
    }

    /// Outermost grid points where `rho_c >= T/(2 pi)`, pushed outwards by
    /// `margin` and clipped to the grid.
    pub fn estimate(rho: &CoarseGrained, margin: f64) -> Result<Self> {
        if rho.kind != CoarseKind::Dos {
            return Err(Error::Mismatch("bounds are estimated from a density of states".into()));
        }
        let level = 0.5 * rho.t_obs / PI;
        let above = |i: &usize| rho.valid[*i] && rho.values[*i] >= level;
        let first = (0..rho.values.len()).find(above);
        let last = (0..rho.values.len()).rev().find(above);
        let (Some(first), Some(last)) = (first, last) else {
            return Err(Error::Degenerate {
                what: "peak density",
                value: rho.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                floor: level,
            });
        };
        let g = rho.grid;
        let lower = (g.energy(first) - margin).max(g.e_min());
        let upper = (g.energy(last) + margin).min(g.e_max());
        Self::new(lower, upper)
    }
}

/// A positive (exact) or signed (reconstructed) spectral measure.
#[derive(Debug, Clone, Copy)]
pub enum Measure<'a> {
    /// Unit weight on every eigenvalue.
    Levels(&'a [f64]),
    /// `rho_c(E,T)` integrated over `bounds`.
    Coarse { rho: &'a CoarseGrained, bounds: ThermoBounds },
}

/// What is averaged against the Boltzmann weight.
#[derive(Clone, Copy)]
pub enum Integrand<'a> {
    One,
    /// A function of energy.
    Energy(&'a dyn Fn(f64) -> f64),
    /// Per-level values `A_n`; only with [`Measure::Levels`].
    Levels(&'a [f64]),
    /// A coarse-grained `A_c` on the density's grid; only with [`Measure::Coarse`].
    /// Invalid points are dropped from numerator and `Z` alike.
    Coarse(&'a CoarseGrained),
}

/// Integrand value at energy `e` and grid index `i`; `None` drops the point.
type PointFn<'b> = Box<dyn Fn(f64, usize) -> Option<f64> + 'b>;

impl<'a> Measure<'a> {
    pub fn coarse(rho: &'a CoarseGrained, bounds: ThermoBounds) -> Result<Self> {
        if rho.kind != CoarseKind::Dos {
            return Err(Error::Mismatch("thermodynamics needs a density of states".into()));
        }
        let g = rho.grid;
        let tol = 1e-12 * g.span();
        if bounds.lower < g.e_min() - tol || bounds.upper > g.e_max() + tol {
            return Err(Error::Validation(format!(
                "bounds [{}, {}] leave the grid [{}, {}]",
                bounds.lower,
                bounds.upper,
                g.e_min(),
                g.e_max()
            )));
        }
        Ok(Measure::Coarse { rho, bounds })
    }

    /// Energy subtracted inside exponentials to keep them bounded by one.
    fn reference(&self) -> f64 {
        match self {
            Measure::Levels(e) => e.iter().copied().fold(f64::INFINITY, f64::min),
            Measure::Coarse { bounds, .. } => bounds.lower,
        }
    }

    fn check_beta(&self, beta: f64) -> Result<()> {
        if !beta.is_finite() {
            return Err(Error::Validation(format!("beta = {beta} is not finite")));
        }
        if matches!(self, Measure::Coarse { .. }) && beta > MAX_SIGNAL_BETA {
            return Err(Error::Validation(format!(
                "beta = {beta} exceeds {MAX_SIGNAL_BETA} on a reconstructed density"
            )));
        }
        Ok(())
    }

    /// `sum/int rho(E) g(E) e^{-beta (E - shift)}` with `g` returning `None`
    /// for points to drop.
    fn boltzmann_sum(&self, beta: f64, shift: f64, g: &dyn Fn(f64, usize) -> Option<f64>) -> Result<f64> {
        match *self {
            Measure::Levels(energies) => Ok(energies
                .iter()
                .enumerate()
                .filter_map(|(n, &e)| g(e, n).map(|v| v * (-beta * (e - shift)).exp()))
                .sum()),
            Measure::Coarse { rho, bounds } => {
                let grid = rho.grid;
                integrate_piecewise(&grid, bounds.lower, bounds.upper, |i| {
                    let e = grid.energy(i);
                    match (rho.valid[i], g(e, i)) {
                        (true, Some(v)) => rho.values[i] * v * (-beta * (e - shift)).exp(),
                        _ => 0.0,
                    }
                })
            }
        }
    }

    fn integrand_fn<'b>(&self, f: Integrand<'b>) -> Result<PointFn<'b>> {
        Ok(match (self, f) {
            (_, Integrand::One) => Box::new(|_, _| Some(1.0)),
            (_, Integrand::Energy(func)) => Box::new(move |e, _| Some(func(e))),
            (Measure::Levels(e), Integrand::Levels(a)) => {
                if a.len() != e.len() {
                    return Err(Error::Mismatch(format!("{} values for {} levels", a.len(), e.len())));
                }
                Box::new(move |_, n| Some(a[n]))
            }
            (Measure::Coarse { rho, .. }, Integrand::Coarse(ac)) => {
                if ac.grid != rho.grid || ac.kind != CoarseKind::ACoarse {
                    return Err(Error::Mismatch("A_c must be an a_c curve on the density's grid".into()));
                }
                Box::new(move |_, i| ac.valid[i].then(|| ac.values[i]))
            }
            _ => {
                return Err(Error::Mismatch(
                    "per-level values need exact levels, coarse curves need a coarse density".into(),
                ))
            }
        })
    }

    /// Scale used for the degeneracy floor: total unweighted mass.
    fn mass(&self) -> Result<f64> {
        match *self {
            Measure::Levels(e) => Ok(e.len() as f64),
            Measure::Coarse { rho, bounds } => {
                integrate_piecewise(&rho.grid, bounds.lower, bounds.upper, |i| {
                    if rho.valid[i] {
                        rho.values[i].abs()
                    } else {
                        0.0
                    }
                })
            }
        }
    }

    fn shifted_z(&self, beta: f64, shift: f64, keep: &dyn Fn(f64, usize) -> Option<f64>) -> Result<f64> {
        let z = self.boltzmann_sum(beta, shift, &|e, i| keep(e, i).map(|_| 1.0))?;
        let floor = Z_FLOOR * self.mass()?;
        if !(z > floor) {
            return Err(Error::Degenerate {
                what: "Z_T(beta)",
                value: z,
                floor,
            });
        }
        Ok(z)
    }

    /// `Z(beta)`.
    pub fn partition_z(&self, beta: f64) -> Result<f64> {
        self.check_beta(beta)?;
        let shift = self.reference();
        let z = self.shifted_z(beta, shift, &|_, _| Some(1.0))?;
        Ok(z * (-beta * shift).exp())
    }

    /// Boltzmann average of `f`.
    pub fn average(&self, f: Integrand<'_>, beta: f64) -> Result<f64> {
        self.check_beta(beta)?;
        let shift = self.reference();
        let g = self.integrand_fn(f)?;
        let z = self.shifted_z(beta, shift, &*g)?;
        Ok(self.boltzmann_sum(beta, shift, &*g)? / z)
    }

    /// Mean energy and variance, the latter as a centred second moment.
    pub fn energy_moments(&self, beta: f64) -> Result<(f64, f64)> {
        let mean = self.average(Integrand::Energy(&|e| e), beta)?;
        let var = self.average(Integrand::Energy(&|e| (e - mean) * (e - mean)), beta)?;
        Ok((mean, var))
    }

    /// `C = beta^2 (<E^2> - <E>^2)`.
    pub fn specific_heat(&self, beta: f64) -> Result<f64> {
        let (_, var) = self.energy_moments(beta)?;
        Ok(beta * beta * var)
    }

    fn span(&self) -> f64 {
        match *self {
            Measure::Levels(e) => {
                let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            }
            Measure::Coarse { bounds, .. } => bounds.upper - bounds.lower,
        }
    }

    fn t_obs(&self) -> Option<f64> {
        match self {
            Measure::Levels(_) => None,
            Measure::Coarse { rho, .. } => Some(rho.t_obs),
        }
    }
}

/// A curve over inverse temperatures.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermoCurve {
    pub betas: Vec<f64>,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    /// Observation time of the underlying density, `None` for exact levels.
    pub t_obs: Option<f64>,
    /// Canonical reference on the same betas, when known.
    pub exact: Option<Vec<f64>>,
}

impl ThermoCurve {
    /// `sup |values - exact| / sup |exact|` over valid points.
    pub fn relative_sup_error(&self) -> Option<f64> {
        let exact = self.exact.as_ref()?;
        let scale = exact.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let err = self
            .values
            .iter()
            .zip(exact)
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|((v, x), _)| (v - x).abs())
            .fold(0.0, f64::max);
        Some(err / scale)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        match &self.exact {
            Some(_) => writeln!(w, "beta[1/J_z],value,valid_flag,exact")?,
            None => writeln!(w, "beta[1/J_z],value,valid_flag")?,
        }
        for (k, b) in self.betas.iter().enumerate() {
            write!(w, "{b:.16e},{:.16e},{}", self.values[k], u8::from(self.valid[k]))?;
            if let Some(x) = &self.exact {
                write!(w, ",{:.16e}", x[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Specific heat on a list of betas. Points with a degenerate `Z` or with
/// `C < -1e-6 beta^2 span^2` are kept but flagged invalid.
pub fn specific_heat_curve(measure: &Measure<'_>, betas: &[f64], exact_levels: Option<&[f64]>) -> Result<ThermoCurve> {
    let span = measure.span();
    let mut values = Vec::with_capacity(betas.len());
    let mut valid = Vec::with_capacity(betas.len());
    for &b in betas {
        match measure.specific_heat(b) {
            Ok(c) => {
                values.push(c);
                valid.push(c >= -1e-6 * b * b * span * span);
            }
            Err(Error::Degenerate { .. }) => {
                values.push(0.0);
                valid.push(false);
            }
            Err(e) => return Err(e),
        }
    }
    let exact = exact_levels
        .map(|e| betas.iter().map(|&b| Measure::Levels(e).specific_heat(b)).collect::<Result<Vec<_>>>())
        .transpose()?;
    Ok(ThermoCurve {
        betas: betas.to_vec(),
        values,
        valid,
        t_obs: measure.t_obs(),
        exact,
    })
}

/// Mean energy on a list of betas.
pub fn energy_curve(measure: &Measure<'_>, betas: &[f64], exact_levels: Option<&[f64]>) -> Result<ThermoCurve> {
    let mut values = Vec::with_capacity(betas.len());
    let mut valid = Vec::with_capacity(betas.len());
    for &b in betas {
        match measure.average(Integrand::Energy(&|e| e), b) {
            Ok(v) => {
                values.push(v);
                valid.push(true);
            }
            Err(Error::Degenerate { .. }) => {
                values.push(0.0);
                valid.push(false);
            }
            Err(e) => return Err(e),
        }
    }
    let exact = exact_levels
        .map(|e| {
            betas
                .iter()
                .map(|&b| Measure::Levels(e).average(Integrand::Energy(&|x| x), b))
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    Ok(ThermoCurve {
        betas: betas.to_vec(),
        values,
        valid,
        t_obs: measure.t_obs(),
        exact,
    })
}

/// `n + 1` evenly spaced betas from `lo` to `hi`.
pub fn beta_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lo + (hi - lo) * k as f64 / n.max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::{dos_closed_form, observable_ac, observable_ar, EnergyGrid};
    use proptest::prelude::*;

    #[test]
    fn schottky_two_level() {
        let g = 0.7;
        let levels = [-g / 2.0, g / 2.0];
        let m = Measure::Levels(&levels);
        for b in [0.0, 0.3, 1.0, 4.0, 20.0] {
            let x = b * g / 2.0;
            let expect = x * x / x.cosh().powi(2);
            assert!((m.specific_heat(b).unwrap() - expect).abs() < 1e-12);
            let z = 2.0 * x.cosh();
            assert!((m.partition_z(b).unwrap() - z).abs() < 1e-12 * z);
        }
        assert_eq!(m.specific_heat(0.0).unwrap(), 0.0);
    }

    #[test]
    fn counting_and_trivial_averages() {
        let levels = [-1.0, -0.25, 0.5, 0.75];
        let m = Measure::Levels(&levels);
        assert_eq!(m.partition_z(0.0).unwrap(), 4.0);
        assert!((m.average(Integrand::One, 1.3).unwrap() - 1.0).abs() < 1e-15);
        assert!(m.average(Integrand::Energy(&|e| e), 0.0).unwrap().abs() < 1e-15);
        let a = [1.0, 2.0, 3.0, 4.0];
        let direct: f64 = levels.iter().zip(&a).map(|(e, x)| x * (-0.5 * e).exp()).sum::<f64>()
            / levels.iter().map(|e| (-0.5 * e).exp()).sum::<f64>();
        assert!((m.average(Integrand::Levels(&a), 0.5).unwrap() - direct).abs() < 1e-14);
        assert!(m.average(Integrand::Levels(&a[..2]), 0.5).is_err());
    }

    #[test]
    fn coarse_density_converges_to_canonical() {
        let levels = [-1.3, -0.9, -0.2, 0.1, 0.4, 1.0, 1.6];
        let exact = Measure::Levels(&levels);
        let mut errs = Vec::new();
        for t in [20.0, 80.0, 320.0] {
            let grid = EnergyGrid::with_spacing(-1.3 - 25.0 / t, 1.6 + 25.0 / t, 1.0 / (8.0 * t)).unwrap();
            let rho = dos_closed_form(&levels, &grid, t).unwrap();
            let bounds = ThermoBounds::new(-1.3 - 6.5 * PI / t, 1.6 + 6.5 * PI / t).unwrap();
            let m = Measure::coarse(&rho, bounds).unwrap();
            assert!((m.partition_z(0.0).unwrap() - 7.0).abs() < 0.1);
            assert!((m.average(Integrand::One, 1.0).unwrap() - 1.0).abs() < 1e-12);
            let err = (0..=10)
                .map(|k| {
                    let b = 0.2 * k as f64;
                    (m.specific_heat(b).unwrap() - exact.specific_heat(b).unwrap()).abs()
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[2] < errs[0], "{errs:?}");
        assert!(errs[2] < 2e-2, "{errs:?}");
    }

    #[test]
    fn coarse_observable_and_masking() {
        let levels = [-1.0, -0.3, 0.2, 0.9];
        let a = [0.5; 4];
        let t = 30.0;
        let grid = EnergyGrid::default_for(&levels, t).unwrap();
        let rho = dos_closed_form(&levels, &grid, t).unwrap();
        let ar = observable_ar(&levels, &a, &grid, t).unwrap();
        let ac = observable_ac(&ar, &rho, None).unwrap();
        assert!(ac.valid.iter().any(|v| !v));
        let m = Measure::coarse(&rho, ThermoBounds::from_levels(&levels).unwrap()).unwrap();
        for b in [0.0, 1.0, 3.0] {
            assert!((m.average(Integrand::Coarse(&ac), b).unwrap() - 0.5).abs() < 1e-12);
        }
        assert!(m.average(Integrand::Coarse(&rho), 1.0).is_err());
        assert!(m.average(Integrand::Levels(&a), 1.0).is_err());
        assert!(matches!(m.partition_z(11.0), Err(Error::Validation(_))));
    }

    #[test]
    fn bounds_estimation() {
        let levels = [-1.0, 0.0, 1.0];
        let t = 40.0;
        let grid = EnergyGrid::default_for(&levels, t).unwrap();
        let rho = dos_closed_form(&levels, &grid, t).unwrap();
        let b = ThermoBounds::estimate(&rho, 0.0).unwrap();
        // Half-height of the main lobe sits at |T e| ~ 1.9.
        assert!((b.lower + 1.0).abs() < 2.0 / t && b.lower < -1.0);
        assert!((b.upper - 1.0).abs() < 2.0 / t && b.upper > 1.0);
        let wide = ThermoBounds::estimate(&rho, 1e3).unwrap();
        assert_eq!((wide.lower, wide.upper), (grid.e_min(), grid.e_max()));
        assert!(Measure::coarse(&rho, ThermoBounds::new(-5.0, 1.0).unwrap()).is_err());
    }

    #[test]
    fn degenerate_z_is_flagged() {
        let grid = EnergyGrid::new(-1.0, 1.0, 101).unwrap();
        let rho = CoarseGrained {
            grid,
            values: vec![0.0; 101],
            valid: vec![true; 101],
            t_obs: 10.0,
            kind: CoarseKind::Dos,
        };
        let m = Measure::coarse(&rho, ThermoBounds::new(-1.0, 1.0).unwrap()).unwrap();
        assert!(matches!(m.partition_z(0.5), Err(Error::Degenerate { .. })));
        let curve = specific_heat_curve(&m, &[0.0, 1.0], None).unwrap();
        assert_eq!(curve.valid, vec![false, false]);
    }

    #[test]
    fn curve_csv() {
        let levels = [-0.5, 0.5];
        let curve = specific_heat_curve(&Measure::Levels(&levels), &[0.0, 1.0], Some(&levels)).unwrap();
        assert_eq!(curve.relative_sup_error(), Some(0.0));
        let mut out = Vec::new();
        curve.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("beta[1/J_z],value,valid_flag,exact\n0.0000000000000000e0,"));
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn symmetric_spectrum_gives_odd_energy(
            half in prop::collection::vec(0.05..2.0f64, 1..5),
            beta in 0.0..3.0f64,
        ) {
            let mut levels: Vec<f64> = half.iter().flat_map(|&e| [-e, e]).collect();
            levels.sort_by(f64::total_cmp);
            let t = 25.0;
            let edge = levels[levels.len() - 1] + 25.0 / t;
            let grid = EnergyGrid::with_spacing(-edge, edge, 1.0 / (8.0 * t)).unwrap();
            let rho = dos_closed_form(&levels, &grid, t).unwrap();
            let lo = levels[0] - 6.5 * PI / t;
            let m = Measure::coarse(&rho, ThermoBounds::new(lo, -lo).unwrap()).unwrap();
            let plus = m.average(Integrand::Energy(&|e| e), beta).unwrap();
            let minus = m.average(Integrand::Energy(&|e| e), -beta).unwrap();
            prop_assert!((plus + minus).abs() < 1e-6 * (1.0 + plus.abs()));
            let exact = Measure::Levels(&levels);
            let ep = exact.average(Integrand::Energy(&|e| e), beta).unwrap();
            let em = exact.average(Integrand::Energy(&|e| e), -beta).unwrap();
            prop_assert!((ep + em).abs() < 1e-12 * (1.0 + ep.abs()));
        }

        #[test]
        fn specific_heat_is_nonnegative_on_levels(
            levels in prop::collection::vec(-3.0..3.0f64, 1..10),
            beta in 0.0..5.0f64,
        ) {
            prop_assert!(Measure::Levels(&levels).specific_heat(beta).unwrap() >= 0.0);
        }
    }
}
