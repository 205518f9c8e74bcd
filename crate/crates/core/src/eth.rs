//! Eigenstate-thermalization diagnostics.
//!
//! `sigma_exact` measures how far the eigenstate expectations `A_n` scatter
//! around a smooth coarse-grained curve `A_c(E, T_sc)`. `sigma_signal` is the
//! finite-time estimator built from reconstructed curves only.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruct::{critical_time, integrate_piecewise, CoarseGrained, CoarseKind};

/// Energy window `[e_minus, e_plus]` with the coarse-graining time `t_sc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EthWindow {
    pub e_minus: f64,
    pub e_plus: f64,
    pub t_sc: f64,
}

impl EthWindow {
    pub fn new(e_minus: f64, e_plus: f64, t_sc: f64) -> Result<Self> {
        if !(e_minus.is_finite() && e_plus.is_finite() && e_minus < e_plus) {
            return Err(Error::Validation(format!("window [{e_minus}, {e_plus}] is empty")));
        }
        if !(t_sc.is_finite() && t_sc > 0.0) {
            return Err(Error::Validation(format!("T_sc = {t_sc} must be positive")));
        }
        Ok(Self { e_minus, e_plus, t_sc })
    }

    pub fn contains(&self, e: f64) -> bool {
        e >= self.e_minus && e <= self.e_plus
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t > self.t_sc) {
            return Err(Error::Validation(format!(
                "observation time {t} must exceed T_sc = {}",
                self.t_sc
            )));
        }
        Ok(())
    }
}

/// Which density sits in the denominator of [`sigma_signal`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaWeights {
    /// Numerator weighted by `rho_c(E,T)`, denominator by `rho_c(E,T_sc)`.
    #[default]
    AsPrinted,
    /// `rho_c(E,T_sc)` in both integrals. Not the published estimator.
    ReferenceBoth,
}

/// `sigma_A^2 = (1/D_N) sum_{E_n in window} (A_n - A_c(E_n, T_sc))^2`, with
/// `A_c` linearly interpolated from its grid.
pub fn sigma_exact(energies: &[f64], a_n: &[f64], ac_ref: &CoarseGrained, window: &EthWindow) -> Result<f64> {
    if energies.len() != a_n.len() {
        return Err(Error::Mismatch(format!(
            "{} expectation values for {} levels",
            a_n.len(),
            energies.len()
        )));
    }
    if ac_ref.kind != CoarseKind::ACoarse {
        return Err(Error::Mismatch("the reference curve must be an a_c curve".into()));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (&e, &a) in energies.iter().zip(a_n) {
        if !window.contains(e) {
            continue;
        }
        let Some(smooth) = ac_ref.value_at(e) else {
            return Err(Error::Validation(format!("A_c(E, T_sc) is not valid at eigenvalue {e}")));
        };
        sum += (a - smooth) * (a - smooth);
        count += 1;
    }
    if count == 0 {
        return Err(Error::Validation(format!(
            "no eigenvalue in [{}, {}]",
            window.e_minus, window.e_plus
        )));
    }
    Ok((sum / count as f64).sqrt())
}

/// Finite-time estimator
/// `sigma_A^2(T) = int ((pi/T) A_r(E,T) - A_c(E,T_sc))^2 rho_c(E,T) dE / int rho_c(E,T_sc) dE`
/// over the window. Grid points where `A_c(E,T_sc)` is masked are left out of
/// both integrals.
pub fn sigma_signal(
    ar: &CoarseGrained,
    ac_ref: &CoarseGrained,
    rho: &CoarseGrained,
    rho_ref: &CoarseGrained,
    window: &EthWindow,
    weights: SigmaWeights,
) -> Result<f64> {
    let kinds = [
        (ar, CoarseKind::ARaw),
        (ac_ref, CoarseKind::ACoarse),
        (rho, CoarseKind::Dos),
        (rho_ref, CoarseKind::Dos),
    ];
    for (c, kind) in kinds {
        if c.kind != kind || c.grid != ar.grid {
            return Err(Error::Mismatch("sigma_signal needs a_r, a_c, dos, dos on one grid".into()));
        }
    }
    let t = ar.t_obs;
    if (rho.t_obs - t).abs() > 1e-12 * t {
        return Err(Error::Mismatch("A_r and rho_c must share the observation time".into()));
    }
    for c in [ac_ref, rho_ref] {
        if (c.t_obs - window.t_sc).abs() > 1e-12 * window.t_sc {
            return Err(Error::Mismatch(format!(
                "reference curves must be taken at T_sc = {}, got {}",
                window.t_sc, c.t_obs
            )));
        }
    }
    window.check_time(t)?;
    let grid = ar.grid;
    let usable = |i: usize| ac_ref.valid[i] && ar.valid[i] && rho.valid[i] && rho_ref.valid[i];
    let weight = match weights {
        SigmaWeights::AsPrinted => rho,
        SigmaWeights::ReferenceBoth => rho_ref,
    };
    let num = integrate_piecewise(&grid, window.e_minus, window.e_plus, |i| {
        if !usable(i) {
            return 0.0;
        }
        let d = PI / t * ar.values[i] - ac_ref.values[i];
        d * d * weight.values[i]
    })?;
    let den = integrate_piecewise(&grid, window.e_minus, window.e_plus, |i| {
        if usable(i) {
            rho_ref.values[i]
        } else {
            0.0
        }
    })?;
    let floor = 1e-12 * window.t_sc / PI * (window.e_plus - window.e_minus);
    if !(den > floor) {
        return Err(Error::Degenerate {
            what: "window density",
            value: den,
            floor,
        });
    }
    // A signed density can push the ratio slightly below zero.
    Ok((num / den).max(0.0).sqrt())
}

/// `T_sc = min(10/J_z, 0.1 min_{E in window} T_c(E))`, sampling `T_c` at the
/// window edges and at every eigenvalue inside it.
pub fn choose_tsc(energies: &[f64], e_minus: f64, e_plus: f64, j_z: f64) -> Result<f64> {
    if !(j_z.is_finite() && j_z > 0.0) {
        return Err(Error::Validation(format!("J_z = {j_z} must be positive")));
    }
    let inside = energies.iter().copied().filter(|&e| e >= e_minus && e <= e_plus);
    let mut tc_min = f64::INFINITY;
    for e in [e_minus, e_plus].into_iter().chain(inside) {
        tc_min = tc_min.min(critical_time(energies, e)?);
    }
    Ok((10.0 / j_z).min(0.1 * tc_min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::{dos_closed_form, observable_ac, observable_ar, EnergyGrid};
    use proptest::prelude::*;

    fn curves(levels: &[f64], a: &[f64], grid: &EnergyGrid, t: f64) -> (CoarseGrained, CoarseGrained, CoarseGrained) {
        let rho = dos_closed_form(levels, grid, t).unwrap();
        let ar = observable_ar(levels, a, grid, t).unwrap();
        let ac = observable_ac(&ar, &rho, None).unwrap();
        (rho, ar, ac)
    }

    fn ladder(n: usize) -> Vec<f64> {
        (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn exact_sigma_of_smooth_and_alternating_data() {
        let levels = ladder(41);
        let grid = EnergyGrid::with_spacing(-1.5, 1.5, 1e-3).unwrap();
        let ac = CoarseGrained {
            grid,
            values: grid.energies().iter().map(|e| 0.3 * e).collect(),
            valid: vec![true; grid.count()],
            t_obs: 2.0,
            kind: CoarseKind::ACoarse,
        };
        let w = EthWindow::new(-0.5, 0.5, 2.0).unwrap();
        let smooth: Vec<f64> = levels.iter().map(|e| 0.3 * e).collect();
        assert!(sigma_exact(&levels, &smooth, &ac, &w).unwrap() < 1e-12);
        let c = 0.07;
        let noisy: Vec<f64> = smooth
            .iter()
            .enumerate()
            .map(|(n, a)| a + if n % 2 == 0 { c } else { -c })
            .collect();
        assert!((sigma_exact(&levels, &noisy, &ac, &w).unwrap() - c).abs() < 1e-12);
        let empty = EthWindow::new(2.0, 3.0, 2.0).unwrap();
        assert!(sigma_exact(&levels, &smooth, &ac, &empty).is_err());
    }

    #[test]
    fn identity_observable_sigma_vanishes_once_levels_resolve() {
        // Level spacing 1/30: the kernels separate for T well above 30.
        let levels = ladder(61);
        let a = vec![1.0; levels.len()];
        let w = EthWindow::new(-0.6, 0.6, 2.0).unwrap();
        let mut sigmas = Vec::new();
        for t in [10.0, 300.0, 1200.0] {
            let grid = EnergyGrid::with_spacing(-1.5, 1.5, 1.0 / (8.0 * t)).unwrap();
            let (rho_ref, _, ac_ref) = curves(&levels, &a, &grid, w.t_sc);
            let (rho, ar, _) = curves(&levels, &a, &grid, t);
            sigmas.push(sigma_signal(&ar, &ac_ref, &rho, &rho_ref, &w, SigmaWeights::AsPrinted).unwrap());
        }
        assert!(sigmas[0] > 1.0, "{sigmas:?}");
        assert!(sigmas[2] <= sigmas[1] && sigmas[1] < 0.1, "{sigmas:?}");
    }

    #[test]
    fn resolved_estimator_loses_a_quarter_of_the_mean_square() {
        // Once every level is isolated, each contributes
        // (A_n - a)^2 - A_n^2 / 4 to the numerator, since the cubed kernel
        // integrates to 3/4.
        let levels = ladder(61);
        let c = 0.2;
        let a: Vec<f64> = (0..levels.len()).map(|n| if n % 2 == 0 { c } else { -c }).collect();
        let w = EthWindow::new(-0.6 - 1.0 / 60.0, 0.6 + 1.0 / 60.0, 2.0).unwrap();
        let t = 3000.0;
        let grid = EnergyGrid::with_spacing(-1.5, 1.5, 1.0 / (8.0 * t)).unwrap();
        let (rho_ref, _, ac_ref) = curves(&levels, &a, &grid, w.t_sc);
        let (rho, ar, _) = curves(&levels, &a, &grid, t);
        let exact = sigma_exact(&levels, &a, &ac_ref, &w).unwrap();
        let mean_sq = c * c;
        let limit = (exact * exact - mean_sq / 4.0).sqrt();
        let est = sigma_signal(&ar, &ac_ref, &rho, &rho_ref, &w, SigmaWeights::AsPrinted).unwrap();
        assert!((est - limit).abs() < 0.02 * limit, "{est} {limit} {exact}");
    }

    #[test]
    fn signal_sigma_contract() {
        let levels = ladder(31);
        let a: Vec<f64> = levels.iter().map(|e| e * e).collect();
        let t = 30.0;
        let w = EthWindow::new(-0.5, 0.5, 3.0).unwrap();
        let grid = EnergyGrid::with_spacing(-1.5, 1.5, 1.0 / (8.0 * t)).unwrap();
        let (rho_ref, _, ac_ref) = curves(&levels, &a, &grid, w.t_sc);
        let (rho, ar, _) = curves(&levels, &a, &grid, t);
        let printed = sigma_signal(&ar, &ac_ref, &rho, &rho_ref, &w, SigmaWeights::AsPrinted).unwrap();
        let both = sigma_signal(&ar, &ac_ref, &rho, &rho_ref, &w, SigmaWeights::ReferenceBoth).unwrap();
        assert!(printed > 0.0 && both > 0.0 && printed != both);
        // Swapped arguments and a mismatched reference time are rejected.
        assert!(sigma_signal(&rho, &ac_ref, &ar, &rho_ref, &w, SigmaWeights::AsPrinted).is_err());
        assert!(sigma_signal(&ar, &ac_ref, &rho, &rho, &w, SigmaWeights::AsPrinted).is_err());
        let early = EthWindow::new(-0.5, 0.5, 40.0).unwrap();
        assert!(sigma_signal(&ar, &ac_ref, &rho, &rho_ref, &early, SigmaWeights::AsPrinted).is_err());
    }

    #[test]
    fn tsc_rule() {
        let dense: Vec<f64> = (0..2001).map(|k| -1.0 + k as f64 * 1e-3).collect();
        assert_eq!(choose_tsc(&dense, -0.5, 0.5, 1.0).unwrap(), 10.0);
        let sparse = ladder(11);
        assert!((choose_tsc(&sparse, -0.5, 0.5, 1.0).unwrap() - 0.1 / 0.2).abs() < 1e-12);
        assert!(choose_tsc(&sparse, -3.0, 0.5, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn exact_sigma_ignores_constant_shifts(
            a in prop::collection::vec(-1.0..1.0f64, 25),
            shift in -5.0..5.0f64,
        ) {
            let levels = ladder(25);
            let t = 4.0;
            let grid = EnergyGrid::with_spacing(-2.0, 2.0, 1.0 / (8.0 * t)).unwrap();
            let w = EthWindow::new(-0.6, 0.6, t).unwrap();
            let (_, _, ac) = curves(&levels, &a, &grid, t);
            let shifted: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let (_, _, ac_shifted) = curves(&levels, &shifted, &grid, t);
            prop_assume!(levels.iter().filter(|e| w.contains(**e)).all(|&e| ac.value_at(e).is_some()));
            let s0 = sigma_exact(&levels, &a, &ac, &w).unwrap();
            let s1 = sigma_exact(&levels, &shifted, &ac_shifted, &w).unwrap();
            prop_assert!((s0 - s1).abs() < 1e-9 * (1.0 + shift.abs()));
        }
    }
}
