//! Config-driven experiment runner behind the `purispec` binary.
//!
//! One TOML file describes one experiment. Every subcommand diagonalizes the
//! configured chain once per disorder realization, composes the library
//! operations, and returns its artifacts in memory; the runner then writes
//! them in sorted order and records a SHA-256 for each in `manifest.json`.
//!
//! Realizations use seeds `base_seed + seed_offset + k` and run in parallel.
//! Each realization is computed sequentially and results are merged in seed
//! order, so outputs do not depend on the thread count.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{
    entropy_series, evolve_sparse, evolve_state, loschmidt_g, loschmidt_g_a, loschmidt_g_sigma, probe_interferometer,
    purified_overlap, stochastic_trace_g, ComplexTimeSeries, StateVector, TimeGrid, MAX_PURIFIED_SITES,
};
use crate::eigen::{diagonalize, eigenvalues, expectations_of_diagonal, weights_matrix};
use crate::error::{Error, Result};
use crate::eth::{choose_tsc, sigma_exact, sigma_signal, EthWindow, SigmaWeights};
use crate::mbl::{
    gamma_avg, gamma_time_average, participation_ratio_m, participation_ratio_r, polar_factor, uhlmann_r,
    write_matrix_binary, write_pr_csv, Horizon, MatView, PrConvention, Summary,
};
use crate::model::{build_hamiltonian, build_sparse_hamiltonian, observable_zz_diagonal, FockState, ModelSpec};
use crate::reconstruct::{
    critical_time, dos_closed_form, dos_from_series, fock_distribution, fock_distribution_from_series,
    observable_ac, observable_ar, observable_ar_from_series, CoarseGrained, EnergyGrid,
};
use crate::thermo::{beta_grid, energy_curve, specific_heat_curve, Measure, ThermoBounds};

/// Command line of the `purispec` binary.
#[derive(Debug, Parser)]
#[command(name = "purispec", version, about = "Purification spectroscopy experiments on spin chains")]
pub struct Cli {
    #[command(subcommand)]
    pub task: Task,

    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Added to every realization seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Task {
    /// Loschmidt signal, coarse-grained density of states and its integral.
    Dos,
    /// Canonical energy and specific heat from the reconstructed density.
    Thermo,
    /// Eigenstate expectations of the nearest-neighbour S^z S^z observable.
    Observable,
    /// ETH fluctuation sweep over observation times.
    Eth,
    /// Energy distribution of a Fock state.
    Fock,
    /// Participation ratios of the rows of M and the columns of R.
    Pr,
    /// Averaged Gamma matrices and Uhlmann matrices.
    Uhlmann,
    /// Half-chain entanglement entropy after a Fock-state quench.
    Entropy,
    /// Cross-checks every signal route against its oracle.
    Verify,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Dos => "dos",
            Task::Thermo => "thermo",
            Task::Observable => "observable",
            Task::Eth => "eth",
            Task::Fock => "fock",
            Task::Pr => "pr",
            Task::Uhlmann => "uhlmann",
            Task::Entropy => "entropy",
            Task::Verify => "verify",
        }
    }
}

/// How coarse-grained curves are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Fourier transform of a sampled time signal.
    #[default]
    Signal,
    /// Direct kernel sums over the exact spectrum.
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimesConfig {
    /// Observation times `T` in units of `1/J_z`.
    pub t_obs: Vec<f64>,
    /// Signal sampling step; by default the coarsest step the aliasing guard allows.
    pub dt: Option<f64>,
    pub route: Route,
}

impl Default for TimesConfig {
    fn default() -> Self {
        Self {
            t_obs: vec![20.0],
            dt: None,
            route: Route::Signal,
        }
    }
}

/// Energy-grid overrides; unset fields follow the default grid for each `T`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub e_min: Option<f64>,
    pub e_max: Option<f64>,
    pub spacing: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub e_minus: f64,
    pub e_plus: f64,
    /// Reference time; chosen from the level spacing when unset.
    pub t_sc: Option<f64>,
    pub weights: SigmaWeights,
    /// Explicit sweep times; otherwise `sweep_points` log-spaced values from
    /// `2 T_sc` to `8 T_c` at the window centre.
    pub t_list: Option<Vec<f64>>,
    pub sweep_points: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            e_minus: -1.0,
            e_plus: 1.0,
            t_sc: None,
            weights: SigmaWeights::AsPrinted,
            t_list: None,
            sweep_points: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermoConfig {
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_count: usize,
    /// Extra energy added outside the estimated band edges.
    pub margin: f64,
}

impl Default for ThermoConfig {
    fn default() -> Self {
        Self {
            beta_min: 0.0,
            beta_max: 2.0,
            beta_count: 41,
            margin: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FockConfig {
    /// `u`/`d` string, site 0 first; defaults to the `uudd...` pattern.
    pub state: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrConfig {
    pub convention: PrConvention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EntropyConfig {
    pub t_max: f64,
    pub dt: f64,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        Self { t_max: 20.0, dt: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub t_max: f64,
    pub dt: f64,
    pub stochastic_samples: usize,
    pub probe_trials: usize,
    pub rng_seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            t_max: 10.0,
            dt: 0.05,
            stochastic_samples: 200,
            probe_trials: 100,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub n_realizations: usize,
    /// First disorder seed; defaults to `model.seed`.
    pub base_seed: Option<u64>,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_realizations: 1,
            base_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Write sampled time signals next to the reconstructions.
    pub series: bool,
    /// Write binary matrices (`Gamma`, `R`).
    pub binary: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            series: true,
            binary: true,
        }
    }
}

/// A whole experiment. Only `[model]` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub times: TimesConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub thermo: ThermoConfig,
    #[serde(default)]
    pub fock: FockConfig,
    #[serde(default)]
    pub pr: PrConfig,
    #[serde(default)]
    pub entropy: EntropyConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_error(format!("{name} = {v} must be a positive number")))
    }
}

impl ExperimentConfig {
    /// Parses and validates; parse errors carry the line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| config_error(format!("[model] {e}")))?;
        if self.times.t_obs.is_empty() {
            return Err(config_error("[times] t_obs must list at least one time"));
        }
        for &t in &self.times.t_obs {
            positive("[times] t_obs entry", t)?;
        }
        if let Some(dt) = self.times.dt {
            positive("[times] dt", dt)?;
        }
        if let Some(h) = self.grid.spacing {
            positive("[grid] spacing", h)?;
        }
        if let (Some(a), Some(b)) = (self.grid.e_min, self.grid.e_max) {
            if !(a < b) {
                return Err(config_error(format!("[grid] e_min = {a} must be below e_max = {b}")));
            }
        }
        let w = &self.window;
        if !(w.e_minus.is_finite() && w.e_plus.is_finite() && w.e_minus < w.e_plus) {
            return Err(config_error(format!(
                "[window] needs finite e_minus < e_plus, got [{}, {}]",
                w.e_minus, w.e_plus
            )));
        }
        if let Some(t) = w.t_sc {
            positive("[window] t_sc", t)?;
        }
        if let Some(list) = &w.t_list {
            if list.is_empty() {
                return Err(config_error("[window] t_list is empty"));
            }
            for &t in list {
                positive("[window] t_list entry", t)?;
            }
        }
        if w.sweep_points < 2 {
            return Err(config_error("[window] sweep_points must be at least 2"));
        }
        let th = &self.thermo;
        if !(th.beta_min.is_finite() && th.beta_max.is_finite() && th.beta_min >= 0.0 && th.beta_min < th.beta_max) {
            return Err(config_error(format!(
                "[thermo] needs 0 <= beta_min < beta_max, got [{}, {}]",
                th.beta_min, th.beta_max
            )));
        }
        if th.beta_count < 2 {
            return Err(config_error("[thermo] beta_count must be at least 2"));
        }
        if !(th.margin.is_finite() && th.margin >= 0.0) {
            return Err(config_error(format!("[thermo] margin = {} must be non-negative", th.margin)));
        }
        self.fock_state()?;
        positive("[entropy] t_max", self.entropy.t_max)?;
        positive("[entropy] dt", self.entropy.dt)?;
        positive("[verify] t_max", self.verify.t_max)?;
        positive("[verify] dt", self.verify.dt)?;
        if self.verify.stochastic_samples == 0 {
            return Err(config_error("[verify] stochastic_samples must be at least 1"));
        }
        if self.ensemble.n_realizations == 0 {
            return Err(config_error("[ensemble] n_realizations must be at least 1"));
        }
        Ok(())
    }

    /// Seeds of the ensemble, ascending.
    pub fn seeds(&self, offset: u64) -> Result<Vec<u64>> {
        let base = self.ensemble.base_seed.unwrap_or(self.model.seed);
        (0..self.ensemble.n_realizations as u64)
            .map(|k| {
                base.checked_add(offset)
                    .and_then(|s| s.checked_add(k))
                    .ok_or_else(|| config_error("seed range overflows u64"))
            })
            .collect()
    }

    fn fock_state(&self) -> Result<FockState> {
        let l = self.model.sites;
        match &self.fock.state {
            None => Ok(FockState::neel_pairs(l)),
            Some(text) => {
                let s: FockState = text.parse().map_err(|e| config_error(format!("[fock] state: {e}")))?;
                if s.sites() != l {
                    return Err(config_error(format!("[fock] state {text:?} has {} sites, model has {l}", s.sites())));
                }
                Ok(s)
            }
        }
    }
}

/// Checksummed entry of the run manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one run: what was computed, by which build, and every file written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub wall_time_s: f64,
    pub files: Vec<FileEntry>,
    /// Tables that could not be averaged because their keys differ between realizations.
    pub not_aggregated: Vec<String>,
    pub failed_checks: Vec<String>,
}

/// Numeric table that can be averaged across realizations when its keys agree.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub key_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl Table {
    fn new(name: impl Into<String>, key_header: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            key_header: key_header.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, key: impl Into<String>, values: Vec<f64>) {
        self.rows.push((key.into(), values));
    }

    fn keys_match(&self, other: &Table) -> bool {
        self.key_header == other.key_header
            && self.columns == other.columns
            && self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.0 == b.0)
    }
}

/// Everything one realization produced.
#[derive(Debug, Clone, Default)]
pub struct Realization {
    pub seed: u64,
    pub files: Vec<(String, Vec<u8>)>,
    pub tables: Vec<Table>,
    pub failed_checks: Vec<String>,
}

impl Realization {
    fn file(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn json(&mut self, name: impl Into<String>, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(value).map_err(|e| Error::Contract(format!("JSON encoding: {e}")))?;
        text.push(b'\n');
        self.file(name, text);
        Ok(())
    }

    fn summary(&mut self) -> &mut Table {
        if !self.tables.iter().any(|t| t.name == "summary") {
            self.tables.push(Table::new("summary", "quantity", &["value"]));
        }
        self.tables.iter_mut().find(|t| t.name == "summary").expect("just inserted")
    }

    fn scalar(&mut self, name: impl Into<String>, value: f64) {
        self.summary().push(name, vec![value]);
    }

    /// A value from the `summary` table.
    pub fn scalar_value(&self, name: &str) -> Option<f64> {
        let table = self.tables.iter().find(|t| t.name == "summary")?;
        table.rows.iter().find(|(k, _)| k == name).map(|(_, v)| v[0])
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable hash of a model instance, used in metadata sidecars.
pub fn model_hash(spec: &ModelSpec) -> Result<String> {
    let text = toml::to_string(spec).map_err(|e| Error::Contract(format!("TOML encoding: {e}")))?;
    Ok(sha256_hex(text.as_bytes()))
}

fn t_label(t: f64) -> String {
    format!("T{t}")
}

/// Per-`T` energy grid: the default grid with any configured overrides.
fn energy_grid(cfg: &ExperimentConfig, energies: &[f64], t: f64) -> Result<EnergyGrid> {
    let def = EnergyGrid::default_for(energies, t)?;
    let g = &cfg.grid;
    if g.e_min.is_none() && g.e_max.is_none() && g.spacing.is_none() {
        return Ok(def);
    }
    let grid = EnergyGrid::with_spacing(
        g.e_min.unwrap_or(def.e_min()),
        g.e_max.unwrap_or(def.e_max()),
        g.spacing.unwrap_or(def.spacing()),
    )?;
    grid.check_resolution(t)?;
    Ok(grid)
}

fn time_grid(cfg: &ExperimentConfig, energies: &[f64], grid: &EnergyGrid, t: f64) -> Result<TimeGrid> {
    match cfg.times.dt {
        Some(dt) => TimeGrid::covering(t, dt),
        None => {
            let band = energies.last().copied().unwrap_or(0.0) - energies.first().copied().unwrap_or(0.0);
            TimeGrid::for_bandwidth(t, grid.span().max(band))
        }
    }
}

fn push_coarse(r: &mut Realization, name: &str, c: &CoarseGrained, hash: &str, route: Route, dt: Option<f64>) -> Result<()> {
    r.file(format!("{name}.csv"), csv_bytes(|b| c.write_csv(b))?);
    let mut meta = c.metadata(Some(hash));
    meta["route"] = serde_json::to_value(route).expect("route serializes");
    meta["dt"] = serde_json::to_value(dt).expect("dt serializes");
    r.json(format!("{name}.json"), &meta)
}

fn push_series(r: &mut Realization, cfg: &ExperimentConfig, name: &str, s: &ComplexTimeSeries) -> Result<()> {
    if cfg.outputs.series {
        r.file(format!("{name}.csv"), csv_bytes(|b| s.write_csv(b))?);
    }
    Ok(())
}

fn energies_csv(energies: &[f64]) -> Vec<u8> {
    let mut out = String::from("n,E_n[J_z]\n");
    for (n, e) in energies.iter().enumerate() {
        out.push_str(&format!("{n},{}\n", num(*e)));
    }
    out.into_bytes()
}

fn require_pairs(spec: &ModelSpec, task: Task) -> Result<()> {
    if spec.sites < 2 {
        return Err(config_error(format!(
            "{} uses a nearest-neighbour observable and needs L >= 2",
            task.name()
        )));
    }
    Ok(())
}

fn task_dos(cfg: &ExperimentConfig, spec: &ModelSpec, hash: &str, r: &mut Realization) -> Result<()> {
    let energies = eigenvalues(&build_hamiltonian(spec)?)?;
    let d = energies.len();
    r.file("spectrum.csv", energies_csv(&energies));
    r.scalar("bandwidth", energies[d - 1] - energies[0]);
    for &t in &cfg.times.t_obs {
        let grid = energy_grid(cfg, &energies, t)?;
        let (rho, dt) = match cfg.times.route {
            Route::Signal => {
                let tg = time_grid(cfg, &energies, &grid, t)?;
                let g = loschmidt_g(&energies, tg);
                push_series(r, cfg, &format!("g_{}", t_label(t)), &g)?;
                (dos_from_series(&g, d, &grid)?, Some(tg.dt()))
            }
            Route::ClosedForm => (dos_closed_form(&energies, &grid, t)?, None),
        };
        push_coarse(r, &format!("dos_{}", t_label(t)), &rho, hash, cfg.times.route, dt)?;
        let phi = rho.cumulative();
        let mut text = String::from("E[J_z],phi\n");
        for (i, p) in phi.iter().enumerate() {
            text.push_str(&format!("{},{}\n", num(grid.energy(i)), num(*p)));
        }
        r.file(format!("phi_{}.csv", t_label(t)), text.into_bytes());
        r.scalar(format!("dos_integral_{}", t_label(t)), rho.integral());
    }
    Ok(())
}

fn task_thermo(cfg: &ExperimentConfig, spec: &ModelSpec, hash: &str, r: &mut Realization) -> Result<()> {
    let energies = eigenvalues(&build_hamiltonian(spec)?)?;
    let d = energies.len();
    r.file("spectrum.csv", energies_csv(&energies));
    let th = &cfg.thermo;
    let betas = beta_grid(th.beta_min, th.beta_max, th.beta_count);
    for &t in &cfg.times.t_obs {
        let grid = energy_grid(cfg, &energies, t)?;
        let (rho, dt) = match cfg.times.route {
            Route::Signal => {
                let tg = time_grid(cfg, &energies, &grid, t)?;
                let g = loschmidt_g(&energies, tg);
                (dos_from_series(&g, d, &grid)?, Some(tg.dt()))
            }
            Route::ClosedForm => (dos_closed_form(&energies, &grid, t)?, None),
        };
        push_coarse(r, &format!("dos_{}", t_label(t)), &rho, hash, cfg.times.route, dt)?;
        let bounds = ThermoBounds::estimate(&rho, th.margin)?;
        let measure = Measure::coarse(&rho, bounds)?;
        let label = t_label(t);
        for (name, curve) in [
            ("specific_heat", specific_heat_curve(&measure, &betas, Some(&energies))?),
            ("energy", energy_curve(&measure, &betas, Some(&energies))?),
        ] {
            r.file(format!("{name}_{label}.csv"), csv_bytes(|b| curve.write_csv(b))?);
            let mut table = Table::new(format!("{name}_{label}"), "beta[1/J_z]", &["value", "exact"]);
            let exact = curve.exact.clone().unwrap_or_default();
            for (i, &beta) in curve.betas.iter().enumerate() {
                let v = if curve.valid[i] { curve.values[i] } else { f64::NAN };
                table.push(num(beta), vec![v, exact.get(i).copied().unwrap_or(f64::NAN)]);
            }
            r.tables.push(table);
            if let Some(e) = curve.relative_sup_error() {
                r.scalar(format!("{name}_relative_sup_error_{label}"), e);
            }
        }
        r.scalar(format!("thermo_lower_bound_{label}"), bounds.lower);
        r.scalar(format!("thermo_upper_bound_{label}"), bounds.upper);
    }
    Ok(())
}

fn task_observable(cfg: &ExperimentConfig, spec: &ModelSpec, hash: &str, r: &mut Realization) -> Result<()> {
    require_pairs(spec, Task::Observable)?;
    let s = diagonalize(&build_hamiltonian(spec)?)?;
    let d = s.dim();
    let a = expectations_of_diagonal(&s, &observable_zz_diagonal(spec.sites));
    let mut text = String::from("n,E_n[J_z],A_n\n");
    for (n, (e, v)) in s.energies.iter().zip(&a.values).enumerate() {
        text.push_str(&format!("{n},{},{}\n", num(*e), num(*v)));
    }
    r.file("observable_levels.csv", text.into_bytes());
    r.scalar("a_n_spread", a.spread());
    for &t in &cfg.times.t_obs {
        let label = t_label(t);
        let grid = energy_grid(cfg, &s.energies, t)?;
        let (rho, ar, dt) = match cfg.times.route {
            Route::Signal => {
                let tg = time_grid(cfg, &s.energies, &grid, t)?;
                let g = loschmidt_g(&s.energies, tg);
                let g_a = loschmidt_g_a(&s.energies, &a, tg)?;
                push_series(r, cfg, &format!("g_a_{label}"), &g_a)?;
                (dos_from_series(&g, d, &grid)?, observable_ar_from_series(&g_a, d, &grid)?, Some(tg.dt()))
            }
            Route::ClosedForm => (
                dos_closed_form(&s.energies, &grid, t)?,
                observable_ar(&s.energies, &a.values, &grid, t)?,
                None,
            ),
        };
        let ac = observable_ac(&ar, &rho, None)?;
        push_coarse(r, &format!("a_r_{label}"), &ar, hash, cfg.times.route, dt)?;
        push_coarse(r, &format!("a_c_{label}"), &ac, hash, cfg.times.route, dt)?;
        let mut peaks = String::from("n,E_n[J_z],A_n,peak_value\n");
        let mut worst: f64 = 0.0;
        for (n, (&e, &v)) in s.energies.iter().zip(&a.values).enumerate() {
            let peak = ar.value_at(e).map(|x| PI / t * x);
            if let Some(p) = peak {
                worst = worst.max((p - v).abs());
            }
            peaks.push_str(&format!("{n},{},{},{}\n", num(e), num(v), num(peak.unwrap_or(f64::NAN))));
        }
        r.file(format!("peaks_{label}.csv"), peaks.into_bytes());
        r.scalar(format!("peak_max_abs_deviation_{label}"), worst);
    }
    Ok(())
}

/// `n` log-spaced values from `lo` to `hi`.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

fn task_eth(cfg: &ExperimentConfig, spec: &ModelSpec, hash: &str, r: &mut Realization) -> Result<()> {
    require_pairs(spec, Task::Eth)?;
    let s = diagonalize(&build_hamiltonian(spec)?)?;
    let d = s.dim();
    let a = expectations_of_diagonal(&s, &observable_zz_diagonal(spec.sites));
    let w = &cfg.window;
    let t_sc = match w.t_sc {
        Some(t) => t,
        None => choose_tsc(&s.energies, w.e_minus, w.e_plus, spec.j_z)?,
    };
    let window = EthWindow::new(w.e_minus, w.e_plus, t_sc)?;
    let times = match &w.t_list {
        Some(list) => list.clone(),
        None => {
            let tc = critical_time(&s.energies, 0.5 * (w.e_minus + w.e_plus))?;
            log_spaced(2.0 * t_sc, (8.0 * tc).max(4.0 * t_sc), w.sweep_points)
        }
    };
    let curves = |t: f64, grid: &EnergyGrid| -> Result<(CoarseGrained, CoarseGrained)> {
        match cfg.times.route {
            Route::Signal => {
                let span = grid.span().max(s.bandwidth());
                let tg = match cfg.times.dt {
                    Some(dt) => TimeGrid::covering(t, dt)?,
                    None => TimeGrid::for_bandwidth(t, span)?,
                };
                let g = loschmidt_g(&s.energies, tg);
                let g_a = loschmidt_g_a(&s.energies, &a, tg)?;
                Ok((dos_from_series(&g, d, grid)?, observable_ar_from_series(&g_a, d, grid)?))
            }
            Route::ClosedForm => Ok((
                dos_closed_form(&s.energies, grid, t)?,
                observable_ar(&s.energies, &a.values, grid, t)?,
            )),
        }
    };
    let ref_grid = EnergyGrid::with_spacing(w.e_minus, w.e_plus, 1.0 / (8.0 * t_sc))?;
    let (rho_sc, ar_sc) = curves(t_sc, &ref_grid)?;
    let ac_sc = observable_ac(&ar_sc, &rho_sc, None)?;
    push_coarse(r, "a_c_reference", &ac_sc, hash, cfg.times.route, None)?;
    let exact = sigma_exact(&s.energies, &a.values, &ac_sc, &window)?;

    let mut text = String::from("T[1/J_z],sigma_signal,sigma_exact_ref\n");
    let mut table = Table::new("eth", "T[1/J_z]", &["sigma_signal", "sigma_exact_ref"]);
    let mut sigmas = Vec::with_capacity(times.len());
    for &t in &times {
        let grid = EnergyGrid::with_spacing(w.e_minus, w.e_plus, 1.0 / (8.0 * t))?;
        let (rho_ref, ar_ref) = curves(t_sc, &grid)?;
        let ac_ref = observable_ac(&ar_ref, &rho_ref, None)?;
        let (rho, ar) = curves(t, &grid)?;
        let sigma = sigma_signal(&ar, &ac_ref, &rho, &rho_ref, &window, w.weights)?;
        sigmas.push(sigma);
        text.push_str(&format!("{},{},{}\n", num(t), num(sigma), num(exact)));
        table.push(num(t), vec![sigma, exact]);
    }
    r.file("eth.csv", text.into_bytes());
    r.tables.push(table);
    let quarter = (sigmas.len() / 4).max(1);
    let tail = &sigmas[sigmas.len() - quarter..];
    r.scalar("sigma_exact", exact);
    r.scalar("t_sc", t_sc);
    r.scalar("final_quarter_mean", tail.iter().sum::<f64>() / tail.len() as f64);
    Ok(())
}

fn task_fock(cfg: &ExperimentConfig, spec: &ModelSpec, hash: &str, r: &mut Realization) -> Result<()> {
    let sigma = cfg.fock_state()?;
    let s = diagonalize(&build_hamiltonian(spec)?)?;
    let m = weights_matrix(&s);
    let row = m.row(sigma.index());
    let mut text = String::from("n,E_n[J_z],M_sigma_n\n");
    for (n, (e, w)) in s.energies.iter().zip(&row).enumerate() {
        text.push_str(&format!("{n},{},{}\n", num(*e), num(*w)));
    }
    r.file("fock_weights.csv", text.into_bytes());
    r.scalar("pr_m", row.iter().map(|w| w * w).sum());
    for &t in &cfg.times.t_obs {
        let label = t_label(t);
        let grid = energy_grid(cfg, &s.energies, t)?;
        let (rho, dt) = match cfg.times.route {
            Route::Signal => {
                let tg = time_grid(cfg, &s.energies, &grid, t)?;
                let g = loschmidt_g_sigma(&s, &m, sigma, tg)?;
                push_series(r, cfg, &format!("g_sigma_{label}"), &g)?;
                (fock_distribution_from_series(&g, &grid)?, Some(tg.dt()))
            }
            Route::ClosedForm => (fock_distribution(&s.energies, &row, &grid, t)?, None),
        };
        push_coarse(r, &format!("fock_{label}"), &rho, hash, cfg.times.route, dt)?;
        r.scalar(format!("dominant_peak_weight_{label}"), crate::mbl::dominant_peak_weight(&rho));
    }
    Ok(())
}

fn task_pr(cfg: &ExperimentConfig, spec: &ModelSpec, r: &mut Realization) -> Result<()> {
    let s = diagonalize(&build_hamiltonian(spec)?)?;
    let m = weights_matrix(&s);
    let pr_m = participation_ratio_m(&m);
    let rm = uhlmann_r(&m, &s, Horizon::Infinite)?;
    let pr_r = participation_ratio_r(&rm, cfg.pr.convention)?;
    r.file("pr.csv", csv_bytes(|b| write_pr_csv(b, &pr_m, &pr_r))?);
    if cfg.outputs.binary {
        let gamma = gamma_avg(&m, &s, Horizon::Infinite)?;
        r.file("gamma_inf.bin", csv_bytes(|b| write_matrix_binary(b, gamma.entries.re()))?);
        r.file("r_inf.bin", csv_bytes(|b| write_matrix_binary(b, rm.r.as_ref()))?);
    }
    let probe = cfg.fock_state()?.index();
    r.json(
        "pr_summary.json",
        &serde_json::json!({
            "pr_m": Summary::of(&pr_m),
            "pr_r": Summary::of(&pr_r),
            "convention": cfg.pr.convention,
            "probe_index": probe,
            "pr_m_probe": pr_m[probe],
        }),
    )?;
    let mut table = Table::new("pr", "sigma_index", &["pr_m", "pr_r"]);
    for (i, (a, b)) in pr_m.iter().zip(&pr_r).enumerate() {
        table.push(i.to_string(), vec![*a, *b]);
    }
    r.tables.push(table);
    r.scalar("pr_m_mean", Summary::of(&pr_m).mean);
    r.scalar("pr_r_mean", Summary::of(&pr_r).mean);
    r.scalar("pr_m_probe", pr_m[probe]);
    Ok(())
}

fn task_uhlmann(cfg: &ExperimentConfig, spec: &ModelSpec, r: &mut Realization) -> Result<()> {
    let s = diagonalize(&build_hamiltonian(spec)?)?;
    let m = weights_matrix(&s);
    let pr_m = participation_ratio_m(&m);
    let horizons = std::iter::once(Horizon::Infinite).chain(cfg.times.t_obs.iter().map(|&t| Horizon::Finite(t)));
    for h in horizons {
        let label = match h {
            Horizon::Infinite => "inf".to_string(),
            Horizon::Finite(t) => t_label(t),
        };
        let gamma = gamma_avg(&m, &s, h)?;
        let rm = uhlmann_r(&m, &s, h)?;
        let pr_r = participation_ratio_r(&rm, cfg.pr.convention)?;
        r.file(format!("pr_{label}.csv"), csv_bytes(|b| write_pr_csv(b, &pr_m, &pr_r))?);
        if cfg.outputs.binary {
            r.file(format!("gamma_{label}.bin"), csv_bytes(|b| write_matrix_binary(b, gamma.entries.re()))?);
            r.file(format!("r_{label}.bin"), csv_bytes(|b| write_matrix_binary(b, rm.r.as_ref()))?);
        }
        r.scalar(format!("pr_r_mean_{label}"), Summary::of(&pr_r).mean);
        if h == Horizon::Infinite {
            let polar = polar_factor(&m)?;
            r.scalar("polar_factor_defect", MatView(rm.r.as_ref()).max_abs_diff(polar.r.as_ref()));
        }
    }
    Ok(())
}

fn task_entropy(cfg: &ExperimentConfig, spec: &ModelSpec, r: &mut Realization) -> Result<()> {
    let sigma = cfg.fock_state()?;
    let h = build_sparse_hamiltonian(spec)?;
    let grid = TimeGrid::covering(cfg.entropy.t_max, cfg.entropy.dt)?;
    let entropy = entropy_series(&h, &StateVector::fock(sigma), spec.sites, grid)?;
    let mut text = String::from("t[1/J_z],S[nats]\n");
    let mut table = Table::new("entropy", "t[1/J_z]", &["S"]);
    for (k, v) in entropy.iter().enumerate() {
        text.push_str(&format!("{},{}\n", num(grid.time(k)), num(*v)));
        table.push(num(grid.time(k)), vec![*v]);
    }
    r.file("entropy.csv", text.into_bytes());
    r.tables.push(table);
    r.scalar("entropy_max", entropy.iter().copied().fold(0.0, f64::max));
    r.scalar("entropy_final", entropy[entropy.len() - 1]);
    Ok(())
}

/// One line of `verify.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

fn task_verify(cfg: &ExperimentConfig, spec: &ModelSpec, r: &mut Realization) -> Result<()> {
    if spec.sites > MAX_PURIFIED_SITES {
        return Err(config_error(format!(
            "verify doubles the system and needs L <= {MAX_PURIFIED_SITES}, got {}",
            spec.sites
        )));
    }
    let v = &cfg.verify;
    let h = build_hamiltonian(spec)?;
    let s = diagonalize(&h)?;
    let d = s.dim();
    let m = weights_matrix(&s);
    let grid = TimeGrid::covering(v.t_max, v.dt)?;
    let mut checks = Vec::new();

    let g = loschmidt_g(&s.energies, grid);
    let mut mean = ComplexTimeSeries::new(grid, vec![Complex64::new(0.0, 0.0); grid.len()])?;
    for sigma in 0..d {
        let gs = loschmidt_g_sigma(&s, &m, FockState::new(sigma, spec.sites)?, grid)?;
        mean = mean.combine(1.0, &gs, 1.0 / d as f64)?;
    }
    checks.push(Check::new("fock_average_vs_spectral_g", mean.max_abs_diff(&g), 1e-10));
    checks.push(Check::new("purified_vs_spectral_g", purified_overlap(&s, grid)?.max_abs_diff(&g), 1e-10));

    let mut rng = ChaCha12Rng::seed_from_u64(v.rng_seed);
    let mut probe_dev: f64 = 0.0;
    let mut evolve_dev: f64 = 0.0;
    let sparse = build_sparse_hamiltonian(spec)?;
    for _ in 0..v.probe_trials {
        let psi0 = StateVector::random(d, &mut rng);
        let t = rng.gen_range(0.0..v.t_max);
        let psi = evolve_state(&s, &psi0, t)?;
        let direct = psi0.overlap(&psi);
        let readout = probe_interferometer(&s, &psi0, t)?;
        probe_dev = probe_dev.max((readout.x - direct.re).abs()).max((readout.y - direct.im).abs());
        let other = evolve_sparse(&sparse, &psi0, t)?;
        let diff = psi.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        evolve_dev = evolve_dev.max(diff);
    }
    checks.push(Check::new("probe_vs_direct_overlap", probe_dev, 1e-12));
    checks.push(Check::new("sparse_vs_spectral_evolution", evolve_dev, 1e-10));

    let st = stochastic_trace_g(&s, grid, v.stochastic_samples, v.rng_seed)?;
    let z = st
        .estimate
        .values
        .iter()
        .zip(&g.values)
        .zip(&st.std_error)
        .map(|((a, b), se)| (a - b).norm() / se.max(1e-12))
        .fold(0.0, f64::max);
    checks.push(Check::new("stochastic_trace_standard_errors", z, 5.0));

    checks.push(Check::new("weights_bistochastic", m.stochasticity_defect(), 1e-10));
    checks.push(Check::new("eigenvector_orthonormality", s.orthonormality_defect(), 1e-10));
    checks.push(Check::new("eigen_reconstruction", s.reconstruction_defect(&h) / (1.0 + h.max_abs()), 1e-10));

    let r_inf = uhlmann_r(&m, &s, Horizon::Infinite)?;
    let polar = polar_factor(&m)?;
    if !s.is_degenerate() {
        checks.push(Check::new("uhlmann_vs_polar_factor", MatView(r_inf.r.as_ref()).max_abs_diff(polar.r.as_ref()), 1e-8));
    }
    let pr_m = participation_ratio_m(&m);
    let inf = gamma_avg(&m, &s, Horizon::Infinite)?;
    let diag_dev = (0..d)
        .map(|i| (d as f64 * inf.entries.get(i, i).re - pr_m[i]).abs())
        .fold(0.0, f64::max);
    checks.push(Check::new("gamma_diagonal_vs_pr_m", diag_dev, 1e-12));
    let steps = 2 * ((v.t_max / 2e-3).ceil() as usize).div_ceil(2);
    let quad = gamma_time_average(&m, &s, TimeGrid::new(v.t_max / steps as f64, steps)?)?;
    let closed = gamma_avg(&m, &s, Horizon::Finite(v.t_max))?;
    checks.push(Check::new("gamma_quadrature_vs_kernel", closed.real().max_abs_diff(quad.as_ref()), 1e-8));

    // Fine sampling keeps the trapezoid distortion of the kernel below the tolerance.
    let t = v.t_max;
    let egrid = EnergyGrid::default_for(&s.energies, t)?;
    let fine = TimeGrid::covering(t, 2.5e-4)?;
    let rho_sig = dos_from_series(&loschmidt_g(&s.energies, fine), d, &egrid)?;
    let rho_cf = dos_closed_form(&s.energies, &egrid, t)?;
    checks.push(Check::new("dos_signal_vs_closed_form", rho_sig.max_abs_diff(&rho_cf)? / (t / PI), 1e-6));

    for c in &checks {
        if !c.pass {
            r.failed_checks.push(format!("seed {}: {} = {:e} > {:e}", r.seed, c.name, c.value, c.tolerance));
        }
    }
    let mut table = Table::new("verify", "check", &["value"]);
    for c in &checks {
        table.push(c.name.clone(), vec![c.value]);
    }
    r.tables.push(table);
    r.json("verify.json", &checks)
}

/// Runs `task` for one realization with the given disorder seed.
pub fn run_realization(task: Task, cfg: &ExperimentConfig, seed: u64) -> Result<Realization> {
    let spec = ModelSpec {
        seed,
        ..cfg.model.clone()
    };
    let hash = model_hash(&spec)?;
    let mut r = Realization {
        seed,
        ..Realization::default()
    };
    match task {
        Task::Dos => task_dos(cfg, &spec, &hash, &mut r),
        Task::Thermo => task_thermo(cfg, &spec, &hash, &mut r),
        Task::Observable => task_observable(cfg, &spec, &hash, &mut r),
        Task::Eth => task_eth(cfg, &spec, &hash, &mut r),
        Task::Fock => task_fock(cfg, &spec, &hash, &mut r),
        Task::Pr => task_pr(cfg, &spec, &mut r),
        Task::Uhlmann => task_uhlmann(cfg, &spec, &mut r),
        Task::Entropy => task_entropy(cfg, &spec, &mut r),
        Task::Verify => task_verify(cfg, &spec, &mut r),
    }?;
    r.json("model.json", &serde_json::json!({ "model": spec, "model_hash": hash }))?;
    Ok(r)
}

/// Result of an ensemble: per-realization outputs plus aggregates.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub realizations: Vec<Realization>,
    pub aggregates: Vec<(String, Vec<u8>)>,
    pub not_aggregated: Vec<String>,
}

/// Runs every seed of the ensemble on the current rayon pool. The first
/// failing seed (in seed order) aborts the run.
pub fn run_ensemble(task: Task, cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Ensemble> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let results: Vec<Result<Realization>> = sorted.par_iter().map(|&seed| run_realization(task, cfg, seed)).collect();
    let mut realizations = Vec::with_capacity(results.len());
    for (seed, res) in sorted.iter().zip(results) {
        realizations.push(res.map_err(|e| Error::Realization {
            seed: *seed,
            source: Box::new(e),
        })?);
    }
    let (aggregates, not_aggregated) = aggregate(&realizations);
    Ok(Ensemble {
        realizations,
        aggregates,
        not_aggregated,
    })
}

/// Mean and standard error over realizations of every table whose keys
/// agree, in seed order. A single realization has an undefined standard
/// error, written as `NaN`.
pub fn aggregate(realizations: &[Realization]) -> (Vec<(String, Vec<u8>)>, Vec<String>) {
    let mut files = Vec::new();
    let mut skipped = Vec::new();
    let Some(first) = realizations.first() else {
        return (files, skipped);
    };
    let n = realizations.len() as f64;
    for table in &first.tables {
        let group: Option<Vec<&Table>> = realizations
            .iter()
            .map(|r| r.tables.iter().find(|t| t.name == table.name && t.keys_match(table)))
            .collect();
        let Some(group) = group else {
            skipped.push(table.name.clone());
            continue;
        };
        let mut text = table.key_header.clone();
        for c in &table.columns {
            text.push_str(&format!(",{c}_mean,{c}_stderr"));
        }
        text.push_str(",n\n");
        for (row, (key, _)) in table.rows.iter().enumerate() {
            text.push_str(key);
            for col in 0..table.columns.len() {
                let values: Vec<f64> = group.iter().map(|t| t.rows[row].1[col]).collect();
                let mean = values.iter().sum::<f64>() / n;
                let stderr = if values.len() > 1 {
                    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                    (var / n).sqrt()
                } else {
                    f64::NAN
                };
                text.push_str(&format!(",{},{}", num(mean), num(stderr)));
            }
            text.push_str(&format!(",{}\n", realizations.len()));
        }
        files.push((format!("aggregate/{}.csv", table.name), text.into_bytes()));
    }
    (files, skipped)
}

fn write_file(root: &Path, rel: &str, bytes: &[u8]) -> Result<FileEntry> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, bytes)?;
    Ok(FileEntry {
        path: rel.to_string(),
        sha256: sha256_hex(bytes),
        bytes: bytes.len() as u64,
    })
}

/// Parses the config, runs the ensemble on a pool of `threads` workers,
/// writes all artifacts and the manifest under `out`.
///
/// Failed verification checks are reported as [`Error::Contract`] after the
/// outputs have been written.
pub fn execute(task: Task, config_text: &str, out: &Path, threads: Option<usize>, seed_offset: u64) -> Result<RunManifest> {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_toml(config_text)?;
    let seeds = cfg.seeds(seed_offset)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| config_error(format!("thread pool: {e}")))?;
    let ensemble = pool.install(|| run_ensemble(task, &cfg, &seeds))?;

    let mut outputs: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for r in &ensemble.realizations {
        for (name, bytes) in &r.files {
            outputs.insert(format!("seed_{}/{name}", r.seed), bytes.clone());
        }
    }
    for (name, bytes) in &ensemble.aggregates {
        outputs.insert(name.clone(), bytes.clone());
    }
    let mut config_copy = config_text.as_bytes().to_vec();
    if !config_copy.ends_with(b"\n") {
        config_copy.push(b'\n');
    }
    outputs.insert("config.toml".into(), config_copy);

    fs::create_dir_all(out)?;
    let mut files = Vec::with_capacity(outputs.len());
    for (rel, bytes) in &outputs {
        files.push(write_file(out, rel, bytes)?);
    }
    let failed_checks: Vec<String> = ensemble
        .realizations
        .iter()
        .flat_map(|r| r.failed_checks.iter().cloned())
        .collect();
    let manifest = RunManifest {
        command: task.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        seeds,
        threads: pool.current_num_threads(),
        wall_time_s: start.elapsed().as_secs_f64(),
        files,
        not_aggregated: ensemble.not_aggregated,
        failed_checks,
    };
    let mut text = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Contract(format!("JSON encoding: {e}")))?;
    text.push(b'\n');
    fs::write(out.join("manifest.json"), text)?;
    if !manifest.failed_checks.is_empty() {
        return Err(Error::Contract(manifest.failed_checks.join("; ")));
    }
    Ok(manifest)
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let Some(config) = cli.config.as_ref() else {
        eprintln!("error: --config PATH is required");
        return 2;
    };
    let text = match fs::read_to_string(config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", config.display());
            return 4;
        }
    };
    match execute(cli.task, &text, &cli.out, cli.threads, cli.seed_offset) {
        Ok(m) => {
            eprintln!(
                "{}: wrote {} files to {} in {:.2}s",
                m.command,
                m.files.len() + 1,
                cli.out.display(),
                m.wall_time_s
            );
            0
        }
        Err(e) => {
            let prefix = match &e {
                Error::Config(_) => format!("{}: ", config.display()),
                _ => String::new(),
            };
            eprintln!("error: {prefix}{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
[model]
kind = "ising"
L = 3
h_x = 0.6
h_z = 0.1
r_z = 1.0
seed = 4

[times]
t_obs = [5.0]
"#;

    #[test]
    fn config_defaults_and_rejections() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        assert_eq!(cfg.thermo.beta_count, 41);
        assert_eq!(cfg.seeds(10).unwrap(), vec![14]);
        let err = ExperimentConfig::from_toml(&format!("{SMALL}\n[grid]\nbogus = 1\n")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("line"), "{err}");
        let err = ExperimentConfig::from_toml(&SMALL.replace("L = 3", "L = 3\ncolour = 2")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(ExperimentConfig::from_toml(&SMALL.replace("[5.0]", "[]")).is_err());
        assert!(ExperimentConfig::from_toml(&SMALL.replace("[5.0]", "[-1.0]")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{SMALL}\n[fock]\nstate = \"ud\"\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{SMALL}\n[ensemble]\nn_realizations = 0\n")).is_err());
        let many = ExperimentConfig::from_toml(&format!("{SMALL}\n[ensemble]\nn_realizations = 3\nbase_seed = 7\n")).unwrap();
        assert_eq!(many.seeds(1).unwrap(), vec![8, 9, 10]);
    }

    #[test]
    fn two_level_dos_run() {
        let cfg = ExperimentConfig::from_toml("[model]\nkind = \"ising\"\nL = 1\nh_x = 0.3\n[times]\nt_obs = [40.0]\n").unwrap();
        let r = run_realization(Task::Dos, &cfg, 0).unwrap();
        let spectrum = &r.files.iter().find(|f| f.0 == "spectrum.csv").unwrap().1;
        assert_eq!(String::from_utf8_lossy(spectrum).lines().count(), 3);
        let integral = r.tables[0].rows.iter().find(|x| x.0 == "dos_integral_T40").unwrap().1[0];
        // Truncating each kernel at +-10/T bounds the error by 2 * 2/(10 pi).
        assert!((integral - 2.0).abs() < 0.13, "{integral}");
    }

    #[test]
    fn aggregate_of_one_is_the_run() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let e = run_ensemble(Task::Pr, &cfg, &[4]).unwrap();
        let (_, pr) = e.aggregates.iter().find(|f| f.0 == "aggregate/pr.csv").unwrap();
        let text = String::from_utf8(pr.clone()).unwrap();
        let single = &e.realizations[0].tables.iter().find(|t| t.name == "pr").unwrap().rows[2].1;
        let row: Vec<&str> = text.lines().nth(3).unwrap().split(',').collect();
        assert_eq!(row[0], "2");
        assert_eq!(row[1].parse::<f64>().unwrap(), single[0]);
        assert_eq!(row[2], "NaN");
    }

    #[test]
    fn ensemble_order_does_not_matter() {
        let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
        let a = run_ensemble(Task::Pr, &cfg, &[3, 1, 2]).unwrap();
        let b = run_ensemble(Task::Pr, &cfg, &[2, 3, 1]).unwrap();
        assert_eq!(a.aggregates, b.aggregates);
        assert_eq!(a.realizations.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn mismatched_keys_are_not_averaged() {
        let mut a = Realization::default();
        a.tables.push(Table::new("curve", "E", &["v"]));
        a.tables[0].push("1", vec![1.0]);
        let mut b = a.clone();
        b.tables[0].rows[0].0 = "2".into();
        let (files, skipped) = aggregate(&[a, b]);
        assert!(files.is_empty());
        assert_eq!(skipped, vec!["curve".to_string()]);
    }

    #[test]
    fn verify_passes_on_a_small_chain() {
        let cfg = ExperimentConfig::from_toml(&format!("{SMALL}\n[verify]\nt_max = 4.0\nprobe_trials = 10\n")).unwrap();
        let r = run_realization(Task::Verify, &cfg, 4).unwrap();
        assert!(r.failed_checks.is_empty(), "{:?}", r.failed_checks);
        let big = ExperimentConfig::from_toml(&SMALL.replace("L = 3", "L = 7")).unwrap();
        assert_eq!(run_realization(Task::Verify, &big, 0).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn log_spacing() {
        let v = log_spaced(2.0, 32.0, 5);
        for (a, b) in v.iter().zip([2.0, 4.0, 8.0, 16.0, 32.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
