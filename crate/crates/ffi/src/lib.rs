//! C interface to `purispec`.
//!
//! Handles are opaque pointers created by `ps_*_new`/`ps_diagonalize` and
//! released with the matching `*_free`. Every fallible call returns a
//! [`PsStatus`]; on failure a description is available from
//! [`ps_last_error`] on the same thread until the next failing call.
//!
//! Output arrays are caller-allocated. A call whose buffer is shorter than
//! required writes nothing and returns `PS_STATUS_BUFFER_TOO_SMALL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use purispec::dynamics::{loschmidt_g, TimeGrid};
use purispec::eigen::{diagonalize, weights_matrix, Spectrum};
use purispec::mbl::participation_ratio_m;
use purispec::model::{build_hamiltonian, ModelKind, ModelSpec};
use purispec::reconstruct::{dos_closed_form, EnergyGrid};
use purispec::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    BufferTooSmall = 4,
    Panic = 5,
}

/// Values accepted in [`PsModelParams::kind`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsModelKind {
    Ising = 0,
    Xxz = 1,
}

/// Plain-data description of a chain. `kind` takes a [`PsModelKind`] value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PsModelParams {
    pub kind: u32,
    pub sites: usize,
    pub j_z: f64,
    pub j: f64,
    pub h_x: f64,
    pub h_z: f64,
    pub r_z: f64,
    pub seed: u64,
}

/// Opaque model handle.
pub struct PsModel {
    spec: ModelSpec,
}

/// Opaque handle to a diagonalized model.
pub struct PsSpectrum {
    spectrum: Spectrum,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let text = CString::new(msg.replace('\0', " ")).expect("interior NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn fail(status: PsStatus, msg: impl Into<String>) -> PsStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> PsStatus {
    let status = match e.exit_code() {
        2 => PsStatus::InvalidArgument,
        _ => PsStatus::Numerical,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> PsStatus) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(PsStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

unsafe fn output<'a>(data: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], PsStatus> {
    if data.is_null() {
        return Err(fail(PsStatus::NullPointer, format!("{what} buffer is NULL")));
    }
    if len < needed {
        return Err(fail(
            PsStatus::BufferTooSmall,
            format!("{what} buffer holds {len} values, {needed} are required"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(data, needed))
}

/// Message of the most recent failure on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn ps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Forgets the stored error message.
#[no_mangle]
pub extern "C" fn ps_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string has an interior NUL"),
    };
    VERSION.as_ptr()
}

/// Validates `params` and stores a new model in `*out`.
///
/// # Safety
/// `params` must point to a readable `PsModelParams` and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ps_model_new(params: *const PsModelParams, out: *mut *mut PsModel) -> PsStatus {
    guard(|| {
        if params.is_null() || out.is_null() {
            return fail(PsStatus::NullPointer, "ps_model_new: NULL argument");
        }
        let p = *params;
        let kind = match p.kind {
            0 => ModelKind::Ising,
            1 => ModelKind::Xxz,
            k => return fail(PsStatus::InvalidArgument, format!("unknown model kind {k}")),
        };
        let spec = ModelSpec {
            kind,
            sites: p.sites,
            j_z: p.j_z,
            j: p.j,
            h_x: p.h_x,
            h_z: p.h_z,
            r_z: p.r_z,
            seed: p.seed,
        };
        if let Err(e) = spec.validate() {
            return from_error(e);
        }
        *out = Box::into_raw(Box::new(PsModel { spec }));
        PsStatus::Ok
    })
}

/// Releases a model; NULL is ignored.
///
/// # Safety
/// `model` must come from [`ps_model_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ps_model_free(model: *mut PsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Hilbert-space dimension `2^L`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_model_dim(model: *const PsModel, out: *mut usize) -> PsStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(PsStatus::NullPointer, "ps_model_dim: NULL argument");
        }
        *out = (*model).spec.dim();
        PsStatus::Ok
    })
}

/// Dense diagonalization with eigenvectors.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_diagonalize(model: *const PsModel, out: *mut *mut PsSpectrum) -> PsStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(PsStatus::NullPointer, "ps_diagonalize: NULL argument");
        }
        let result = build_hamiltonian(&(*model).spec).and_then(|h| diagonalize(&h));
        match result {
            Ok(spectrum) => {
                *out = Box::into_raw(Box::new(PsSpectrum { spectrum }));
                PsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Releases a spectrum; NULL is ignored.
///
/// # Safety
/// `spectrum` must come from [`ps_diagonalize`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn ps_spectrum_free(spectrum: *mut PsSpectrum) {
    if !spectrum.is_null() {
        drop(Box::from_raw(spectrum));
    }
}

/// Number of levels.
///
/// # Safety
/// `spectrum` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ps_spectrum_dim(spectrum: *const PsSpectrum, out: *mut usize) -> PsStatus {
    guard(|| {
        if spectrum.is_null() || out.is_null() {
            return fail(PsStatus::NullPointer, "ps_spectrum_dim: NULL argument");
        }
        *out = (*spectrum).spectrum.dim();
        PsStatus::Ok
    })
}

/// Ascending eigenvalues into `out[0..D]`.
///
/// # Safety
/// `spectrum` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_spectrum_energies(spectrum: *const PsSpectrum, out: *mut f64, len: usize) -> PsStatus {
    guard(|| {
        if spectrum.is_null() {
            return fail(PsStatus::NullPointer, "ps_spectrum_energies: NULL spectrum");
        }
        let e = &(*spectrum).spectrum.energies;
        match output(out, len, e.len(), "energies") {
            Ok(buf) => {
                buf.copy_from_slice(e);
                PsStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Weight matrix `M[sigma * D + n] = |<sigma|n>|^2`, row-major.
///
/// # Safety
/// `spectrum` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_weights(spectrum: *const PsSpectrum, out: *mut f64, len: usize) -> PsStatus {
    guard(|| {
        if spectrum.is_null() {
            return fail(PsStatus::NullPointer, "ps_weights: NULL spectrum");
        }
        let s = &(*spectrum).spectrum;
        let d = s.dim();
        let buf = match output(out, len, d * d, "weights") {
            Ok(b) => b,
            Err(st) => return st,
        };
        let m = weights_matrix(s);
        for sigma in 0..d {
            for n in 0..d {
                buf[sigma * d + n] = m.get(sigma, n);
            }
        }
        PsStatus::Ok
    })
}

/// `PR_M(sigma)` for every Fock state into `out[0..D]`.
///
/// # Safety
/// `spectrum` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_participation_ratios(spectrum: *const PsSpectrum, out: *mut f64, len: usize) -> PsStatus {
    guard(|| {
        if spectrum.is_null() {
            return fail(PsStatus::NullPointer, "ps_participation_ratios: NULL spectrum");
        }
        let s = &(*spectrum).spectrum;
        match output(out, len, s.dim(), "participation ratio") {
            Ok(buf) => {
                buf.copy_from_slice(&participation_ratio_m(&weights_matrix(s)));
                PsStatus::Ok
            }
            Err(st) => st,
        }
    })
}

/// `G(t_k) = (1/D) sum_n e^{-i t_k E_n}` at `t_k = k dt`, `k = 0..=steps`;
/// each output buffer needs `steps + 1` values.
///
/// # Safety
/// `spectrum` must be a live handle; `re` and `im` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_loschmidt_g(
    spectrum: *const PsSpectrum,
    dt: f64,
    steps: usize,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> PsStatus {
    guard(|| {
        if spectrum.is_null() {
            return fail(PsStatus::NullPointer, "ps_loschmidt_g: NULL spectrum");
        }
        let grid = match TimeGrid::new(dt, steps) {
            Ok(g) => g,
            Err(e) => return from_error(e),
        };
        let Some(needed) = steps.checked_add(1) else {
            return fail(PsStatus::InvalidArgument, "steps overflows");
        };
        let re = match output(re, len, needed, "real part") {
            Ok(b) => b,
            Err(st) => return st,
        };
        let im = match output(im, len, needed, "imaginary part") {
            Ok(b) => b,
            Err(st) => return st,
        };
        let g = loschmidt_g(&(*spectrum).spectrum.energies, grid);
        for (k, z) in g.values.iter().enumerate() {
            re[k] = z.re;
            im[k] = z.im;
        }
        PsStatus::Ok
    })
}

/// Closed-form `rho_c(E, T)` on `count` evenly spaced energies from `e_min`
/// to `e_max`. The spacing must resolve the kernel: `(e_max - e_min)/(count - 1) <= 1/(4T)`.
///
/// # Safety
/// `spectrum` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ps_dos(
    spectrum: *const PsSpectrum,
    t: f64,
    e_min: f64,
    e_max: f64,
    count: usize,
    out: *mut f64,
    len: usize,
) -> PsStatus {
    guard(|| {
        if spectrum.is_null() {
            return fail(PsStatus::NullPointer, "ps_dos: NULL spectrum");
        }
        let grid = match EnergyGrid::new(e_min, e_max, count) {
            Ok(g) => g,
            Err(e) => return from_error(e),
        };
        let buf = match output(out, len, count, "density") {
            Ok(b) => b,
            Err(st) => return st,
        };
        match dos_closed_form(&(*spectrum).spectrum.energies, &grid, t) {
            Ok(rho) => {
                buf.copy_from_slice(&rho.values);
                PsStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}
