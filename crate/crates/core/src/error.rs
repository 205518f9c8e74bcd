use thiserror::Error;

/// Errors produced by the numerical layers.
///
/// The CLI maps these onto process exit codes, see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// A value violates a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Hilbert-space dimension outside what dense storage supports.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Two inputs that must share a shape or a grid do not.
    #[error("shape mismatch: {0}")]
    Mismatch(String),

    /// The time sampling cannot resolve every Bohr frequency on the energy grid.
    #[error("aliasing guard violated: dt * span = {product:.6} exceeds pi (dt = {dt}, span = {span})")]
    Aliasing { dt: f64, span: f64, product: f64 },

    /// Dense eigensolver failed.
    #[error("eigensolver did not converge for a {dim}x{dim} matrix (max |H_ij| = {max_abs:e})")]
    NoConvergence { dim: usize, max_abs: f64 },

    /// A matrix that must be positive semidefinite is not, beyond the clamping floor.
    #[error("matrix is not positive semidefinite: most negative eigenvalue {most_negative:e} (floor {floor:e})")]
    Positivity { most_negative: f64, floor: f64 },

    /// Reconstructed partition function or normalization fell below its floor.
    #[error("degenerate normalization: {what} = {value:e} is below the positivity floor {floor:e}")]
    Degenerate {
        what: &'static str,
        value: f64,
        floor: f64,
    },

    /// A numerical self-check did not meet its tolerance.
    #[error("numerical contract failed: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    /// One realization of a disorder ensemble failed.
    #[error("realization with seed {seed} failed: {source}")]
    Realization { seed: u64, source: Box<Error> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 numerical contract, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Validation(_)
            | Error::Dimension(_)
            | Error::Mismatch(_)
            | Error::Aliasing { .. } => 2,
            Error::Io(_) => 4,
            Error::Realization { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
