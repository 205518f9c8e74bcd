//! Purification spectroscopy of spin-1/2 chains.
//!
//! The infinite-temperature state of a chain, purified with an ancilla copy,
//! is quenched under `H`; its overlap with the initial state is
//! `G(t) = Tr e^{-itH} / D`. Fourier transforming such finite-time signals
//! gives coarse-grained spectra: the density of states, eigenstate
//! expectation values of observables, Fock-state energy distributions and
//! Uhlmann matrices. Every signal route is paired with an
//! exact-diagonalization oracle.
//!
//! Module map:
//!
//! * [`model`]: Hamiltonians, observables and the Fock basis.
//! * [`eigen`]: dense diagonalization, weight matrix `M`, `A_n`.
//! * [`dynamics`]: time signals `G`, `G_sigma`, `G_A`, state evolution, the
//!   doubled-system check, probe-qubit interferometry, stochastic traces and
//!   half-chain entropy.
//! * [`reconstruct`]: the `delta_T` kernel and coarse-grained functions.
//! * [`thermo`]: reconstructed canonical averages and specific heat.
//! * [`eth`]: eigenstate-thermalization fluctuation measures.
//! * [`mbl`]: participation ratios, `Gamma` matrices and the Uhlmann matrix.
//! * [`cli`]: config-driven experiment runner behind the `purispec` binary.

pub mod cli;
pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod eth;
pub mod linalg;
pub mod mbl;
pub mod model;
pub mod reconstruct;
pub mod thermo;

pub use error::{Error, Result};
