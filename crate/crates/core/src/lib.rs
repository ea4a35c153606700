//! Process tensors of open quantum dynamics in matrix-product-operator form.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense complex tensors, contraction, truncated SVD,
//!   Hermitian eigendecomposition and the matrix exponential.
//! - [`tn`]: matrix product states and operators.
//! - [`model`]: the dissipative spin chain (Hamiltonian, Liouvillian,
//!   step channel, environment steady state).
//! - [`process`]: the exact process MPO, its application to input
//!   sequences, Born-rule evaluation, and the dense sequential oracles.
//! - [`datagen`]: random inputs and training/testing datasets.
//! - [`learn`]: sweeping least-squares regression of a process MPO.
//! - [`eval`]: fidelity, physical projection, median infidelities and
//!   distances.
//! - [`experiment`]: declarative parameter sweeps with CSV/SVG output.
//! - [`serialize`]: binary containers for process MPOs and datasets.
//!
//! # Conventions
//!
//! Every flattening in the crate is row-major ("first axis slowest"). A
//! density matrix `rho` is vectorised as `vec(rho)[i * d + j] = rho[i, j]`,
//! so `vec(A rho B) = (A ⊗ Bᵀ) vec(rho)`. Qubit basis states obey
//! `σz|0⟩ = +|0⟩`, and the system qubit is the leftmost (slowest) Kronecker
//! factor of system-environment operators.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod learn;
pub mod model;
pub mod process;
pub mod serialize;
pub mod tensor;
pub mod tn;

pub use error::{Error, Result};

/// Complex double precision scalar used throughout.
pub type C64 = num_complex::Complex64;
