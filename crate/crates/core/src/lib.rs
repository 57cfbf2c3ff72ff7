//! Non-normal recurrent networks.
//!
//! The recurrent matrix is kept in real Schur form, `V = P (Λ + T) Pᵀ`: an
//! orthogonal basis `P` (the exponential of a skew-symmetric generator), a
//! block-diagonal spectrum `Λ` of scaled 2×2 rotations and a strictly
//! lower-triangular feed-forward part `T`. The eigenvalues of `V` are fixed by
//! `Λ` alone, so the non-normal part can be trained freely without touching
//! the spectrum.
//!
//! Besides the model and its trainer the crate carries the analysis tools
//! used to study such matrices: Fisher memory curves of linear dynamics
//! ([`memory`]), exact polynomial-growth checks for unit-triangular powers
//! ([`propcheck`]) and diagnostics of learned connectivity ([`analysis`]).

pub mod analysis;
pub mod error;
pub mod linalg;
pub mod memory;
pub mod optim;
pub mod propcheck;
pub mod rnn;
pub mod schur;
pub mod tasks;

pub use error::{Error, Result};
pub use linalg::{Mat, PolyMat};
pub use schur::{GammaMode, InitScheme, SchurGrads, SchurParams};
