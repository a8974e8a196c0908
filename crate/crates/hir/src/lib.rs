//! Hierarchical invariant image representations.
//!
//! Cascades of moment-basis convolutional units with magnitude nonlinearity,
//! organized as tree networks over orthogonal polar bases. The cascade is
//! equivariant to translations, rotations, and flips, covariant to scaling,
//! and feeds a frequency-band pooling layer that produces invariant feature
//! vectors. Includes feature selection, network pruning, a geometric
//! verification harness, and desk-scale classification utilities.

pub mod adapt;
pub mod basis;
pub mod engine;
pub mod error;
pub mod harness;
pub mod invariant;
pub mod io;
pub mod kernels;
pub mod network;
pub mod synth;

pub use error::{HirError, Result};
