//! Spectral analysis of driven-dissipative Bose-Hubbard chains: exact
//! Liouvillians in truncated Fock spaces, Gutzwiller mean-field dynamics and
//! its linearization, Gross-Pitaevskii dispersions and gap extraction.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod dynamics;
pub mod error;
pub mod fock;
pub mod gp;
pub mod linalg;
pub mod liouville;
pub mod meanfield;
pub mod spectra;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
