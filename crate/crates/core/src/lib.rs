//! Coded many-user Gaussian multiple access.
//!
//! Each of `L` users encodes `k` payload bits with a binary linear code of
//! length `d`, maps the codeword to BPSK symbols and spreads it with a random
//! signature sequence of length `ñ = n/d`. The receiver observes
//! `Y = A·X + ε` and recovers `X` with a matrix-valued approximate message
//! passing (AMP) decoder whose row-wise denoiser can exploit the outer code.
//!
//! The crate is organized as:
//!
//! * [`codes`]: GF(2) linear codes, Tanner graphs, alist I/O, girth.
//! * [`design`]: system parameters, iid and spatially coupled designs,
//!   channel simulation and the noise-variance estimator.
//! * [`denoisers`]: Bayes, marginal-MMSE and belief-propagation denoisers,
//!   their Jacobians and hard decisions.
//! * [`amp`]: the iid and spatially coupled AMP decoders.
//! * [`state_evolution`]: the deterministic covariance recursions and
//!   predicted error rates.
//! * [`harness`]: configuration, sweeps, bisection and CSV output.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Every
//! reduction is performed in a fixed order over fixed-size chunks so results
//! are bit-identical for any thread count and either backend.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amp;
pub mod codes;
pub mod cov;
pub mod denoisers;
pub mod design;
mod error;
pub mod harness;
pub mod par;
pub mod rng;
pub mod state_evolution;

pub use error::{Error, Result};
