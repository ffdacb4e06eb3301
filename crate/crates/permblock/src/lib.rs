//! Randomization-based inference for multi-center permuted-block trials.
//!
//! The core objects: a [`design::TrialDesign`] (block size N, P blocks, K
//! institutions), patient-level [`design::TrialData`], per-block outcome
//! [`scores`], and the linear statistic S_A = sum of scores on arm A.
//! [`moments`] gives the exact randomization mean/variance of (S_A, n_A);
//! [`conditional`] runs the normal-approximation test conditioned on the
//! per-institution treatment counts n_kA; [`oracle`] enumerates small
//! assignment spaces exactly; [`gst`] adds O'Brien-Fleming sequential
//! monitoring; [`rerand`] builds rerandomization confidence intervals for
//! mortality ratios; [`sim`] is the reproducible power-study harness.

pub mod conditional;
pub mod design;
pub mod error;
pub mod gst;
pub mod io;
pub mod moments;
pub mod oracle;
pub mod rerand;
pub mod scores;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
