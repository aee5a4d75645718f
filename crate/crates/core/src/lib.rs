//! Exact sampling from a discrete distribution given only comparison access.
//!
//! A local sampling scheme draws a set `S` from a distribution `Q` over
//! subsets of `[n]` and reports the winner `x ~ D(x) / D(S)`. This crate turns
//! such draws into exact samples from the hidden distribution `D`:
//!
//! - [`cftp`] runs coupling from the past on the chain induced by the
//!   comparisons, either directly or with estimate-driven downscaling followed
//!   by a rejection step, which removes the dependence on the shape of `D`.
//! - [`learning`] estimates `D` in relative error by constrained maximum
//!   likelihood over the comparison data.
//! - [`hypergraph`] runs the same pipeline for comparisons of `k > 2` items.
//! - [`spectral`] and [`verify`] provide the exact matrices, spectra and
//!   statistical tests used to check all of the above.

pub mod cftp;
pub mod error;
pub mod hypergraph;
pub mod io;
pub mod learning;
pub mod model;
pub mod rng;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use model::{
    ComparisonDistribution, Instance, LssOracle, LssSample, TargetDistribution,
};
pub use rng::SeedTree;
