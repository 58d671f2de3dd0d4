//! Anytime-valid sequential tests and confidence sequences for stratified
//! 2×2 count data.
//!
//! Data arrive as *blocks*: batches of `n_a` group-a and `n_b` group-b binary
//! outcomes, all from a single stratum. Each block contributes a conditional
//! e-variable, a likelihood ratio of an estimated alternative against its
//! KL projection onto the null set. Running products of these are e-processes;
//! by Ville's inequality they can be monitored continuously, and rejecting
//! whenever the e-process reaches `1/α` keeps the type-I error at most `α`
//! under any stopping rule.
//!
//! The crate is organised in layers:
//!
//! * [`model`] — block distributions, KL divergence, and KL projections onto
//!   the null sets (the diagonal, a risk-difference line, a half-plane).
//! * [`learners`] — alternative-parameter estimation from past data:
//!   beta-posterior means, odds-ratio-restricted posterior means, and the
//!   cross-talk schemes that let strata share information.
//! * [`eprocess`] — per-stratum e-processes with sleeping, the
//!   strata-combination schemes (multiply / mixture / pseudo-Bayes posterior /
//!   switch / min), cross-talk mixing, and the global-null test.
//! * [`confseq`] — grid-based confidence sequences for the risk difference:
//!   per stratum, for the minimum/maximum effect over strata, and for the
//!   population-weighted mean effect via universal inference.
//! * [`ingest`] — assembling blocks from interleaved per-outcome event
//!   streams, and seeded synthetic stream generation.
//!
//! The crate is `no_std` (with `alloc`); all probability accumulation is done
//! in log space so that e-processes over hundreds of blocks neither overflow
//! nor underflow.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod confseq;
pub mod eprocess;
pub mod ingest;
pub mod learners;
pub mod model;

mod numeric;

pub use model::{BlockCounts, BlockDesign, ModelError, ThetaPair};
