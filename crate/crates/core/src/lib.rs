//! Inchworm propagation of spin-boson dynamics with tensor-train compressed
//! bath influence functionals.
//!
//! The crate is organised bottom-up:
//!
//! - [`ttcore`]: complex tensor-train algebra (sum, Hadamard, extension, rounding).
//! - [`bath`]: Ohmic bath discretisation, two-point correlations and their low-rank factorisation.
//! - [`diagrams`]: connected pairings and their iterative decomposition.
//! - [`bif`]: the bath influence functional as a tensor train.
//! - [`inchworm`]: the propagator table, sequential simplex integrals and Heun stepping.
//! - [`ttm`]: transfer tensors learned from short-time dynamical maps.
//! - [`harness`]: configuration, caching and experiment suites behind the CLI.

// `!(x > 0.0)` is used deliberately in validation so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ttcore;
pub mod bath;
pub mod diagrams;
pub mod bif;
pub mod inchworm;
pub mod ttm;
pub mod harness;
