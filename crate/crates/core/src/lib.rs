//! Numerical engine for decentralized stochastic team problems.
//!
//! A team of agents shares one pay-off but each agent acts on its own
//! (possibly delayed) observations. Under a reference measure the state is
//! driftless and unaffected by any decision; the controlled problem is
//! recovered by weighting with the likelihood ratio `Λ`. This crate provides
//! the pieces needed to compute and certify person-by-person optimal
//! strategies numerically:
//!
//! - [`model`]: problem definitions, time grids and a sampled audit of the
//!   standing assumptions.
//! - [`info`]: information structures compiled into per-step feature maps.
//! - [`paths`]: Euler–Maruyama and exact discrete-time path ensembles.
//! - [`girsanov`]: likelihood ratios, martingale diagnostics and pay-off
//!   estimates under both measures.
//! - [`static_equiv`]: the static reformulation of discrete-time teams,
//!   evaluated by tensor Gauss–Hermite quadrature.
//! - [`fbsde`]: Hamiltonians, regression solvers for the adjoint BSDE and the
//!   variational process.
//! - [`team`]: conditional Hamiltonian gradients, best responses, residual
//!   certificates and value processes.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature; `std` only adds rayon-backed parallel path loops. Results are
//! bit-identical either way because every path draws from its own
//! counter-based stream and reductions run in path order.

#![cfg_attr(all(not(feature = "std"), not(test)), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

mod error;
mod linalg;
mod math;
mod par;

pub mod basis;
pub mod benchmarks;
pub mod fbsde;
pub mod girsanov;
pub mod info;
pub mod model;
pub mod paths;
pub mod policy;
pub mod quadrature;
pub mod regression;
pub mod rng;
pub mod static_equiv;
pub mod stats;
pub mod team;

pub use error::{Error, Result};
