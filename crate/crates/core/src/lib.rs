//! Online meta-learning with the dynamic time-smoothed adaptive gradient
//! method (DTS-AG).
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: validated real vectors, seeded random streams and a
//!   central-difference gradient oracle.
//! - [`tasks`]: synthetic non-stationary task streams built from bounded
//!   sinusoidal losses whose Lipschitz, smoothness and Hessian-Lipschitz
//!   constants are known in closed form, plus additive gradient noise models.
//! - [`optimizer`]: the smoothing window, the smoothed stochastic gradient
//!   and the unified Adagrad/Adam update.
//! - [`meta`]: the bi-level loop (one inner gradient step, outer DTS-AG step)
//!   producing a [`meta::RunTrace`].
//! - [`regret`]: dynamic and static local regret ledgers, variance proxies
//!   and calculators for the expectation and high-probability regret bounds.
//! - [`lemmas`]: numerical checks of the scalar inequalities and Monte-Carlo
//!   checks of the smoothed-gradient moment bounds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::result_large_err)]

pub mod error;
pub mod lemmas;
pub mod meta;
pub mod numerics;
pub mod optimizer;
pub mod regret;
pub mod tasks;

pub use error::{Error, Result};
pub use numerics::{RealVector, RngStream};
