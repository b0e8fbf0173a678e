//! Optimal cut-off matching mechanisms for two-sided data markets.
//!
//! A market is described by type distributions on both sides and reward
//! kernels `R^S`, `R^B`. [`solver`] finds the welfare- or revenue-maximizing
//! cut-off rule with its payments; [`verify`] audits a rule and [`sim`] runs it
//! on sampled populations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod expr;
pub mod market;
pub mod mechanism;
pub mod numerics;
pub(crate) mod par;
pub mod sim;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
