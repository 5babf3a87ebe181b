//! Active learning of a spatial crop phenotype by a mobile agent.
//!
//! A ground agent learns the distribution of a scalar phenotype (mean
//! stalk height) over a corridor-constrained grid field by mixing accurate
//! stationary measurements with cheap noisy in-motion measurements. A
//! Gaussian-process model with sample-dependent noise fuses the two
//! measurement kinds; an informative planner greedily selects maximum-
//! entropy sensing sites and then picks, among all budget-feasible
//! no-U-turn paths covering them, the one with the highest conditional
//! entropy of its drive-by measurements.
//!
//! The crate is organized around that pipeline:
//!
//! - [`gp`] — Matérn-3/2 regression with per-sample noise, entropies,
//!   hyperparameter fitting;
//! - [`fusion`] — merging repeated static/mobile readings per plot;
//! - [`field`] — grid layouts, datasets, synthetic fields, seeded sensors;
//! - [`graph`] — the no-U-turn junction graph and budgeted path
//!   enumeration;
//! - [`planner`] — site selection, path scoring, the five sampling
//!   strategies, and full missions;
//! - [`harness`] — seeded experiment batches, MAE metrics, parameter
//!   sweeps and CSV output.

#![forbid(unsafe_code)]

pub mod error;
pub mod field;
pub mod fusion;
pub mod gp;
pub mod graph;
pub mod harness;
pub mod planner;

pub use error::{Error, Result};
