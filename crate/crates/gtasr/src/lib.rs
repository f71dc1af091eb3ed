//! gtasr: one-step image super-resolution trained with trajectory-aligned
//! consistency objectives.
//!
//! The crate is a self-contained desk-scale training and analysis stack:
//! a reverse-mode autodiff engine ([`tensor`]), the residual-shifting
//! noise schedule ([`schedule`]) and its probability-flow sampler
//! ([`pfode`]), a small conditional restoration network ([`model`]), the
//! two-stage loss suite ([`losses`]), synthetic paired data ([`data`]),
//! the training driver ([`train`]), offline analysis ([`analysis`]) and
//! the command line surface ([`cli`]).

pub mod analysis;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod optim;
pub mod pfode;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
