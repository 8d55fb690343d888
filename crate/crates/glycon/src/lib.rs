//! Stochastic model-based glycemic control for simulated ICU patients.
//!
//! The crate has three layers:
//!
//! - a mean-reverting stochastic glucose model ([`msg`]) identified per
//!   patient by constrained maximum likelihood ([`identify`]), wrapped in
//!   a scalar LQG controller ([`lqg`]);
//! - evaluation machinery: a nonlinear virtual-patient simulator
//!   ([`patient`]), a table-driven protocol engine ([`protocol`]), the
//!   closed-loop virtual trial ([`trial`]), and retrospective replay of
//!   recorded data ([`retro`]);
//! - statistics and reporting ([`stats`], [`report`]).
//!
//! The `glycon` binary in the companion CLI crate drives the whole
//! pipeline from TOML configs. The `book/` directory holds a guide whose
//! code samples compile and run as this crate's doc-tests.

pub mod error;
pub mod identify;
pub mod lqg;
pub mod msg;
pub mod opt;
pub mod patient;
pub mod protocol;
pub mod report;
pub mod retro;
pub mod schedule;
pub mod seed;
pub mod special;
pub mod stats;
pub mod trial;

pub mod book;

pub use error::{Error, Result};
