//! Compositional symbolic models of networks of discrete-time switched
//! systems.
//!
//! The pipeline runs bottom-up: per-mode storage certificates are checked
//! ([`certificates`]), each subsystem is abstracted onto an η-grid
//! ([`abstraction`]), the subsystem guarantees are composed into a network
//! bound ([`composition`]), safety controllers are synthesized on the
//! abstractions ([`synthesis`]) and refined controllers are exercised on the
//! concrete network ([`sim`]). [`driver`] wires it together behind the
//! `symnet` command line.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod abstraction;
mod codec;
pub mod certificates;
pub mod composition;
pub mod config;
pub mod driver;
pub mod error;
pub mod matcert;
pub mod sim;
pub mod synthesis;
pub mod system;
pub mod transition;

pub use error::{Error, Result};
