// `!(x > 0.0)` is used on purpose: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod counts;
pub mod error;
pub mod experiment;
pub mod feedback;
pub mod fock;
pub mod photon;
pub mod qubit;
pub mod sim;

pub use error::{Error, Result};
