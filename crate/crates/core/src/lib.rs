//! Boltzmann planar maps through labeled multitype mobiles.
//!
//! The crate is organized bottom-up:
//!
//! - [`tree_core`]: labeled typed plane trees and their encodings.
//! - [`symmetry`]: child reorderings, symmetrization and spanned subtrees.
//! - [`laws`]: valid laws, Galton-Watson samplers and the mobile laws.
//! - [`maps`]: rotation-system maps and the BDG bijection.
//! - [`metrics`]: snake pseudo-metrics and exact GH/GHP distances.
//! - [`harness`]: verification suites and reports.

pub mod error;
pub mod harness;
pub mod laws;
pub mod maps;
pub mod metrics;
pub mod rational;
pub mod symmetry;
pub mod tree_core;

pub use error::{Error, Result};
