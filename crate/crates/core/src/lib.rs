//! A deterministic laboratory for data-free black-box model extraction.
//!
//! The crate trains a hidden target classifier, exposes it only through a
//! metered query oracle, and steals it with a collaborative
//! generator/substitute procedure (`stealing::mega_steal`) or with the
//! competitive baselines (`stealing::dast_steal`, `stealing::dfme_steal`).
//! Stolen substitutes drive transfer attacks (`attacks`), and
//! `diagnostics` turns the convergence argument behind the collaborative
//! procedure into checks over recorded runs.
//!
//! Everything runs on a small reverse-mode autodiff engine over `f64`
//! tensors (`autodiff`). Batch-parallel work goes through [`exec`], which
//! uses rayon when the `parallel` feature is enabled and falls back to
//! plain iteration otherwise; results are identical either way.

pub mod attacks;
pub mod autodiff;
pub mod commands;
pub mod data_io;
pub mod diagnostics;
mod error;
pub mod exec;
pub mod nets;
pub mod oracle;
pub mod stealing;

pub use autodiff::{Primitive, Tape, Tensor, Var};
pub use error::{Error, Result};
