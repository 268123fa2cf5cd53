//! Markdown event construction and pricing.

pub mod config;
pub mod demand;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod io;
pub mod ithax;
pub mod optimizer;
pub mod stats;
pub mod validation;

pub use error::{Error, Result};
