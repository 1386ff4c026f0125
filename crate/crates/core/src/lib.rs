//! Dimer model on black-and-white Temperleyan cylinders.

pub mod elliptic;
pub mod error;
pub mod experiment;
pub mod height_stats;
pub mod io;
pub mod kasteleyn;
pub mod lattice;
pub mod linalg;
pub mod prediction;
pub mod sampling;

pub use error::{Error, Result};
