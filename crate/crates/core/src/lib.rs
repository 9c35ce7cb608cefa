//! Spectral laboratory for the homogenization and dimension reduction of
//! integral functionals on `A`-free fields in thin films.
//!
//! The library is layered bottom-up: constant-coefficient operators and
//! their symbols ([`operator`]), periodic fields with FFT-based symbol
//! application and projection ([`field`], [`spectral`], [`surgery`]),
//! energy densities ([`density`]), the periodic cell solver ([`cell`]), the
//! thin-film experiments ([`thinfilm`]) and report/config plumbing
//! ([`report`]).

pub mod cell;
pub mod density;
pub mod error;
pub mod field;
pub mod linalg;
pub mod operator;
pub mod report;
pub mod run;
pub mod spectral;
pub mod surgery;
pub mod thinfilm;

pub use error::{Error, Result};
