//! Numerical laboratory for smooth time-changes of the horocycle flow on a
//! compact quotient of SL(2,R).
//!
//! The crate provides exact matrix algebra for the four relevant
//! one-parameter subgroups, the Bolza octagon lattice with reduction and
//! Haar sampling, smooth automorphized observables, the time-change cocycle
//! solver, Monte Carlo correlation estimators with a quantitative van der
//! Corput check, and the combinatorial time-clustering procedure with its
//! gap guarantee.

pub mod cluster;
pub mod config;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod mixing;
pub mod observable;
pub mod report;
pub mod sl2;
pub mod timechange;

pub use error::{Error, Result};
