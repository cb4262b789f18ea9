//! Simulation toolkit for control systems and Stratonovich diffusions on
//! compact embedded manifolds.
//!
//! The crate integrates control paths and SDE sample paths on the flat
//! 2-torus, unit spheres and (for bracket checks only) SL(2,R), estimates
//! reachable sets and occupation measures on equal-area cell grids, and
//! cross-checks the density of orbit foliations three ways: randomized
//! reachability, support of empirical invariant measures, and constancy of
//! ergodic averages of harmonic candidates.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod manifold;
pub mod measure;
pub mod rng;
pub mod scenarios;
pub mod vectorfield;

pub use error::{Error, Result};
