//! Spatial density estimation of mobile devices over a tile grid from
//! per-cell counts under (possibly overlapping) radio-cell footprints.
//!
//! The crate is organized along the estimation pipeline:
//!
//! * [`grid`]: tile grid, footprints, assignment matrix P, consolidation.
//! * [`geolocation`]: footprints from a network description (Voronoi,
//!   overlapping flat, overlapping signal-dominance).
//! * [`estimators`]: SB, EM, MAP, approximate MAP and the closed-form DF
//!   estimator, plus likelihood diagnostics.
//! * [`scenario`]: seeded synthetic networks, populations and counts.
//! * [`evaluation`]: Kantorovich-Wasserstein distance between maps.
//! * [`benchmark`]: the end-to-end synthetic comparison.

pub mod benchmark;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod geolocation;
pub mod grid;
pub mod scenario;

pub use error::{Error, Result};
