//! Invariant measures of quarter-plane random walks as finite sums of
//! geometric terms, with certified performance bounds when no such sum exists.
//!
//! Pipeline: [`model`] describes a walk, [`curves`] builds its kernel and
//! boundary polynomials, [`detection`] decides representability,
//! [`measure`] recovers the coefficients and closed-form performance,
//! [`perturbation`] and [`bounds`] produce certified intervals otherwise, and
//! [`oracle`] supplies brute-force truncated solves for cross-checks.

#![allow(clippy::needless_range_loop)]

pub mod bounds;
pub mod curves;
pub mod detection;
pub mod error;
pub mod exec;
pub mod measure;
pub mod model;
pub mod oracle;
pub mod perturbation;
pub mod poly;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{load_fixture, PerformanceFunctional, RandomWalk, RegionId};
