//! Discrete-measure experiments for gradients of elliptic single-layer
//! potentials.
//!
//! The crate works with finite weighted point sets in the plane and in
//! space. It builds nested cube lattices over their support, evaluates
//! frozen-coefficient kernels `∇₁Θ(x − y, 0; A(x))`, splits `Tμ` into
//! martingale differences along a density-driven stopping-time filtration,
//! and runs the variational minimization plus the vector-field pairing used
//! to compare irregular and rectifiable measures.

pub mod config;
pub mod error;
pub mod experiment;
pub mod filtration;
pub mod geometry;
pub mod kernels;
pub mod lattice;
pub mod measure;
pub mod operator;
pub mod spatial;
pub mod sum;
pub mod variational;
pub mod vectorfield;

pub use error::{Error, Result};
pub use geometry::Point;
