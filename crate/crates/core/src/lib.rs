//! Numerical laboratory for diffusion in periodic cellular flows.
//!
//! A smooth periodic stream function `H` defines an incompressible velocity
//! field `v = (-dH/dx2, dH/dx1)` whose separatrix `{H = 0}` tiles the plane
//! into bounded invariant cells. This crate simulates the advection-dominated
//! diffusion `dX = (1/eps) v(X) dt + dW`, builds the Reeb graph of `H`
//! together with the averaged edge coefficients and gluing weights, runs the
//! limiting diffusion on the graph with its vertex local time, and provides
//! the Monte Carlo estimators and statistical tests used to compare the two
//! against each other across the averaging, transition and homogenization
//! regimes.
//!
//! Everything numerical is generic over the scalar type through [`Scalar`]
//! (`f32` or `f64`); the concrete aliases below are what the CLI and most
//! experiments use.

pub mod chainlab;
pub mod geom;
pub mod graphdiff;
pub mod hamiltonian;
pub mod interp;
pub mod linalg;
pub mod mc;
pub mod quadrature;
pub mod reeb;
pub mod rng;
pub mod scalar;
pub mod sde2d;
pub mod separatrix;
pub mod stats;

pub use geom::{Mat2, Vec2};
pub use scalar::Scalar;

/// The stream-function field at the default `f64` precision.
pub type Field64 = hamiltonian::HamiltonianField<f64>;
/// A Reeb graph with `f64` coefficient tables.
pub type ReebGraph64 = reeb::ReebGraph<f64>;
