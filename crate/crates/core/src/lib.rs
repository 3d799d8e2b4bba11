//! Numerical laboratory for the discretized Allen-Cahn Gibbs measure on a
//! cylinder `[-L, L] x [0, 1]^d`: transition profiles, P1 finite elements,
//! energy landscape checks, tubular coordinates around the translated
//! profiles, Gaussian reference measures and MCMC estimators.

pub mod energy;
pub mod error;
pub mod experiments;
pub mod gaussian;
pub mod linalg;
pub mod mesh;
pub mod quad;
pub mod sampler;
pub mod scalar;
pub mod tubular;

pub use error::{Error, Result};
pub use mesh::{assemble, build_grid, interpolate, Boundary, FemMatrices, Field, GridSpec};
pub use scalar::{cutoff_profile, make_quartic_potential, solve_profile, surface_tension, PotentialSpec, ProfileSpec};
