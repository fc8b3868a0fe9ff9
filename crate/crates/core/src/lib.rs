//! Forward eikonal solves over log-normal slowness fields and multilevel
//! MCMC estimation of posterior expectations.
//!
//! The crate is organized along the pipeline:
//!
//! - [`field`]: KL-expanded log-normal slowness, analytic sine basis with
//!   Cantor-pairing indexing, prior sampling.
//! - [`grid`]: dyadic rectangular meshes with stencil topology.
//! - [`fmm`]: the Fast Marching solver for the discrete eikonal system.
//! - [`interp`]: bicubic interpolation of coarse output lattices.
//! - [`bayes`]: observation operators, mismatch potentials, data synthesis.
//! - [`mcmc`]: independence and pCN Metropolis-Hastings chains.
//! - [`mlmcmc`]: the indicator-truncated multilevel estimator.
//! - [`oracle`]: Gauss-Hermite references for the one-parameter problem.

pub mod bayes;
pub mod error;
pub mod field;
pub mod fmm;
pub mod grid;
pub mod interp;
pub mod mcmc;
pub mod mlmcmc;
pub mod oracle;
pub mod rng;
pub mod setups;

pub use bayes::{LevelSpec, NoiseCov, Observation};
pub use error::{Error, Result};
pub use field::{BinaryField, KlBasis, ParamVector, ReferenceField, SlownessField};
pub use fmm::{FmmStats, TravelTimeField};
pub use grid::{Domain, Grid};
pub use mcmc::{ChainConfig, SamplerKind};
pub use mlmcmc::{InverseProblem, MlConfig, Qoi};
pub use oracle::QuadratureRule;
