//! Energy-based models over functions: a truncated Karhunen-Loeve basis
//! from a Nystrom eigensystem, a latent energy, Langevin sampling and
//! contrastive-divergence training, plus evaluation utilities.

pub mod data;
pub mod error;
pub mod eval;
pub mod mesh;
pub mod model;
pub mod net;
mod par;
pub mod rng;
pub mod sampler;
pub mod spectral;
mod textio;
pub mod trainer;

pub use error::{Error, Result};
pub use mesh::{FunctionSample, Mesh, MeshId};
