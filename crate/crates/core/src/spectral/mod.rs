//! Kernels, Nystrom eigensystems and the truncated Karhunen-Loeve map.

mod kernel;
mod nystrom;

pub use crate::mesh::{FunctionSample, Mesh, MeshId};
pub use kernel::{Kernel, KernelFamily};
pub(crate) use nystrom::apply_basis;
pub use nystrom::{default_anchors, EigenSystem, DEFAULT_RELATIVE_RIDGE};
