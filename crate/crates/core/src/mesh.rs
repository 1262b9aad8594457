//! Evaluation meshes and function samples.

use crate::error::{invalid, Result};

/// A list of points in the input space, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
}

impl Mesh {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("mesh dimension must be positive"));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "coordinate buffer of length {} is not a multiple of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(invalid("mesh points must be finite"));
        }
        Ok(Self { dim, coords })
    }

    /// One-dimensional mesh from scalar locations.
    pub fn from_1d(xs: &[f64]) -> Result<Self> {
        Self::new(1, xs.to_vec())
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(1);
        if points.iter().any(|p| p.len() != dim) {
            return Err(invalid("points have inconsistent dimension"));
        }
        Self::new(dim, points.concat())
    }

    /// `n` evenly spaced points on `[lo, hi]`.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("linspace needs at least one point"));
        }
        let xs: Vec<f64> = if n == 1 {
            vec![lo]
        } else {
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Self::from_1d(&xs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Sub-mesh made of the given indices, in order.
    pub fn select(&self, idx: &[usize]) -> Mesh {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            coords.extend_from_slice(self.point(i));
        }
        Mesh {
            dim: self.dim,
            coords,
        }
    }

    /// Stable identity used to key per-mesh caches and replay-buffer entries.
    pub fn id(&self) -> MeshId {
        MeshId(crate::rng::mix(
            crate::rng::hash_f64s(&self.coords) ^ self.dim as u64,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MeshId(pub u64);

/// Evaluations of one function on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionSample {
    pub mesh: Mesh,
    pub values: Vec<f64>,
}

impl FunctionSample {
    pub fn new(mesh: Mesh, values: Vec<f64>) -> Result<Self> {
        if mesh.is_empty() {
            return Err(invalid("function sample needs at least one point"));
        }
        if mesh.len() != values.len() {
            return Err(invalid(format!(
                "mesh has {} points but {} values were given",
                mesh.len(),
                values.len()
            )));
        }
        Ok(Self { mesh, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> FunctionSample {
        FunctionSample {
            mesh: self.mesh.select(idx),
            values: idx.iter().map(|&i| self.values[i]).collect(),
        }
    }

    pub(crate) fn content_hash(&self) -> u64 {
        crate::rng::mix(self.mesh.id().0 ^ crate::rng::hash_f64s(&self.values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_lengths() {
        let mesh = Mesh::linspace(0.0, 1.0, 3).unwrap();
        assert!(FunctionSample::new(mesh, vec![0.0; 2]).is_err());
    }

    #[test]
    fn rejects_non_finite_points() {
        assert!(Mesh::from_1d(&[0.0, f64::NAN]).is_err());
    }

    #[test]
    fn linspace_endpoints() {
        let m = Mesh::linspace(-1.0, 1.0, 5).unwrap();
        assert_eq!(m.point(0), &[-1.0]);
        assert_eq!(m.point(4), &[1.0]);
        assert_eq!(m.point(2), &[0.0]);
    }

    #[test]
    fn id_depends_on_coordinates() {
        let a = Mesh::linspace(0.0, 1.0, 4).unwrap();
        let b = Mesh::linspace(0.0, 1.0, 5).unwrap();
        assert_eq!(a.id(), a.clone().id());
        assert_ne!(a.id(), b.id());
    }
}
