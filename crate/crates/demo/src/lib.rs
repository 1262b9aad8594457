//! Browser explorer for truncated Karhunen-Loeve Gaussian processes on
//! `[0, 1]`: Nystrom eigenfunctions, prior draws, and draws conditioned on
//! clicked observations.

use febm::rng::rng_for;
use febm::spectral::{EigenSystem, Kernel, KernelFamily};
use febm::{Error, Mesh, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct GpExplorer {
    eigsys: EigenSystem,
    grid: Mesh,
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

impl GpExplorer {
    pub fn build(
        family: &str,
        lengthscale: f64,
        n_anchors: usize,
        d_xi: usize,
        n_grid: usize,
    ) -> Result<Self> {
        let family: KernelFamily = family.parse()?;
        let kernel = Kernel::new(family, 1.0, lengthscale)?;
        let anchors = Mesh::linspace(0.0, 1.0, n_anchors)?;
        let eigsys = EigenSystem::nystrom_default(kernel, anchors, d_xi.min(n_anchors))?;
        Ok(Self {
            eigsys,
            grid: Mesh::linspace(0.0, 1.0, n_grid)?,
        })
    }

    fn expand_all(&self, weights: &[DVector<f64>]) -> Result<Vec<f64>> {
        let phi = self.eigsys.basis(&self.grid)?;
        Ok(weights
            .iter()
            .flat_map(|w| (&phi * w).data.as_vec().clone())
            .collect())
    }

    fn normals(&self, n: usize, seed: u32, stream: u64) -> Vec<DVector<f64>> {
        let d = self.eigsys.truncation();
        (0..n)
            .map(|k| {
                let mut rng = rng_for(seed as u64, &[stream, k as u64]);
                DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
            })
            .collect()
    }

    /// Posterior mean followed by `n_draws` posterior draws on the grid,
    /// under `y = f(x) + N(0, noise^2)` with the truncated prior.
    pub fn condition(
        &self,
        xs: &[f64],
        ys: &[f64],
        noise: f64,
        n_draws: usize,
        seed: u32,
    ) -> Result<Vec<f64>> {
        if xs.len() != ys.len() {
            return Err(Error::InvalidArgument("xs and ys differ in length".into()));
        }
        if !(noise > 0.0 && noise.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise must be positive, got {noise}"
            )));
        }
        let d = self.eigsys.truncation();
        let (precision, rhs) = if xs.is_empty() {
            (DMatrix::identity(d, d), DVector::zeros(d))
        } else {
            let phi = self.eigsys.basis(&Mesh::from_1d(xs)?)?;
            let s2 = noise * noise;
            (
                phi.transpose() * &phi / s2 + DMatrix::identity(d, d),
                phi.transpose() * DVector::from_column_slice(ys) / s2,
            )
        };
        let chol = precision
            .cholesky()
            .ok_or_else(|| Error::Numeric("posterior precision is not positive definite".into()))?;
        let mean = chol.solve(&rhs);
        let l_t = chol.l().transpose();
        let mut weights = vec![mean.clone()];
        for z in self.normals(n_draws, seed, 0xd0) {
            let dev = l_t
                .solve_upper_triangular(&z)
                .ok_or_else(|| Error::Numeric("singular posterior factor".into()))?;
            weights.push(&mean + dev);
        }
        self.expand_all(&weights)
    }
}

#[wasm_bindgen]
impl GpExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new(
        family: &str,
        lengthscale: f64,
        n_anchors: usize,
        d_xi: usize,
        n_grid: usize,
    ) -> Result<GpExplorer, JsError> {
        Self::build(family, lengthscale, n_anchors, d_xi, n_grid).map_err(js)
    }

    pub fn grid(&self) -> Vec<f64> {
        self.grid.coords().to_vec()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigsys.eigenvalues().to_vec()
    }

    /// The first `count` eigenfunctions on the grid, concatenated.
    pub fn eigenfunctions(&self, count: usize) -> Result<Vec<f64>, JsError> {
        let e = self.eigsys.eigenfunctions_on(&self.grid).map_err(js)?;
        let count = count.min(e.ncols());
        Ok((0..count)
            .flat_map(|i| e.column(i).iter().copied().collect::<Vec<_>>())
            .collect())
    }

    /// `n` prior draws on the grid, concatenated.
    pub fn prior_samples(&self, n: usize, seed: u32) -> Result<Vec<f64>, JsError> {
        self.expand_all(&self.normals(n, seed, 0xa1)).map_err(js)
    }

    #[wasm_bindgen(js_name = condition)]
    pub fn condition_js(
        &self,
        xs: &[f64],
        ys: &[f64],
        noise: f64,
        n_draws: usize,
        seed: u32,
    ) -> Result<Vec<f64>, JsError> {
        self.condition(xs, ys, noise, n_draws, seed).map_err(js)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_draws_are_seeded() {
        let g = GpExplorer::build("matern52", 0.2, 40, 12, 50).unwrap();
        let a = g.expand_all(&g.normals(3, 1, 0xa1)).unwrap();
        assert_eq!(a.len(), 150);
        assert_eq!(a, g.expand_all(&g.normals(3, 1, 0xa1)).unwrap());
        assert_ne!(a, g.expand_all(&g.normals(3, 2, 0xa1)).unwrap());
    }

    #[test]
    fn small_noise_interpolates() {
        let g = GpExplorer::build("rbf", 0.3, 60, 30, 11).unwrap();
        let out = g
            .condition(&[0.2, 0.5, 0.8], &[1.0, -0.5, 0.3], 1e-3, 2, 7)
            .unwrap();
        // Grid points 2, 5 and 8 are the observed inputs.
        for (i, y) in [(2, 1.0), (5, -0.5), (8, 0.3)] {
            assert!((out[i] - y).abs() < 0.02, "mean {} vs {y}", out[i]);
            assert!((out[11 + i] - y).abs() < 0.05);
        }
    }

    #[test]
    fn no_observations_gives_prior() {
        let g = GpExplorer::build("matern32", 0.2, 30, 10, 20).unwrap();
        let out = g.condition(&[], &[], 0.1, 1, 3).unwrap();
        assert!(out[..20].iter().all(|m| *m == 0.0));
    }

    #[test]
    fn bad_inputs() {
        assert!(GpExplorer::build("cosine", 0.2, 30, 10, 20).is_err());
        let g = GpExplorer::build("rbf", 0.2, 30, 10, 20).unwrap();
        assert!(g.condition(&[0.1], &[], 0.1, 1, 0).is_err());
        assert!(g.condition(&[0.1], &[1.0], 0.0, 1, 0).is_err());
    }
}
