use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Matern32,
    Matern52,
    Rbf,
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::Matern32 => "matern32",
            KernelFamily::Matern52 => "matern52",
            KernelFamily::Rbf => "rbf",
        })
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "matern32" => Ok(KernelFamily::Matern32),
            "matern52" => Ok(KernelFamily::Matern52),
            "rbf" | "gaussian" => Ok(KernelFamily::Rbf),
            other => Err(invalid(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// Stationary covariance kernel `k(x, y) = variance * shape(|x - y| / lengthscale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    family: KernelFamily,
    variance: f64,
    lengthscale: f64,
}

impl Kernel {
    pub fn new(family: KernelFamily, variance: f64, lengthscale: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(invalid(format!(
                "kernel variance must be positive, got {variance}"
            )));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(invalid(format!(
                "kernel lengthscale must be positive, got {lengthscale}"
            )));
        }
        Ok(Self {
            family,
            variance,
            lengthscale,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Kernel value as a function of Euclidean distance.
    pub fn of_distance(&self, r: f64) -> f64 {
        let s = r / self.lengthscale;
        let shape = match self.family {
            KernelFamily::Rbf => (-0.5 * s * s).exp(),
            KernelFamily::Matern32 => {
                let a = 3f64.sqrt() * s;
                (1.0 + a) * (-a).exp()
            }
            KernelFamily::Matern52 => {
                let a = 5f64.sqrt() * s;
                (1.0 + a + a * a / 3.0) * (-a).exp()
            }
        };
        self.variance * shape
    }

    /// `k(x, y)`; both points must be finite and of equal dimension.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(invalid("kernel arguments have different dimensions"));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(invalid("kernel arguments must be finite"));
        }
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        self.of_distance(r2.sqrt())
    }

    /// Gram matrix `K(X, X)`.
    pub fn gram(&self, xs: &Mesh) -> Result<DMatrix<f64>> {
        if xs.is_empty() {
            return Err(invalid("gram matrix needs at least one point"));
        }
        let n = xs.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.variance;
            for j in 0..i {
                let v = self.eval_unchecked(xs.point(i), xs.point(j));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Cross-covariance `K(A, B)` with one row per point of `a`.
    pub fn cross(&self, a: &Mesh, b: &Mesh) -> Result<DMatrix<f64>> {
        if a.dim() != b.dim() {
            return Err(invalid(format!(
                "mesh dimensions differ: {} vs {}",
                a.dim(),
                b.dim()
            )));
        }
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
            self.eval_unchecked(a.point(i), b.point(j))
        }))
    }
}
