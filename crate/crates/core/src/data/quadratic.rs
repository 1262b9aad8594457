use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};

use super::preprocess::Dataset;
use crate::error::Result;
use crate::mesh::{FunctionSample, Mesh};
use crate::rng::rng_for;

/// Coefficient laws of `s a x^2 + b x + c + noise`, `s` uniform on `{-1, 1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticLaw {
    pub a_range: (f64, f64),
    pub bc_std: f64,
    pub noise_std: f64,
}

impl Default for QuadraticLaw {
    fn default() -> Self {
        Self {
            a_range: (0.5, 1.5),
            bc_std: 0.1,
            noise_std: 0.01,
        }
    }
}

impl QuadraticLaw {
    /// One function on `mesh`, returned with its coefficients.
    pub fn draw(
        &self,
        mesh: &Mesh,
        rng: &mut crate::rng::Rng,
    ) -> (FunctionSample, QuadraticCoefficients) {
        let a_law = Uniform::new_inclusive(self.a_range.0, self.a_range.1).expect("valid range");
        let bc = Normal::new(0.0, self.bc_std).expect("valid std");
        let noise = Normal::new(0.0, self.noise_std).expect("valid std");
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let a = a_law.sample(rng);
        let b = bc.sample(rng);
        let c = bc.sample(rng);
        let values = mesh
            .points()
            .map(|p| {
                let x = p[0];
                sign * a * x * x + b * x + c + noise.sample(rng)
            })
            .collect();
        (
            FunctionSample {
                mesh: mesh.clone(),
                values,
            },
            QuadraticCoefficients { sign, a, b, c },
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticCoefficients {
    pub sign: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Bimodal dataset of `n` quadratics on `m` evenly spaced points of `[-1, 1]`.
pub fn gen_quadratic(n: usize, m: usize, seed: u64) -> Result<Dataset> {
    let mesh = Mesh::linspace(-1.0, 1.0, m)?;
    let law = QuadraticLaw::default();
    let mut rng = rng_for(seed, &[0x9ad]);
    let samples = (0..n).map(|_| law.draw(&mesh, &mut rng).0).collect();
    Dataset::new("quadratic", samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded() {
        assert_eq!(
            gen_quadratic(20, 30, 4).unwrap(),
            gen_quadratic(20, 30, 4).unwrap()
        );
        assert_ne!(
            gen_quadratic(20, 30, 4).unwrap(),
            gen_quadratic(20, 30, 5).unwrap()
        );
    }

    #[test]
    fn sign_balance() {
        // 400 fair coin flips: [0.4, 0.6] is about four standard deviations.
        let d = gen_quadratic(400, 30, 11).unwrap();
        let pos = d
            .samples
            .iter()
            .filter(|s| s.values[0] + s.values[29] - 2.0 * s.values[15] > 0.0)
            .count() as f64
            / 400.0;
        assert!((0.4..=0.6).contains(&pos), "{pos}");
    }

    #[test]
    fn values_within_envelope() {
        let law = QuadraticLaw::default();
        let mesh = Mesh::linspace(-1.0, 1.0, 30).unwrap();
        let mut rng = rng_for(2, &[]);
        for _ in 0..400 {
            let (s, k) = law.draw(&mesh, &mut rng);
            let bound = k.a + k.b.abs() + k.c.abs() + 5.0 * law.noise_std;
            assert!(s.values.iter().all(|v| v.abs() <= bound));
        }
    }
}
