//! The functional energy-based model: a Gaussian-process basis whose
//! coefficients are produced by a network of a latent vector, with a learned
//! energy on the latent.
//!
//! The unnormalized joint density on a mesh `X` is `exp(-E(Y, Z; X))` with
//!
//! ```text
//! E(Y, Z; X) = -log L(Y; g(mu(Z)), X) + pi(Z) + |Z|^2 / 2
//! ```
//!
//! where `g` is the truncated Karhunen-Loeve map of the eigensystem.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::mesh::{Mesh, MeshId};
use crate::net::{MlpArch, MlpParams, OutputHead};
use crate::spectral::{apply_basis, EigenSystem};
use crate::textio::LineReader;

const LN_2: f64 = std::f64::consts::LN_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    /// Independent `N(f(x_i), sigma^2)` observations.
    Gaussian { sigma: f64 },
    /// Independent continuous-Bernoulli observations on `[0, 1]` with
    /// parameter `logistic(f(x_i))`.
    ContinuousBernoulli,
}

impl Likelihood {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!(
                "Gaussian sigma must be positive, got {sigma}"
            )));
        }
        Ok(Likelihood::Gaussian { sigma })
    }

    /// Whether observations live in `[0, 1]`.
    pub fn is_bounded(&self) -> bool {
        matches!(self, Likelihood::ContinuousBernoulli)
    }

    fn check_targets(&self, targets: &[f64]) -> Result<()> {
        if let Likelihood::ContinuousBernoulli = self {
            if let Some(bad) = targets.iter().find(|y| !(0.0..=1.0).contains(*y)) {
                return Err(invalid(format!(
                    "continuous-Bernoulli observation {bad} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Log-density of one observation `y` given function value `f`, with its
    /// derivatives with respect to `f` and `y`.
    #[inline]
    fn point(&self, f: f64, y: f64) -> (f64, f64, f64) {
        match *self {
            Likelihood::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                let r = y - f;
                (
                    -0.5 * r * r / s2 - 0.5 * (LN_2PI + s2.ln()),
                    r / s2,
                    -r / s2,
                )
            }
            Likelihood::ContinuousBernoulli => {
                // y log(l) + (1 - y) log(1 - l) = y f - softplus(f) for l = logistic(f).
                let sp = softplus(f);
                let (lc, dlc) = log_c_of_logit(f);
                (y * f - sp + lc, y - logistic(f) + dlc, f)
            }
        }
    }

    /// `sum_i log l(y_i; f_i)`.
    pub fn log_lik(&self, values: &[f64], targets: &[f64]) -> Result<f64> {
        if values.len() != targets.len() {
            return Err(invalid(format!(
                "{} function values but {} targets",
                values.len(),
                targets.len()
            )));
        }
        self.check_targets(targets)?;
        Ok(values
            .iter()
            .zip(targets)
            .map(|(&f, &y)| self.point(f, y).0)
            .sum())
    }
}

#[inline]
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// `log C(lambda)` for the continuous Bernoulli, `C = 2 atanh(1 - 2 lambda) / (1 - 2 lambda)`.
pub fn log_c(lambda: f64) -> f64 {
    let t = 1.0 - 2.0 * lambda;
    if (lambda - 0.5).abs() < 1e-4 {
        // atanh(t)/t = 1 + t^2/3 + t^4/5 + ...
        LN_2 + t * t / 3.0 + t.powi(4) * (1.0 / 5.0 - 1.0 / 18.0)
    } else {
        (2.0 * t.atanh() / t).ln()
    }
}

/// `log C` and its derivative as functions of the logit `f`, where
/// `C = f / tanh(f / 2)`.
#[inline]
fn log_c_of_logit(f: f64) -> (f64, f64) {
    if f.abs() < 4e-4 {
        let f2 = f * f;
        (
            LN_2 + f2 / 12.0 - 7.0 * f2 * f2 / 1440.0,
            f / 6.0 - 7.0 * f * f2 / 360.0,
        )
    } else {
        let a = f.abs();
        // log(a / tanh(a/2)) = log a - log tanh(a/2); tanh(a/2) = (1 - e^-a) / (1 + e^-a)
        let e = (-a).exp();
        let log_tanh = (-e).ln_1p() - e.ln_1p();
        (a.ln() - log_tanh, 1.0 / f - 1.0 / f.sinh())
    }
}

/// Design matrix of the truncated expansion on one mesh, ready for repeated
/// energy evaluations.
#[derive(Debug, Clone)]
pub struct PreparedMesh {
    pub id: MeshId,
    pub mesh: Mesh,
    /// `M x d_xi`, `phi[q, i] = sqrt(lambda_i) e_i(x_q)`.
    pub phi: DMatrix<f64>,
}

impl PreparedMesh {
    pub fn len(&self) -> usize {
        self.mesh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mesh.is_empty()
    }
}

/// Energy value with its gradients.
#[derive(Debug, Clone)]
pub struct EnergyGrad {
    pub energy: f64,
    pub d_y: Vec<f64>,
    pub d_z: Vec<f64>,
    /// Present when parameter gradients were requested.
    pub d_params: Option<ModelGrad>,
}

/// Parameter-shaped gradient for both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub mu: MlpParams,
    pub pi: MlpParams,
}

impl ModelGrad {
    pub fn zeros_for(model: &FebmModel) -> Self {
        Self {
            mu: model.mu.zeros_like(),
            pi: model.pi.zeros_like(),
        }
    }

    pub fn add_scaled(&mut self, other: &ModelGrad, alpha: f64) {
        self.mu.add_scaled(&other.mu, alpha);
        self.pi.add_scaled(&other.pi, alpha);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.mu.scale(alpha);
        self.pi.scale(alpha);
    }

    pub fn max_abs(&self) -> f64 {
        self.mu
            .to_flat()
            .iter()
            .chain(self.pi.to_flat().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Quadrature settings for [`FebmModel::finite_dim_density`]: a trapezoid
/// rule on `[-half_width, half_width]` in every latent coordinate.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub nodes_per_dim: usize,
    pub half_width: f64,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            nodes_per_dim: 401,
            half_width: 8.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FebmModel {
    pub eigsys: EigenSystem,
    /// Latent to expansion coefficients, `d_z -> d_xi`, linear head.
    pub mu: MlpParams,
    /// Latent energy, `d_z -> 1`, scaled-tanh head.
    pub pi: MlpParams,
    pub likelihood: Likelihood,
}

impl FebmModel {
    pub fn new(
        eigsys: EigenSystem,
        mu: MlpParams,
        pi: MlpParams,
        likelihood: Likelihood,
    ) -> Result<Self> {
        if mu.input_dim() != pi.input_dim() {
            return Err(invalid(format!(
                "coefficient network takes {} latents but energy network takes {}",
                mu.input_dim(),
                pi.input_dim()
            )));
        }
        if mu.output_dim() != eigsys.truncation() {
            return Err(invalid(format!(
                "coefficient network outputs {} values but the eigensystem keeps {}",
                mu.output_dim(),
                eigsys.truncation()
            )));
        }
        if pi.output_dim() != 1 {
            return Err(invalid("energy network must have a scalar output"));
        }
        if mu.head() != OutputHead::Linear {
            return Err(invalid("coefficient network must use a linear head"));
        }
        Ok(Self {
            eigsys,
            mu,
            pi,
            likelihood,
        })
    }

    /// Randomly initialized model with residual networks of the given width
    /// and depth on top of an existing eigensystem.
    pub fn init(
        eigsys: EigenSystem,
        d_z: usize,
        width: usize,
        n_hidden: usize,
        likelihood: Likelihood,
        seed: u64,
    ) -> Result<Self> {
        let d_xi = eigsys.truncation();
        let mu = MlpParams::init(
            MlpArch::residual(d_z, width, n_hidden, d_xi, OutputHead::Linear),
            crate::rng::derive(seed, &[1]),
        )?;
        let pi = MlpParams::init(
            MlpArch::residual(d_z, width, n_hidden, 1, OutputHead::ScaledTanh),
            crate::rng::derive(seed, &[2]),
        )?;
        Self::new(eigsys, mu, pi, likelihood)
    }

    pub fn d_z(&self) -> usize {
        self.mu.input_dim()
    }

    pub fn d_xi(&self) -> usize {
        self.mu.output_dim()
    }

    pub fn prepare(&self, mesh: &Mesh) -> Result<PreparedMesh> {
        Ok(PreparedMesh {
            id: mesh.id(),
            mesh: mesh.clone(),
            phi: self.eigsys.basis(mesh)?,
        })
    }

    fn check_z(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.d_z() {
            return Err(invalid(format!(
                "latent has length {}, model expects {}",
                z.len(),
                self.d_z()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(invalid("latent must be finite"));
        }
        Ok(())
    }

    /// Expansion coefficients `mu(Z)`.
    pub fn coefficients(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_z(z)?;
        self.mu.forward(z)
    }

    /// The function `g(mu(Z))` evaluated at `queries`.
    pub fn decode(&self, z: &[f64], queries: &Mesh) -> Result<Vec<f64>> {
        let xi = self.coefficients(z)?;
        self.eigsys.kl_expand(&xi, queries)
    }

    pub fn decode_prepared(&self, z: &[f64], pm: &PreparedMesh) -> Result<Vec<f64>> {
        let xi = self.coefficients(z)?;
        Ok(apply_basis(&pm.phi, &xi))
    }

    /// Latent energy `pi(Z)`.
    pub fn latent_energy(&self, z: &[f64]) -> Result<f64> {
        self.check_z(z)?;
        Ok(self.pi.forward(z)?[0])
    }

    /// `E(Y, Z; X)`; the density is proportional to `exp(-E)`.
    pub fn neg_log_unnorm(&self, y: &[f64], z: &[f64], x: &Mesh) -> Result<f64> {
        let pm = self.prepare(x)?;
        self.energy(y, z, &pm)
    }

    pub fn energy(&self, y: &[f64], z: &[f64], pm: &PreparedMesh) -> Result<f64> {
        if y.len() != pm.len() {
            return Err(invalid(format!(
                "{} observations on a mesh of {} points",
                y.len(),
                pm.len()
            )));
        }
        let f = self.decode_prepared(z, pm)?;
        let ll = self.likelihood.log_lik(&f, y)?;
        let prior = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
        Ok(-ll + self.pi.forward(z)?[0] + prior)
    }

    /// Exact gradients of [`Self::energy`] with respect to `Y`, `Z` and,
    /// when `with_params`, both networks.
    pub fn grad_energy(
        &self,
        y: &[f64],
        z: &[f64],
        pm: &PreparedMesh,
        with_params: bool,
    ) -> Result<EnergyGrad> {
        if y.len() != pm.len() {
            return Err(invalid(format!(
                "{} observations on a mesh of {} points",
                y.len(),
                pm.len()
            )));
        }
        self.check_z(z)?;
        self.likelihood.check_targets(y)?;
        let mut ll = 0.0;
        let mut d_y = vec![0.0; y.len()];
        let phi = &pm.phi;
        let likelihood = self.likelihood;
        let upstream_xi = |xi: &[f64]| {
            let f = apply_basis(phi, xi);
            let mut d_f = DVector::zeros(f.len());
            for (i, (&fi, &yi)) in f.iter().zip(y).enumerate() {
                let (l, dl_df, dl_dy) = likelihood.point(fi, yi);
                ll += l;
                d_f[i] = -dl_df;
                d_y[i] = -dl_dy;
            }
            (phi.tr_mul(&d_f)).as_slice().to_vec()
        };
        let (mu_grad, d_z_mu) = if with_params {
            let (_, gp) = self.mu.forward_backward(z, upstream_xi)?;
            (Some(gp.grad_params), gp.grad_input)
        } else {
            let (_, gi) = self.mu.forward_input_grad(z, upstream_xi)?;
            (None, gi)
        };
        let one = |_: &[f64]| vec![1.0];
        let (pi_val, pi_grad, d_z_pi) = if with_params {
            let (out, gp) = self.pi.forward_backward(z, one)?;
            (out[0], Some(gp.grad_params), gp.grad_input)
        } else {
            let (out, gi) = self.pi.forward_input_grad(z, one)?;
            (out[0], None, gi)
        };
        let prior = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
        let d_z = z
            .iter()
            .zip(d_z_mu.iter().zip(&d_z_pi))
            .map(|(zi, (a, b))| zi + a + b)
            .collect();
        Ok(EnergyGrad {
            energy: -ll + pi_val + prior,
            d_y,
            d_z,
            d_params: match (mu_grad, pi_grad) {
                (Some(mu), Some(pi)) => Some(ModelGrad { mu, pi }),
                _ => None,
            },
        })
    }

    /// Convenience wrapper of [`Self::grad_energy`] on an unprepared mesh.
    pub fn grad_energy_on(&self, y: &[f64], z: &[f64], x: &Mesh) -> Result<EnergyGrad> {
        let pm = self.prepare(x)?;
        self.grad_energy(y, z, &pm, true)
    }

    /// Unnormalized finite-dimensional marginal `int exp(-E(Y, z; X)) dz`,
    /// by tensor trapezoid quadrature. Only for `d_z <= 2`.
    pub fn finite_dim_density(&self, y: &[f64], x: &Mesh, quad: Quadrature) -> Result<f64> {
        let d_z = self.d_z();
        if d_z > 2 {
            return Err(Error::Unsupported(format!(
                "quadrature density needs d_z <= 2, model has {d_z}"
            )));
        }
        if quad.nodes_per_dim < 64 {
            return Err(invalid("quadrature needs at least 64 nodes per dimension"));
        }
        let pm = self.prepare(x)?;
        let n = quad.nodes_per_dim;
        let h = 2.0 * quad.half_width / (n - 1) as f64;
        let node = |i: usize| -quad.half_width + h * i as f64;
        let weight = |i: usize| if i == 0 || i == n - 1 { 0.5 * h } else { h };
        let mut total = 0.0;
        let mut z = vec![0.0; d_z];
        let count = n.pow(d_z as u32);
        for flat in 0..count {
            let mut w = 1.0;
            let mut rem = flat;
            for zk in z.iter_mut() {
                let i = rem % n;
                rem /= n;
                *zk = node(i);
                w *= weight(i);
            }
            total += w * (-self.energy(y, &z, &pm)?).exp();
        }
        Ok(total)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut m = BufWriter::new(File::create(dir.join("manifest.txt"))?);
        writeln!(m, "febm-model 1")?;
        match self.likelihood {
            Likelihood::Gaussian { sigma } => writeln!(m, "likelihood gaussian {sigma:e}")?,
            Likelihood::ContinuousBernoulli => writeln!(m, "likelihood continuous_bernoulli")?,
        }
        writeln!(m, "d_z {}", self.d_z())?;
        writeln!(m, "d_xi {}", self.d_xi())?;
        m.flush()?;
        self.eigsys
            .write_to(BufWriter::new(File::create(dir.join("eigsys.txt"))?))?;
        self.mu
            .write_to(BufWriter::new(File::create(dir.join("mu.txt"))?))?;
        self.pi
            .write_to(BufWriter::new(File::create(dir.join("pi.txt"))?))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let open = |name: &str| -> Result<BufReader<File>> {
            File::open(dir.join(name)).map(BufReader::new).map_err(|e| {
                Error::InvalidInput(format!("cannot open {}: {e}", dir.join(name).display()))
            })
        };
        let (likelihood, d_z, d_xi) = read_manifest(open("manifest.txt")?)?;
        let eigsys = EigenSystem::read_from(open("eigsys.txt")?)?;
        let mu = MlpParams::read_from(open("mu.txt")?)?;
        let pi = MlpParams::read_from(open("pi.txt")?)?;
        let model = Self::new(eigsys, mu, pi, likelihood)?;
        if model.d_z() != d_z || model.d_xi() != d_xi {
            return Err(Error::InvalidInput(
                "manifest dimensions disagree with the stored networks".into(),
            ));
        }
        Ok(model)
    }
}

fn read_manifest<R: BufRead>(r: R) -> Result<(Likelihood, usize, usize)> {
    let mut rd = LineReader::new(r);
    rd.keyed("febm-model")?;
    let lk = rd.keyed("likelihood")?;
    let likelihood = match lk.first().map(String::as_str) {
        Some("gaussian") => {
            let s = lk.get(1).ok_or_else(|| rd.err("missing Gaussian sigma"))?;
            Likelihood::gaussian(rd.parse(s)?)?
        }
        Some("continuous_bernoulli") => Likelihood::ContinuousBernoulli,
        _ => return Err(rd.err("unknown likelihood")),
    };
    let dz = rd.keyed("d_z")?;
    let d_z = rd.parse(dz.first().ok_or_else(|| rd.err("missing d_z"))?)?;
    let dx = rd.keyed("d_xi")?;
    let d_xi = rd.parse(dx.first().ok_or_else(|| rd.err("missing d_xi"))?)?;
    Ok((likelihood, d_z, d_xi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{Kernel, KernelFamily};

    fn eigsys(l: usize, d: usize) -> EigenSystem {
        let k = Kernel::new(KernelFamily::Matern52, 1.0, 0.4).unwrap();
        EigenSystem::nystrom_default(k, Mesh::linspace(-1.0, 1.0, l).unwrap(), d).unwrap()
    }

    fn zero_model(d_z: usize, l: usize, d: usize, lik: Likelihood) -> FebmModel {
        let es = eigsys(l, d);
        let mu = MlpParams::zeros(MlpArch::residual(d_z, 4, 2, d, OutputHead::Linear)).unwrap();
        let pi = MlpParams::zeros(MlpArch::residual(d_z, 4, 2, 1, OutputHead::ScaledTanh)).unwrap();
        FebmModel::new(es, mu, pi, lik).unwrap()
    }

    #[test]
    fn gaussian_log_lik_at_mean() {
        let lik = Likelihood::gaussian(1.0).unwrap();
        let v = lik.log_lik(&[0.3], &[0.3]).unwrap();
        assert!((v + 0.918_938_533_204_672_7).abs() < 1e-14);
    }

    #[test]
    fn continuous_bernoulli_at_half() {
        // lambda = 1/2 is the uniform density
        let lik = Likelihood::ContinuousBernoulli;
        for y in [0.0, 0.2, 0.5, 1.0] {
            assert!((lik.log_lik(&[0.0], &[y]).unwrap()).abs() < 1e-14);
        }
        assert!(lik.log_lik(&[0.0], &[1.2]).is_err());
        assert!(lik.log_lik(&[0.0], &[-0.1]).is_err());
    }

    #[test]
    fn log_c_branches_agree() {
        for lam in [
            0.5f64 - 2e-4,
            0.5 - 9e-5,
            0.5 + 5e-5,
            0.5 + 1.5e-4,
            0.3,
            0.9,
        ] {
            let f = (lam / (1.0 - lam)).ln();
            assert!((log_c(lam) - log_c_of_logit(f).0).abs() < 1e-9, "{lam}");
        }
        assert!((log_c(0.5) - LN_2).abs() < 1e-15);
    }

    #[test]
    fn log_c_derivative_matches_difference() {
        for f in [-7.0, -0.3, -1e-4, 0.0, 2e-4, 5e-4, 1.3, 20.0] {
            let h = 1e-6;
            let fd = (log_c_of_logit(f + h).0 - log_c_of_logit(f - h).0) / (2.0 * h);
            assert!((fd - log_c_of_logit(f).1).abs() < 1e-7, "{f}");
        }
    }

    #[test]
    fn energy_of_zero_model() {
        let m = zero_model(2, 5, 3, Likelihood::gaussian(1.0).unwrap());
        let x = Mesh::from_1d(&[0.2]).unwrap();
        let e = m.neg_log_unnorm(&[0.0], &[0.0, 0.0], &x).unwrap();
        assert!((e - 0.918_938_533_204_672_7).abs() < 1e-14);
        let z = [0.6, -0.8];
        let z2 = [1.2, -1.6];
        let diff =
            m.neg_log_unnorm(&[0.0], &z2, &x).unwrap() - m.neg_log_unnorm(&[0.0], &z, &x).unwrap();
        assert!((diff - 1.5).abs() < 1e-14);
    }

    #[test]
    fn prior_only_latent_gradient() {
        let m = zero_model(3, 5, 3, Likelihood::gaussian(0.5).unwrap());
        let x = Mesh::linspace(-1.0, 1.0, 4).unwrap();
        let z = [0.1, -2.0, 0.7];
        let g = m.grad_energy_on(&[0.3, 0.1, -0.2, 0.0], &z, &x).unwrap();
        assert_eq!(g.d_z, z.to_vec());
    }

    #[test]
    fn gaussian_observation_gradient() {
        let es = eigsys(6, 4);
        let m = FebmModel::init(es, 2, 5, 2, Likelihood::gaussian(0.3).unwrap(), 7).unwrap();
        let x = Mesh::linspace(-1.0, 1.0, 5).unwrap();
        let z = [0.4, -0.1];
        let y = [0.5, -0.2, 0.1, 0.9, 0.0];
        let f = m.decode(&z, &x).unwrap();
        let g = m.grad_energy_on(&y, &z, &x).unwrap();
        for i in 0..5 {
            assert!((g.d_y[i] - (y[i] - f[i]) / 0.09).abs() < 1e-12);
        }
    }

    #[test]
    fn quadrature_rejects_large_latent() {
        let m = zero_model(3, 5, 3, Likelihood::gaussian(1.0).unwrap());
        let x = Mesh::from_1d(&[0.0]).unwrap();
        assert!(matches!(
            m.finite_dim_density(&[0.0], &x, Quadrature::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn dimension_checks() {
        let es = eigsys(6, 4);
        let mu = MlpParams::zeros(MlpArch::plain(vec![2, 3], OutputHead::Linear)).unwrap();
        let pi = MlpParams::zeros(MlpArch::plain(vec![2, 1], OutputHead::ScaledTanh)).unwrap();
        assert!(FebmModel::new(es, mu, pi, Likelihood::ContinuousBernoulli).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let es = eigsys(6, 4);
        let m = FebmModel::init(es, 2, 5, 2, Likelihood::gaussian(0.05).unwrap(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = FebmModel::load(dir.path()).unwrap();
        assert_eq!(back.mu, m.mu);
        assert_eq!(back.pi, m.pi);
        assert_eq!(back.likelihood, m.likelihood);
        assert_eq!(back.eigsys.eigenvalues(), m.eigsys.eigenvalues());
    }
}
