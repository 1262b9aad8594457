#![allow(dead_code)]

use febm::data::{gen_quadratic, Dataset};
use febm::model::{FebmModel, Likelihood};
use febm::net::{MlpArch, MlpParams, OutputHead};
use febm::rng::{rng_for, Rng};
use febm::sampler::LangevinConfig;
use febm::spectral::{default_anchors, EigenSystem, Kernel, KernelFamily};
use febm::trainer::{train, TrainConfig, TrainOutcome};
use febm::Mesh;
use rand::Rng as _;
use rand_distr::StandardNormal;

pub fn normal_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn uniform_mesh_1d(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Mesh {
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Mesh::from_1d(&xs).unwrap()
}

/// Randomly perturbs every parameter, including biases and the tanh scale.
pub fn jitter(params: &mut MlpParams, rng: &mut Rng, scale: f64) {
    let flat: Vec<f64> = params
        .to_flat()
        .iter()
        .map(|v| v + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    params.set_flat(&flat).unwrap();
    params.tanh_scale = rng.random_range(0.5..3.0);
}

/// A small random model on a random 1-D eigensystem.
pub fn random_model(seed: u64, d_z: usize, d_xi: usize, likelihood: Likelihood) -> FebmModel {
    let mut rng = rng_for(seed, &[0xabc]);
    let family = [
        KernelFamily::Matern32,
        KernelFamily::Matern52,
        KernelFamily::Rbf,
    ][seed as usize % 3];
    let kernel = Kernel::new(
        family,
        rng.random_range(0.5..2.0),
        rng.random_range(0.2..1.0),
    )
    .unwrap();
    let anchors = uniform_mesh_1d(&mut rng, d_xi + 6, -1.0, 1.0);
    let eigsys = EigenSystem::nystrom_default(kernel, anchors, d_xi).unwrap();
    let mut model = FebmModel::init(eigsys, d_z, 8, 2, likelihood, seed).unwrap();
    jitter(&mut model.mu, &mut rng, 0.2);
    jitter(&mut model.pi, &mut rng, 0.2);
    model
}

/// `mu` is the identity map and `pi` vanishes, so decoded functions are
/// draws from the truncated Gaussian process.
pub fn gp_model(eigsys: EigenSystem, likelihood: Likelihood) -> FebmModel {
    let d = eigsys.truncation();
    let mut mu = MlpParams::zeros(MlpArch::plain(vec![d, d], OutputHead::Linear)).unwrap();
    for i in 0..d {
        mu.layers[0].weights[i * d + i] = 1.0;
    }
    let mut pi = MlpParams::zeros(MlpArch::plain(vec![d, 1], OutputHead::ScaledTanh)).unwrap();
    pi.tanh_scale = 0.0;
    FebmModel::new(eigsys, mu, pi, likelihood).unwrap()
}

/// Asymptotic Kolmogorov-Smirnov p-value of `samples` against `N(0, 1)`.
pub fn ks_standard_normal(samples: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = n01.cdf(x);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0f64, f64::max);
    let lam = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1.0f64).powf(k - 1.0) * (-2.0 * k * k * lam * lam).exp();
    }
    (d, p.clamp(0.0, 1.0))
}

/// Least-squares coefficient of `x^2` in a quadratic fit.
pub fn fitted_curvature(xs: &[f64], ys: &[f64]) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let a = DMatrix::from_fn(xs.len(), 3, |i, j| xs[i].powi(2 - j as i32));
    let b = DVector::from_column_slice(ys);
    (a.transpose() * &a)
        .lu()
        .solve(&(a.transpose() * b))
        .expect("design has full rank")[0]
}

/// Settings of the desk-scale Quadratic run.
pub struct DeskRun {
    pub train: Dataset,
    pub held_out: Dataset,
    pub outcome: TrainOutcome,
    pub lcfg: LangevinConfig,
}

pub fn desk_quadratic(seed: u64, epochs: usize) -> DeskRun {
    let data = gen_quadratic(400, 30, seed).unwrap();
    let (train_set, held_out) = data.split_at(200).unwrap();
    let anchors = default_anchors(&train_set.samples, 512).unwrap();
    let kernel = Kernel::new(KernelFamily::Matern52, 1.0, 0.5).unwrap();
    let eigsys = EigenSystem::nystrom_default(kernel, anchors, 10).unwrap();
    let model =
        FebmModel::init(eigsys, 2, 64, 3, Likelihood::gaussian(0.1).unwrap(), seed).unwrap();
    let tcfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let lcfg = LangevinConfig::default();
    let outcome = train(&model, &train_set.samples, &tcfg, &lcfg).unwrap();
    DeskRun {
        train: train_set,
        held_out,
        outcome,
        lcfg,
    }
}
