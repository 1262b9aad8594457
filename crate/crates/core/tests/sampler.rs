mod common;

use common::{gp_model, ks_standard_normal};
use febm::model::{FebmModel, Likelihood};
use febm::net::{MlpArch, MlpParams, OutputHead};
use febm::rng::rng_for;
use febm::sampler::{
    langevin_step, sample_conditional_z, sample_joint, Blocks, ChainState, JointEnergy,
    LangevinConfig, ReplayBuffer, StateGrad,
};
use febm::spectral::{EigenSystem, Kernel, KernelFamily};
use febm::Mesh;
use nalgebra::{DMatrix, DVector};

struct Flat;

impl JointEnergy for Flat {
    fn state_grad(&self, y: &[f64], z: &[f64]) -> febm::Result<StateGrad> {
        Ok(StateGrad {
            energy: 0.0,
            d_y: vec![0.0; y.len()],
            d_z: vec![0.0; z.len()],
        })
    }
}

#[test]
fn flat_energy_increments_are_gaussian() {
    let step = 0.01;
    let mut rng = rng_for(21, &[]);
    let mut s = ChainState {
        y: vec![0.0],
        z: vec![0.0],
    };
    let mut incs = Vec::new();
    for _ in 0..10_000 {
        let before = (s.y[0], s.z[0]);
        langevin_step(&Flat, &mut s, step, Blocks::Joint, false, &mut rng).unwrap();
        incs.push((s.y[0] - before.0) / step.sqrt());
        incs.push((s.z[0] - before.1) / step.sqrt());
    }
    let (_, p) = ks_standard_normal(&incs);
    assert!(p > 0.01, "p = {p}");
}

fn zero_model(d_z: usize, sigma: f64) -> FebmModel {
    let k = Kernel::new(KernelFamily::Matern52, 1.0, 0.4).unwrap();
    let es = EigenSystem::nystrom_default(k, Mesh::linspace(0.0, 1.0, 8).unwrap(), 4).unwrap();
    let mu = MlpParams::zeros(MlpArch::residual(d_z, 8, 2, 4, OutputHead::Linear)).unwrap();
    let pi = MlpParams::zeros(MlpArch::residual(d_z, 8, 2, 1, OutputHead::ScaledTanh)).unwrap();
    FebmModel::new(es, mu, pi, Likelihood::gaussian(sigma).unwrap()).unwrap()
}

#[test]
fn flat_model_joint_samples_have_prior_moments() {
    let model = zero_model(2, 1.0);
    let mesh = model.prepare(&Mesh::from_1d(&[0.3]).unwrap()).unwrap();
    let mut buffer = ReplayBuffer::new(16, 0.0).unwrap();
    let cfg = LangevinConfig {
        noise_seed: 4,
        ..LangevinConfig::default()
    };
    let n = 10_000;
    let states = sample_joint(&model, &mesh, &mut buffer, &cfg, n).unwrap();
    assert_eq!(buffer.len(), 16);
    for k in 0..2 {
        let vals: Vec<f64> = states.iter().map(|s| s.z[k]).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}

#[test]
fn linear_gaussian_conditional_matches_closed_form() {
    let k = Kernel::new(KernelFamily::Rbf, 1.0, 0.4).unwrap();
    let es = EigenSystem::nystrom_default(k, Mesh::linspace(0.0, 1.0, 8).unwrap(), 3).unwrap();
    let sigma = 0.5;
    let mut model = gp_model(es, Likelihood::gaussian(sigma).unwrap());
    // Scale the identity map down to mix within the step budget.
    for w in model.mu.layers[0].weights.iter_mut() {
        *w *= 0.8;
    }
    let x = Mesh::from_1d(&[0.1, 0.45, 0.9]).unwrap();
    let pm = model.prepare(&x).unwrap();
    let y = [0.4, -0.2, 0.7];
    let a = &pm.phi * 0.8;
    let prec = DMatrix::identity(3, 3) + a.transpose() * &a / (sigma * sigma);
    let cov = prec.clone().try_inverse().unwrap();
    let mean = &cov * a.transpose() * DVector::from_column_slice(&y) / (sigma * sigma);

    let cfg = LangevinConfig {
        step_size: 1e-3,
        n_steps: 10_000,
        noise_seed: 17,
    };
    let n = 2000;
    let zs = sample_conditional_z(&model, &y, &pm, &cfg, n).unwrap();
    for i in 0..3 {
        let vals: Vec<f64> = zs.iter().map(|z| z[i]).collect();
        let m = vals.iter().sum::<f64>() / n as f64;
        let v = vals.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = cov[(i, i)].sqrt();
        assert!(
            (m - mean[i]).abs() < 0.1 * sd.max(mean[i].abs()),
            "mean {i}: {m} vs {}",
            mean[i]
        );
        assert!(
            (v / cov[(i, i)] - 1.0).abs() < 0.1,
            "var {i}: {v} vs {}",
            cov[(i, i)]
        );
    }
}

#[test]
fn buffer_states_seed_later_chains() {
    let model = zero_model(2, 1.0);
    let mesh = model.prepare(&Mesh::from_1d(&[0.3, 0.6]).unwrap()).unwrap();
    let other = model.prepare(&Mesh::from_1d(&[0.1]).unwrap()).unwrap();
    let mut buffer = ReplayBuffer::new(100, 1.0).unwrap();
    let cfg = LangevinConfig {
        n_steps: 0,
        ..LangevinConfig::default()
    };
    let first = sample_joint(&model, &mesh, &mut buffer, &cfg, 3).unwrap();
    // With zero steps every reused chain returns a buffered state unchanged.
    let second = sample_joint(&model, &mesh, &mut buffer, &cfg.with_seed(1), 5).unwrap();
    assert!(second.iter().all(|s| first.contains(s)));
    // A mesh with no entries falls back to fresh states of the right size.
    let fresh = sample_joint(&model, &other, &mut buffer, &cfg, 2).unwrap();
    assert!(fresh.iter().all(|s| s.y.len() == 1));
}
