mod common;

use common::{gp_model, normal_vec, random_model, uniform_mesh_1d};
use febm::model::{log_c, FebmModel, Likelihood, Quadrature};
use febm::net::{MlpArch, MlpParams, OutputHead};
use febm::rng::rng_for;
use febm::spectral::{EigenSystem, Kernel, KernelFamily};
use febm::Mesh;
use proptest::prelude::*;

#[test]
fn continuous_bernoulli_integrates_to_one() {
    for lambda in [0.3, 0.5, 0.5 + 5e-5, 0.93] {
        let c = log_c(lambda).exp();
        // Simpson's rule on [0, 1].
        let n = 2000;
        let h = 1.0 / n as f64;
        let dens = |y: f64| c * lambda.powf(y) * (1.0 - lambda).powf(1.0 - y);
        let mut s = dens(0.0) + dens(1.0);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * dens(i as f64 * h);
        }
        assert!(
            (s * h / 3.0 - 1.0).abs() < 1e-8,
            "lambda {lambda}: {}",
            s * h / 3.0
        );
    }
    assert!((log_c(0.5) - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn continuous_bernoulli_log_lik_matches_formula() {
    let lik = Likelihood::ContinuousBernoulli;
    for (f, y) in [(-2.0f64, 0.1), (0.7, 0.9), (3.0, 0.5), (1e-5, 0.3)] {
        let lam = 1.0 / (1.0 + (-f).exp());
        let direct = y * lam.ln() + (1.0 - y) * (1.0 - lam).ln() + log_c(lam);
        assert!((lik.log_lik(&[f], &[y]).unwrap() - direct).abs() < 1e-9);
    }
}

#[test]
fn zero_networks_give_independent_gaussians() {
    let k = Kernel::new(KernelFamily::Matern52, 1.0, 0.4).unwrap();
    let es = EigenSystem::nystrom_default(k, Mesh::linspace(0.0, 1.0, 8).unwrap(), 4).unwrap();
    let mu = MlpParams::zeros(MlpArch::residual(1, 4, 2, 4, OutputHead::Linear)).unwrap();
    let pi = MlpParams::zeros(MlpArch::residual(1, 4, 2, 1, OutputHead::ScaledTanh)).unwrap();
    let model = FebmModel::new(es, mu, pi, Likelihood::gaussian(1.0).unwrap()).unwrap();
    let x = Mesh::from_1d(&[0.2, 0.6]).unwrap();
    let quad = Quadrature::default();
    let reference = model.finite_dim_density(&[0.0, 0.0], &x, quad).unwrap();
    for y in [[0.5, -1.0], [2.0, 0.3], [-1.2, -0.4]] {
        let p = model.finite_dim_density(&y, &x, quad).unwrap();
        let gauss = (-(y[0] * y[0] + y[1] * y[1]) / 2.0).exp();
        assert!((p / reference - gauss).abs() < 1e-12);
    }
}

#[test]
fn quadrature_density_matches_linear_gaussian_marginal() {
    // mu linear in a scalar latent: Y ~ N(0, a a^T + sigma^2 I) after
    // integrating Z, up to the (2 pi)^{1/2} latent normalizer.
    let k = Kernel::new(KernelFamily::Rbf, 1.0, 0.5).unwrap();
    let es = EigenSystem::nystrom_default(k, Mesh::linspace(0.0, 1.0, 6).unwrap(), 3).unwrap();
    let mut mu = MlpParams::zeros(MlpArch::plain(vec![1, 3], OutputHead::Linear)).unwrap();
    mu.layers[0].weights = vec![0.8, -0.5, 0.3];
    let mut pi = MlpParams::zeros(MlpArch::plain(vec![1, 1], OutputHead::ScaledTanh)).unwrap();
    pi.tanh_scale = 0.0;
    let sigma = 0.4;
    let model = FebmModel::new(es, mu, pi, Likelihood::gaussian(sigma).unwrap()).unwrap();
    let x = Mesh::from_1d(&[0.1, 0.8]).unwrap();
    let a = model.decode(&[1.0], &x).unwrap();
    let cov = nalgebra::Matrix2::new(
        a[0] * a[0] + sigma * sigma,
        a[0] * a[1],
        a[1] * a[0],
        a[1] * a[1] + sigma * sigma,
    );
    let inv = cov.try_inverse().unwrap();
    let y = nalgebra::Vector2::new(0.3, -0.2);
    let normal = (-0.5 * (y.transpose() * inv * y)[0]).exp()
        / (2.0 * std::f64::consts::PI * cov.determinant().sqrt());
    let p = model
        .finite_dim_density(&[0.3, -0.2], &x, Quadrature::default())
        .unwrap();
    let expect = normal * (2.0 * std::f64::consts::PI).sqrt();
    assert!((p - expect).abs() / expect < 1e-8, "{p} vs {expect}");
}

#[test]
fn degenerate_model_decodes_on_the_karhunen_loeve_basis() {
    let k = Kernel::new(KernelFamily::Matern32, 1.0, 0.3).unwrap();
    let es = EigenSystem::nystrom_default(k, Mesh::linspace(0.0, 1.0, 10).unwrap(), 4).unwrap();
    let model = gp_model(es.clone(), Likelihood::gaussian(0.1).unwrap());
    let q = Mesh::linspace(-0.5, 1.5, 33).unwrap();
    let z = [0.3, -1.1, 0.5, 2.0];
    assert_eq!(model.decode(&z, &q).unwrap(), es.kl_expand(&z, &q).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn latent_and_observation_gradients_match_differences(seed in 0u64..10_000) {
        let lik = if seed % 2 == 0 { Likelihood::gaussian(0.3).unwrap() } else { Likelihood::ContinuousBernoulli };
        let model = random_model(seed, 3, 5, lik);
        let mut rng = rng_for(seed, &[2]);
        let x = uniform_mesh_1d(&mut rng, 4, -1.0, 1.0);
        let pm = model.prepare(&x).unwrap();
        let y: Vec<f64> = if lik.is_bounded() { vec![0.2, 0.4, 0.6, 0.8] } else { normal_vec(&mut rng, 4, 1.0) };
        let z = normal_vec(&mut rng, 3, 1.0);
        let g = model.grad_energy(&y, &z, &pm, false).unwrap();
        prop_assert!(g.d_params.is_none());
        let h = 1e-5;
        for i in 0..3 {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (model.energy(&y, &zp, &pm).unwrap() - model.energy(&y, &zm, &pm).unwrap()) / (2.0 * h);
            prop_assert!((fd - g.d_z[i]).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
        for i in 0..4 {
            let mut yp = y.clone();
            yp[i] += h;
            let mut ym = y.clone();
            ym[i] -= h;
            let fd = (model.energy(&yp, &z, &pm).unwrap() - model.energy(&ym, &z, &pm).unwrap()) / (2.0 * h);
            prop_assert!((fd - g.d_y[i]).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
    }
}

#[test]
fn checkpoint_survives_a_round_trip_through_disk() {
    let model = random_model(5, 2, 4, Likelihood::ContinuousBernoulli);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = FebmModel::load(dir.path()).unwrap();
    let x = Mesh::linspace(-1.0, 1.0, 7).unwrap();
    let y = vec![0.5; 7];
    let z = [0.4, -0.3];
    assert_eq!(
        model.energy(&y, &z, &model.prepare(&x).unwrap()).unwrap(),
        back.energy(&y, &z, &back.prepare(&x).unwrap()).unwrap()
    );
}
