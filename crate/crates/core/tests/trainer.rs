mod common;

use common::{desk_quadratic, random_model};
use febm::data::gen_quadratic;
use febm::model::Likelihood;
use febm::sampler::LangevinConfig;
use febm::trainer::{
    cd_moments, contrastive_gradient, train, write_history_csv, PhaseSample, TrainConfig,
    TrainStatus,
};
use febm::Mesh;

fn small_setup() -> (febm::model::FebmModel, Vec<febm::FunctionSample>) {
    let data = gen_quadratic(24, 10, 3).unwrap();
    let anchors = febm::spectral::default_anchors(&data.samples, 64).unwrap();
    let k = febm::spectral::Kernel::new(febm::spectral::KernelFamily::Matern52, 1.0, 0.5).unwrap();
    let es = febm::spectral::EigenSystem::nystrom_default(k, anchors, 5).unwrap();
    let model =
        febm::model::FebmModel::init(es, 2, 8, 2, Likelihood::gaussian(0.2).unwrap(), 3).unwrap();
    (model, data.samples)
}

#[test]
fn identical_phases_cancel() {
    let model = random_model(1, 2, 4, Likelihood::gaussian(0.5).unwrap());
    let pm = model
        .prepare(&Mesh::linspace(-1.0, 1.0, 5).unwrap())
        .unwrap();
    let states = |s: f64| PhaseSample {
        mesh: &pm,
        y: vec![s, -s, 0.3, 0.0, 1.0],
        z: vec![s, 0.5],
    };
    let pos = vec![states(0.1), states(-0.4)];
    let neg = vec![states(0.1), states(-0.4)];
    let est = contrastive_gradient(&model, &pos, &neg).unwrap();
    assert_eq!(est.grad.max_abs(), 0.0);
    assert_eq!(est.surrogate_loss(), 0.0);
}

#[test]
fn cd_moments_of_a_known_shift() {
    let pos: Vec<Vec<f64>> = (0..100).map(|i| vec![1.0 + (i % 2) as f64]).collect();
    let neg: Vec<Vec<f64>> = (0..100).map(|i| vec![(i % 2) as f64]).collect();
    let m = cd_moments(&pos, &neg).unwrap();
    assert!((m.mean[0] - 1.0).abs() < 1e-12);
    // Each phase has variance 100 / 396 of the mean.
    let se = (2.0 * 0.25 * 100.0 / 99.0 / 100.0f64).sqrt();
    assert!((m.stderr[0] - se).abs() < 1e-12);
    assert!(cd_moments(&pos[..1], &neg).is_err());
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let (model, data) = small_setup();
    let out = train(
        &model,
        &data,
        &TrainConfig {
            epochs: 0,
            ..Default::default()
        },
        &LangevinConfig::default(),
    )
    .unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.model.mu, model.mu);
    assert_eq!(out.model.pi, model.pi);
    assert_eq!(out.status, TrainStatus::Completed);
}

#[test]
fn seeded_training_is_reproducible() {
    let (model, data) = small_setup();
    let tcfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        seed: 11,
        ..Default::default()
    };
    let lcfg = LangevinConfig {
        n_steps: 20,
        ..Default::default()
    };
    let a = train(&model, &data, &tcfg, &lcfg).unwrap();
    let b = train(&model, &data, &tcfg, &lcfg).unwrap();
    assert_eq!(a.history.len(), 3);
    for (x, y) in a.history.iter().zip(&b.history) {
        assert!(x.same_numbers(y));
    }
    assert_eq!(a.model.mu, b.model.mu);
    for r in &a.history {
        assert!(r.lr_mu <= tcfg.lr_mu && r.lr_mu >= tcfg.min_lr);
    }
    let mut csv = Vec::new();
    write_history_csv(&mut csv, &a.history).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with(
        "epoch,surrogate_loss,lr_mu,lr_pi,mean_pos_energy,mean_neg_energy,wall_time_s\n"
    ));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn divergence_aborts_with_a_finite_model() {
    let (model, data) = small_setup();
    let lcfg = LangevinConfig {
        step_size: 1e6,
        n_steps: 50,
        noise_seed: 0,
    };
    let out = train(
        &model,
        &data,
        &TrainConfig {
            epochs: 2,
            ..Default::default()
        },
        &lcfg,
    )
    .unwrap();
    assert!(
        matches!(out.status, TrainStatus::Aborted { epoch: 0, .. }),
        "{:?}",
        out.status
    );
    assert!(out.model.mu.is_finite() && out.model.pi.is_finite());
}

#[test]
fn desk_quadratic_loss_closes_half_the_gap_within_thirty_epochs() {
    let run = desk_quadratic(3, 30);
    let losses: Vec<f64> = run
        .outcome
        .history
        .iter()
        .map(|r| r.surrogate_loss)
        .collect();
    let initial = losses[0];
    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let halfway = initial - 0.5 * (initial - best);
    let reached = losses.iter().position(|&l| l <= halfway).unwrap();
    // The best epoch trivially closes the gap; require it well before that.
    assert!(reached < 10, "half gap reached at epoch {reached}");
    assert!(best < initial);
}
