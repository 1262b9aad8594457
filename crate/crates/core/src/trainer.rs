//! Contrastive-divergence training: the gradient estimator, Adam updates,
//! plateau learning-rate decay and early stopping.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{invalid, Result};
use crate::mesh::{FunctionSample, MeshId};
use crate::model::{FebmModel, ModelGrad, PreparedMesh};
use crate::net::MlpParams;
use crate::rng::{derive, rng_for};
use crate::sampler::{sample_conditional_z, sample_joint, LangevinConfig, ReplayBuffer};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_mu: f64,
    pub lr_pi: f64,
    pub plateau_factor: f64,
    pub min_lr: f64,
    /// Non-improving epochs before the learning rates are decayed.
    pub patience: usize,
    /// Non-improving epochs before training stops.
    pub early_stop_patience: usize,
    pub buffer_capacity: usize,
    pub reuse_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            lr_mu: 1e-3,
            lr_pi: 5e-4,
            plateau_factor: 0.1,
            min_lr: 1e-5,
            patience: 5,
            early_stop_patience: 15,
            buffer_capacity: 8192,
            reuse_prob: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        for (name, v) in [
            ("lr_mu", self.lr_mu),
            ("lr_pi", self.lr_pi),
            ("min_lr", self.min_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lr_mu < self.min_lr || self.lr_pi < self.min_lr {
            return Err(invalid("learning rates must not start below min_lr"));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(invalid("plateau factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Adam moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(invalid(
                "Adam state, parameters and gradient differ in length",
            ));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
        Ok(())
    }
}

/// Adam step on a network; the output scale is clipped to `[0, 30]` afterwards.
pub fn adam_step(
    params: &mut MlpParams,
    grad: &MlpParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let mut flat = params.to_flat();
    state.update(&mut flat, &grad.to_flat(), lr)?;
    params.set_flat(&flat)?;
    params.clip_scale();
    Ok(())
}

/// Multiplies learning rates by `factor` once the monitored loss has not
/// improved for more than `patience` epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    factor: f64,
    patience: usize,
    min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Records an epoch loss; returns true when the rates in `lrs` were decayed.
    pub fn observe(&mut self, loss: f64, lrs: &mut [f64]) -> bool {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return false;
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.patience {
            self.bad_epochs = 0;
            for lr in lrs.iter_mut() {
                *lr = (*lr * self.factor).max(self.min_lr);
            }
            return true;
        }
        false
    }
}

/// One state at which the energy gradient is taken.
pub struct PhaseSample<'a> {
    pub mesh: &'a PreparedMesh,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// Gradient estimate together with the phase energies.
#[derive(Debug, Clone)]
pub struct CdEstimate {
    pub grad: ModelGrad,
    pub mean_pos_energy: f64,
    pub mean_neg_energy: f64,
}

impl CdEstimate {
    /// Mean positive energy minus mean negative energy.
    pub fn surrogate_loss(&self) -> f64 {
        self.mean_pos_energy - self.mean_neg_energy
    }
}

fn mean_grad(model: &FebmModel, states: &[PhaseSample<'_>]) -> Result<(ModelGrad, f64)> {
    let jobs: Vec<&PhaseSample<'_>> = states.iter().collect();
    let grads = crate::par::map(jobs, |s| model.grad_energy(&s.y, &s.z, s.mesh, true));
    let mut acc = ModelGrad::zeros_for(model);
    let mut energy = 0.0;
    let n = states.len() as f64;
    for g in grads {
        let g = g?;
        energy += g.energy;
        acc.add_scaled(
            g.d_params.as_ref().expect("parameter gradients requested"),
            1.0 / n,
        );
    }
    Ok((acc, energy / n))
}

/// `mean dE/dtheta (positives) - mean dE/dtheta (negatives)`. Descending
/// this lowers the energy of data and raises that of model samples.
pub fn contrastive_gradient(
    model: &FebmModel,
    positives: &[PhaseSample<'_>],
    negatives: &[PhaseSample<'_>],
) -> Result<CdEstimate> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(invalid(
            "contrastive gradient needs positive and negative samples",
        ));
    }
    let (mut grad, pos) = mean_grad(model, positives)?;
    let (neg_grad, neg) = mean_grad(model, negatives)?;
    grad.add_scaled(&neg_grad, -1.0);
    Ok(CdEstimate {
        grad,
        mean_pos_energy: pos,
        mean_neg_energy: neg,
    })
}

/// Contrastive-divergence estimate for a generic parametric energy, from
/// per-state gradients `dE/dtheta`, with per-coordinate standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CdMoments {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

pub fn cd_moments(positives: &[Vec<f64>], negatives: &[Vec<f64>]) -> Result<CdMoments> {
    if positives.len() < 2 || negatives.len() < 2 {
        return Err(invalid("need at least two states per phase"));
    }
    let p = positives[0].len();
    if positives.iter().chain(negatives).any(|g| g.len() != p) {
        return Err(invalid("gradients differ in length"));
    }
    let moments = |set: &[Vec<f64>]| -> (Vec<f64>, Vec<f64>) {
        let n = set.len() as f64;
        let mean: Vec<f64> = (0..p)
            .map(|k| set.iter().map(|g| g[k]).sum::<f64>() / n)
            .collect();
        let var_of_mean = (0..p)
            .map(|k| set.iter().map(|g| (g[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0) / n)
            .collect();
        (mean, var_of_mean)
    };
    let (mp, vp) = moments(positives);
    let (mn, vn) = moments(negatives);
    Ok(CdMoments {
        mean: mp.iter().zip(&mn).map(|(a, b)| a - b).collect(),
        stderr: vp.iter().zip(&vn).map(|(a, b)| (a + b).sqrt()).collect(),
    })
}

/// Prepared meshes keyed by identity.
#[derive(Debug, Default, Clone)]
pub struct MeshCache {
    meshes: HashMap<MeshId, PreparedMesh>,
}

impl MeshCache {
    pub fn build(model: &FebmModel, samples: &[FunctionSample]) -> Result<Self> {
        let mut meshes = HashMap::new();
        for s in samples {
            let id = s.mesh.id();
            if let std::collections::hash_map::Entry::Vacant(e) = meshes.entry(id) {
                e.insert(model.prepare(&s.mesh)?);
            }
        }
        Ok(Self { meshes })
    }

    pub fn get(&self, id: MeshId) -> Option<&PreparedMesh> {
        self.meshes.get(&id)
    }

    pub fn len(&self) -> usize {
        self.meshes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meshes.is_empty()
    }
}

/// Contrastive-divergence gradient for a minibatch: one conditional chain
/// per data sample for the positive phase and one joint chain per batch
/// element, on that element's mesh, for the negative phase.
pub fn cd_gradient(
    model: &FebmModel,
    batch: &[&FunctionSample],
    meshes: &MeshCache,
    buffer: &mut ReplayBuffer,
    lcfg: &LangevinConfig,
) -> Result<CdEstimate> {
    if batch.is_empty() {
        return Err(invalid("empty minibatch"));
    }
    let prepared: Vec<&PreparedMesh> = batch
        .iter()
        .map(|s| {
            meshes
                .get(s.mesh.id())
                .ok_or_else(|| invalid("minibatch mesh missing from cache"))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<usize> = (0..batch.len()).collect();
    let pos_z = crate::par::map(jobs, |i| {
        let cfg = lcfg.with_seed(derive(lcfg.noise_seed, &[1, i as u64]));
        sample_conditional_z(model, &batch[i].values, prepared[i], &cfg, 1).map(|mut v| v.remove(0))
    });
    let mut positives = Vec::with_capacity(batch.len());
    for (i, z) in pos_z.into_iter().enumerate() {
        positives.push(PhaseSample {
            mesh: prepared[i],
            y: batch[i].values.clone(),
            z: z?,
        });
    }

    // Negative chains grouped by mesh, in order of first appearance.
    let mut groups: Vec<(MeshId, usize)> = Vec::new();
    for pm in &prepared {
        match groups.iter_mut().find(|(id, _)| *id == pm.id) {
            Some((_, n)) => *n += 1,
            None => groups.push((pm.id, 1)),
        }
    }
    let mut negatives = Vec::with_capacity(batch.len());
    for (g, (id, n)) in groups.into_iter().enumerate() {
        let pm = meshes.get(id).expect("mesh cached above");
        let cfg = lcfg.with_seed(derive(lcfg.noise_seed, &[2, g as u64]));
        for s in sample_joint(model, pm, buffer, &cfg, n)? {
            negatives.push(PhaseSample {
                mesh: pm,
                y: s.y,
                z: s.z,
            });
        }
    }
    contrastive_gradient(model, &positives, &negatives)
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub surrogate_loss: f64,
    pub lr_mu: f64,
    pub lr_pi: f64,
    pub mean_pos_energy: f64,
    pub mean_neg_energy: f64,
    pub wall_time_s: f64,
}

impl EpochRecord {
    /// Equality of everything except wall-clock time.
    pub fn same_numbers(&self, other: &EpochRecord) -> bool {
        self.epoch == other.epoch
            && self.surrogate_loss.to_bits() == other.surrogate_loss.to_bits()
            && self.lr_mu == other.lr_mu
            && self.lr_pi == other.lr_pi
            && self.mean_pos_energy.to_bits() == other.mean_pos_energy.to_bits()
            && self.mean_neg_energy.to_bits() == other.mean_neg_energy.to_bits()
    }
}

pub fn write_history_csv<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(
        w,
        "epoch,surrogate_loss,lr_mu,lr_pi,mean_pos_energy,mean_neg_energy,wall_time_s"
    )?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.3}",
            r.epoch,
            r.surrogate_loss,
            r.lr_mu,
            r.lr_pi,
            r.mean_pos_energy,
            r.mean_neg_energy,
            r.wall_time_s
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainStatus {
    Completed,
    EarlyStopped {
        epoch: usize,
    },
    /// A non-finite loss or parameter appeared; `model` holds the last finite parameters.
    Aborted {
        epoch: usize,
        reason: String,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best parameters by epoch surrogate loss (last finite ones when aborted).
    pub model: FebmModel,
    pub history: Vec<EpochRecord>,
    pub status: TrainStatus,
}

/// Epoch order of sample indices: a seeded shuffle, stably grouped by mesh
/// so that minibatches share meshes where possible.
pub fn epoch_order(samples: &[FunctionSample], seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rng_for(seed, &[0xe90c, epoch as u64]);
    idx.shuffle(&mut rng);
    let mut rank: HashMap<MeshId, usize> = HashMap::new();
    for &i in &idx {
        let n = rank.len();
        rank.entry(samples[i].mesh.id()).or_insert(n);
    }
    idx.sort_by_key(|&i| rank[&samples[i].mesh.id()]);
    idx
}

/// Trains both networks by contrastive divergence; the eigensystem is fixed.
pub fn train(
    model: &FebmModel,
    dataset: &[FunctionSample],
    tcfg: &TrainConfig,
    lcfg: &LangevinConfig,
) -> Result<TrainOutcome> {
    train_with(model, dataset, tcfg, lcfg, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    model: &FebmModel,
    dataset: &[FunctionSample],
    tcfg: &TrainConfig,
    lcfg: &LangevinConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    lcfg.validate()?;
    if dataset.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let mut current = model.clone();
    let mut history = Vec::new();
    if tcfg.epochs == 0 {
        return Ok(TrainOutcome {
            model: current,
            history,
            status: TrainStatus::Completed,
        });
    }
    let meshes = MeshCache::build(model, dataset)?;
    let mut buffer = ReplayBuffer::new(tcfg.buffer_capacity, tcfg.reuse_prob)?;
    let mut adam_mu = AdamState::new(current.mu.flat_len());
    let mut adam_pi = AdamState::new(current.pi.flat_len());
    let mut lrs = [tcfg.lr_mu, tcfg.lr_pi];
    let mut scheduler = PlateauScheduler::new(tcfg.plateau_factor, tcfg.patience, tcfg.min_lr);
    let mut best = (f64::INFINITY, current.clone());
    let mut since_best = 0usize;
    let start = Instant::now();

    for epoch in 0..tcfg.epochs {
        let order = epoch_order(dataset, tcfg.seed, epoch);
        let (mut loss_sum, mut pos_sum, mut neg_sum) = (0.0, 0.0, 0.0);
        for (b, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let batch: Vec<&FunctionSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let cfg = lcfg.with_seed(derive(tcfg.seed, &[0xba7c, epoch as u64, b as u64]));
            let before = current.clone();
            let est = match cd_gradient(&current, &batch, &meshes, &mut buffer, &cfg) {
                Ok(est) => est,
                Err(e @ crate::Error::Diverged { .. }) => {
                    return Ok(aborted(before, history, epoch, e.to_string()))
                }
                Err(e) => return Err(e),
            };
            let w = batch.len() as f64;
            loss_sum += est.surrogate_loss() * w;
            pos_sum += est.mean_pos_energy * w;
            neg_sum += est.mean_neg_energy * w;
            adam_step(&mut current.mu, &est.grad.mu, &mut adam_mu, lrs[0])?;
            adam_step(&mut current.pi, &est.grad.pi, &mut adam_pi, lrs[1])?;
            if !est.surrogate_loss().is_finite()
                || !current.mu.is_finite()
                || !current.pi.is_finite()
            {
                return Ok(aborted(
                    before,
                    history,
                    epoch,
                    "non-finite loss or parameters".into(),
                ));
            }
        }
        let n = dataset.len() as f64;
        let record = EpochRecord {
            epoch,
            surrogate_loss: loss_sum / n,
            lr_mu: lrs[0],
            lr_pi: lrs[1],
            mean_pos_energy: pos_sum / n,
            mean_neg_energy: neg_sum / n,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);
        let loss = loss_sum / n;
        if loss < best.0 {
            best = (loss, current.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        scheduler.observe(loss, &mut lrs);
        if since_best >= tcfg.early_stop_patience {
            return Ok(TrainOutcome {
                model: best.1,
                history,
                status: TrainStatus::EarlyStopped { epoch },
            });
        }
    }
    Ok(TrainOutcome {
        model: best.1,
        history,
        status: TrainStatus::Completed,
    })
}

fn aborted(
    model: FebmModel,
    history: Vec<EpochRecord>,
    epoch: usize,
    reason: String,
) -> TrainOutcome {
    TrainOutcome {
        model,
        history,
        status: TrainStatus::Aborted { epoch, reason },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = vec![0.3, -1.0, 2.0];
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            s.update(&mut p, &[0.0; 3], 1e-2).unwrap();
        }
        assert_eq!(p, vec![0.3, -1.0, 2.0]);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3);
        s.update(&mut p, &[2.0, -0.5, 1e-3], 1e-2).unwrap();
        assert!((p[0] + 1e-2).abs() < 1e-9);
        assert!((p[1] - 1e-2).abs() < 1e-9);
        assert!((p[2] + 1e-2).abs() < 1e-7);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let target = [1.5, -2.0, 0.25, 3.0];
        let scales = [1.0, 10.0, 0.1, 3.0];
        let mut p = vec![0.0; 4];
        let mut s = AdamState::new(4);
        for _ in 0..2000 {
            let g: Vec<f64> = (0..4).map(|i| scales[i] * (p[i] - target[i])).collect();
            s.update(&mut p, &g, 0.05).unwrap();
        }
        for i in 0..4 {
            assert!((p[i] - target[i]).abs() < 1e-3, "{i}: {}", p[i]);
        }
    }

    #[test]
    fn plateau_decay_is_floored_and_monotone() {
        let mut sch = PlateauScheduler::new(0.1, 1, 1e-5);
        let mut lrs = [1e-3, 5e-4];
        let mut prev = lrs;
        for loss in [1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0] {
            sch.observe(loss, &mut lrs);
            assert!(lrs[0] <= prev[0] && lrs[1] <= prev[1]);
            assert!(lrs.iter().all(|&l| l >= 1e-5));
            prev = lrs;
        }
        assert_eq!(lrs, [1e-5, 1e-5]);
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation() {
        use crate::mesh::Mesh;
        let m1 = Mesh::linspace(0.0, 1.0, 3).unwrap();
        let m2 = Mesh::linspace(0.0, 1.0, 4).unwrap();
        let samples: Vec<FunctionSample> = (0..9)
            .map(|i| {
                let m = if i % 3 == 0 { m2.clone() } else { m1.clone() };
                let n = m.len();
                FunctionSample::new(m, vec![i as f64; n]).unwrap()
            })
            .collect();
        let a = epoch_order(&samples, 5, 0);
        assert_eq!(a, epoch_order(&samples, 5, 0));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..9).collect::<Vec<_>>());
        // Grouped: all samples of the first mesh seen precede the others.
        let first = samples[a[0]].mesh.id();
        let k = a
            .iter()
            .take_while(|&&i| samples[i].mesh.id() == first)
            .count();
        assert!(a[k..].iter().all(|&i| samples[i].mesh.id() != first));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.plateau_factor = 1.0;
        assert!(c.validate().is_err());
        let c = TrainConfig {
            lr_mu: 1e-6,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
