//! Unadjusted Langevin dynamics for the joint `(Y, Z)` and conditional
//! `Z | Y` laws, and the replay buffer of persistent negative-phase states.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::mesh::MeshId;
use crate::model::{FebmModel, PreparedMesh};
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinConfig {
    pub step_size: f64,
    pub n_steps: usize,
    pub noise_seed: u64,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        Self {
            step_size: 1e-3,
            n_steps: 100,
            noise_seed: 0,
        }
    }
}

impl LangevinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        Ok(())
    }

    pub fn with_seed(self, noise_seed: u64) -> Self {
        Self { noise_seed, ..self }
    }
}

/// Energy value and state gradients of a joint density `exp(-E(y, z))`.
#[derive(Debug, Clone)]
pub struct StateGrad {
    pub energy: f64,
    pub d_y: Vec<f64>,
    pub d_z: Vec<f64>,
}

/// Anything Langevin dynamics can target.
pub trait JointEnergy: Sync {
    fn state_grad(&self, y: &[f64], z: &[f64]) -> Result<StateGrad>;
}

/// The model's joint energy on one mesh.
pub struct OnMesh<'a> {
    pub model: &'a FebmModel,
    pub mesh: &'a PreparedMesh,
}

impl JointEnergy for OnMesh<'_> {
    fn state_grad(&self, y: &[f64], z: &[f64]) -> Result<StateGrad> {
        let g = self.model.grad_energy(y, z, self.mesh, false)?;
        Ok(StateGrad {
            energy: g.energy,
            d_y: g.d_y,
            d_z: g.d_z,
        })
    }
}

/// Latent prior `exp(-pi(Z)) N(Z; 0, I)`, with no observation block.
pub struct LatentPrior<'a>(pub &'a FebmModel);

impl JointEnergy for LatentPrior<'_> {
    fn state_grad(&self, _y: &[f64], z: &[f64]) -> Result<StateGrad> {
        let (out, gi) = self.0.pi.forward_input_grad(z, |_| vec![1.0])?;
        let prior = 0.5 * z.iter().map(|v| v * v).sum::<f64>();
        Ok(StateGrad {
            energy: out[0] + prior,
            d_y: Vec::new(),
            d_z: z.iter().zip(&gi).map(|(a, b)| a + b).collect(),
        })
    }
}

/// One chain state.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// Which blocks a step moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Blocks {
    Joint,
    LatentOnly,
}

/// Diagnostics of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub chain: usize,
    pub step: usize,
    pub energy: f64,
    pub grad_norm: f64,
}

fn gaussian_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// One unadjusted Langevin transition,
/// `s' = s - (step / 2) grad E(s) + sqrt(step) N(0, I)`,
/// applied simultaneously to both blocks from a single gradient evaluation.
/// With `clamp_y` the observation block is clipped to `[0, 1]`.
pub fn langevin_step<E: JointEnergy + ?Sized>(
    energy: &E,
    state: &mut ChainState,
    step_size: f64,
    blocks: Blocks,
    clamp_y: bool,
    rng: &mut Rng,
) -> Result<StateGrad> {
    let g = energy.state_grad(&state.y, &state.z)?;
    let finite = g.energy.is_finite()
        && g.d_z.iter().all(|v| v.is_finite())
        && (blocks == Blocks::LatentOnly || g.d_y.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::Diverged {
            step: 0,
            detail: format!(
                "non-finite gradient (energy {}, |z| {:.3e}, |y| {:.3e})",
                g.energy,
                norm(&state.z),
                norm(&state.y)
            ),
        });
    }
    let half = 0.5 * step_size;
    let noise = step_size.sqrt();
    if blocks == Blocks::Joint {
        for (y, d) in state.y.iter_mut().zip(&g.d_y) {
            *y += -half * d + noise * rng.sample::<f64, _>(StandardNormal);
            if clamp_y {
                *y = y.clamp(0.0, 1.0);
            }
        }
    }
    for (z, d) in state.z.iter_mut().zip(&g.d_z) {
        *z += -half * d + noise * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(g)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Latent states beyond this norm have prior density below `exp(-5000)` and
/// are treated as a diverged chain.
pub const MAX_LATENT_NORM: f64 = 100.0;

/// Runs `n_steps` transitions, optionally recording a trace.
pub fn run_chain<E: JointEnergy + ?Sized>(
    energy: &E,
    mut state: ChainState,
    cfg: &LangevinConfig,
    blocks: Blocks,
    clamp_y: bool,
    rng: &mut Rng,
    mut trace: Option<(&mut Vec<TraceRow>, usize)>,
) -> Result<ChainState> {
    for step in 0..cfg.n_steps {
        let g = langevin_step(energy, &mut state, cfg.step_size, blocks, clamp_y, rng).map_err(
            |e| match e {
                Error::Diverged { detail, .. } => Error::Diverged { step, detail },
                other => other,
            },
        )?;
        if norm(&state.z) > MAX_LATENT_NORM {
            return Err(Error::Diverged {
                step,
                detail: format!(
                    "latent norm {:.3e} exceeds {MAX_LATENT_NORM}",
                    norm(&state.z)
                ),
            });
        }
        if let Some((rows, chain)) = trace.as_mut() {
            let gn = match blocks {
                Blocks::Joint => (norm(&g.d_y).powi(2) + norm(&g.d_z).powi(2)).sqrt(),
                Blocks::LatentOnly => norm(&g.d_z),
            };
            rows.push(TraceRow {
                chain: *chain,
                step,
                energy: g.energy,
                grad_norm: gn,
            });
        }
    }
    if state.y.iter().chain(&state.z).any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            step: cfg.n_steps,
            detail: "non-finite final state".into(),
        });
    }
    Ok(state)
}

pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(w, "chain,step,energy,grad_norm")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.chain, r.step, r.energy, r.grad_norm)?;
    }
    Ok(())
}

/// Stored negative-phase state.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub mesh: MeshId,
    pub state: ChainState,
}

/// Bounded FIFO store of chain states, keyed by mesh so that states of
/// different dimensionality are never mixed.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    reuse_prob: f64,
    entries: VecDeque<BufferEntry>,
}

impl Default for ReplayBuffer {
    fn default() -> Self {
        Self::new(8192, 0.9).expect("valid defaults")
    }
}

impl ReplayBuffer {
    pub fn new(capacity: usize, reuse_prob: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&reuse_prob) {
            return Err(invalid(format!(
                "reuse probability {reuse_prob} outside [0, 1]"
            )));
        }
        Ok(Self {
            capacity,
            reuse_prob,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn reuse_prob(&self) -> f64 {
        self.reuse_prob
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.iter()
    }

    /// Uniformly chosen stored state for `mesh`, if any.
    pub fn draw(&self, mesh: MeshId, rng: &mut Rng) -> Option<&ChainState> {
        let n = self.entries.iter().filter(|e| e.mesh == mesh).count();
        if n == 0 {
            return None;
        }
        let k = rng.random_range(0..n);
        self.entries
            .iter()
            .filter(|e| e.mesh == mesh)
            .nth(k)
            .map(|e| &e.state)
    }

    pub fn push(&mut self, mesh: MeshId, state: ChainState) {
        if self.capacity == 0 {
            return;
        }
        while self.entries.len() >= self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(BufferEntry { mesh, state });
    }

    pub fn contains(&self, mesh: MeshId, state: &ChainState) -> bool {
        self.entries
            .iter()
            .any(|e| e.mesh == mesh && &e.state == state)
    }
}

/// Fresh chain start: `Z ~ N(0, I)` and observations `0.1 N(0, I)` (or
/// `0.5 + 0.1 N(0, I)` clipped to `[0, 1]` for bounded likelihoods).
pub fn fresh_state(model: &FebmModel, m: usize, rng: &mut Rng) -> ChainState {
    let mut y = gaussian_vec(rng, m, 0.1);
    if model.likelihood.is_bounded() {
        y.iter_mut().for_each(|v| *v = (0.5 + *v).clamp(0.0, 1.0));
    }
    ChainState {
        y,
        z: gaussian_vec(rng, model.d_z(), 1.0),
    }
}

/// Joint samples `(Y, Z) ~ p(Y, Z; X)` for `n_chains` chains on one mesh.
///
/// Each chain starts from a buffer state with probability `reuse_prob`
/// (when one exists for this mesh) and from [`fresh_state`] otherwise. Final
/// states are appended to the buffer. A chain that diverges is restarted
/// once from a fresh state.
pub fn sample_joint(
    model: &FebmModel,
    mesh: &PreparedMesh,
    buffer: &mut ReplayBuffer,
    cfg: &LangevinConfig,
    n_chains: usize,
) -> Result<Vec<ChainState>> {
    cfg.validate()?;
    let m = mesh.len();
    let inits: Vec<(usize, ChainState)> = (0..n_chains)
        .map(|c| {
            let mut rng = rng_for(cfg.noise_seed, &[0x1417, c as u64]);
            let reuse = rng.random::<f64>() < buffer.reuse_prob;
            let init = match (reuse, buffer.draw(mesh.id, &mut rng)) {
                (true, Some(s)) => s.clone(),
                _ => fresh_state(model, m, &mut rng),
            };
            (c, init)
        })
        .collect();
    let energy = OnMesh { model, mesh };
    let clamp = model.likelihood.is_bounded();
    let results = crate::par::map(inits, |(c, init)| {
        let mut rng = rng_for(cfg.noise_seed, &[0x5a3e, c as u64]);
        match run_chain(&energy, init, cfg, Blocks::Joint, clamp, &mut rng, None) {
            Err(Error::Diverged { .. }) => {
                let mut rng = rng_for(cfg.noise_seed, &[0x7e57a7, c as u64]);
                let fresh = fresh_state(model, m, &mut rng);
                run_chain(&energy, fresh, cfg, Blocks::Joint, clamp, &mut rng, None)
            }
            other => other,
        }
    });
    let states = results.into_iter().collect::<Result<Vec<_>>>()?;
    for s in &states {
        buffer.push(mesh.id, s.clone());
    }
    Ok(states)
}

/// Conditional latents `Z ~ p(Z | Y; X)` from `n_chains` chains started at
/// `N(0, I)`; `y` is never modified. A diverged chain is restarted once.
pub fn sample_conditional_z(
    model: &FebmModel,
    y: &[f64],
    mesh: &PreparedMesh,
    cfg: &LangevinConfig,
    n_chains: usize,
) -> Result<Vec<Vec<f64>>> {
    let inits = (0..n_chains)
        .map(|c| {
            let mut rng = rng_for(cfg.noise_seed, &[0xc0d, c as u64]);
            gaussian_vec(&mut rng, model.d_z(), 1.0)
        })
        .collect();
    sample_conditional_z_from(model, y, mesh, cfg, inits)
}

/// As [`sample_conditional_z`], from given starting latents.
pub fn sample_conditional_z_from(
    model: &FebmModel,
    y: &[f64],
    mesh: &PreparedMesh,
    cfg: &LangevinConfig,
    inits: Vec<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if y.len() != mesh.len() {
        return Err(invalid("observations and mesh differ in length"));
    }
    let energy = OnMesh { model, mesh };
    let jobs: Vec<(usize, Vec<f64>)> = inits.into_iter().enumerate().collect();
    let results = crate::par::map(jobs, |(c, z)| {
        let mut rng = rng_for(cfg.noise_seed, &[0xc0e, c as u64]);
        let state = ChainState { y: y.to_vec(), z };
        match run_chain(
            &energy,
            state,
            cfg,
            Blocks::LatentOnly,
            false,
            &mut rng,
            None,
        ) {
            Err(Error::Diverged { .. }) => {
                let mut rng = rng_for(cfg.noise_seed, &[0xc0f, c as u64]);
                let z = gaussian_vec(&mut rng, model.d_z(), 1.0);
                let state = ChainState { y: y.to_vec(), z };
                run_chain(
                    &energy,
                    state,
                    cfg,
                    Blocks::LatentOnly,
                    false,
                    &mut rng,
                    None,
                )
            }
            other => other,
        }
        .map(|s| s.z)
    });
    results.into_iter().collect()
}

/// Latents from the learned prior `exp(-pi(Z)) N(0, I)` by Langevin from `N(0, I)` starts.
pub fn sample_latent_prior(
    model: &FebmModel,
    cfg: &LangevinConfig,
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let energy = LatentPrior(model);
    let jobs: Vec<usize> = (0..n).collect();
    let results = crate::par::map(jobs, |c| {
        let mut rng = rng_for(cfg.noise_seed, &[0x9e1, c as u64]);
        let z = gaussian_vec(&mut rng, model.d_z(), 1.0);
        let state = ChainState { y: Vec::new(), z };
        run_chain(
            &energy,
            state,
            cfg,
            Blocks::LatentOnly,
            false,
            &mut rng,
            None,
        )
        .map(|s| s.z)
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    /// `E = |y|^2 / 2 + |z|^2 / 2`.
    struct Quadratic;

    impl JointEnergy for Quadratic {
        fn state_grad(&self, y: &[f64], z: &[f64]) -> Result<StateGrad> {
            Ok(StateGrad {
                energy: 0.5 * (norm(y).powi(2) + norm(z).powi(2)),
                d_y: y.to_vec(),
                d_z: z.to_vec(),
            })
        }
    }

    #[test]
    fn noiseless_contraction() {
        // With zero noise the update is s (1 - step/2); emulate by checking
        // the drift part against the same-seed noise.
        let step = 0.1;
        let init = ChainState {
            y: vec![1.0, -2.0],
            z: vec![0.5],
        };
        let mut s = init.clone();
        let mut rng = rng_for(1, &[]);
        langevin_step(&Quadratic, &mut s, step, Blocks::Joint, false, &mut rng).unwrap();
        let mut rng = rng_for(1, &[]);
        let noise: Vec<f64> = (0..3)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let flat_init: Vec<f64> = init.y.iter().chain(&init.z).copied().collect();
        let flat: Vec<f64> = s.y.iter().chain(&s.z).copied().collect();
        for i in 0..3 {
            let drift = flat[i] - step.sqrt() * noise[i];
            assert!((drift - flat_init[i] * (1.0 - step / 2.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn latent_only_keeps_y() {
        let mut s = ChainState {
            y: vec![3.0],
            z: vec![0.0, 0.0],
        };
        let mut rng = rng_for(2, &[]);
        langevin_step(
            &Quadratic,
            &mut s,
            0.01,
            Blocks::LatentOnly,
            false,
            &mut rng,
        )
        .unwrap();
        assert_eq!(s.y, vec![3.0]);
        assert_ne!(s.z, vec![0.0, 0.0]);
    }

    #[test]
    fn clamps_bounded_observations() {
        let mut s = ChainState {
            y: vec![0.999, 0.001],
            z: vec![0.0],
        };
        let mut rng = rng_for(3, &[]);
        for _ in 0..50 {
            langevin_step(&Quadratic, &mut s, 0.5, Blocks::Joint, true, &mut rng).unwrap();
            assert!(s.y.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    struct Exploding;
    impl JointEnergy for Exploding {
        fn state_grad(&self, y: &[f64], z: &[f64]) -> Result<StateGrad> {
            Ok(StateGrad {
                energy: f64::NAN,
                d_y: y.to_vec(),
                d_z: z.to_vec(),
            })
        }
    }

    #[test]
    fn reports_divergence() {
        let cfg = LangevinConfig::default();
        let s = ChainState {
            y: vec![0.0],
            z: vec![0.0],
        };
        let mut rng = rng_for(0, &[]);
        let err = run_chain(&Exploding, s, &cfg, Blocks::Joint, false, &mut rng, None).unwrap_err();
        assert!(matches!(err, Error::Diverged { step: 0, .. }));
    }

    #[test]
    fn buffer_is_fifo_and_bounded() {
        let mut b = ReplayBuffer::new(3, 0.9).unwrap();
        let id = MeshId(1);
        for k in 0..5 {
            b.push(
                id,
                ChainState {
                    y: vec![k as f64],
                    z: vec![],
                },
            );
            assert!(b.len() <= 3);
        }
        let ys: Vec<f64> = b.entries().map(|e| e.state.y[0]).collect();
        assert_eq!(ys, vec![2.0, 3.0, 4.0]);
        let mut rng = rng_for(0, &[]);
        assert!(b.draw(MeshId(2), &mut rng).is_none());
        assert!(b.draw(id, &mut rng).is_some());
        assert!(ReplayBuffer::new(3, 1.5).is_err());
    }

    #[test]
    fn trace_rows_are_recorded() {
        let cfg = LangevinConfig {
            step_size: 0.01,
            n_steps: 7,
            noise_seed: 0,
        };
        let mut rows = Vec::new();
        let mut rng = rng_for(0, &[]);
        let s = ChainState {
            y: vec![1.0],
            z: vec![1.0],
        };
        run_chain(
            &Quadratic,
            s,
            &cfg,
            Blocks::Joint,
            false,
            &mut rng,
            Some((&mut rows, 4)),
        )
        .unwrap();
        assert_eq!(rows.len(), 7);
        assert!(rows.iter().all(|r| r.chain == 4));
        let mut out = Vec::new();
        write_trace_csv(&mut out, &rows).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 8);
    }
}
