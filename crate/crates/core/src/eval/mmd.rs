use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{invalid, Result};
use crate::mesh::{FunctionSample, Mesh};
use crate::rng::{rng_for, Rng};

/// Bandwidth of the functional Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median of the pooled pairwise L2 distances.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    /// Unbiased MMD^2 estimate.
    pub statistic: f64,
    /// `(1 - alpha)` quantile of the permutation statistics.
    pub threshold: f64,
    pub reject: bool,
    pub alpha: f64,
}

/// Quadrature weights for L2 inner products on a mesh: the trapezoid rule
/// in input order for 1-D meshes, equal weights `1 / M` otherwise.
pub fn quadrature_weights(mesh: &Mesh) -> Vec<f64> {
    let m = mesh.len();
    if mesh.dim() != 1 || m < 2 {
        return vec![1.0 / m as f64; m];
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| mesh.point(a)[0].total_cmp(&mesh.point(b)[0]));
    let x = |k: usize| mesh.point(order[k])[0];
    let mut w = vec![0.0; m];
    for k in 0..m {
        let lo = if k == 0 {
            x(0)
        } else {
            0.5 * (x(k - 1) + x(k))
        };
        let hi = if k == m - 1 {
            x(m - 1)
        } else {
            0.5 * (x(k) + x(k + 1))
        };
        w[order[k]] = hi - lo;
    }
    w
}

fn pooled_sq_distances(pool: &[&FunctionSample], w: &[f64]) -> DMatrix<f64> {
    let n = pool.len();
    let mut d2 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let v: f64 = pool[i]
                .values
                .iter()
                .zip(&pool[j].values)
                .zip(w)
                .map(|((a, b), wk)| wk * (a - b) * (a - b))
                .sum();
            d2[(i, j)] = v;
            d2[(j, i)] = v;
        }
    }
    d2
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Unbiased MMD^2 for a labelling of the pooled kernel matrix: the first
/// `n_a` entries of `idx` form sample A.
fn unbiased_mmd2(k: &DMatrix<f64>, idx: &[usize], n_a: usize) -> f64 {
    let (a, b) = idx.split_at(n_a);
    let within = |s: &[usize]| {
        let mut t = 0.0;
        for (p, &i) in s.iter().enumerate() {
            for &j in &s[..p] {
                t += 2.0 * k[(i, j)];
            }
        }
        t / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for &i in a {
        for &j in b {
            cross += k[(i, j)];
        }
    }
    within(a) + within(b) - 2.0 * cross / (a.len() * b.len()) as f64
}

/// Kernel two-sample permutation test on functions sharing one mesh, with
/// `kappa(f, g) = exp(-|f - g|^2 / (2 beta^2))` and the L2 norm taken by
/// quadrature on the mesh.
pub fn mmd_two_sample(
    a: &[FunctionSample],
    b: &[FunctionSample],
    n_perm: usize,
    alpha: f64,
    bandwidth: Bandwidth,
    rng: &mut Rng,
) -> Result<TestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(invalid("each sample set needs at least two functions"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!(
            "significance level {alpha} outside (0, 1)"
        )));
    }
    if n_perm == 0 {
        return Err(invalid("need at least one permutation"));
    }
    let mesh = &a[0].mesh;
    if a.iter().chain(b).any(|s| &s.mesh != mesh) {
        return Err(invalid("two-sample test needs all functions on one mesh"));
    }
    let w = quadrature_weights(mesh);
    let pool: Vec<&FunctionSample> = a.iter().chain(b).collect();
    let n = pool.len();
    let d2 = pooled_sq_distances(&pool, &w);
    let beta = match bandwidth {
        Bandwidth::Fixed(beta) if beta > 0.0 => beta,
        Bandwidth::Fixed(beta) => {
            return Err(invalid(format!("bandwidth must be positive, got {beta}")))
        }
        Bandwidth::Median => {
            let mut dists = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in 0..i {
                    dists.push(d2[(i, j)].sqrt());
                }
            }
            let med = median(dists);
            if med > 0.0 {
                med
            } else {
                1.0
            }
        }
    };
    let k = d2.map(|v| (-v / (2.0 * beta * beta)).exp());
    let mut idx: Vec<usize> = (0..n).collect();
    let statistic = unbiased_mmd2(&k, &idx, a.len());
    let mut perm_stats: Vec<f64> = (0..n_perm)
        .map(|_| {
            idx.shuffle(rng);
            unbiased_mmd2(&k, &idx, a.len())
        })
        .collect();
    perm_stats.sort_by(f64::total_cmp);
    let q = (((1.0 - alpha) * n_perm as f64).ceil() as usize).clamp(1, n_perm) - 1;
    let threshold = perm_stats[q];
    Ok(TestResult {
        statistic,
        threshold,
        reject: statistic > threshold,
        alpha,
    })
}

/// Rejection rate over repeated tests with its binomial standard error.
#[derive(Debug, Clone)]
pub struct PowerEstimate {
    pub power: f64,
    pub stderr: f64,
    pub trials: Vec<TestResult>,
}

#[derive(Debug, Clone, Copy)]
pub struct PowerConfig {
    pub n_trials: usize,
    pub n_each: usize,
    pub alpha: f64,
    pub n_perm: usize,
    pub bandwidth: Bandwidth,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            n_trials: 200,
            n_each: 10,
            alpha: 0.05,
            n_perm: 200,
            bandwidth: Bandwidth::Median,
            seed: 0,
        }
    }
}

/// Fraction of trials in which functions from `sampler_a` and `sampler_b`
/// are declared different. Each sampler receives a per-trial generator and
/// the number of functions to draw.
pub fn test_power<A, B>(
    mut sampler_a: A,
    mut sampler_b: B,
    cfg: &PowerConfig,
) -> Result<PowerEstimate>
where
    A: FnMut(&mut Rng, usize) -> Result<Vec<FunctionSample>>,
    B: FnMut(&mut Rng, usize) -> Result<Vec<FunctionSample>>,
{
    if cfg.n_trials == 0 {
        return Err(invalid("need at least one trial"));
    }
    let mut trials = Vec::with_capacity(cfg.n_trials);
    for t in 0..cfg.n_trials {
        let xs = sampler_a(&mut rng_for(cfg.seed, &[0xa, t as u64]), cfg.n_each)?;
        let ys = sampler_b(&mut rng_for(cfg.seed, &[0xb, t as u64]), cfg.n_each)?;
        let mut rng = rng_for(cfg.seed, &[0x9e, t as u64]);
        trials.push(mmd_two_sample(
            &xs,
            &ys,
            cfg.n_perm,
            cfg.alpha,
            cfg.bandwidth,
            &mut rng,
        )?);
    }
    let n = trials.len() as f64;
    let power = trials.iter().filter(|r| r.reject).count() as f64 / n;
    Ok(PowerEstimate {
        power,
        stderr: (power * (1.0 - power) / n).sqrt(),
        trials,
    })
}

pub fn write_test_csv<W: Write>(mut w: W, trials: &[TestResult]) -> std::io::Result<()> {
    writeln!(w, "trial,statistic,threshold,reject")?;
    for (t, r) in trials.iter().enumerate() {
        writeln!(w, "{t},{},{},{}", r.statistic, r.threshold, r.reject)?;
    }
    Ok(())
}
