use crate::error::{invalid, Result};
use crate::mesh::{FunctionSample, Mesh};
use crate::model::{logistic, FebmModel};
use crate::rng::derive;
use crate::sampler::{sample_conditional_z, LangevinConfig};

use super::split::{split_context, SplitSpec};

/// A posterior function draw, evaluable on any mesh.
#[derive(Debug, Clone)]
pub struct InferredFunction<'m> {
    model: &'m FebmModel,
    pub z: Vec<f64>,
    coefficients: Vec<f64>,
}

impl InferredFunction<'_> {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn eval(&self, queries: &Mesh) -> Result<Vec<f64>> {
        self.model.eigsys.kl_expand(&self.coefficients, queries)
    }
}

/// Draws `n_samples` functions from `p(f | Y^c; X^c)` by conditional
/// Langevin on the latent.
pub fn infer_function<'m>(
    model: &'m FebmModel,
    context: &FunctionSample,
    n_samples: usize,
    lcfg: &LangevinConfig,
) -> Result<Vec<InferredFunction<'m>>> {
    if context.is_empty() {
        return Err(invalid("inference needs a nonempty context"));
    }
    let pm = model.prepare(&context.mesh)?;
    let zs = sample_conditional_z(model, &context.values, &pm, lcfg, n_samples)?;
    zs.into_iter()
        .map(|z| {
            let coefficients = model.coefficients(&z)?;
            Ok(InferredFunction {
                model,
                z,
                coefficients,
            })
        })
        .collect()
}

/// Pointwise mean of the inferred functions on `queries`.
pub fn posterior_mean(draws: &[InferredFunction<'_>], queries: &Mesh) -> Result<Vec<f64>> {
    if draws.is_empty() {
        return Err(invalid("no posterior draws"));
    }
    let mut mean = vec![0.0; queries.len()];
    for d in draws {
        for (m, v) in mean.iter_mut().zip(d.eval(queries)?) {
            *m += v;
        }
    }
    let n = draws.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Any predictor of evaluation values from a context.
pub trait MeanPredictor: Sync {
    fn predict(&self, context: &FunctionSample, queries: &Mesh, seed: u64) -> Result<Vec<f64>>;
}

/// Posterior-mean predictor of a trained model; for bounded likelihoods
/// the mean of the observation parameter `logistic(f)`.
pub struct ModelPredictor<'a> {
    pub model: &'a FebmModel,
    pub n_samples: usize,
    pub lcfg: LangevinConfig,
}

impl MeanPredictor for ModelPredictor<'_> {
    fn predict(&self, context: &FunctionSample, queries: &Mesh, seed: u64) -> Result<Vec<f64>> {
        let cfg = self.lcfg.with_seed(seed);
        let draws = infer_function(self.model, context, self.n_samples, &cfg)?;
        if !self.model.likelihood.is_bounded() {
            return posterior_mean(&draws, queries);
        }
        // Bounded observations are predicted on their own scale.
        let mut mean = vec![0.0; queries.len()];
        for d in &draws {
            for (m, f) in mean.iter_mut().zip(d.eval(queries)?) {
                *m += logistic(f);
            }
        }
        let n = draws.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }
}

/// Mean squared error of the predicted mean function over all evaluation
/// points of all samples.
///
/// Random streams are derived from each sample's content, so the result
/// does not depend on the order of `dataset`.
pub fn predictive_mse<P: MeanPredictor + ?Sized>(
    predictor: &P,
    dataset: &[FunctionSample],
    spec: &SplitSpec,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(invalid("predictive error needs a nonempty dataset"));
    }
    let jobs: Vec<&FunctionSample> = dataset.iter().collect();
    let per_sample = crate::par::map(jobs, |s| -> Result<(u64, f64, usize)> {
        let (ctx, ev) = split_context(s, spec)?;
        let seed = derive(spec.seed, &[0x3e5, s.content_hash()]);
        let pred = predictor.predict(&ctx, &ev.mesh, seed)?;
        let sse: f64 = pred
            .iter()
            .zip(&ev.values)
            .map(|(p, y)| (p - y) * (p - y))
            .sum();
        Ok((s.content_hash(), sse, ev.len()))
    });
    let mut rows = per_sample.into_iter().collect::<Result<Vec<_>>>()?;
    // Fixed summation order.
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (sse, n) = rows
        .iter()
        .fold((0.0, 0usize), |(s, n), r| (s + r.1, n + r.2));
    Ok(sse / n as f64)
}

/// The model-based [`predictive_mse`].
pub fn model_predictive_mse(
    model: &FebmModel,
    dataset: &[FunctionSample],
    spec: &SplitSpec,
    n_samples: usize,
    lcfg: &LangevinConfig,
) -> Result<f64> {
    let p = ModelPredictor {
        model,
        n_samples,
        lcfg: *lcfg,
    };
    predictive_mse(&p, dataset, spec)
}
