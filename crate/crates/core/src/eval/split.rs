use rand::seq::SliceRandom;

use crate::error::{invalid, Result};
use crate::mesh::FunctionSample;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitStrategy {
    /// Context drawn uniformly without replacement.
    Random,
    /// Context at both ends of the input range, evaluation in the middle.
    Middle,
    /// Context on a regular stride, evaluation in between.
    Downsample,
}

impl std::str::FromStr for SplitStrategy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(SplitStrategy::Random),
            "middle" => Ok(SplitStrategy::Middle),
            "downsample" => Ok(SplitStrategy::Downsample),
            other => Err(invalid(format!("unknown split strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for SplitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitStrategy::Random => "random",
            SplitStrategy::Middle => "middle",
            SplitStrategy::Downsample => "downsample",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub strategy: SplitStrategy,
    /// Context fraction in `(0, 1)`.
    pub p: f64,
    pub seed: u64,
}

/// Context and evaluation index sets of one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub context: Vec<usize>,
    pub eval: Vec<usize>,
}

/// Splits `m` points (ordered by input location in `order_key`).
pub fn split_indices(order_key: &[f64], spec: &SplitSpec, stream: u64) -> Result<SplitIndices> {
    let m = order_key.len();
    if m < 2 {
        return Err(invalid("splitting needs at least two points"));
    }
    if !(spec.p > 0.0 && spec.p < 1.0) {
        return Err(invalid(format!(
            "context fraction {} outside (0, 1)",
            spec.p
        )));
    }
    if spec.p * (m as f64) < 1.0 {
        return Err(invalid(format!(
            "context fraction {} leaves no context among {m} points",
            spec.p
        )));
    }
    let n_ctx = (spec.p * m as f64).round() as usize;
    let (mut context, mut eval) = match spec.strategy {
        SplitStrategy::Random => {
            let mut idx: Vec<usize> = (0..m).collect();
            idx.shuffle(&mut rng_for(spec.seed, &[0x5b11, stream]));
            let eval = idx.split_off(n_ctx);
            (idx, eval)
        }
        SplitStrategy::Middle => {
            let mut by_x: Vec<usize> = (0..m).collect();
            by_x.sort_by(|&a, &b| order_key[a].total_cmp(&order_key[b]));
            let left = n_ctx.div_ceil(2);
            let right = n_ctx / 2;
            let mut ctx = by_x[..left].to_vec();
            ctx.extend_from_slice(&by_x[m - right..]);
            (ctx, by_x[left..m - right].to_vec())
        }
        SplitStrategy::Downsample => {
            let stride = ((1.0 / spec.p).round() as usize).max(1);
            let mut by_x: Vec<usize> = (0..m).collect();
            by_x.sort_by(|&a, &b| order_key[a].total_cmp(&order_key[b]));
            let (ctx, ev): (Vec<(usize, usize)>, Vec<(usize, usize)>) = by_x
                .into_iter()
                .enumerate()
                .partition(|(k, _)| k % stride == 0);
            (
                ctx.into_iter().map(|(_, i)| i).collect(),
                ev.into_iter().map(|(_, i)| i).collect(),
            )
        }
    };
    if eval.is_empty() {
        return Err(invalid("split leaves no evaluation points"));
    }
    context.sort_unstable();
    eval.sort_unstable();
    Ok(SplitIndices { context, eval })
}

/// Splits a sample into `(context, eval)`; the two partition the sample.
/// Points are ordered by their first input coordinate.
pub fn split_context(
    sample: &FunctionSample,
    spec: &SplitSpec,
) -> Result<(FunctionSample, FunctionSample)> {
    let key: Vec<f64> = sample.mesh.points().map(|p| p[0]).collect();
    let idx = split_indices(&key, spec, sample.content_hash())?;
    Ok((sample.select(&idx.context), sample.select(&idx.eval)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;

    fn key(m: usize) -> Vec<f64> {
        (0..m).map(|i| i as f64).collect()
    }

    #[test]
    fn downsample_half_of_four() {
        let spec = SplitSpec {
            strategy: SplitStrategy::Downsample,
            p: 0.5,
            seed: 0,
        };
        let s = split_indices(&key(4), &spec, 0).unwrap();
        assert_eq!(s.context, vec![0, 2]);
        assert_eq!(s.eval, vec![1, 3]);
    }

    #[test]
    fn middle_quarter_of_eight() {
        let spec = SplitSpec {
            strategy: SplitStrategy::Middle,
            p: 0.25,
            seed: 0,
        };
        let s = split_indices(&key(8), &spec, 0).unwrap();
        assert_eq!(s.context, vec![0, 7]);
        assert_eq!(s.eval, (1..7).collect::<Vec<_>>());
    }

    #[test]
    fn random_is_seeded_partition() {
        let spec = SplitSpec {
            strategy: SplitStrategy::Random,
            p: 0.5,
            seed: 9,
        };
        let a = split_indices(&key(20), &spec, 3).unwrap();
        assert_eq!(a, split_indices(&key(20), &spec, 3).unwrap());
        assert_eq!(a.context.len(), 10);
        let mut all: Vec<usize> = a.context.iter().chain(&a.eval).copied().collect();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn too_small_context_is_rejected() {
        let spec = SplitSpec {
            strategy: SplitStrategy::Random,
            p: 0.1,
            seed: 0,
        };
        assert!(split_indices(&key(5), &spec, 0).is_err());
        assert!(split_indices(&key(1), &spec, 0).is_err());
    }

    #[test]
    fn middle_uses_input_order() {
        let mesh = Mesh::from_1d(&[0.9, 0.1, 0.5, 0.3]).unwrap();
        let s = FunctionSample::new(mesh, vec![9.0, 1.0, 5.0, 3.0]).unwrap();
        let spec = SplitSpec {
            strategy: SplitStrategy::Middle,
            p: 0.5,
            seed: 0,
        };
        let (c, e) = split_context(&s, &spec).unwrap();
        let mut cv = c.values.clone();
        cv.sort_by(f64::total_cmp);
        assert_eq!(cv, vec![1.0, 9.0]);
        let mut ev = e.values.clone();
        ev.sort_by(f64::total_cmp);
        assert_eq!(ev, vec![3.0, 5.0]);
    }
}
