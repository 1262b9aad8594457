use std::io::{BufRead, Write};

use crate::error::{invalid, Error, Result};
use crate::mesh::FunctionSample;
use crate::textio::LineReader;

/// Normalization applied to a dataset, with the statistics needed to undo it.
#[derive(Debug, Clone, PartialEq)]
pub enum Preprocessing {
    None,
    GlobalZScore {
        mean: f64,
        std: f64,
    },
    /// `(mean, std)` per sample, in dataset order.
    PerSampleZScore(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreprocessMode {
    None,
    GlobalZScore,
    PerSampleZScore,
}

impl std::str::FromStr for PreprocessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PreprocessMode::None),
            "global" | "global_zscore" => Ok(PreprocessMode::GlobalZScore),
            "per_sample" | "per_sample_zscore" => Ok(PreprocessMode::PerSampleZScore),
            other => Err(invalid(format!("unknown preprocessing `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<FunctionSample>,
    pub preprocessing: Preprocessing,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<FunctionSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("dataset has no samples".into()));
        }
        Ok(Self {
            name: name.into(),
            samples,
            preprocessing: Preprocessing::None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Splits off the first `n_train` samples as a training set.
    pub fn split_at(&self, n_train: usize) -> Result<(Dataset, Dataset)> {
        if n_train == 0 || n_train >= self.len() {
            return Err(invalid(format!(
                "cannot split {} samples at {n_train}",
                self.len()
            )));
        }
        let stats = |r: std::ops::Range<usize>| match &self.preprocessing {
            Preprocessing::PerSampleZScore(s) => Preprocessing::PerSampleZScore(s[r].to_vec()),
            other => other.clone(),
        };
        Ok((
            Dataset {
                name: self.name.clone(),
                samples: self.samples[..n_train].to_vec(),
                preprocessing: stats(0..n_train),
            },
            Dataset {
                name: self.name.clone(),
                samples: self.samples[n_train..].to_vec(),
                preprocessing: stats(n_train..self.len()),
            },
        ))
    }

    /// The dataset on its original scale.
    pub fn inverse(&self) -> Dataset {
        let samples = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (mean, std) = match &self.preprocessing {
                    Preprocessing::None => (0.0, 1.0),
                    Preprocessing::GlobalZScore { mean, std } => (*mean, *std),
                    Preprocessing::PerSampleZScore(stats) => stats[i],
                };
                FunctionSample {
                    mesh: s.mesh.clone(),
                    values: s.values.iter().map(|v| v * std + mean).collect(),
                }
            })
            .collect();
        Dataset {
            name: self.name.clone(),
            samples,
            preprocessing: Preprocessing::None,
        }
    }

    pub fn write_manifest<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "febm-dataset 1")?;
        writeln!(w, "name {}", self.name)?;
        writeln!(w, "samples {}", self.len())?;
        match &self.preprocessing {
            Preprocessing::None => writeln!(w, "preprocessing none"),
            Preprocessing::GlobalZScore { mean, std } => {
                writeln!(w, "preprocessing global {mean:e} {std:e}")
            }
            Preprocessing::PerSampleZScore(stats) => {
                writeln!(w, "preprocessing per_sample {}", stats.len())?;
                for (m, s) in stats {
                    writeln!(w, "{m:e} {s:e}")?;
                }
                Ok(())
            }
        }
    }

    /// Reads preprocessing statistics written by [`Self::write_manifest`].
    pub fn read_manifest<R: BufRead>(r: R) -> Result<(String, Preprocessing)> {
        let mut rd = LineReader::new(r);
        rd.keyed("febm-dataset")?;
        let name = rd.keyed("name")?.join(" ");
        rd.keyed("samples")?;
        let p = rd.keyed("preprocessing")?;
        let pre = match p.first().map(String::as_str) {
            Some("none") => Preprocessing::None,
            Some("global") if p.len() == 3 => Preprocessing::GlobalZScore {
                mean: rd.parse(&p[1])?,
                std: rd.parse(&p[2])?,
            },
            Some("per_sample") if p.len() == 2 => {
                let n: usize = rd.parse(&p[1])?;
                let mut stats = Vec::with_capacity(n);
                for _ in 0..n {
                    let row = rd.row(2)?;
                    stats.push((row[0], row[1]));
                }
                Preprocessing::PerSampleZScore(stats)
            }
            _ => return Err(rd.err("bad preprocessing line")),
        };
        Ok((name, pre))
    }
}

fn mean_std<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes values (population standard deviation). The input must not
/// already carry a normalization.
pub fn preprocess(dataset: &Dataset, mode: PreprocessMode) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(invalid("cannot preprocess an empty dataset"));
    }
    if dataset.preprocessing != Preprocessing::None {
        return Err(invalid("dataset is already normalized"));
    }
    let mut out = dataset.clone();
    match mode {
        PreprocessMode::None => {}
        PreprocessMode::GlobalZScore => {
            let (mean, std) = mean_std(dataset.samples.iter().flat_map(|s| s.values.iter()));
            if !(std > 0.0) {
                return Err(Error::DegenerateData(
                    "pooled values have zero spread".into(),
                ));
            }
            for s in &mut out.samples {
                s.values.iter_mut().for_each(|v| *v = (*v - mean) / std);
            }
            out.preprocessing = Preprocessing::GlobalZScore { mean, std };
        }
        PreprocessMode::PerSampleZScore => {
            let mut stats = Vec::with_capacity(dataset.len());
            for (i, s) in out.samples.iter_mut().enumerate() {
                let (mean, std) = mean_std(s.values.iter());
                if !(std > 0.0) {
                    return Err(Error::DegenerateData(format!("sample {i} is constant")));
                }
                s.values.iter_mut().for_each(|v| *v = (*v - mean) / std);
                stats.push((mean, std));
            }
            out.preprocessing = Preprocessing::PerSampleZScore(stats);
        }
    }
    Ok(out)
}
