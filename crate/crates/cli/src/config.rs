//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Every accepted key with its default and a one-line description.
pub const KEYS: &[(&str, &str, &str)] = &[
    (
        "seed",
        "0",
        "master seed for initialization, training and sampling",
    ),
    ("out_dir", "out", "directory for all command outputs"),
    (
        "checkpoint",
        "",
        "model directory; empty means <out_dir>/checkpoint",
    ),
    (
        "data.source",
        "file",
        "file (long CSV), quadratic (generated) or images (PGM/CSV rasters)",
    ),
    (
        "data.path",
        "",
        "long CSV file, or a directory of rasters for data.source=images",
    ),
    (
        "data.preprocess",
        "none",
        "none, global or per_sample z-scoring",
    ),
    (
        "data.n_train",
        "0",
        "leading samples used for training; the rest are held out (0 = all)",
    ),
    ("data.quadratic.n", "400", "number of generated quadratics"),
    ("data.quadratic.m", "30", "points per generated quadratic"),
    (
        "data.downsample",
        "1",
        "keep every k-th pixel row and column of input rasters",
    ),
    (
        "fourier.k",
        "64",
        "number of random frequencies for image coordinates",
    ),
    (
        "fourier.scale",
        "10",
        "frequency scale for image coordinates",
    ),
    ("fourier.seed", "0", "seed of the frequency matrix"),
    ("kernel.family", "matern52", "matern32, matern52 or rbf"),
    ("kernel.variance", "1", "kernel output variance"),
    ("kernel.lengthscale", "0.5", "kernel lengthscale"),
    (
        "eigsys.d_xi",
        "auto",
        "retained eigenpairs; auto = largest training mesh size",
    ),
    (
        "eigsys.max_anchors",
        "512",
        "anchor points kept from the training meshes",
    ),
    (
        "eigsys.ridge",
        "auto",
        "interpolation ridge; auto = 1e-6 * kernel.variance",
    ),
    ("model.d_z", "8", "latent dimension"),
    ("model.width", "512", "hidden units per layer"),
    ("model.hidden", "3", "hidden layers"),
    (
        "model.likelihood",
        "auto",
        "gaussian, continuous_bernoulli, or auto (by data source)",
    ),
    (
        "model.sigma",
        "0.05",
        "observation noise of the gaussian likelihood",
    ),
    ("langevin.step_size", "1e-3", "Langevin step size"),
    ("langevin.n_steps", "100", "Langevin steps per chain"),
    ("train.batch_size", "32", "functions per minibatch"),
    ("train.epochs", "100", "maximum epochs"),
    (
        "train.lr_mu",
        "1e-3",
        "learning rate of the coefficient network",
    ),
    ("train.lr_pi", "5e-4", "learning rate of the energy network"),
    (
        "train.plateau_factor",
        "0.1",
        "learning-rate decay factor on plateaus",
    ),
    ("train.min_lr", "1e-5", "learning-rate floor"),
    ("train.patience", "5", "non-improving epochs before decay"),
    (
        "train.early_stop_patience",
        "15",
        "non-improving epochs before stopping",
    ),
    ("train.buffer_capacity", "8192", "replay buffer capacity"),
    (
        "train.reuse_prob",
        "0.9",
        "probability of restarting a negative chain from the buffer",
    ),
    (
        "split.strategy",
        "downsample",
        "comma list of random, middle, downsample",
    ),
    ("split.p", "0.5", "comma list of context fractions"),
    (
        "eval.n_samples",
        "100",
        "posterior draws per predicted mean",
    ),
    ("sample.n", "10", "functions drawn by `sample`"),
    (
        "sample.mesh",
        "auto",
        "uniform:lo:hi:n, grid:W:H, or auto (training range or raster)",
    ),
    ("infer.context", "", "long CSV of context observations"),
    ("infer.mesh", "auto", "query mesh spec, as sample.mesh"),
    ("infer.n", "100", "posterior draws per context function"),
    (
        "test.against",
        "data",
        "data (held-out functions) or model (a second model sampler)",
    ),
    ("test.trials", "200", "two-sample test repetitions"),
    ("test.n_each", "10", "functions per side and trial"),
    ("test.alpha", "0.05", "significance level"),
    ("test.n_perm", "200", "permutations per test"),
    ("test.bandwidth", "median", "median, or a positive number"),
    ("plot.svg", "true", "also write SVG plots"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => bail!("unknown config key `{key}`"),
        }
    }

    /// Applies a `key=value` assignment.
    pub fn assign(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("expected key=value, found `{pair}`"))?;
        self.set(k.trim(), v)
    }

    /// Applies every assignment of a config text; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line)
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        self.merge_text(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("config key `{key}` is not declared"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| anyhow!("config key `{key}`: cannot parse `{raw}`"))
    }

    /// Comma-separated list value.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let items = self
            .raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| anyhow!("config key `{key}`: cannot parse `{s}`"))
            })
            .collect::<Result<Vec<T>>>()?;
        if items.is_empty() {
            bail!("config key `{key}` is empty");
        }
        Ok(items)
    }

    /// `None` for the value `auto`.
    pub fn auto<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            "auto" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    /// Non-empty path value; the error names the key.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        match self.raw(key) {
            "" => Err(crate::Usage(format!("config key `{key}` is required but not set")).into()),
            p => Ok(PathBuf::from(p)),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out_dir"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        match self.raw("checkpoint") {
            "" => self.out_dir().join("checkpoint"),
            p => PathBuf::from(p),
        }
    }

    /// All keys with their values, one per line, with descriptions.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, _, doc) in KEYS {
            let _ = writeln!(s, "# {doc}\n{k}={}", self.values[*k]);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_rejected() {
        let mut c = RunConfig::default();
        let err = c.merge_text("kernel.lengthscale=0.3\nkernel.lenghtscale=1", "cfg");
        assert!(format!("{:#}", err.unwrap_err()).contains("kernel.lenghtscale"));
        assert_eq!(c.get::<f64>("kernel.lengthscale").unwrap(), 0.3);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut c = RunConfig::default();
        c.assign("split.p = 0.25, 0.5").unwrap();
        c.assign("data.path=a b.csv").unwrap();
        let mut d = RunConfig::default();
        d.merge_text(&c.to_text(), "snapshot").unwrap();
        assert_eq!(c, d);
        assert_eq!(d.list::<f64>("split.p").unwrap(), vec![0.25, 0.5]);
    }

    #[test]
    fn auto_values() {
        let c = RunConfig::default();
        assert_eq!(c.auto::<usize>("eigsys.d_xi").unwrap(), None);
        assert!(c.get::<usize>("eigsys.d_xi").is_err());
    }

    #[test]
    fn defaults_cover_keys_once() {
        let c = RunConfig::default();
        assert_eq!(c.values.len(), KEYS.len());
    }
}
