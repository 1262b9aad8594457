//! Datasets, input domains, mesh specifications and checkpoint side files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use febm::data::{
    gen_image_dataset, gen_quadratic, load_long_csv, preprocess, read_pgm, read_raster_csv,
    Dataset, FourierEncoder, ImageFrame, PreprocessMode, Preprocessing, Raster,
};
use febm::model::FebmModel;
use febm::spectral::EigenSystem;
use febm::{FunctionSample, Mesh};

use crate::config::RunConfig;
use crate::Usage;

/// What the model's inputs are.
#[derive(Debug, Clone)]
pub enum Domain {
    /// Raw coordinates of the given dimension.
    Functions { dim: usize },
    /// Pixels of rasters; the model sees encoded unit coordinates.
    Image {
        width: usize,
        height: usize,
        encoder: FourierEncoder,
    },
}

impl Domain {
    fn write_to(&self, dir: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(dir.join("domain.txt"))?);
        match self {
            Domain::Functions { dim } => writeln!(f, "functions {dim}")?,
            Domain::Image {
                width,
                height,
                encoder,
            } => {
                writeln!(f, "image {width} {height}")?;
                encoder.write_to(BufWriter::new(File::create(dir.join("fourier.txt"))?))?;
            }
        }
        f.flush()?;
        Ok(())
    }

    fn read_from(dir: &Path) -> Result<Self> {
        let path = dir.join("domain.txt");
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        let num = |s: &str| -> Result<usize> {
            s.parse()
                .with_context(|| format!("{}: bad number `{s}`", path.display()))
        };
        match fields.as_slice() {
            ["functions", d] => Ok(Domain::Functions { dim: num(d)? }),
            ["image", w, h] => {
                let f = dir.join("fourier.txt");
                let encoder = FourierEncoder::read_from(BufReader::new(
                    File::open(&f).with_context(|| format!("cannot open {}", f.display()))?,
                ))?;
                Ok(Domain::Image {
                    width: num(w)?,
                    height: num(h)?,
                    encoder,
                })
            }
            _ => bail!("{}: unrecognized domain", path.display()),
        }
    }

    /// Input dimension of user-facing coordinates.
    pub fn coord_dim(&self) -> usize {
        match self {
            Domain::Functions { dim } => *dim,
            Domain::Image { .. } => 2,
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Domain::Image { .. })
    }

    /// Maps user-facing coordinates to model inputs.
    pub fn to_model_mesh(&self, coords: &Mesh) -> Result<Mesh> {
        if coords.dim() != self.coord_dim() {
            bail!(Usage(format!(
                "coordinates are {}-dimensional, the model expects {}",
                coords.dim(),
                self.coord_dim()
            )));
        }
        match self {
            Domain::Functions { .. } => Ok(coords.clone()),
            Domain::Image { encoder, .. } => {
                let mut enc = Vec::with_capacity(coords.len() * encoder.output_dim());
                for p in coords.points() {
                    enc.extend(encoder.encode(p)?);
                }
                Ok(Mesh::new(encoder.output_dim(), enc)?)
            }
        }
    }
}

/// A query mesh in user coordinates and model inputs.
pub struct Query {
    pub coords: Mesh,
    pub model_mesh: Mesh,
    /// Set for pixel grids, to render rasters.
    pub frame: Option<ImageFrame>,
}

/// Parses `uniform:lo:hi:n`, `grid:W:H` or `auto`.
pub fn parse_mesh(spec: &str, domain: &Domain, eigsys: &EigenSystem) -> Result<Query> {
    let bad = |why: &str| Usage(format!("bad mesh spec `{spec}`: {why}"));
    let parts: Vec<&str> = spec.trim().split(':').collect();
    match parts.as_slice() {
        ["auto"] => match domain {
            Domain::Functions { dim: 1 } => {
                let xs = eigsys.anchors().coords();
                let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                parse_mesh(&format!("uniform:{lo}:{hi}:100"), domain, eigsys)
            }
            Domain::Image { width, height, .. } => {
                parse_mesh(&format!("grid:{width}:{height}"), domain, eigsys)
            }
            Domain::Functions { .. } => {
                Err(bad("no automatic mesh for multi-dimensional inputs").into())
            }
        },
        ["uniform", lo, hi, n] => {
            let lo: f64 = lo.parse().map_err(|_| bad("lo is not a number"))?;
            let hi: f64 = hi.parse().map_err(|_| bad("hi is not a number"))?;
            let n: usize = n.parse().map_err(|_| bad("n is not a count"))?;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) || n == 0 {
                return Err(bad("need finite lo <= hi and n >= 1").into());
            }
            if domain.coord_dim() != 1 {
                return Err(bad("uniform meshes are one-dimensional").into());
            }
            let coords = Mesh::linspace(lo, hi, n)?;
            Ok(Query {
                model_mesh: domain.to_model_mesh(&coords)?,
                coords,
                frame: None,
            })
        }
        ["grid", w, h] => {
            let w: usize = w.parse().map_err(|_| bad("width is not a count"))?;
            let h: usize = h.parse().map_err(|_| bad("height is not a count"))?;
            if w == 0 || h == 0 {
                return Err(bad("empty grid").into());
            }
            if domain.coord_dim() != 2 {
                return Err(bad("grids need two-dimensional inputs").into());
            }
            let scale = |i: usize, n: usize| {
                if n > 1 {
                    i as f64 / (n - 1) as f64
                } else {
                    0.0
                }
            };
            let pts: Vec<Vec<f64>> = (0..h)
                .flat_map(|r| (0..w).map(move |c| vec![scale(c, w), scale(r, h)]))
                .collect();
            let coords = Mesh::from_points(&pts)?;
            let frame = match domain {
                Domain::Image { encoder, .. } => Some(ImageFrame::new(w, h, encoder)?),
                Domain::Functions { .. } => None,
            };
            let model_mesh = match &frame {
                Some(f) => f.mesh().clone(),
                None => coords.clone(),
            };
            Ok(Query {
                coords,
                model_mesh,
                frame,
            })
        }
        _ => Err(bad("expected uniform:lo:hi:n, grid:W:H or auto").into()),
    }
}

/// The configured dataset after preprocessing, and its domain.
pub struct Loaded {
    pub dataset: Dataset,
    pub domain: Domain,
}

impl Loaded {
    /// Training samples: the first `data.n_train`, or all when unset.
    pub fn train_part(&self, cfg: &RunConfig) -> Result<Dataset> {
        let n: usize = cfg.get("data.n_train")?;
        if n == 0 || n >= self.dataset.len() {
            return Ok(self.dataset.clone());
        }
        Ok(self.dataset.split_at(n)?.0)
    }

    /// Held-out samples: those after `data.n_train`, or all when unset.
    pub fn held_out_part(&self, cfg: &RunConfig) -> Result<Dataset> {
        let n: usize = cfg.get("data.n_train")?;
        if n == 0 || n >= self.dataset.len() {
            return Ok(self.dataset.clone());
        }
        Ok(self.dataset.split_at(n)?.1)
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Loaded> {
    let mode: PreprocessMode = cfg.get("data.preprocess")?;
    let source = cfg.raw("data.source");
    let (raw, domain) = match source {
        "quadratic" => (
            gen_quadratic(
                cfg.get("data.quadratic.n")?,
                cfg.get("data.quadratic.m")?,
                cfg.get("seed")?,
            )?,
            Domain::Functions { dim: 1 },
        ),
        "file" => {
            let path = cfg.path("data.path")?;
            let ds = load_long_csv(&path)
                .with_context(|| format!("loading data.path={}", path.display()))?;
            let dim = ds.samples[0].mesh.dim();
            (ds, Domain::Functions { dim })
        }
        "images" => {
            if mode != PreprocessMode::None {
                bail!(Usage(
                    "image intensities must stay in [0, 1]: set data.preprocess=none".into()
                ));
            }
            let dir = cfg.path("data.path")?;
            let factor: usize = cfg.get("data.downsample")?;
            let rasters = read_rasters(&dir, factor)?;
            let encoder = FourierEncoder::random(
                cfg.get("fourier.k")?,
                2,
                cfg.get("fourier.scale")?,
                cfg.get("fourier.seed")?,
            )?;
            let name = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "images".into());
            let ds = gen_image_dataset(&name, &rasters, &encoder)?;
            let domain = Domain::Image {
                width: rasters[0].width,
                height: rasters[0].height,
                encoder,
            };
            (ds, domain)
        }
        other => bail!(Usage(format!(
            "config key `data.source`: expected file, quadratic or images, found `{other}`"
        ))),
    };
    let dataset = match mode {
        PreprocessMode::None => raw,
        m => preprocess(&raw, m)?,
    };
    Ok(Loaded { dataset, domain })
}

/// `.pgm` and `.csv` rasters of a directory in file-name order.
fn read_rasters(dir: &Path, factor: usize) -> Result<Vec<Raster>> {
    let entries = std::fs::read_dir(dir)
        .with_context(|| format!("cannot list data.path={}", dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("pgm" | "csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(Usage(format!(
            "no .pgm or .csv rasters in {}",
            dir.display()
        )));
    }
    files
        .iter()
        .map(|p| {
            let f = BufReader::new(File::open(p)?);
            let r = match p.extension().and_then(|e| e.to_str()) {
                Some("pgm") => read_pgm(f),
                _ => read_raster_csv(f),
            }
            .with_context(|| format!("reading {}", p.display()))?;
            Ok(r.downsample(factor)?)
        })
        .collect()
}

/// A model checkpoint with the side files the commands need.
pub struct Checkpoint {
    pub model: FebmModel,
    pub domain: Domain,
    pub preprocessing: Preprocessing,
}

pub fn save_checkpoint(
    dir: &Path,
    model: &FebmModel,
    domain: &Domain,
    dataset: &Dataset,
    cfg: &RunConfig,
) -> Result<()> {
    model.save(dir)?;
    domain.write_to(dir)?;
    let mut f = BufWriter::new(File::create(dir.join("dataset.txt"))?);
    dataset.write_manifest(&mut f)?;
    f.flush()?;
    std::fs::write(dir.join("config.txt"), cfg.to_text())?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    if !dir.join("manifest.txt").is_file() {
        bail!(Usage(format!(
            "no checkpoint at {} (set `checkpoint` or run `train`)",
            dir.display()
        )));
    }
    let model = FebmModel::load(dir)?;
    let domain = Domain::read_from(dir)?;
    let f = dir.join("dataset.txt");
    let (_, preprocessing) = Dataset::read_manifest(BufReader::new(
        File::open(&f).with_context(|| format!("cannot open {}", f.display()))?,
    ))?;
    Ok(Checkpoint {
        model,
        domain,
        preprocessing,
    })
}

/// Normalizes observation values the way the training data was.
pub fn normalize(pre: &Preprocessing, s: &FunctionSample) -> Result<(FunctionSample, (f64, f64))> {
    let (mean, std) = match pre {
        Preprocessing::None => (0.0, 1.0),
        Preprocessing::GlobalZScore { mean, std } => (*mean, *std),
        Preprocessing::PerSampleZScore(_) => {
            let ds = Dataset::new("context", vec![s.clone()])?;
            match preprocess(&ds, PreprocessMode::PerSampleZScore)?.preprocessing {
                Preprocessing::PerSampleZScore(st) => st[0],
                _ => unreachable!("per-sample preprocessing returns per-sample statistics"),
            }
        }
    };
    let values = s.values.iter().map(|v| (v - mean) / std).collect();
    Ok((FunctionSample::new(s.mesh.clone(), values)?, (mean, std)))
}
