use std::collections::HashMap;
use std::io::Read;

use super::fourier::FourierEncoder;
use super::preprocess::Dataset;
use crate::error::{invalid, Error, Result};
use crate::mesh::{FunctionSample, Mesh};
use crate::model::logistic;

/// Grey-scale image, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(invalid(format!(
                "raster {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Keeps every `factor`-th row and column, starting at 0.
    pub fn downsample(&self, factor: usize) -> Result<Raster> {
        if factor == 0 {
            return Err(invalid("downsampling factor must be positive"));
        }
        let rows: Vec<usize> = (0..self.height).step_by(factor).collect();
        let cols: Vec<usize> = (0..self.width).step_by(factor).collect();
        let pixels = rows
            .iter()
            .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
            .map(|(r, c)| self.get(r, c))
            .collect();
        Raster::new(cols.len(), rows.len(), pixels)
    }

    pub fn in_unit_range(&self) -> bool {
        self.pixels.iter().all(|p| (0.0..=1.0).contains(p))
    }

    /// Plain-text PGM (P2) with 8-bit levels.
    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in self.pixels.chunks(self.width) {
            let line: Vec<String> = row
                .iter()
                .map(|p| ((p.clamp(0.0, 1.0) * 255.0).round() as u32).to_string())
                .collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

/// Reads a PGM image (`P2` or `P5`), scaling levels by the declared maxval.
pub fn read_pgm<R: Read>(mut r: R) -> Result<Raster> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let magic = pgm_token(&bytes, &mut pos)?;
    let binary = match magic.as_str() {
        "P2" => false,
        "P5" => true,
        m => return Err(Error::InvalidInput(format!("unsupported PGM magic `{m}`"))),
    };
    let mut header = [0usize; 3];
    for h in header.iter_mut() {
        let tok = pgm_token(&bytes, &mut pos)?;
        *h = tok
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad PGM header field `{tok}`")))?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::InvalidInput(format!(
            "PGM maxval {maxval} out of range"
        )));
    }
    let n = width * height;
    let levels: Vec<usize> = if binary {
        // exactly one whitespace byte separates the header from the data
        pos += 1;
        let wide = maxval > 255;
        let need = if wide { 2 * n } else { n };
        let data = bytes
            .get(pos..pos + need)
            .ok_or_else(|| Error::InvalidInput("PGM pixel data is truncated".into()))?;
        if wide {
            data.chunks_exact(2)
                .map(|b| (b[0] as usize) << 8 | b[1] as usize)
                .collect()
        } else {
            data.iter().map(|&b| b as usize).collect()
        }
    } else {
        (0..n)
            .map(|_| {
                let tok = pgm_token(&bytes, &mut pos)?;
                tok.parse()
                    .map_err(|_| Error::InvalidInput(format!("bad PGM pixel `{tok}`")))
            })
            .collect::<Result<_>>()?
    };
    if let Some(l) = levels.iter().find(|&&l| l > maxval) {
        return Err(Error::InvalidInput(format!(
            "PGM level {l} exceeds maxval {maxval}"
        )));
    }
    Raster::new(
        width,
        height,
        levels.iter().map(|&l| l as f64 / maxval as f64).collect(),
    )
    .map_err(|e| Error::InvalidInput(e.to_string()))
}

fn pgm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::InvalidInput("unexpected end of PGM data".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Comma-separated raster: one image row per line, no header.
pub fn read_raster_csv<R: Read>(r: R) -> Result<Raster> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut width = None;
    let mut pixels = Vec::new();
    let mut height = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if *width.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse {
                line,
                msg: "raster rows have different lengths".into(),
            });
        }
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("pixel `{field}` is not a number"),
            })?;
            pixels.push(v);
        }
        height += 1;
    }
    match width {
        None => Err(Error::InvalidInput("raster CSV is empty".into())),
        Some(w) => Raster::new(w, height, pixels),
    }
}

/// Pixel grid of a given size, mapped to the unit square and then through
/// a Fourier encoder. Pixel `(r, c)` sits at `(c / (W-1), r / (H-1))`, so
/// the even pixels of a `2n+1` grid coincide with the `n+1` grid.
#[derive(Debug, Clone)]
pub struct ImageFrame {
    pub width: usize,
    pub height: usize,
    encoder: FourierEncoder,
    mesh: Mesh,
    lookup: HashMap<Vec<u64>, usize>,
}

impl ImageFrame {
    pub fn new(width: usize, height: usize, encoder: &FourierEncoder) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("image frame must be non-empty"));
        }
        if encoder.input_dim() != 2 {
            return Err(invalid("image encoder must take 2-D coordinates"));
        }
        let mut coords = Vec::with_capacity(width * height * encoder.output_dim());
        for r in 0..height {
            for c in 0..width {
                coords.extend(encoder.encode(&unit_coord(r, c, width, height))?);
            }
        }
        let mesh = Mesh::new(encoder.output_dim(), coords)?;
        let lookup = mesh
            .points()
            .enumerate()
            .map(|(i, p)| (key(p), i))
            .collect();
        Ok(Self {
            width,
            height,
            encoder: encoder.clone(),
            mesh,
            lookup,
        })
    }

    pub fn encoder(&self) -> &FourierEncoder {
        &self.encoder
    }

    pub fn unit_coord(&self, row: usize, col: usize) -> [f64; 2] {
        unit_coord(row, col, self.width, self.height)
    }

    /// Encoded pixel coordinates in row-major order.
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    /// Exact inverse of [`ImageFrame::mesh`]: the pixel whose encoded
    /// coordinate equals `point` bit for bit.
    pub fn pixel_of(&self, point: &[f64]) -> Option<(usize, usize)> {
        self.lookup
            .get(&key(point))
            .map(|&i| (i / self.width, i % self.width))
    }

    pub fn sample(&self, raster: &Raster) -> Result<FunctionSample> {
        if raster.width != self.width || raster.height != self.height {
            return Err(invalid(format!(
                "raster is {}x{}, frame is {}x{}",
                raster.width, raster.height, self.width, self.height
            )));
        }
        FunctionSample::new(self.mesh.clone(), raster.pixels.clone())
    }

    /// Maps logits on [`ImageFrame::mesh`] to intensities.
    pub fn render_logits(&self, logits: &[f64]) -> Result<Raster> {
        if logits.len() != self.width * self.height {
            return Err(invalid("one logit per pixel required"));
        }
        if logits.iter().any(|f| !f.is_finite()) {
            return Err(Error::Numeric("non-finite logit in rendered image".into()));
        }
        Raster::new(
            self.width,
            self.height,
            logits.iter().map(|&f| logistic(f)).collect(),
        )
    }
}

fn unit_coord(row: usize, col: usize, width: usize, height: usize) -> [f64; 2] {
    let scale = |i: usize, n: usize| {
        if n > 1 {
            i as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    [scale(col, width), scale(row, height)]
}

fn key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|v| v.to_bits()).collect()
}

/// One function sample per image. Images may differ in size.
pub fn gen_image_dataset(
    name: &str,
    images: &[Raster],
    encoder: &FourierEncoder,
) -> Result<Dataset> {
    let mut frames: HashMap<(usize, usize), ImageFrame> = HashMap::new();
    let mut samples = Vec::with_capacity(images.len());
    for (k, img) in images.iter().enumerate() {
        if !img.in_unit_range() {
            return Err(Error::InvalidInput(format!(
                "image {k} has intensities outside [0, 1]"
            )));
        }
        let frame = match frames.entry((img.width, img.height)) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(ImageFrame::new(img.width, img.height, encoder)?)
            }
        };
        samples.push(frame.sample(img)?);
    }
    Dataset::new(name, samples)
}
