use rand::Rng as _;
use rand_distr::StandardNormal;

use std::io::{BufRead, Write};

use crate::error::{invalid, Result};
use crate::rng::rng_for;
use crate::textio::{write_row, LineReader};

/// Random Fourier features of a coordinate: `[cos(2 pi B v); sin(2 pi B v)]`
/// with `B = scale * freq`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierEncoder {
    /// `k x d`, row-major.
    freq: Vec<f64>,
    k: usize,
    d: usize,
    scale: f64,
}

impl FourierEncoder {
    /// `k` frequencies drawn from `N(0, I_d)`.
    pub fn random(k: usize, d: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, &[0xf0e1]);
        let freq = (0..k * d).map(|_| rng.sample(StandardNormal)).collect();
        Self::from_matrix(freq, k, d, scale)
    }

    pub fn from_matrix(freq: Vec<f64>, k: usize, d: usize, scale: f64) -> Result<Self> {
        if k == 0 || d == 0 || freq.len() != k * d {
            return Err(invalid("frequency matrix must be k x d with k, d >= 1"));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!(
                "Fourier scale must be positive, got {scale}"
            )));
        }
        Ok(Self { freq, k, d, scale })
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn output_dim(&self) -> usize {
        2 * self.k
    }

    pub fn encode(&self, coord: &[f64]) -> Result<Vec<f64>> {
        if coord.len() != self.d {
            return Err(invalid(format!(
                "coordinate has dimension {}, encoder expects {}",
                coord.len(),
                self.d
            )));
        }
        if coord.iter().any(|c| !c.is_finite()) {
            return Err(invalid("coordinate must be finite"));
        }
        let tau = 2.0 * std::f64::consts::PI * self.scale;
        let phases: Vec<f64> = self
            .freq
            .chunks_exact(self.d)
            .map(|row| tau * row.iter().zip(coord).map(|(b, v)| b * v).sum::<f64>())
            .collect();
        let mut out: Vec<f64> = phases.iter().map(|p| p.cos()).collect();
        out.extend(phases.iter().map(|p| p.sin()));
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "febm-fourier 1")?;
        writeln!(w, "size {} {}", self.k, self.d)?;
        writeln!(w, "scale {:e}", self.scale)?;
        for row in self.freq.chunks(self.d) {
            write_row(&mut w, row)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut rd = LineReader::new(r);
        if rd.keyed("febm-fourier")? != ["1"] {
            return Err(rd.err("unsupported encoder format version"));
        }
        let size = rd.keyed("size")?;
        if size.len() != 2 {
            return Err(rd.err("expected `size k d`"));
        }
        let (k, d): (usize, usize) = (rd.parse(&size[0])?, rd.parse(&size[1])?);
        let scale = rd.keyed("scale")?;
        let scale: f64 = rd.parse(scale.first().ok_or_else(|| rd.err("missing scale"))?)?;
        let mut freq = Vec::with_capacity(k * d);
        for _ in 0..k {
            freq.extend(rd.row(d)?);
        }
        Self::from_matrix(freq, k, d, scale)
    }
}
