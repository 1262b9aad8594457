use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::mesh::FunctionSample;

/// Principal-component embedding of functions on a common mesh.
#[derive(Debug, Clone)]
pub struct Embedding {
    /// One row of `dims` coordinates per sample.
    pub coords: Vec<Vec<f64>>,
    /// Variance captured by each axis.
    pub variances: Vec<f64>,
}

/// Projects mean-centered function values onto the leading principal axes.
/// Each axis' largest-magnitude loading is positive; axes beyond the data
/// rank are zero-filled.
pub fn pca_embed(samples: &[FunctionSample], dims: usize) -> Result<Embedding> {
    let n = samples.len();
    if n < 2 {
        return Err(invalid("embedding needs at least two samples"));
    }
    let m = samples[0].len();
    if samples.iter().any(|s| s.mesh != samples[0].mesh) {
        return Err(invalid("embedding needs all functions on one mesh"));
    }
    let mut x = DMatrix::from_fn(n, m, |i, j| samples[i].values[j]);
    for j in 0..m {
        let mean = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-mean);
    }
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let tol = svd.singular_values.max() * 1e-12 * (n.max(m) as f64);
    let mut coords = vec![vec![0.0; dims]; n];
    let mut variances = vec![0.0; dims];
    for (axis, &k) in order.iter().take(dims).enumerate() {
        let s = svd.singular_values[k];
        if s <= tol || s == 0.0 {
            continue;
        }
        let mut loading: Vec<f64> = v_t.row(k).iter().copied().collect();
        let pivot =
            loading.iter().copied().fold(
                0.0f64,
                |best, v| if v.abs() > best.abs() { v } else { best },
            );
        if pivot < 0.0 {
            loading.iter_mut().for_each(|v| *v = -*v);
        }
        for (i, row) in coords.iter_mut().enumerate() {
            row[axis] = x.row(i).iter().zip(&loading).map(|(a, b)| a * b).sum();
        }
        variances[axis] = s * s / (n - 1) as f64;
    }
    Ok(Embedding { coords, variances })
}

/// Rows of `(sample_id, source, e1, e2)`.
pub fn write_embedding_csv<W: Write>(
    mut w: W,
    rows: &[(usize, &str, [f64; 2])],
) -> std::io::Result<()> {
    writeln!(w, "sample_id,source,e1,e2")?;
    for (id, source, e) in rows {
        writeln!(w, "{id},{source},{},{}", e[0], e[1])?;
    }
    Ok(())
}
