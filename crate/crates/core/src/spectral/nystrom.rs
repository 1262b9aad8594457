use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::kernel::{Kernel, KernelFamily};
use crate::error::{invalid, Error, Result};
use crate::mesh::{FunctionSample, Mesh};
use crate::textio::{write_row, LineReader};

/// Truncated Mercer eigensystem estimated on a set of anchor points.
///
/// Eigenvalues are those of `K(X, X) / l`; eigenfunctions are normalized so
/// that their mean square over the anchors is one, and are extended to
/// arbitrary inputs by kernel ridge regression on their anchor values.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    kernel: Kernel,
    anchors: Mesh,
    eigenvalues: Vec<f64>,
    /// `d_xi x l`: row `i` holds eigenfunction `i` at the anchors.
    anchor_values: DMatrix<f64>,
    /// `d_xi x l`: ridge coefficients, `e_i(t) = sum_j w_ij k(t, x_j)`.
    interp_weights: DMatrix<f64>,
    ridge: f64,
}

/// Default interpolation ridge, relative to the kernel variance.
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-6;

impl EigenSystem {
    /// Nystrom estimate of the leading `d_xi` eigenpairs of `kernel` on `anchors`.
    pub fn nystrom(kernel: Kernel, anchors: Mesh, d_xi: usize, ridge: f64) -> Result<Self> {
        let l = anchors.len();
        if d_xi == 0 || d_xi > l {
            return Err(invalid(format!(
                "truncation d_xi = {d_xi} must lie in 1..={l} (number of anchors)"
            )));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(invalid(format!("ridge must be nonnegative, got {ridge}")));
        }
        let gram = kernel.gram(&anchors)?;
        let lf = l as f64;
        let scaled = &gram / lf;
        let trace = scaled.trace();
        let eig = SymmetricEigen::try_new(scaled, f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;

        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let floor = -1e-9 * trace;
        if let Some(&min) = eig.eigenvalues.iter().min_by(|a, b| a.total_cmp(b)) {
            if min < floor {
                return Err(Error::Numeric(format!(
                    "gram matrix has eigenvalue {min:e} below tolerance {floor:e}"
                )));
            }
        }

        let root_l = lf.sqrt();
        let mut eigenvalues = Vec::with_capacity(d_xi);
        let mut anchor_values = DMatrix::zeros(d_xi, l);
        let mut interp_weights = DMatrix::zeros(d_xi, l);
        for (row, &k) in order.iter().take(d_xi).enumerate() {
            let lambda = eig.eigenvalues[k].max(0.0);
            let mut v: DVector<f64> = eig.eigenvectors.column(k).into_owned() * root_l;
            // Sign: the largest-magnitude anchor value is positive.
            let pivot = v.iamax();
            if v[pivot] < 0.0 {
                v.neg_mut();
            }
            // (K + ridge I)^{-1} e_i in the eigenbasis of K, where e_i is itself
            // an eigenvector with eigenvalue l * lambda.
            let denom = lf * lambda + ridge;
            let w = if denom > f64::EPSILON * lf * trace.max(f64::MIN_POSITIVE) {
                &v / denom
            } else {
                DVector::zeros(l)
            };
            eigenvalues.push(lambda);
            anchor_values.set_row(row, &v.transpose());
            interp_weights.set_row(row, &w.transpose());
        }

        Ok(Self {
            kernel,
            anchors,
            eigenvalues,
            anchor_values,
            interp_weights,
            ridge,
        })
    }

    /// Nystrom estimate with the default ridge `1e-6 * variance`.
    pub fn nystrom_default(kernel: Kernel, anchors: Mesh, d_xi: usize) -> Result<Self> {
        let ridge = DEFAULT_RELATIVE_RIDGE * kernel.variance();
        Self::nystrom(kernel, anchors, d_xi, ridge)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn anchors(&self) -> &Mesh {
        &self.anchors
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn anchor_values(&self) -> &DMatrix<f64> {
        &self.anchor_values
    }

    pub fn interp_weights(&self) -> &DMatrix<f64> {
        &self.interp_weights
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Number of retained eigenpairs.
    pub fn truncation(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn input_dim(&self) -> usize {
        self.anchors.dim()
    }

    /// `[e_1(query), ..., e_d(query)]`.
    pub fn eval_eigenfunctions(&self, query: &[f64]) -> Result<Vec<f64>> {
        if query.len() != self.input_dim() {
            return Err(invalid(format!(
                "query has dimension {}, eigensystem expects {}",
                query.len(),
                self.input_dim()
            )));
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(invalid("query point must be finite"));
        }
        let kv = DVector::from_iterator(
            self.anchors.len(),
            self.anchors
                .points()
                .map(|a| self.kernel.eval_unchecked(query, a)),
        );
        Ok((&self.interp_weights * kv).as_slice().to_vec())
    }

    /// Eigenfunctions on a mesh, one row per mesh point. Each row depends
    /// only on its own point, so shared points of two meshes get identical
    /// rows.
    pub fn eigenfunctions_on(&self, mesh: &Mesh) -> Result<DMatrix<f64>> {
        if mesh.dim() != self.input_dim() {
            return Err(invalid(format!(
                "mesh has dimension {}, eigensystem expects {}",
                mesh.dim(),
                self.input_dim()
            )));
        }
        let d = self.truncation();
        let mut out = DMatrix::zeros(mesh.len(), d);
        let mut kv = vec![0.0; self.anchors.len()];
        for (q, x) in mesh.points().enumerate() {
            for (k, a) in kv.iter_mut().zip(self.anchors.points()) {
                *k = self.kernel.eval(x, a)?;
            }
            for i in 0..d {
                let mut acc = 0.0;
                for (j, k) in kv.iter().enumerate() {
                    acc += self.interp_weights[(i, j)] * k;
                }
                out[(q, i)] = acc;
            }
        }
        Ok(out)
    }

    /// Design matrix `Phi[q, i] = sqrt(lambda_i) e_i(x_q)` of the truncated expansion.
    pub fn basis(&self, mesh: &Mesh) -> Result<DMatrix<f64>> {
        let mut phi = self.eigenfunctions_on(mesh)?;
        for (i, lam) in self.eigenvalues.iter().enumerate() {
            phi.column_mut(i).scale_mut(lam.sqrt());
        }
        Ok(phi)
    }

    /// Truncated Karhunen-Loeve map: `f(x) = sum_i w_i sqrt(lambda_i) e_i(x)`.
    pub fn kl_expand(&self, weights: &[f64], queries: &Mesh) -> Result<Vec<f64>> {
        if weights.len() != self.truncation() {
            return Err(invalid(format!(
                "expected {} weights, got {}",
                self.truncation(),
                weights.len()
            )));
        }
        Ok(apply_basis(&self.basis(queries)?, weights))
    }

    /// `sum_i lambda_i e_i(x_j) e_i(x_k)` over the anchors.
    pub fn truncated_anchor_covariance(&self) -> DMatrix<f64> {
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues));
        self.anchor_values.transpose() * lam * &self.anchor_values
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "febm-eigensystem 1")?;
        writeln!(
            w,
            "kernel {} {:e} {:e}",
            self.kernel.family(),
            self.kernel.variance(),
            self.kernel.lengthscale()
        )?;
        writeln!(
            w,
            "size {} {} {}",
            self.anchors.len(),
            self.truncation(),
            self.input_dim()
        )?;
        writeln!(w, "ridge {:e}", self.ridge)?;
        writeln!(w, "anchors")?;
        for p in self.anchors.points() {
            write_row(&mut w, p)?;
        }
        writeln!(w, "eigenvalues")?;
        write_row(&mut w, &self.eigenvalues)?;
        for (name, m) in [
            ("anchor_values", &self.anchor_values),
            ("interp_weights", &self.interp_weights),
        ] {
            writeln!(w, "{name}")?;
            for r in 0..m.nrows() {
                let row: Vec<f64> = m.row(r).iter().copied().collect();
                write_row(&mut w, &row)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut rd = LineReader::new(r);
        let magic = rd.keyed("febm-eigensystem")?;
        if magic.first().map(String::as_str) != Some("1") {
            return Err(rd.err("unsupported eigensystem version"));
        }
        let k = rd.keyed("kernel")?;
        if k.len() != 3 {
            return Err(rd.err("kernel line needs family, variance, lengthscale"));
        }
        let family: KernelFamily = k[0].parse().map_err(|_| rd.err("bad kernel family"))?;
        let kernel = Kernel::new(family, rd.parse(&k[1])?, rd.parse(&k[2])?)?;
        let s = rd.keyed("size")?;
        if s.len() != 3 {
            return Err(rd.err("size line needs l, d_xi, input_dim"));
        }
        let (l, d, dim): (usize, usize, usize) =
            (rd.parse(&s[0])?, rd.parse(&s[1])?, rd.parse(&s[2])?);
        if d == 0 || d > l || dim == 0 {
            return Err(rd.err("inconsistent sizes"));
        }
        let ridge_f = rd.keyed("ridge")?;
        let ridge: f64 = rd.parse(ridge_f.first().ok_or_else(|| rd.err("missing ridge"))?)?;
        rd.keyed("anchors")?;
        let mut coords = Vec::with_capacity(l * dim);
        for _ in 0..l {
            coords.extend(rd.row(dim)?);
        }
        let anchors = Mesh::new(dim, coords)?;
        rd.keyed("eigenvalues")?;
        let eigenvalues = rd.row(d)?;
        let mut mats = Vec::with_capacity(2);
        for name in ["anchor_values", "interp_weights"] {
            rd.keyed(name)?;
            let mut data = Vec::with_capacity(d * l);
            for _ in 0..d {
                data.extend(rd.row(l)?);
            }
            mats.push(DMatrix::from_row_slice(d, l, &data));
        }
        let interp_weights = mats.pop().unwrap();
        let anchor_values = mats.pop().unwrap();
        Ok(Self {
            kernel,
            anchors,
            eigenvalues,
            anchor_values,
            interp_weights,
            ridge,
        })
    }
}

/// Anchor mesh built from training meshes: all distinct points, sorted, and
/// thinned to at most `max_points` by evenly spaced selection.
pub fn default_anchors(samples: &[FunctionSample], max_points: usize) -> Result<Mesh> {
    let first = samples
        .first()
        .ok_or_else(|| invalid("cannot build anchors from an empty dataset"))?;
    let dim = first.mesh.dim();
    let mut pts: Vec<&[f64]> = Vec::new();
    for s in samples {
        if s.mesh.dim() != dim {
            return Err(invalid("training meshes have inconsistent input dimension"));
        }
        pts.extend(s.mesh.points());
    }
    pts.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    pts.dedup_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let n = pts.len();
    let keep = max_points.max(1).min(n);
    let chosen: Vec<&[f64]> = if keep == n {
        pts
    } else if keep == 1 {
        vec![pts[0]]
    } else {
        (0..keep)
            .map(|i| pts[(i * (n - 1) + (keep - 1) / 2) / (keep - 1)])
            .collect()
    };
    Mesh::new(dim, chosen.concat())
}

/// `Phi w`, row by row in a fixed summation order.
pub(crate) fn apply_basis(phi: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    (0..phi.nrows())
        .map(|q| {
            let mut acc = 0.0;
            for (i, wi) in w.iter().enumerate() {
                acc += phi[(q, i)] * wi;
            }
            acc
        })
        .collect()
}
