//! Small fully connected networks with SiLU activations, optional residual
//! skips and hand-written reverse-mode gradients.

use std::io::{BufRead, Write};

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::rng::rng_for;
use crate::textio::{write_row, LineReader};

/// Upper clip for the learned output scale of [`OutputHead::ScaledTanh`].
pub const MAX_TANH_SCALE: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHead {
    Linear,
    /// `scale * tanh(u)` with a learned `scale` kept in `[0, 30]`.
    ScaledTanh,
}

/// Shape of a network: layer widths, skip connections and output head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArch {
    pub layer_dims: Vec<usize>,
    /// `(from, to)`: activation of layer `from` is added to the
    /// pre-activation of layer `to`. Layer 0 is the input.
    pub skip_pairs: Vec<(usize, usize)>,
    pub head: OutputHead,
}

impl MlpArch {
    pub fn plain(layer_dims: Vec<usize>, head: OutputHead) -> Self {
        Self {
            layer_dims,
            skip_pairs: Vec::new(),
            head,
        }
    }

    /// `n_hidden` equal-width hidden layers with skips between consecutive
    /// hidden layers (1->2, 2->3, ...).
    pub fn residual(
        input: usize,
        width: usize,
        n_hidden: usize,
        output: usize,
        head: OutputHead,
    ) -> Self {
        let mut layer_dims = vec![input];
        layer_dims.extend(std::iter::repeat_n(width, n_hidden));
        layer_dims.push(output);
        let skip_pairs = (1..n_hidden).map(|k| (k, k + 1)).collect();
        Self {
            layer_dims,
            skip_pairs,
            head,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 || self.layer_dims.contains(&0) {
            return Err(invalid("network needs at least two positive layer widths"));
        }
        let last = self.layer_dims.len() - 1;
        for &(s, t) in &self.skip_pairs {
            if !(s >= 1 && s < t && t <= last) {
                return Err(invalid(format!("invalid skip pair ({s}, {t})")));
            }
            if self.layer_dims[s] != self.layer_dims[t] {
                return Err(invalid(format!(
                    "skip pair ({s}, {t}) joins widths {} and {}",
                    self.layer_dims[s], self.layer_dims[t]
                )));
            }
        }
        Ok(())
    }
}

/// One affine layer; `weights` is `out x in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    arch: MlpArch,
    pub layers: Vec<Layer>,
    pub tanh_scale: f64,
}

/// Gradients with respect to parameters and input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPair {
    pub grad_params: MlpParams,
    pub grad_input: Vec<f64>,
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

#[inline]
pub fn silu(u: f64) -> f64 {
    u * sigmoid(u)
}

#[inline]
fn silu_grad(u: f64) -> f64 {
    let s = sigmoid(u);
    s * (1.0 + u * (1.0 - s))
}

/// Intermediate values kept for the backward pass.
struct Tape {
    /// Activations `a_0 (input), a_1, ..., a_{L-1}`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of layers `1..=L` (index `k - 1`).
    pre: Vec<Vec<f64>>,
}

impl MlpParams {
    /// Random initialization: weights `N(0, 1 / fan_in)`, zero biases, scale 1.
    pub fn init(arch: MlpArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng_for(seed, &[0x6d6c70]);
        let layers = arch
            .layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = 1.0 / (fan_in as f64).sqrt();
                Layer {
                    weights: (0..fan_in * fan_out)
                        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            arch,
            layers,
            tanh_scale: 1.0,
        })
    }

    /// All-zero parameters (including the output scale).
    pub fn zeros(arch: MlpArch) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_dims
            .windows(2)
            .map(|w| Layer {
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            arch,
            layers,
            tanh_scale: 0.0,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch.clone()).expect("architecture already validated")
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.arch.layer_dims.last().unwrap()
    }

    pub fn head(&self) -> OutputHead {
        self.arch.head
    }

    pub fn clip_scale(&mut self) {
        self.tanh_scale = self.tanh_scale.clamp(0.0, MAX_TANH_SCALE);
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(invalid(format!(
                "network expects input of length {}, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    fn run(&self, input: &[f64]) -> (Vec<f64>, Tape) {
        let dims = &self.arch.layer_dims;
        let n_layers = self.layers.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        acts.push(input.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let a = &acts[k];
            let mut u = layer.bias.clone();
            for (o, uo) in u.iter_mut().enumerate() {
                let row = &layer.weights[o * fan_in..(o + 1) * fan_in];
                *uo += row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>();
            }
            for &(s, t) in &self.arch.skip_pairs {
                if t == k + 1 {
                    u.iter_mut().zip(&acts[s]).for_each(|(ui, ai)| *ui += ai);
                }
            }
            debug_assert_eq!(u.len(), fan_out);
            if k + 1 < n_layers {
                acts.push(u.iter().map(|&v| silu(v)).collect());
            }
            pre.push(u);
        }
        let u = pre.last().unwrap();
        let out = match self.arch.head {
            OutputHead::Linear => u.clone(),
            OutputHead::ScaledTanh => u.iter().map(|&v| self.tanh_scale * v.tanh()).collect(),
        };
        (out, Tape { acts, pre })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.run(input).0)
    }

    /// Vector-Jacobian products of the output with `upstream`.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<GradPair> {
        self.check_input(input)?;
        if upstream.len() != self.output_dim() {
            return Err(invalid(format!(
                "upstream gradient has length {}, network output is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let (_, tape) = self.run(input);
        Ok(self.backward_tape(&tape, upstream, true))
    }

    /// Forward pass plus the input gradient of `upstream . output`, skipping
    /// parameter gradients.
    pub fn forward_input_grad(
        &self,
        input: &[f64],
        upstream: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(input)?;
        let (out, tape) = self.run(input);
        let g = upstream(&out);
        if g.len() != self.output_dim() {
            return Err(invalid("upstream gradient has the wrong length"));
        }
        Ok((out, self.backward_tape(&tape, &g, false).grad_input))
    }

    /// Forward pass followed by a backward pass sharing the same tape.
    pub fn forward_backward(
        &self,
        input: &[f64],
        upstream: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, GradPair)> {
        self.check_input(input)?;
        let (out, tape) = self.run(input);
        let g = upstream(&out);
        if g.len() != self.output_dim() {
            return Err(invalid("upstream gradient has the wrong length"));
        }
        let grads = self.backward_tape(&tape, &g, true);
        Ok((out, grads))
    }

    fn backward_tape(&self, tape: &Tape, upstream: &[f64], with_params: bool) -> GradPair {
        let dims = &self.arch.layer_dims;
        let n_layers = self.layers.len();
        let mut grads = if with_params {
            self.zeros_like()
        } else {
            MlpParams {
                arch: self.arch.clone(),
                layers: Vec::new(),
                tanh_scale: 0.0,
            }
        };
        let last_pre = &tape.pre[n_layers - 1];
        let mut delta: Vec<f64> = match self.arch.head {
            OutputHead::Linear => upstream.to_vec(),
            OutputHead::ScaledTanh => {
                let mut ds = 0.0;
                let d = upstream
                    .iter()
                    .zip(last_pre)
                    .map(|(g, &u)| {
                        let t = u.tanh();
                        ds += g * t;
                        g * self.tanh_scale * (1.0 - t * t)
                    })
                    .collect();
                grads.tanh_scale = ds;
                d
            }
        };
        // Gradient accumulators for activations a_0 .. a_{L-1}.
        let mut g_act: Vec<Vec<f64>> = dims[..n_layers].iter().map(|&d| vec![0.0; d]).collect();
        for k in (0..n_layers).rev() {
            let fan_in = dims[k];
            let layer = &self.layers[k];
            let a = &tape.acts[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * fan_in..(o + 1) * fan_in];
                for (&w, ga) in row.iter().zip(g_act[k].iter_mut()) {
                    *ga += w * d;
                }
                if with_params {
                    let gl = &mut grads.layers[k];
                    gl.bias[o] = d;
                    let grow = &mut gl.weights[o * fan_in..(o + 1) * fan_in];
                    for (gw, &x) in grow.iter_mut().zip(a) {
                        *gw = d * x;
                    }
                }
            }
            for &(s, t) in &self.arch.skip_pairs {
                if t == k + 1 {
                    g_act[s].iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
                }
            }
            if k > 0 {
                delta = g_act[k]
                    .iter()
                    .zip(&tape.pre[k - 1])
                    .map(|(g, &u)| g * silu_grad(u))
                    .collect();
            }
        }
        GradPair {
            grad_params: grads,
            grad_input: std::mem::take(&mut g_act[0]),
        }
    }

    /// Number of scalars in [`Self::to_flat`].
    pub fn flat_len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum::<usize>()
            + 1
    }

    /// Parameters in a fixed order: per layer weights then biases, then the output scale.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.flat_len());
        for l in &self.layers {
            v.extend_from_slice(&l.weights);
            v.extend_from_slice(&l.bias);
        }
        v.push(self.tanh_scale);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(invalid("flat parameter vector has the wrong length"));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        self.tanh_scale = flat[off];
        Ok(())
    }

    /// `self += alpha * other` for same-shaped parameter sets.
    pub fn add_scaled(&mut self, other: &MlpParams, alpha: f64) {
        debug_assert_eq!(self.arch, other.arch);
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += alpha * y);
            a.bias
                .iter_mut()
                .zip(&b.bias)
                .for_each(|(x, y)| *x += alpha * y);
        }
        self.tanh_scale += alpha * other.tanh_scale;
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= alpha);
            l.bias.iter_mut().for_each(|x| *x *= alpha);
        }
        self.tanh_scale *= alpha;
    }

    pub fn is_finite(&self) -> bool {
        self.tanh_scale.is_finite()
            && self
                .layers
                .iter()
                .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "febm-mlp 1")?;
        let dims: Vec<String> = self.arch.layer_dims.iter().map(usize::to_string).collect();
        writeln!(w, "dims {}", dims.join(" "))?;
        let head = match self.arch.head {
            OutputHead::Linear => "linear",
            OutputHead::ScaledTanh => "scaled_tanh",
        };
        writeln!(w, "head {head}")?;
        let skips: Vec<String> = self
            .arch
            .skip_pairs
            .iter()
            .map(|(s, t)| format!("{s}:{t}"))
            .collect();
        writeln!(w, "skips {}", skips.join(" "))?;
        for (k, l) in self.layers.iter().enumerate() {
            writeln!(w, "layer {k}")?;
            let fan_in = self.arch.layer_dims[k];
            for row in l.weights.chunks(fan_in) {
                write_row(&mut w, row)?;
            }
            write_row(&mut w, &l.bias)?;
        }
        writeln!(w, "tanh_scale {:e}", self.tanh_scale)
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut rd = LineReader::new(r);
        let magic = rd.keyed("febm-mlp")?;
        if magic.first().map(String::as_str) != Some("1") {
            return Err(rd.err("unsupported network checkpoint version"));
        }
        let layer_dims = rd
            .keyed("dims")?
            .iter()
            .map(|t| rd.parse::<usize>(t))
            .collect::<Result<Vec<_>>>()?;
        let head = match rd.keyed("head")?.first().map(String::as_str) {
            Some("linear") => OutputHead::Linear,
            Some("scaled_tanh") => OutputHead::ScaledTanh,
            _ => return Err(rd.err("unknown output head")),
        };
        let mut skip_pairs = Vec::new();
        for t in rd.keyed("skips")? {
            let (s, d) = t
                .split_once(':')
                .ok_or_else(|| rd.err("skip pairs are `from:to`"))?;
            skip_pairs.push((rd.parse(s)?, rd.parse(d)?));
        }
        let arch = MlpArch {
            layer_dims,
            skip_pairs,
            head,
        };
        let mut params = Self::zeros(arch)?;
        let dims = params.arch.layer_dims.clone();
        for (k, l) in params.layers.iter_mut().enumerate() {
            rd.keyed("layer")?;
            let mut w = Vec::with_capacity(dims[k] * dims[k + 1]);
            for _ in 0..dims[k + 1] {
                w.extend(rd.row(dims[k])?);
            }
            l.weights = w;
            l.bias = rd.row(dims[k + 1])?;
        }
        let s = rd.keyed("tanh_scale")?;
        params.tanh_scale = rd.parse(s.first().ok_or_else(|| rd.err("missing tanh_scale"))?)?;
        Ok(params)
    }
}

/// Plain network with a linear head and no skips.
pub fn init_params(layer_dims: &[usize], seed: u64) -> Result<MlpParams> {
    MlpParams::init(
        MlpArch::plain(layer_dims.to_vec(), OutputHead::Linear),
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(MlpArch::residual(3, 8, 3, 2, OutputHead::Linear)).unwrap();
        assert_eq!(p.forward(&[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let mut p = init_params(&[3, 3], 1).unwrap();
        p.layers[0].weights = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(p.forward(&[0.5, -2.0, 7.0]).unwrap(), vec![0.5, -2.0, 7.0]);
    }

    #[test]
    fn silu_through_scalar_net() {
        let mut p = init_params(&[1, 1, 1], 3).unwrap();
        p.layers[0].weights = vec![1.0];
        p.layers[1].weights = vec![1.0];
        let out = p.forward(&[1.0]).unwrap()[0];
        assert!((out - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn linear_grad_input_is_transpose_product() {
        let p = init_params(&[3, 2], 9).unwrap();
        let up = [0.7, -1.1];
        let g = p.backward(&[0.1, 0.2, 0.3], &up).unwrap();
        for i in 0..3 {
            let expect = p.layers[0].weights[i] * up[0] + p.layers[0].weights[3 + i] * up[1];
            assert!((g.grad_input[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = MlpParams::init(MlpArch::residual(2, 5, 3, 1, OutputHead::ScaledTanh), 4).unwrap();
        let g = p.backward(&[0.3, 0.4], &[0.0]).unwrap();
        assert!(g.grad_input.iter().all(|v| *v == 0.0));
        assert!(g.grad_params.to_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = init_params(&[2, 4, 1], 42).unwrap();
        let b = init_params(&[2, 4, 1], 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers[0].weights.len(), 4 * 2);
        assert_eq!(a.layers[1].weights.len(), 4);
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
        assert_eq!(a.tanh_scale, 1.0);
    }

    #[test]
    fn init_std_matches_fan_in() {
        let p = init_params(&[512, 64], 5).unwrap();
        let w = &p.layers[0].weights;
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd = (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let target = 1.0 / 512f64.sqrt();
        assert!((sd / target - 1.0).abs() < 0.2, "{sd} vs {target}");
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = init_params(&[2, 3], 0).unwrap();
        assert!(p.forward(&[1.0]).is_err());
        assert!(p.backward(&[1.0, 2.0], &[1.0]).is_err());
        assert!(MlpParams::init(
            MlpArch {
                layer_dims: vec![2, 3, 4, 1],
                skip_pairs: vec![(1, 2)],
                head: OutputHead::Linear
            },
            0
        )
        .is_err());
    }

    #[test]
    fn skip_path_with_zeroed_inner_layers() {
        let mut p = MlpParams::init(MlpArch::residual(2, 4, 3, 1, OutputHead::Linear), 11).unwrap();
        for k in [1, 2] {
            p.layers[k].weights.iter_mut().for_each(|w| *w = 0.0);
        }
        let x = [0.4, -0.9];
        let h1: Vec<f64> = (0..4)
            .map(|o| {
                silu(p.layers[0].weights[2 * o] * x[0] + p.layers[0].weights[2 * o + 1] * x[1])
            })
            .collect();
        let h2: Vec<f64> = h1.iter().map(|&v| silu(v)).collect();
        let h3: Vec<f64> = h2.iter().map(|&v| silu(v)).collect();
        let expect: f64 = h3
            .iter()
            .zip(&p.layers[3].weights)
            .map(|(a, w)| a * w)
            .sum();
        assert!((p.forward(&x).unwrap()[0] - expect).abs() < 1e-14);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = MlpParams::init(MlpArch::residual(3, 6, 3, 1, OutputHead::ScaledTanh), 8).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(MlpParams::read_from(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn flat_round_trip() {
        let p = MlpParams::init(MlpArch::residual(3, 6, 2, 2, OutputHead::Linear), 8).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat()).unwrap();
        assert_eq!(p, q);
    }
}
