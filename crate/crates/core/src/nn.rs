//! Fixed-topology dense networks with hand-written backpropagation.
//!
//! Every network here is `input → 128 → 128 → output` with ReLU on the two
//! hidden layers and a linear output; heads apply softmax or sigmoid
//! themselves. Parameters are `f64`. Weights are stored row-major by output
//! unit, so `w[j * inputs + i]` connects input `i` to unit `j`.
//!
//! # Checkpoint layout
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "RGNN"
//! version      u32      1
//! layer_count  u32      L
//! shapes       L × (u32 inputs, u32 outputs)
//! params       per layer: weights (outputs·inputs f64), biases (outputs f64)
//! has_adam     u8       0 or 1
//! adam         if 1: u64 step, then first moments, then second moments,
//!              each flattened in the same order as params
//! ```

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HIDDEN: usize = 128;
const MAGIC: &[u8; 4] = b"RGNN";
const FORMAT_VERSION: u32 = 1;
const OUTPUT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            w: vec![0.0; inputs * outputs],
            b: vec![0.0; outputs],
        }
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct AdamState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Network weights plus the optimizer moments that travel with them.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    layers: Vec<Dense>,
    adam: AdamState,
}

/// Gradient with the same shapes as a [`NetParams`], plus the gradient
/// with respect to the input vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrad {
    pub layers: Vec<Dense>,
    pub input: Vec<f64>,
}

impl NetGrad {
    pub fn zeros_like(params: &NetParams) -> Self {
        NetGrad {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
            input: vec![0.0; params.input_dim()],
        }
    }

    pub fn clear(&mut self) {
        for l in &mut self.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        self.input.fill(0.0);
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|g| *g *= k);
        }
        self.input.iter_mut().for_each(|g| *g *= k);
    }

    pub fn is_zero(&self) -> bool {
        self.params().all(|g| g == 0.0)
    }

    /// Parameter gradients flattened in checkpoint order.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
    }

    pub fn norm(&self) -> f64 {
        self.params().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Reusable buffers holding every layer's output from the last forward
/// pass; index 0 is the input.
#[derive(Debug, Clone, Default)]
pub struct Activations {
    values: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ac, ar) = a.split_at(a.len() - a.len() % 4);
    let (bc, br) = b.split_at(ac.len());
    for (x, y) in ac.chunks_exact(4).zip(bc.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ar.iter().zip(br) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl NetParams {
    /// Randomly initialized network with the given layer widths. Hidden
    /// layers use He-uniform bounds; the output layer is shrunk a hundredfold
    /// so fresh policy heads start close to uniform.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "a network needs at least input and output widths");
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, d)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let mut bound = (6.0 / fan_in as f64).sqrt();
                if k == n - 1 {
                    bound *= OUTPUT_INIT_SCALE;
                }
                let mut layer = Dense::zeros(fan_in, fan_out);
                layer.w.iter_mut().for_each(|w| *w = rng.gen_range(-bound..bound));
                layer
            })
            .collect();
        Self::from_layers(layers)
    }

    /// `input → 128 → 128 → output`.
    pub fn mlp(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self::new(&[input, HIDDEN, HIDDEN, output], rng)
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self::from_layers(dims.windows(2).map(|d| Dense::zeros(d[0], d[1])).collect())
    }

    pub fn from_layers(layers: Vec<Dense>) -> Self {
        assert!(!layers.is_empty());
        for pair in layers.windows(2) {
            assert_eq!(pair[0].outputs, pair[1].inputs, "layer widths must chain");
        }
        for l in &layers {
            assert_eq!(l.w.len(), l.inputs * l.outputs);
            assert_eq!(l.b.len(), l.outputs);
        }
        let n: usize = layers.iter().map(Dense::param_count).sum();
        NetParams {
            layers,
            adam: AdamState {
                step: 0,
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Number of Adam steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut acts = Activations::default();
        self.forward_cached(x, &mut acts)?;
        Ok(acts.output().to_vec())
    }

    /// Forward pass that keeps every layer's activations for a later
    /// [`NetParams::accumulate_grad`].
    pub fn forward_cached<'a>(&self, x: &[f64], acts: &'a mut Activations) -> Result<&'a [f64]> {
        self.check_input(x)?;
        let n = self.layers.len();
        acts.values.resize_with(n + 1, Vec::new);
        acts.values[0].clear();
        acts.values[0].extend_from_slice(x);
        for (k, layer) in self.layers.iter().enumerate() {
            let (before, after) = acts.values.split_at_mut(k + 1);
            let input = &before[k];
            let out = &mut after[0];
            out.clear();
            out.extend(
                layer
                    .w
                    .chunks_exact(layer.inputs)
                    .zip(&layer.b)
                    .map(|(row, b)| b + dot(row, input)),
            );
            if k + 1 < n {
                out.iter_mut().for_each(|z| *z = z.max(0.0));
            }
        }
        Ok(acts.output())
    }

    /// Add the gradient of `upstream · output` to `grad`, using activations
    /// from the matching [`NetParams::forward_cached`] call.
    pub fn accumulate_grad(&self, acts: &mut Activations, upstream: &[f64], grad: &mut NetGrad) {
        let n = self.layers.len();
        debug_assert_eq!(upstream.len(), self.output_dim());
        let Activations {
            values,
            delta,
            delta_prev,
        } = acts;
        delta.clear();
        delta.extend_from_slice(upstream);
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            if k + 1 < n {
                for (d, a) in delta.iter_mut().zip(&values[k + 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let g = &mut grad.layers[k];
            let input = &values[k];
            axpy(1.0, delta, &mut g.b);
            delta_prev.clear();
            delta_prev.resize(layer.inputs, 0.0);
            for ((dj, wrow), grow) in delta
                .iter()
                .zip(layer.w.chunks_exact(layer.inputs))
                .zip(g.w.chunks_exact_mut(layer.inputs))
            {
                if *dj != 0.0 {
                    axpy(*dj, input, grow);
                    axpy(*dj, wrow, delta_prev);
                }
            }
            std::mem::swap(delta, delta_prev);
        }
        axpy(1.0, delta, &mut grad.input);
    }

    /// Gradient of `upstream · forward(x)` with respect to every parameter
    /// and to `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<NetGrad> {
        if upstream.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut acts = Activations::default();
        self.forward_cached(x, &mut acts)?;
        let mut grad = NetGrad::zeros_like(self);
        self.accumulate_grad(&mut acts, upstream, &mut grad);
        Ok(grad)
    }

    /// One bias-corrected Adam step descending `grad`.
    pub fn adam_step(&mut self, grad: &NetGrad, cfg: &AdamConfig) -> Result<()> {
        if grad.layers.len() != self.layers.len()
            || grad
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, p)| g.w.len() != p.w.len() || g.b.len() != p.b.len())
        {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: grad.layers.iter().map(Dense::param_count).sum(),
            });
        }
        if grad.params().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let st = &mut self.adam;
        st.step += 1;
        let t = st.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let mut idx = 0;
        for (p, g) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, gw) in p
                .w
                .iter_mut()
                .chain(p.b.iter_mut())
                .zip(g.w.iter().chain(g.b.iter()))
            {
                let m = &mut st.m[idx];
                let v = &mut st.v[idx];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gw;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gw * gw;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                idx += 1;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.param_count() * 24);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
            out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
        }
        for v in self.params() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(1);
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        for v in self.adam.m.iter().chain(&self.adam.v) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic; not a network checkpoint".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        if count == 0 || count > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {count}")));
        }
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            shapes.push((r.u32()? as usize, r.u32()? as usize));
        }
        if shapes.windows(2).any(|s| s[0].1 != s[1].0) {
            return Err(Error::Checkpoint("layer widths do not chain".into()));
        }
        let mut layers = Vec::with_capacity(count);
        for (inputs, outputs) in shapes {
            let mut l = Dense::zeros(inputs, outputs);
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = r.f64()?;
            }
            layers.push(l);
        }
        let mut net = NetParams::from_layers(layers);
        match r.take(1)?[0] {
            0 => {}
            1 => {
                net.adam.step = r.u64()?;
                let st = &mut net.adam;
                for v in st.m.iter_mut().chain(st.v.iter_mut()) {
                    *v = r.f64()?;
                }
            }
            b => return Err(Error::Checkpoint(format!("bad optimizer flag {b}"))),
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Result of comparing `backward` against central finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates where a step of `h` flipped a ReLU, so the two-sided
    /// difference straddles a kink and says nothing about the derivative.
    pub skipped: usize,
}

/// Denominator floor for the relative error, so exact zeros compare sanely.
pub const GRAD_CHECK_FLOOR: f64 = 1e-8;

fn probe(net: &NetParams, x: &[f64], upstream: &[f64], acts: &mut Activations) -> (f64, Vec<bool>) {
    let out = net.forward_cached(x, acts).expect("input checked by caller");
    let loss = dot(out, upstream);
    let n = acts.values.len();
    let mask = acts.values[1..n - 1]
        .iter()
        .flat_map(|v| v.iter().map(|a| *a > 0.0))
        .collect();
    (loss, mask)
}

fn param_mut(net: &mut NetParams, layer: usize, which: usize, i: usize) -> &mut f64 {
    let l = &mut net.layers[layer];
    if which == 0 {
        &mut l.w[i]
    } else {
        &mut l.b[i]
    }
}

/// Check the gradient of `upstream · forward(x)` with respect to every
/// parameter and input coordinate, stepping each by `±h`.
pub fn gradient_check(net: &NetParams, x: &[f64], upstream: &[f64], h: f64) -> Result<GradCheck> {
    let analytic = net.backward(x, upstream)?;
    let mut work = net.clone();
    let mut xs = x.to_vec();
    let mut acts = Activations::default();
    let (_, base_mask) = probe(net, x, upstream, &mut acts);
    let mut report = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut record = |a: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>)| {
        if plus.1 != base_mask || minus.1 != base_mask {
            report.skipped += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
        report.max_rel_err = report.max_rel_err.max(rel);
        report.checked += 1;
    };
    for k in 0..work.layers.len() {
        for which in 0..2 {
            let len = if which == 0 { work.layers[k].w.len() } else { work.layers[k].b.len() };
            for i in 0..len {
                let a = if which == 0 { analytic.layers[k].w[i] } else { analytic.layers[k].b[i] };
                let orig = *param_mut(&mut work, k, which, i);
                *param_mut(&mut work, k, which, i) = orig + h;
                let plus = probe(&work, &xs, upstream, &mut acts);
                *param_mut(&mut work, k, which, i) = orig - h;
                let minus = probe(&work, &xs, upstream, &mut acts);
                *param_mut(&mut work, k, which, i) = orig;
                record(a, plus, minus);
            }
        }
    }
    for i in 0..xs.len() {
        let orig = xs[i];
        xs[i] = orig + h;
        let plus = probe(net, &xs, upstream, &mut acts);
        xs[i] = orig - h;
        let minus = probe(net, &xs, upstream, &mut acts);
        xs[i] = orig;
        record(analytic.input[i], plus, minus);
    }
    Ok(report)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
