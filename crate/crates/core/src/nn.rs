//! Small fully connected network trained with Adam.
//!
//! All parameters live in one flat vector, layer by layer: the weight block of
//! a layer is stored input-major (`w[j * out + i]` connects input `j` to output
//! `i`) followed by its bias. Hidden layers use ReLU, the output is linear.
//!
//! Every reduction runs in a fixed order so results are bit-identical across
//! runs and across SIMD widths.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EDGQNET1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct LayerShape {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl LayerShape {
    fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    fn bias_offset(&self) -> usize {
        self.offset + self.weight_len()
    }

    fn end(&self) -> usize {
        self.bias_offset() + self.outputs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<LayerShape>,
    params: Vec<f64>,
}

/// One regression sample on a single output unit.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub output: usize,
    pub target: f64,
}

/// Reusable activation buffers for forward/backward passes.
#[derive(Clone, Debug, Default)]
pub struct Scratch {
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

fn layout(sizes: &[usize]) -> Vec<LayerShape> {
    let mut offset = 0;
    sizes
        .windows(2)
        .map(|w| {
            let shape = LayerShape {
                inputs: w[0],
                outputs: w[1],
                offset,
            };
            offset = shape.end();
            shape
        })
        .collect()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with eight independent lanes, summed in a fixed order.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    let pairs = [
        lanes[0] + lanes[4],
        lanes[1] + lanes[5],
        lanes[2] + lanes[6],
        lanes[3] + lanes[7],
    ];
    (pairs[0] + pairs[2]) + (pairs[1] + pairs[3]) + tail
}

impl Mlp {
    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        for shape in net.layers.clone() {
            let bound = 1.0 / (shape.inputs as f64).sqrt();
            for p in &mut net.params[shape.offset..shape.end()] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "a network needs an input and an output size");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let layers = layout(sizes);
        let n = layers.last().unwrap().end();
        Mlp {
            sizes: sizes.to_vec(),
            layers,
            params: vec![0.0; n],
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes);
        if params.len() != net.params.len() {
            return Err(Error::Weights(format!(
                "expected {} parameters for sizes {:?}, got {}",
                net.params.len(),
                sizes,
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Mutable view of the weight from `input` to `output` in layer `layer`.
    pub fn weight_mut(&mut self, layer: usize, input: usize, output: usize) -> &mut f64 {
        let s = self.layers[layer];
        &mut self.params[s.offset + input * s.outputs + output]
    }

    pub fn bias_mut(&mut self, layer: usize, output: usize) -> &mut f64 {
        let s = self.layers[layer];
        &mut self.params[s.bias_offset() + output]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Order-sensitive digest of the parameter bits.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over the little-endian bytes.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for b in p.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    fn layer_forward(&self, shape: LayerShape, input: &[f64], out: &mut Vec<f64>, hidden: bool) {
        let w = &self.params[shape.offset..shape.bias_offset()];
        out.clear();
        out.extend_from_slice(&self.params[shape.bias_offset()..shape.end()]);
        for (j, &x) in input.iter().enumerate() {
            if x != 0.0 {
                axpy(out, x, &w[j * shape.outputs..(j + 1) * shape.outputs]);
            }
        }
        if hidden {
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    /// Runs the network, keeping every layer's activation in `scratch`.
    /// Returns the output slice.
    pub fn forward_with<'s>(&self, input: &[f64], scratch: &'s mut Scratch) -> &'s [f64] {
        assert_eq!(
            input.len(),
            self.input_dim(),
            "input dimension mismatch: expected {}, got {}",
            self.input_dim(),
            input.len()
        );
        let n = self.layers.len();
        scratch.activations.resize_with(n + 1, Vec::new);
        scratch.activations[0].clear();
        scratch.activations[0].extend_from_slice(input);
        for (l, &shape) in self.layers.iter().enumerate() {
            let (prev, rest) = scratch.activations.split_at_mut(l + 1);
            self.layer_forward(shape, &prev[l], &mut rest[0], l + 1 < n);
        }
        &scratch.activations[n]
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut scratch = Scratch::default();
        self.forward_with(input, &mut scratch).to_vec()
    }

    /// Accumulates into `grad` the gradient of `scale · output[unit]`,
    /// using the activations left in `scratch` by the last forward pass.
    fn backprop_unit(&self, unit: usize, scale: f64, scratch: &mut Scratch, grad: &mut [f64]) {
        let n = self.layers.len();
        let Scratch {
            activations,
            delta,
            delta_prev,
        } = scratch;
        delta.clear();
        delta.resize(self.output_dim(), 0.0);
        delta[unit] = scale;
        for l in (0..n).rev() {
            let shape = self.layers[l];
            let input = &activations[l];
            let gw = &mut grad[shape.offset..shape.bias_offset()];
            for (j, &x) in input.iter().enumerate() {
                if x != 0.0 {
                    axpy(&mut gw[j * shape.outputs..(j + 1) * shape.outputs], x, delta);
                }
            }
            for (gb, &d) in grad[shape.bias_offset()..shape.end()].iter_mut().zip(delta.iter()) {
                *gb += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[shape.offset..shape.bias_offset()];
            delta_prev.clear();
            delta_prev.extend(input.iter().enumerate().map(|(j, &a)| {
                // ReLU derivative, taken as 0 at the kink.
                if a > 0.0 {
                    dot(&w[j * shape.outputs..(j + 1) * shape.outputs], delta)
                } else {
                    0.0
                }
            }));
            std::mem::swap(delta, delta_prev);
        }
    }

    /// Weighted squared error `Σ wᵢ (Q(xᵢ)[aᵢ] − yᵢ)² / Σ wᵢ` and its gradient.
    pub fn loss_and_gradient(&self, batch: &[Sample<'_>], weights: &[f64], scratch: &mut Scratch) -> (f64, Vec<f64>) {
        assert!(!batch.is_empty(), "empty batch");
        assert_eq!(batch.len(), weights.len(), "one weight per sample");
        let total: f64 = weights.iter().sum();
        assert!(total > 0.0, "sample weights must not all be zero");
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (sample, &w) in batch.iter().zip(weights) {
            assert!(w >= 0.0, "negative sample weight");
            assert!(sample.output < self.output_dim(), "output unit out of range");
            let q = self.forward_with(sample.input, scratch)[sample.output];
            let err = q - sample.target;
            loss += w * err * err;
            if w > 0.0 && err != 0.0 {
                self.backprop_unit(sample.output, 2.0 * w * err / total, scratch, &mut grad);
            }
        }
        (loss / total, grad)
    }

    /// `θ̂ ← τ·θ + (1−τ)·θ̂` for every parameter.
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) {
        assert_eq!(self.sizes, source.sizes, "architecture mismatch");
        if tau == 1.0 {
            self.params.copy_from_slice(&source.params);
            return;
        }
        // Incremental form keeps θ̂ = θ a fixed point.
        for (t, &s) in self.params.iter_mut().zip(&source.params) {
            *t += tau * (s - *t);
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Weights(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != MAGIC {
            return Err(Error::Weights("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(bad)?;
        let count = u32::from_le_bytes(word) as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Weights(format!("implausible layer count {count}")));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut word).map_err(bad)?;
            let s = u32::from_le_bytes(word) as usize;
            if s == 0 {
                return Err(Error::Weights("zero layer size".into()));
            }
            sizes.push(s);
        }
        let n = layout(&sizes).last().unwrap().end();
        let mut params = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(bad)?;
            params.push(f64::from_le_bytes(buf));
        }
        if r.read(&mut buf).map_err(bad)? != 0 {
            return Err(Error::Weights("trailing bytes".into()));
        }
        Self::from_params(&sizes, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// One optimizer step on the weighted squared error of `batch`. Returns the
/// loss before the step. A non-finite loss leaves the network untouched.
pub fn backward_and_step(
    net: &mut Mlp,
    adam: &mut Adam,
    batch: &[Sample<'_>],
    weights: &[f64],
    scratch: &mut Scratch,
) -> Result<f64> {
    let (loss, grad) = net.loss_and_gradient(batch, weights, scratch);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            loss,
            step: adam.steps(),
        });
    }
    adam.apply(&mut net.params, &grad);
    Ok(loss)
}
