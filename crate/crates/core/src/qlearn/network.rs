//! Fully connected network with rectifier activations between affine layers.
//!
//! Each layer stores its weights as a `fan_in x fan_out` row-major matrix so
//! a forward pass is `y = x W + b`.

use std::fmt::Debug;
use std::io::{self, Read, Write};

use num_traits::Float;
use rand::Rng;

use super::QError;

pub const NETWORK_MAGIC: &[u8; 4] = b"GQN1";

pub trait Scalar: Float + Debug + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            fan_in,
            fan_out,
            weights: vec![T::zero(); fan_in * fan_out],
            biases: vec![T::zero(); fan_out],
        }
    }

    fn forward_into(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend_from_slice(&self.biases);
        for (i, &x) in input.iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            let row = &self.weights[i * self.fan_out..(i + 1) * self.fan_out];
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + x * w;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<Layer<T>>,
}

/// Per-layer activations kept for backpropagation. `inputs[l]` feeds layer
/// `l`; `pre[l]` is its affine output before the rectifier.
struct Trace<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// Zero-initialized network with layer widths `dims` (input first).
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least input and output widths");
        Mlp {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    /// Uniform initialization in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut net = Mlp::zeros(dims);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = T::from_f64(rng.random_range(-bound..bound));
            }
        }
        net
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().expect("nonempty").fan_out
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_len()];
        d.extend(self.layers.iter().map(|l| l.fan_out));
        d
    }

    pub fn same_shape(&self, other: &Mlp<T>) -> bool {
        self.dims() == other.dims()
    }

    fn check_input(&self, input: &[T]) -> Result<(), QError> {
        if input.len() != self.input_len() {
            return Err(QError::DimensionMismatch {
                expected: self.input_len(),
                got: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>, QError> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward_into(&cur, &mut next);
            if l != last {
                relu_in_place(&mut next);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    fn forward_trace(&self, input: &[T]) -> (Vec<T>, Trace<T>) {
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut cur = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward_into(&cur, &mut z);
            trace.inputs.push(cur);
            let mut a = z.clone();
            if l != last {
                relu_in_place(&mut a);
            }
            trace.pre.push(z);
            cur = a;
        }
        (cur, trace)
    }

    /// Backpropagate `d_out` (gradient w.r.t. the network output) for one
    /// input, accumulating into `grads`.
    fn backward(&self, trace: &Trace<T>, d_out: Vec<T>, grads: &mut Mlp<T>) {
        let mut delta = d_out;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let g = &mut grads.layers[l];
            let input = &trace.inputs[l];
            let active: Vec<usize> = (0..delta.len()).filter(|&j| delta[j] != T::zero()).collect();
            for &j in &active {
                g.biases[j] = g.biases[j] + delta[j];
            }
            let mut d_in = vec![T::zero(); layer.fan_in];
            for (i, &x) in input.iter().enumerate() {
                let row = i * layer.fan_out;
                let mut acc = T::zero();
                for &j in &active {
                    if x != T::zero() {
                        g.weights[row + j] = g.weights[row + j] + x * delta[j];
                    }
                    acc = acc + layer.weights[row + j] * delta[j];
                }
                d_in[i] = acc;
            }
            if l > 0 {
                // rectifier derivative of the previous layer's output
                for (d, &z) in d_in.iter_mut().zip(&trace.pre[l - 1]) {
                    if z <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            delta = d_in;
        }
    }

    /// Mean squared TD error over `samples` (input, action, target) and its
    /// gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, samples: &[(Vec<T>, usize, T)]) -> Result<(T, Mlp<T>), QError> {
        if samples.is_empty() {
            return Err(QError::EmptyBatch);
        }
        let n = T::from_f64(samples.len() as f64);
        let two = T::from_f64(2.0);
        let mut grads = Mlp::zeros(&self.dims());
        let mut loss = T::zero();
        for (input, action, target) in samples {
            self.check_input(input)?;
            if *action >= self.output_len() {
                return Err(QError::DimensionMismatch {
                    expected: self.output_len(),
                    got: *action,
                });
            }
            let (q, trace) = self.forward_trace(input);
            let err = q[*action] - *target;
            loss = loss + err * err / n;
            let mut d_out = vec![T::zero(); q.len()];
            d_out[*action] = two * err / n;
            self.backward(&trace, d_out, &mut grads);
        }
        Ok((loss, grads))
    }

    /// `self -= lr * grads`.
    pub fn apply_gradient(&mut self, grads: &Mlp<T>, lr: T) -> Result<(), QError> {
        if !self.same_shape(grads) {
            return Err(QError::ShapeMismatch);
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, &d) in layer.weights.iter_mut().zip(&g.weights) {
                *w = *w - lr * d;
            }
            for (b, &d) in layer.biases.iter_mut().zip(&g.biases) {
                *b = *b - lr * d;
            }
        }
        Ok(())
    }

    pub fn copy_from(&mut self, other: &Mlp<T>) -> Result<(), QError> {
        if !self.same_shape(other) {
            return Err(QError::ShapeMismatch);
        }
        self.layers.clone_from(&other.layers);
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Flat parameter view: each layer's weights then biases, layer by layer.
    pub fn param_mut(&mut self, mut k: usize) -> &mut T {
        for layer in &mut self.layers {
            if k < layer.weights.len() {
                return &mut layer.weights[k];
            }
            k -= layer.weights.len();
            if k < layer.biases.len() {
                return &mut layer.biases[k];
            }
            k -= layer.biases.len();
        }
        panic!("parameter index out of range")
    }

    pub fn param(&self, k: usize) -> T {
        let mut k = k;
        for layer in &self.layers {
            if k < layer.weights.len() {
                return layer.weights[k];
            }
            k -= layer.weights.len();
            if k < layer.biases.len() {
                return layer.biases[k];
            }
            k -= layer.biases.len();
        }
        panic!("parameter index out of range")
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }
}

fn relu_in_place<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

impl Mlp<f32> {
    /// Binary form: magic, layer count, per-layer (rows, cols) as u32 LE,
    /// then per layer the weights and biases as f32 LE, row-major.
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(NETWORK_MAGIC)?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            w.write_all(&(layer.fan_in as u32).to_le_bytes())?;
            w.write_all(&(layer.fan_out as u32).to_le_bytes())?;
        }
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.biases) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Mlp<f32>, QError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(format_err)?;
        if &magic != NETWORK_MAGIC {
            return Err(QError::Format(format!("bad magic {magic:?}")));
        }
        let count = read_u32(r)? as usize;
        if count == 0 || count > 64 {
            return Err(QError::Format(format!("implausible layer count {count}")));
        }
        let mut dims = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 1 << 28 {
                return Err(QError::Format(format!("implausible layer dims {rows}x{cols}")));
            }
            dims.push((rows, cols));
        }
        for pair in dims.windows(2) {
            if pair[0].1 != pair[1].0 {
                return Err(QError::Format(format!(
                    "layer widths do not chain: {}x{} then {}x{}",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        let mut layers = Vec::with_capacity(count);
        for (rows, cols) in dims {
            let mut layer = Layer::zeros(rows, cols);
            for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                let mut buf = [0u8; 4];
                r.read_exact(&mut buf).map_err(format_err)?;
                *v = f32::from_le_bytes(buf);
            }
            layers.push(layer);
        }
        Ok(Mlp { layers })
    }
}

fn format_err(e: io::Error) -> QError {
    QError::Format(format!("truncated network data: {e}"))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, QError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(format_err)?;
    Ok(u32::from_le_bytes(buf))
}
