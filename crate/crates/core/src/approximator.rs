//! Small dense network with analytic backpropagation.
//!
//! Parameters live in one flat vector so gradients and optimizer moments can
//! share its layout. Layer `l` maps `sizes[l]` inputs to `sizes[l + 1]`
//! outputs and stores its weights row-major (one row per output unit)
//! followed by its biases. Hidden layers use `tanh`; the single output unit
//! uses the configured [`OutputActivation`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Sigmoid,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    output: OutputActivation,
    params: Vec<f64>,
}

/// Scratch buffers reused across forward/backward passes.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `tanh` through a single `exp`; noticeably cheaper than libm's and
/// within a few ulps, which is all the hidden layers need.
#[inline]
fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Dot product with four independent accumulators so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0f64; 4];
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl DenseNet {
    /// Zero-initialised network.
    pub fn zeros(layer_sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidParameter("network needs at least input and output".into()));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter("layer sizes must be positive".into()));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidParameter("output width must be 1".into()));
        }
        let count = layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            output,
            params: vec![0.0; count],
        })
    }

    /// Uniform fan-in initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn random<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        output: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, output)?;
        for l in 0..net.num_layers() {
            let bound = 1.0 / (net.layer_sizes[l] as f64).sqrt();
            let (start, end) = net.layer_range(l);
            for p in &mut net.params[start..end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_parts(
        layer_sizes: &[usize],
        output: OutputActivation,
        params: Vec<f64>,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, output)?;
        if params.len() != net.params.len() {
            return Err(Error::DimensionMismatch {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("non-finite network parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flat index range holding layer `l` (weights then biases).
    pub fn layer_range(&self, l: usize) -> (usize, usize) {
        let start: usize = self.layer_sizes[..l + 1]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        (start, start + i * o + o)
    }

    /// Layer that owns flat parameter `index`.
    pub fn layer_of(&self, index: usize) -> usize {
        (0..self.num_layers())
            .find(|&l| index < self.layer_range(l).1)
            .unwrap_or(self.num_layers() - 1)
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.layer_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            delta: Vec::new(),
            delta_prev: Vec::new(),
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                got: input.len(),
            });
        }
        if let Some(&bad) = input.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "network input",
                value: bad,
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<f64> {
        let mut ws = self.workspace();
        self.forward_with(input, &mut ws)
    }

    /// Forward pass leaving every layer's activations in `ws`.
    pub fn forward_with(&self, input: &[f64], ws: &mut Workspace) -> Result<f64> {
        self.check_input(input)?;
        if ws.acts.len() != self.layer_sizes.len() {
            *ws = self.workspace();
        }
        ws.acts[0].copy_from_slice(input);
        let mut offset = 0;
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let (a_in, a_out) = (&prev[l], &mut next[0]);
            for (o, out) in a_out.iter_mut().enumerate() {
                let z = dot(&weights[o * n_in..(o + 1) * n_in], a_in) + biases[o];
                *out = if l < last {
                    tanh(z)
                } else {
                    match self.output {
                        OutputActivation::Sigmoid => sigmoid(z),
                        OutputActivation::Identity => z,
                    }
                };
            }
        }
        Ok(ws.acts[last + 1][0])
    }

    /// Exact gradient of the scalar output with respect to every parameter.
    pub fn backward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        let mut ws = self.workspace();
        self.accumulate_gradient(input, 1.0, &mut grad, &mut ws)?;
        Ok(grad)
    }

    /// Adds `scale * ∇θ q(input)` into `grad` and returns `q(input)`.
    pub fn accumulate_gradient(
        &self,
        input: &[f64],
        scale: f64,
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> Result<f64> {
        let out = self.forward_with(input, ws)?;
        self.backprop(out, scale, grad, ws)?;
        Ok(out)
    }

    /// Backward pass through the activations the last `forward_with` left in
    /// `ws`; `out` is that pass's result.
    pub fn backprop(&self, out: f64, scale: f64, grad: &mut [f64], ws: &mut Workspace) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let d_out = match self.output {
            OutputActivation::Sigmoid => out * (1.0 - out),
            OutputActivation::Identity => 1.0,
        };
        ws.delta.clear();
        ws.delta.push(d_out * scale);

        let mut end = self.params.len();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w_start = end - n_out - n_in * n_out;
            let b_start = end - n_out;
            let a_in = &ws.acts[l];
            for (o, &d) in ws.delta.iter().enumerate() {
                grad[b_start + o] += d;
                let row = &mut grad[w_start + o * n_in..w_start + (o + 1) * n_in];
                for (g, &a) in row.iter_mut().zip(a_in) {
                    *g += d * a;
                }
            }
            if l > 0 {
                ws.delta_prev.clear();
                ws.delta_prev.resize(n_in, 0.0);
                for (o, &d) in ws.delta.iter().enumerate() {
                    let row = &self.params[w_start + o * n_in..w_start + (o + 1) * n_in];
                    for (dp, &w) in ws.delta_prev.iter_mut().zip(row) {
                        *dp += w * d;
                    }
                }
                for (dp, &a) in ws.delta_prev.iter_mut().zip(a_in) {
                    *dp *= 1.0 - a * a;
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
            end = w_start;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl OptimizerState {
    pub fn adam(net: &DenseNet, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        Self::new(OptimizerKind::Adam, net, learning_rate, beta1, beta2, epsilon)
    }

    pub fn sgd(net: &DenseNet, learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, net, learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn new(
        kind: OptimizerKind,
        net: &DenseNet,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!("learning rate {learning_rate} must be > 0")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::InvalidParameter("moment decays must lie in [0, 1)".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be > 0".into()));
        }
        let n = net.num_params();
        Ok(Self {
            kind,
            learning_rate,
            beta1,
            beta2,
            epsilon,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// Moves the parameters along `scale * grad` (ascent on `δ·∇q`).
pub fn apply_update(
    net: &mut DenseNet,
    opt: &mut OptimizerState,
    grad: &[f64],
    scale: f64,
) -> Result<()> {
    if grad.len() != net.params.len() || opt.first_moment.len() != net.params.len() {
        return Err(Error::DimensionMismatch {
            expected: net.params.len(),
            got: grad.len(),
        });
    }
    if let Some(&bad) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            value: bad,
        });
    }
    opt.step_count += 1;
    let lr = opt.learning_rate;
    match opt.kind {
        OptimizerKind::Sgd => {
            for (p, &g) in net.params.iter_mut().zip(grad) {
                *p += lr * scale * g;
            }
        }
        OptimizerKind::Adam => {
            let (b1, b2) = (opt.beta1, opt.beta2);
            let t = opt.step_count as i32;
            let c1 = 1.0 - b1.powi(t);
            let c2 = 1.0 - b2.powi(t);
            let step = lr * c2.sqrt() / c1;
            let eps = opt.epsilon * c2.sqrt();
            for (((p, &g), m), v) in net
                .params
                .iter_mut()
                .zip(grad)
                .zip(opt.first_moment.iter_mut())
                .zip(opt.second_moment.iter_mut())
            {
                let g = g * scale;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p += step * *m / (v.sqrt() + eps);
            }
        }
    }
    Ok(())
}
