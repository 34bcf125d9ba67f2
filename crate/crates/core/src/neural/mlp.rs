use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NeuralError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dense feed-forward network with all parameters in one flat vector.
///
/// Layer `l` maps `sizes[l]` inputs to `sizes[l+1]` outputs; its weights are
/// stored row-major (`out x in`) followed by its biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Per-layer activations from one forward pass, input included.
#[derive(Clone, Debug)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace has at least the input")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Scaled-uniform hidden weights, zero biases, and an all-zero final layer.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self, NeuralError> {
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(NeuralError::InvalidSizes(sizes.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(sizes));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            if l == last {
                params.extend(std::iter::repeat(0.0).take(n_in * n_out + n_out));
            } else {
                let a = (6.0 / (n_in + n_out) as f64).sqrt();
                params.extend((0..n_in * n_out).map(|_| rng.gen_range(-a..a)));
                params.extend(std::iter::repeat(0.0).take(n_out));
            }
        }
        Ok(Self { sizes: sizes.to_vec(), activation, params })
    }

    pub fn from_parts(sizes: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self, NeuralError> {
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(NeuralError::InvalidSizes(sizes));
        }
        if params.len() != param_count(&sizes) {
            return Err(NeuralError::DimMismatch { expected: param_count(&sizes), got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NeuralError::NonFinite("parameters".into()));
        }
        Ok(Self { sizes, activation, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
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

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Range of layer `l`'s parameters (weights then biases) in the flat vector.
    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = param_count(&self.sizes[..=l]);
        start..start + self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1]
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        Ok(self.trace(x)?.acts.pop().unwrap())
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace, NeuralError> {
        if x.len() != self.sizes[0] {
            return Err(NeuralError::DimMismatch { expected: self.sizes[0], got: x.len() });
        }
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                out.push(if l == last { z } else { self.activation.apply(z) });
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        Ok(Trace { acts })
    }

    /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grads: &mut [f64]) {
        assert_eq!(d_out.len(), self.output_dim());
        assert_eq!(grads.len(), self.params.len());
        let mut delta = d_out.to_vec();
        let mut end = self.params.len();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = end - (n_in * n_out + n_out);
            let input = &trace.acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let g = &mut grads[off + o * n_in..off + (o + 1) * n_in];
                for (gi, xi) in g.iter_mut().zip(input) {
                    *gi += d * xi;
                }
                grads[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= self.activation.deriv_from_output(*a);
                }
                delta = prev;
            }
            end = off;
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Mean softmax cross-entropy over a batch and its parameter gradient.
pub fn cross_entropy_grad(mlp: &Mlp, batch: &[(Vec<f64>, usize)]) -> Result<(f64, Vec<f64>), NeuralError> {
    if batch.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut grads = mlp.zero_grads();
    let mut loss = 0.0;
    for (x, y) in batch {
        if *y >= mlp.output_dim() {
            return Err(NeuralError::BadLabel { label: *y, classes: mlp.output_dim() });
        }
        let trace = mlp.trace(x)?;
        let logp = log_softmax(trace.output());
        loss -= logp[*y];
        let mut d: Vec<f64> = logp.iter().map(|lp| lp.exp() / n).collect();
        d[*y] -= 1.0 / n;
        mlp.backward(&trace, &d, &mut grads);
    }
    Ok((loss / n, grads))
}
