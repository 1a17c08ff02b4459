use rand::Rng;
use serde::{Deserialize, Serialize};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact (erf-based) Gaussian error linear unit.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Fully connected layer whose weights (row-major, `outputs x inputs`)
/// followed by biases live at `offset` in the owning model's flat parameter
/// vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub offset: usize,
}

impl Dense {
    pub fn n_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.inputs * self.outputs]
    }

    fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.inputs * self.outputs;
        &params[start..start + self.outputs]
    }

    #[inline]
    fn apply(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let w = self.weights(params);
        let b = self.bias(params);
        for (o, out_o) in out.iter_mut().enumerate() {
            let row = &w[o * self.inputs..(o + 1) * self.inputs];
            *out_o = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients for `grad_out` and writes the input
    /// gradient into `grad_in`.
    #[inline]
    fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        grad_out: &[f64],
        grads: &mut [f64],
        grad_in: &mut [f64],
    ) {
        let w = self.weights(params);
        let n_w = self.inputs * self.outputs;
        grad_in.iter_mut().for_each(|g| *g = 0.0);
        {
            let (gw, gb) = grads[self.offset..self.offset + n_w + self.outputs].split_at_mut(n_w);
            for (o, &go) in grad_out.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                gb[o] += go;
                let row = &w[o * self.inputs..(o + 1) * self.inputs];
                let grow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
                for i in 0..self.inputs {
                    grow[i] += go * x[i];
                    grad_in[i] += go * row[i];
                }
            }
        }
    }

    fn init_glorot<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let limit = (6.0 / (self.inputs + self.outputs) as f64).sqrt();
        let n_w = self.inputs * self.outputs;
        for p in &mut params[self.offset..self.offset + n_w] {
            *p = rng.random_range(-limit..limit);
        }
        params[self.offset + n_w..self.offset + self.n_params()].fill(0.0);
    }

    fn init_zero(&self, params: &mut [f64]) {
        params[self.offset..self.offset + self.n_params()].fill(0.0);
    }
}

/// Conditioner network: GELU hidden layers followed by a linear output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Intermediate values of one conditioner evaluation, kept for the
/// backward pass. Buffers are reused between samples.
#[derive(Clone, Debug, Default)]
pub struct MlpTape {
    /// `acts[0]` is the input; `acts[i + 1] = gelu(pre[i])`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    pub out: Vec<f64>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl Mlp {
    pub const HIDDEN_LAYERS: usize = 3;

    /// Lays out an MLP starting at `offset`; returns it with the next free
    /// offset.
    pub fn layout(inputs: usize, hidden: usize, outputs: usize, mut offset: usize) -> (Self, usize) {
        let mut layers = Vec::with_capacity(Self::HIDDEN_LAYERS + 1);
        let mut fan_in = inputs;
        for _ in 0..Self::HIDDEN_LAYERS {
            let d = Dense {
                inputs: fan_in,
                outputs: hidden,
                offset,
            };
            offset += d.n_params();
            layers.push(d);
            fan_in = hidden;
        }
        let d = Dense {
            inputs: fan_in,
            outputs,
            offset,
        };
        offset += d.n_params();
        layers.push(d);
        (Self { layers }, offset)
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |d| d.outputs)
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].outputs
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    /// Glorot-uniform hidden layers, zero output layer.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut [f64], rng: &mut R) {
        let (last, hidden) = self.layers.split_last().expect("empty mlp");
        for d in hidden {
            d.init_glorot(params, rng);
        }
        last.init_zero(params);
    }

    pub fn new_tape(&self) -> MlpTape {
        let mut acts = vec![vec![0.0; self.inputs()]];
        let mut pre = Vec::new();
        for d in &self.layers[..self.layers.len() - 1] {
            pre.push(vec![0.0; d.outputs]);
            acts.push(vec![0.0; d.outputs]);
        }
        MlpTape {
            acts,
            pre,
            out: vec![0.0; self.outputs()],
            grad_a: vec![0.0; self.hidden().max(self.inputs())],
            grad_b: vec![0.0; self.hidden().max(self.inputs())],
        }
    }

    /// Evaluates the network, recording activations in `tape`; the result is
    /// left in `tape.out`.
    pub fn forward(&self, params: &[f64], x: &[f64], tape: &mut MlpTape) {
        tape.acts[0].copy_from_slice(x);
        let n_hidden = self.layers.len() - 1;
        for i in 0..n_hidden {
            let (head, tail) = tape.acts.split_at_mut(i + 1);
            self.layers[i].apply(params, &head[i], &mut tape.pre[i]);
            for (a, &p) in tail[0].iter_mut().zip(&tape.pre[i]) {
                *a = gelu(p);
            }
        }
        self.layers[n_hidden].apply(params, &tape.acts[n_hidden], &mut tape.out);
    }

    /// Reverse-mode pass for the evaluation recorded in `tape`. Parameter
    /// gradients are accumulated into `grads`; the input gradient is added to
    /// `grad_x`.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &mut MlpTape,
        grad_out: &[f64],
        grads: &mut [f64],
        grad_x: &mut [f64],
    ) {
        let n_hidden = self.layers.len() - 1;
        let MlpTape {
            acts,
            pre,
            grad_a,
            grad_b,
            ..
        } = tape;
        let last = &self.layers[n_hidden];
        last.backward(
            params,
            &acts[n_hidden],
            grad_out,
            grads,
            &mut grad_a[..last.inputs],
        );
        for i in (0..n_hidden).rev() {
            let d = &self.layers[i];
            for (g, &p) in grad_a[..d.outputs].iter_mut().zip(&pre[i]) {
                *g *= gelu_grad(p);
            }
            d.backward(params, &acts[i], &grad_a[..d.outputs], grads, &mut grad_b[..d.inputs]);
            std::mem::swap(grad_a, grad_b);
        }
        for (gx, g) in grad_x.iter_mut().zip(grad_a.iter()) {
            *gx += g;
        }
    }
}
