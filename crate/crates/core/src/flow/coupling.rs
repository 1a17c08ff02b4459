use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpTape};
use crate::error::{Error, Result};

/// Scale outputs are squashed through `SCALE_CLAMP * tanh(raw / SCALE_CLAMP)`
/// before exponentiation.
pub const SCALE_CLAMP: f64 = 8.0;

/// Which half of the coordinates passes through a coupling layer unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    /// Indices `0..v` condition the transform of `v..V`.
    PassFirst,
    /// Indices `v..V` condition the transform of `0..v`.
    PassSecond,
}

impl Parity {
    /// Alternating parity for the `index`-th layer (0-based).
    pub fn alternating(index: usize) -> Self {
        if index % 2 == 0 {
            Parity::PassFirst
        } else {
            Parity::PassSecond
        }
    }

    /// (pass-through range, transformed range) for dimension `dim`.
    pub fn split(self, dim: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let v = dim / 2;
        match self {
            Parity::PassFirst => (0..v, v..dim),
            Parity::PassSecond => (v..dim, 0..v),
        }
    }
}

#[inline]
fn clamp_scale(raw: f64) -> f64 {
    SCALE_CLAMP * (raw / SCALE_CLAMP).tanh()
}

/// Affine coupling layer with scale and translation conditioners.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingLayer {
    pub parity: Parity,
    pub scale: Mlp,
    pub shift: Mlp,
}

/// Per-layer record of an inverse evaluation.
#[derive(Clone, Debug)]
pub(crate) struct LayerTape {
    scale: MlpTape,
    shift: MlpTape,
    /// Clamped scale `a`.
    a: Vec<f64>,
    /// `tanh(raw / SCALE_CLAMP)`, needed for the clamp derivative.
    tanh: Vec<f64>,
    /// Transformed half after the inverse step.
    out: Vec<f64>,
    pass: Vec<f64>,
    grad_pass: Vec<f64>,
}

impl CouplingLayer {
    pub fn n_params(&self) -> usize {
        self.scale.n_params() + self.shift.n_params()
    }

    pub(crate) fn new_tape(&self) -> LayerTape {
        let v = self.scale.inputs();
        LayerTape {
            scale: self.scale.new_tape(),
            shift: self.shift.new_tape(),
            a: vec![0.0; v],
            tanh: vec![0.0; v],
            out: vec![0.0; v],
            pass: vec![0.0; v],
            grad_pass: vec![0.0; v],
        }
    }

    fn conditioners(
        &self,
        params: &[f64],
        pass: &[f64],
        scale_tape: &mut MlpTape,
        shift_tape: &mut MlpTape,
        index: usize,
    ) -> Result<()> {
        self.scale.forward(params, pass, scale_tape);
        self.shift.forward(params, pass, shift_tape);
        let finite = scale_tape.out.iter().chain(&shift_tape.out).all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite { layer: index })
        }
    }

    /// In-place forward map `y_trans = x_trans * exp(a(x_pass)) + b(x_pass)`.
    /// Returns `log|det dy/dx| = sum(a)`.
    pub(crate) fn forward_in_place(
        &self,
        params: &[f64],
        x: &mut [f64],
        tape: &mut LayerTape,
        index: usize,
    ) -> Result<f64> {
        let (pass, trans) = self.parity.split(x.len());
        tape.pass.copy_from_slice(&x[pass]);
        self.conditioners(params, &tape.pass, &mut tape.scale, &mut tape.shift, index)?;
        let mut logdet = 0.0;
        for (k, xi) in x[trans].iter_mut().enumerate() {
            let a = clamp_scale(tape.scale.out[k]);
            *xi = *xi * a.exp() + tape.shift.out[k];
            logdet += a;
        }
        Ok(logdet)
    }

    /// In-place inverse map. Returns `log|det dx/dy| = -sum(a)` and leaves
    /// the values needed by [`CouplingLayer::backward`] in `tape`.
    pub(crate) fn inverse_in_place(
        &self,
        params: &[f64],
        y: &mut [f64],
        tape: &mut LayerTape,
        index: usize,
    ) -> Result<f64> {
        let (pass, trans) = self.parity.split(y.len());
        tape.pass.copy_from_slice(&y[pass]);
        self.conditioners(params, &tape.pass, &mut tape.scale, &mut tape.shift, index)?;
        let mut logdet = 0.0;
        for (k, yi) in y[trans].iter_mut().enumerate() {
            let t = (tape.scale.out[k] / SCALE_CLAMP).tanh();
            let a = SCALE_CLAMP * t;
            *yi = (*yi - tape.shift.out[k]) * (-a).exp();
            tape.a[k] = a;
            tape.tanh[k] = t;
            tape.out[k] = *yi;
            logdet -= a;
        }
        Ok(logdet)
    }

    /// Backpropagates through the inverse step recorded in `tape`.
    ///
    /// `grad` holds dL/d(output of the inverse step) on entry and
    /// dL/d(input) on exit. `logdet_weight` is dL/d(sum a), i.e. the
    /// coefficient with which this layer's `sum(a)` enters the loss.
    pub(crate) fn backward(
        &self,
        params: &[f64],
        tape: &mut LayerTape,
        grad: &mut [f64],
        logdet_weight: f64,
        grads: &mut [f64],
    ) {
        let (pass, trans) = self.parity.split(grad.len());
        let v = tape.a.len();
        // reuse `a` and `out` as scratch for the conditioner output gradients
        let mut grad_raw = std::mem::take(&mut tape.a);
        let mut grad_b = std::mem::take(&mut tape.out);
        for k in 0..v {
            let g = grad[trans.start + k];
            let exp_neg_a = (-grad_raw[k]).exp();
            let grad_a = -g * grad_b[k] + logdet_weight;
            grad_raw[k] = grad_a * (1.0 - tape.tanh[k] * tape.tanh[k]);
            grad_b[k] = -g * exp_neg_a;
            grad[trans.start + k] = g * exp_neg_a;
        }
        tape.grad_pass.copy_from_slice(&grad[pass.clone()]);
        self.scale
            .backward(params, &mut tape.scale, &grad_raw, grads, &mut tape.grad_pass);
        self.shift
            .backward(params, &mut tape.shift, &grad_b, grads, &mut tape.grad_pass);
        grad[pass].copy_from_slice(&tape.grad_pass);
        tape.a = grad_raw;
        tape.out = grad_b;
    }
}
