//! RealNVP normalizing flow.
//!
//! A [`FlowModel`] is a stack of affine coupling layers with alternating
//! masks over a standard-normal base distribution. All trainable parameters
//! live in one flat vector so the optimizer and checkpoints can treat them
//! uniformly; each [`Dense`](mlp::Dense) block records its offset.

mod checkpoint;
mod coupling;
pub mod mlp;

pub use checkpoint::{FlowCheckpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use coupling::{CouplingLayer, Parity, SCALE_CLAMP};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Executor;
use coupling::LayerTape;
use mlp::Mlp;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log N(z; 0, I)`.
pub fn std_normal_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * LN_2PI
}

/// Row-major `rows x dim` matrix of points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "data length not a multiple of dim");
        Self { dim, data }
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self::new(dim, vec![0.0; rows * dim])
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(1, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            assert_eq!(r.as_ref().len(), dim, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::new(self.dim, data)
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.rows() as f64;
        let mut m = vec![0.0; self.dim];
        for r in self.iter() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

/// Reusable scratch for evaluating one sample through every layer.
pub(crate) struct FlowTape {
    layers: Vec<LayerTape>,
    x: Vec<f64>,
    grad: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    dim: usize,
    hidden: usize,
    layers: Vec<CouplingLayer>,
    params: Vec<f64>,
}

impl FlowModel {
    /// Identity-initialized flow with `n_layers` coupling layers on `dim`
    /// coordinates. Conditioner hidden width is `3 * dim / 2`.
    pub fn new<R: Rng + ?Sized>(dim: usize, n_layers: usize, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeroed(dim, n_layers, 3 * (dim / 2))?;
        for layer in &model.layers {
            layer.scale.init(&mut model.params, rng);
            layer.shift.init(&mut model.params, rng);
        }
        Ok(model)
    }

    /// Flow with the given shape and every parameter zero (the identity map).
    pub fn zeroed(dim: usize, n_layers: usize, hidden: usize) -> Result<Self> {
        let parities: Vec<Parity> = (0..n_layers).map(Parity::alternating).collect();
        Self::with_layout(dim, hidden, &parities, None)
    }

    pub(crate) fn with_layout(
        dim: usize,
        hidden: usize,
        parities: &[Parity],
        params: Option<Vec<f64>>,
    ) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "flow dimension must be even and at least 2, got {dim}"
            )));
        }
        if parities.is_empty() {
            return Err(Error::InvalidInput("flow needs at least one coupling layer".into()));
        }
        if hidden == 0 {
            return Err(Error::InvalidInput("conditioner hidden width must be positive".into()));
        }
        let v = dim / 2;
        let mut offset = 0;
        let mut layers = Vec::with_capacity(parities.len());
        for &parity in parities {
            let (scale, next) = Mlp::layout(v, hidden, v, offset);
            let (shift, next) = Mlp::layout(v, hidden, v, next);
            offset = next;
            layers.push(CouplingLayer {
                parity,
                scale,
                shift,
            });
        }
        let params = match params {
            Some(p) if p.len() == offset => p,
            Some(p) => {
                return Err(Error::InvalidInput(format!(
                    "expected {offset} parameters, got {}",
                    p.len()
                )))
            }
            None => vec![0.0; offset],
        };
        Ok(Self {
            dim,
            hidden,
            layers,
            params,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn new_tape(&self) -> FlowTape {
        FlowTape {
            layers: self.layers.iter().map(CouplingLayer::new_tape).collect(),
            x: vec![0.0; self.dim],
            grad: vec![0.0; self.dim],
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "expected a point of dimension {}, got {}",
                self.dim,
                x.len()
            )));
        }
        Ok(())
    }

    /// Applies coupling layer `index` to `x`; returns the output and the
    /// forward log-determinant.
    pub fn coupling_forward(&self, index: usize, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(x)?;
        let layer = &self.layers[index];
        let mut tape = layer.new_tape();
        let mut y = x.to_vec();
        let logdet = layer.forward_in_place(&self.params, &mut y, &mut tape, index)?;
        Ok((y, logdet))
    }

    /// Inverse of [`FlowModel::coupling_forward`]; returns the input and the
    /// inverse log-determinant.
    pub fn coupling_inverse(&self, index: usize, y: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(y)?;
        let layer = &self.layers[index];
        let mut tape = layer.new_tape();
        let mut x = y.to_vec();
        let logdet = layer.inverse_in_place(&self.params, &mut x, &mut tape, index)?;
        Ok((x, logdet))
    }

    fn forward_with(&self, z: &[f64], out: &mut [f64], tape: &mut FlowTape) -> Result<f64> {
        out.copy_from_slice(z);
        let mut logdet = 0.0;
        for (i, (layer, lt)) in self.layers.iter().zip(&mut tape.layers).enumerate() {
            logdet += layer.forward_in_place(&self.params, out, lt, i)?;
        }
        Ok(std_normal_log_density(z) - logdet)
    }

    /// Maps a base point to parameter space; returns `(x, log q(x))`.
    pub fn flow_forward(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(z)?;
        let mut tape = self.new_tape();
        let mut x = vec![0.0; self.dim];
        let log_q = self.forward_with(z, &mut x, &mut tape)?;
        Ok((x, log_q))
    }

    /// Inverse map `x -> z`; returns `(z, log|det dz/dx|)`.
    pub fn flow_inverse(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_dim(x)?;
        let mut tape = self.new_tape();
        let mut z = x.to_vec();
        let logdet = self.inverse_with(&mut z, &mut tape)?;
        Ok((z, logdet))
    }

    fn inverse_with(&self, x: &mut [f64], tape: &mut FlowTape) -> Result<f64> {
        let mut logdet = 0.0;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            logdet += layer.inverse_in_place(&self.params, x, &mut tape.layers[i], i)?;
        }
        Ok(logdet)
    }

    fn log_prob_with(&self, x: &[f64], tape: &mut FlowTape) -> Result<f64> {
        let mut z = std::mem::take(&mut tape.x);
        z.copy_from_slice(x);
        let logdet = self.inverse_with(&mut z, tape);
        let out = logdet.map(|ld| std_normal_log_density(&z) + ld);
        tape.x = z;
        out
    }

    /// `log q(x)` via the inverse pass.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("log_prob called with a non-finite point".into()));
        }
        self.log_prob_with(x, &mut self.new_tape())
    }

    /// `log q` for every row of `points`, in order.
    pub fn log_prob_batch(&self, points: &SampleMatrix, exec: &Executor) -> Result<Vec<f64>> {
        if points.dim() != self.dim {
            return Err(Error::InvalidInput("batch dimension mismatch".into()));
        }
        let chunks = exec.map_chunks(points.rows(), |range| {
            let mut tape = self.new_tape();
            range
                .map(|i| {
                    let x = points.row(i);
                    if x.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidInput(format!("row {i} is not finite")));
                    }
                    self.log_prob_with(x, &mut tape)
                })
                .collect::<Result<Vec<f64>>>()
        });
        let mut out = Vec::with_capacity(points.rows());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Draws `n` i.i.d. points from the flow. Base noise is drawn
    /// sequentially from `rng`, so the result depends only on the seed.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
        exec: &Executor,
    ) -> Result<(SampleMatrix, Vec<f64>)> {
        let z: Vec<f64> = (0..n * self.dim).map(|_| rng.sample(StandardNormal)).collect();
        let chunks = exec.map_chunks(n, |range| {
            let mut tape = self.new_tape();
            let mut xs = vec![0.0; range.len() * self.dim];
            let mut lq = Vec::with_capacity(range.len());
            for (j, i) in range.enumerate() {
                let zi = &z[i * self.dim..(i + 1) * self.dim];
                let xi = &mut xs[j * self.dim..(j + 1) * self.dim];
                lq.push(self.forward_with(zi, xi, &mut tape)?);
            }
            Ok::<_, Error>((xs, lq))
        });
        let mut data = Vec::with_capacity(n * self.dim);
        let mut log_q = Vec::with_capacity(n);
        for c in chunks {
            let (xs, lq) = c?;
            data.extend(xs);
            log_q.extend(lq);
        }
        Ok((SampleMatrix::new(self.dim, data), log_q))
    }

    /// Contribution of one weighted point to the loss `-w log q(x)` and its
    /// gradient (accumulated into `grads`).
    fn accumulate_grad(&self, x: &[f64], w: f64, tape: &mut FlowTape, grads: &mut [f64]) -> Result<f64> {
        let log_q = self.log_prob_with(x, tape)?;
        // d(-w log q)/dz = w z; each layer's sum(a) enters the loss with +w
        let FlowTape {
            layers,
            x: z,
            grad,
        } = tape;
        for (g, zi) in grad.iter_mut().zip(z.iter()) {
            *g = w * zi;
        }
        for (layer, lt) in self.layers.iter().zip(layers.iter_mut()) {
            layer.backward(&self.params, lt, grad, w, grads);
        }
        Ok(-w * log_q)
    }

    /// Importance-weighted forward-KL loss `-sum_i w_i log q(x_i)` and its
    /// exact gradient with respect to every parameter. Weights are used as
    /// given; the caller normalizes them.
    pub fn loss_and_grad(
        &self,
        batch: &SampleMatrix,
        weights: &[f64],
        exec: &Executor,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.rows() != weights.len() {
            return Err(Error::InvalidInput("batch and weight lengths differ".into()));
        }
        if batch.dim() != self.dim {
            return Err(Error::InvalidInput("batch dimension mismatch".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::DegenerateWeights("weights sum to zero".into()));
        }
        let n_params = self.params.len();
        let partials = exec.map_chunks(batch.rows(), |range| {
            let mut tape = self.new_tape();
            let mut grads = vec![0.0; n_params];
            let mut loss = 0.0;
            for i in range {
                if weights[i] == 0.0 {
                    continue;
                }
                loss += self.accumulate_grad(batch.row(i), weights[i], &mut tape, &mut grads)?;
            }
            Ok::<_, Error>((loss, grads))
        });
        let mut loss = 0.0;
        let mut grads = vec![0.0; n_params];
        for p in partials {
            let (l, g) = p?;
            loss += l;
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randomized(dim: usize, layers: usize, seed: u64, scale: f64) -> FlowModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FlowModel::new(dim, layers, &mut rng).unwrap();
        for p in m.params_mut() {
            *p = rng.random_range(-scale..scale);
        }
        m
    }

    /// Sets every scale output to the constant `a` and every shift output to
    /// `b` by zeroing weights and setting output biases.
    fn constant_conditioners(model: &mut FlowModel, layer: usize, a: f64, b: f64) {
        let l = model.layers[layer].clone();
        for (mlp, value) in [(&l.scale, SCALE_CLAMP * (a / SCALE_CLAMP).atanh()), (&l.shift, b)] {
            let last = mlp.layers.last().unwrap();
            let start = last.offset;
            let n_w = last.inputs * last.outputs;
            model.params[start..start + n_w].fill(0.0);
            model.params[start + n_w..start + last.n_params()].fill(value);
        }
    }

    #[test]
    fn rejects_odd_dimension() {
        assert!(matches!(
            FlowModel::zeroed(3, 2, 4),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn identity_coupling_is_identity() {
        let m = FlowModel::new(4, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = [0.3, -2.0, 5.0, 1.5];
        let (y, ld) = m.coupling_forward(0, &x).unwrap();
        assert_eq!(y, x.to_vec());
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn constant_scale_coupling_hand_evaluation() {
        let mut m = FlowModel::zeroed(2, 1, 3).unwrap();
        constant_conditioners(&mut m, 0, std::f64::consts::LN_2, 0.0);
        let (y, ld) = m.coupling_forward(0, &[1.0, 3.0]).unwrap();
        assert_eq!(y[0], 1.0);
        assert!((y[1] - 6.0).abs() < 1e-12);
        assert!((ld - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn coupling_round_trip() {
        let m = randomized(6, 3, 11, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
            for l in 0..3 {
                let (y, fwd) = m.coupling_forward(l, &x).unwrap();
                let (back, inv) = m.coupling_inverse(l, &y).unwrap();
                assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-10));
                assert!((fwd + inv).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn identity_flow_density_at_origin() {
        let m = FlowModel::zeroed(8, 4, 12).unwrap();
        let lp = m.log_prob(&[0.0; 8]).unwrap();
        assert!((lp + 4.0 * LN_2PI).abs() < 1e-12);
        assert!(m.flow_forward(&[1.0, 0.0]).is_err());
        let m2 = FlowModel::zeroed(2, 2, 3).unwrap();
        let (x, lq) = m2.flow_forward(&[1.0, 0.0]).unwrap();
        assert_eq!(x, vec![1.0, 0.0]);
        assert!((lq - (-LN_2PI - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn log_prob_rejects_non_finite() {
        let m = FlowModel::zeroed(2, 2, 3).unwrap();
        assert!(matches!(m.log_prob(&[f64::NAN, 0.0]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn non_finite_conditioner_reports_layer() {
        let mut m = FlowModel::zeroed(2, 2, 3).unwrap();
        let last = *m.layers[1].shift.layers.last().unwrap();
        m.params[last.offset + last.inputs * last.outputs] = f64::INFINITY;
        match m.log_prob(&[0.1, 0.2]) {
            Err(Error::NonFinite { layer }) => assert_eq!(layer, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn forward_and_inverse_densities_agree() {
        let m = randomized(4, 4, 3, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let z: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let (x, lq) = m.flow_forward(&z).unwrap();
            assert!((m.log_prob(&x).unwrap() - lq).abs() < 1e-8);
            let (zz, _) = m.flow_inverse(&x).unwrap();
            assert!(z.iter().zip(&zz).all(|(a, b)| (a - b).abs() < 1e-10));
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let m = randomized(4, 2, 1, 0.3);
        let a = m.sample(1, &mut ChaCha8Rng::seed_from_u64(42), &Executor::sequential()).unwrap();
        let b = m.sample(1, &mut ChaCha8Rng::seed_from_u64(42), &Executor::new(2)).unwrap();
        assert_eq!(a.0.as_slice()[0].to_bits(), b.0.as_slice()[0].to_bits());
        assert_eq!(a, b);
    }

    #[test]
    fn single_sample_weight_reduces_to_negative_log_density() {
        let m = randomized(4, 2, 2, 0.3);
        let (xs, _) = m.sample(5, &mut ChaCha8Rng::seed_from_u64(0), &Executor::sequential()).unwrap();
        let mut w = vec![0.0; 5];
        w[0] = 1.0;
        let (loss, _) = m.loss_and_grad(&xs, &w, &Executor::sequential()).unwrap();
        assert!((loss + m.log_prob(xs.row(0)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let m = FlowModel::zeroed(2, 2, 3).unwrap();
        let xs = SampleMatrix::zeros(3, 2);
        assert!(matches!(
            m.loss_and_grad(&xs, &[0.0; 3], &Executor::sequential()),
            Err(Error::DegenerateWeights(_))
        ));
    }
}
