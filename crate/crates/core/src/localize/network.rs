//! Multi-input regressor: one tanh MLP encoder per modality, a masked
//! concatenation, and a two-layer fusion head emitting `(s, c, z_norm)`.
//!
//! All weights live in one flat `Vec<f64>` so the optimizer, checkpointing and
//! gradient checks can treat them uniformly.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::input::{FeatureVector, GCC_DIM, MEL_DIM, PROPRIO_DIM};
use super::LocalizeError;
use crate::geometry::{ContactPoint, LABEL_HALF_RANGE_M};

pub const HIDDEN: usize = 128;
pub const AUDIO_EMBEDDING: usize = 64;
pub const PROPRIO_EMBEDDING: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerShape {
    fn params(&self) -> usize {
        self.input * self.output + self.output
    }
}

/// Layer shapes of the three encoders (mel, gcc, proprio) and the head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoders: [Vec<LayerShape>; 3],
    pub head: Vec<LayerShape>,
}

fn stack(input: usize, hidden: usize, out: usize) -> Vec<LayerShape> {
    let t = Activation::Tanh;
    vec![
        LayerShape { input, output: hidden, activation: t },
        LayerShape { input: hidden, output: hidden, activation: t },
        LayerShape { input: hidden, output: out, activation: t },
    ]
}

impl Architecture {
    pub fn with_inputs(mel: usize, gcc: usize, proprio: usize, hidden: usize) -> Self {
        let fused = 2 * AUDIO_EMBEDDING + PROPRIO_EMBEDDING;
        Self {
            encoders: [
                stack(mel, hidden, AUDIO_EMBEDDING),
                stack(gcc, hidden, AUDIO_EMBEDDING),
                stack(proprio, hidden, PROPRIO_EMBEDDING),
            ],
            head: vec![
                LayerShape { input: fused, output: hidden, activation: Activation::Tanh },
                LayerShape { input: hidden, output: 3, activation: Activation::Identity },
            ],
        }
    }

    pub fn input_dims(&self) -> [usize; 3] {
        [self.encoders[0][0].input, self.encoders[1][0].input, self.encoders[2][0].input]
    }

    fn layers(&self) -> impl Iterator<Item = &LayerShape> {
        self.encoders.iter().flatten().chain(self.head.iter())
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(LayerShape::params).sum()
    }

    pub fn validate(&self) -> Result<(), LocalizeError> {
        let emb: usize = self.encoders.iter().map(|e| e.last().map_or(0, |l| l.output)).sum();
        let ok_chain = |ls: &[LayerShape]| !ls.is_empty() && ls.windows(2).all(|w| w[0].output == w[1].input);
        if !self.encoders.iter().all(|e| ok_chain(e)) || !ok_chain(&self.head) {
            return Err(LocalizeError::ShapeMismatch("layer chain is inconsistent".into()));
        }
        if self.head[0].input != emb || self.head.last().map(|l| l.output) != Some(3) {
            return Err(LocalizeError::ShapeMismatch("head must map the fused embedding to 3 outputs".into()));
        }
        Ok(())
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self::with_inputs(MEL_DIM, GCC_DIM, PROPRIO_DIM, HIDDEN)
    }
}

/// A batch of inputs, one row per event.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: [Array2<f64>; 3],
    /// `B x 3`, 1.0 where the modality is active.
    pub mask: Array2<f64>,
}

impl Batch {
    pub fn from_vectors(fvs: &[&FeatureVector], dims: [usize; 3]) -> Result<Self, LocalizeError> {
        let b = fvs.len();
        let mut inputs = [Array2::zeros((b, dims[0])), Array2::zeros((b, dims[1])), Array2::zeros((b, dims[2]))];
        let mut mask = Array2::zeros((b, 3));
        for (r, fv) in fvs.iter().enumerate() {
            for (k, block) in [&fv.mel, &fv.gcc, &fv.proprio].into_iter().enumerate() {
                if block.len() != dims[k] {
                    return Err(LocalizeError::ShapeMismatch(format!("block {k} has {} values, model expects {}", block.len(), dims[k])));
                }
                inputs[k].row_mut(r).assign(&ndarray::ArrayView1::from(block.as_slice()));
                mask[[r, k]] = if fv.mask[k] { 1.0 } else { 0.0 };
            }
        }
        Ok(Self { inputs, mask })
    }

    pub fn len(&self) -> usize {
        self.mask.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Per encoder: input followed by each layer's output; empty when the
    /// modality is masked for the whole batch.
    enc: [Vec<Array2<f64>>; 3],
    /// Head input followed by each head layer's output.
    head: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.head.last().expect("head has layers")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

fn activate(z: &mut Array2<f64>, a: Activation) {
    if a == Activation::Tanh {
        z.mapv_inplace(f64::tanh);
    }
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, LocalizeError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for l in arch.layers() {
            let lim = (6.0 / (l.input + l.output) as f64).sqrt();
            for _ in 0..l.input * l.output {
                params.push(rng.random_range(-lim..lim));
            }
            params.extend(std::iter::repeat_n(0.0, l.output));
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self, LocalizeError> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(LocalizeError::ShapeMismatch(format!("{} weights for an architecture with {}", params.len(), arch.param_count())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(LocalizeError::ShapeMismatch("non-finite weight".into()));
        }
        Ok(Self { arch, params })
    }

    /// `(offset, shape)` of every layer in storage order.
    fn offsets(&self) -> Vec<(usize, LayerShape)> {
        let mut off = 0;
        self.arch
            .layers()
            .map(|l| {
                let r = (off, *l);
                off += l.params();
                r
            })
            .collect()
    }

    fn layer_ranges(&self) -> ([Vec<(usize, LayerShape)>; 3], Vec<(usize, LayerShape)>) {
        let all = self.offsets();
        let mut it = all.into_iter();
        let enc = [0, 1, 2].map(|k| it.by_ref().take(self.arch.encoders[k].len()).collect::<Vec<_>>());
        (enc, it.collect())
    }

    fn weights(&self, off: usize, l: &LayerShape) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
        let w = ArrayView2::from_shape((l.output, l.input), &self.params[off..off + l.input * l.output]).expect("layer slice");
        let b = ArrayView2::from_shape((1, l.output), &self.params[off + l.input * l.output..off + l.params()]).expect("bias slice");
        (w, b)
    }

    fn dense(&self, x: &Array2<f64>, off: usize, l: &LayerShape) -> Array2<f64> {
        let (w, b) = self.weights(off, l);
        let mut z = x.dot(&w.t());
        z += &b;
        activate(&mut z, l.activation);
        z
    }

    pub fn forward_batch(&self, batch: &Batch) -> Result<Tape, LocalizeError> {
        let dims = self.arch.input_dims();
        for k in 0..3 {
            if batch.inputs[k].ncols() != dims[k] || batch.inputs[k].nrows() != batch.len() {
                return Err(LocalizeError::ShapeMismatch(format!("block {k}: {:?} vs model input {}", batch.inputs[k].dim(), dims[k])));
            }
        }
        let (enc_layers, head_layers) = self.layer_ranges();
        let b = batch.len();
        let emb_widths: Vec<usize> = self.arch.encoders.iter().map(|e| e.last().unwrap().output).collect();
        let mut fused = Array2::zeros((b, emb_widths.iter().sum()));
        let mut enc: [Vec<Array2<f64>>; 3] = Default::default();
        let mut col = 0;
        for k in 0..3 {
            let m = batch.mask.column(k);
            if m.iter().any(|&v| v != 0.0) {
                let mut acts = vec![batch.inputs[k].clone()];
                for (off, l) in &enc_layers[k] {
                    let next = self.dense(acts.last().unwrap(), *off, l);
                    acts.push(next);
                }
                let e = acts.last().unwrap();
                let mut dst = fused.slice_mut(s![.., col..col + emb_widths[k]]);
                for r in 0..b {
                    let mut row = dst.row_mut(r);
                    row.assign(&e.row(r));
                    row *= m[r];
                }
                enc[k] = acts;
            }
            col += emb_widths[k];
        }
        let mut head = vec![fused];
        for (off, l) in &head_layers {
            let next = self.dense(head.last().unwrap(), *off, l);
            head.push(next);
        }
        Ok(Tape { enc, head })
    }

    pub fn forward(&self, fv: &FeatureVector) -> Result<[f64; 3], LocalizeError> {
        let batch = Batch::from_vectors(&[fv], self.arch.input_dims())?;
        let out = self.forward_batch(&batch)?;
        let o = out.output();
        Ok([o[[0, 0]], o[[0, 1]], o[[0, 2]]])
    }

    /// Back-propagates `d_out` (`B x 3`, gradient of the loss w.r.t. the head
    /// output) and returns the gradient for every weight.
    pub fn backward(&self, batch: &Batch, tape: &Tape, d_out: &Array2<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        let (enc_layers, head_layers) = self.layer_ranges();
        let mut delta = d_out.clone();
        for (idx, (off, l)) in head_layers.iter().enumerate().rev() {
            delta = self.layer_backward(&tape.head[idx], &tape.head[idx + 1], delta, *off, l, &mut grad, true);
        }
        // delta is now the gradient w.r.t. the fused (masked) embedding
        let mut col = 0;
        for k in 0..3 {
            let w = self.arch.encoders[k].last().unwrap().output;
            if !tape.enc[k].is_empty() {
                let mut d = delta.slice(s![.., col..col + w]).to_owned();
                for (r, mut row) in d.axis_iter_mut(Axis(0)).enumerate() {
                    row *= batch.mask[[r, k]];
                }
                let layers = &enc_layers[k];
                for (idx, (off, l)) in layers.iter().enumerate().rev() {
                    d = self.layer_backward(&tape.enc[k][idx], &tape.enc[k][idx + 1], d, *off, l, &mut grad, idx > 0);
                }
            }
            col += w;
        }
        grad
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_backward(&self, x: &Array2<f64>, a: &Array2<f64>, d_a: Array2<f64>, off: usize, l: &LayerShape, grad: &mut [f64], need_input: bool) -> Array2<f64> {
        let mut dz = d_a;
        if l.activation == Activation::Tanh {
            dz.zip_mut_with(a, |d, &y| *d *= 1.0 - y * y);
        }
        let nw = l.input * l.output;
        {
            let mut gw = ArrayViewMut2::from_shape((l.output, l.input), &mut grad[off..off + nw]).expect("grad slice");
            gw += &dz.t().dot(x);
        }
        let gb: Array1<f64> = dz.sum_axis(Axis(0));
        for (g, v) in grad[off + nw..off + nw + l.output].iter_mut().zip(gb.iter()) {
            *g += v;
        }
        if need_input {
            let (w, _) = self.weights(off, l);
            dz.dot(&w)
        } else {
            Array2::zeros((0, 0))
        }
    }

    /// Mean loss over the batch and its gradient w.r.t. the head output.
    pub fn loss_and_grad(out: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
        let b = out.nrows() as f64;
        let diff = out - targets;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / (3.0 * b);
        (loss, diff * (2.0 / (3.0 * b)))
    }

    /// Batch loss and full weight gradient.
    pub fn loss_gradient(&self, batch: &Batch, targets: &Array2<f64>) -> Result<(f64, Vec<f64>), LocalizeError> {
        let tape = self.forward_batch(batch)?;
        let (l, d) = Self::loss_and_grad(tape.output(), targets);
        Ok((l, self.backward(batch, &tape, &d)))
    }

    pub fn batch_loss(&self, batch: &Batch, targets: &Array2<f64>) -> Result<f64, LocalizeError> {
        let tape = self.forward_batch(batch)?;
        Ok(Self::loss_and_grad(tape.output(), targets).0)
    }
}

/// Mean squared error over `[s - sin t, c - cos t, z_norm - z / 0.10]`.
pub fn loss(pred: [f64; 3], label: &ContactPoint) -> f64 {
    let t = super::input::target(label);
    pred.iter().zip(t).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / 3.0
}

/// `theta = atan2(s, c)`, `z = clamp(z_norm * 0.10)`.
pub fn decode(out: [f64; 3]) -> ContactPoint {
    let theta = out[0].atan2(out[1]);
    let z = (out[2] * LABEL_HALF_RANGE_M).clamp(-LABEL_HALF_RANGE_M, LABEL_HALF_RANGE_M);
    ContactPoint::new(z, theta)
}

/// Adaptive moment estimation.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn small_arch() -> Architecture {
        Architecture::with_inputs(7, 5, 4, 6)
    }

    fn random_batch(rng: &mut ChaCha8Rng, b: usize, dims: [usize; 3], mask: [bool; 3]) -> Batch {
        let inputs = [0, 1, 2].map(|k| Array2::from_shape_fn((b, dims[k]), |_| if mask[k] { rng.random_range(-1.0..1.0) } else { 0.0 }));
        let mask = Array2::from_shape_fn((b, 3), |(_, k)| if mask[k] { 1.0 } else { 0.0 });
        Batch { inputs, mask }
    }

    fn targets(rng: &mut ChaCha8Rng, b: usize) -> Array2<f64> {
        let mut t = Array2::zeros((b, 3));
        for r in 0..b {
            let th: f64 = rng.random_range(-PI..PI);
            t[[r, 0]] = th.sin();
            t[[r, 1]] = th.cos();
            t[[r, 2]] = rng.random_range(-1.0..1.0);
        }
        t
    }

    #[test]
    fn loss_examples() {
        let l = ContactPoint::new(0.05, 0.7);
        assert_eq!(loss([l.theta().sin(), l.theta().cos(), 0.05 / 0.10], &l), 0.0);
        let a = ContactPoint::new(0.0, PI);
        let b = ContactPoint::new(0.0, -PI);
        let p = [0.3, -0.2, 0.1];
        assert_eq!(loss(p, &a), loss(p, &b));
        let q = ContactPoint::new(0.0, PI / 2.0);
        assert!((loss([0.0, 1.0, 0.0], &q) - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn decode_examples() {
        let p = decode([0.0, 1.0, 0.0]);
        assert_eq!((p.z(), p.theta()), (0.0, 0.0));
        let p = decode([1.0, 0.0, 2.5]);
        assert_eq!(p.z(), 0.10);
        assert!((p.theta() - PI / 2.0).abs() < 1e-9);
        let a = decode([0.3, -0.4, 0.2]);
        let b = decode([3.0, -4.0, 0.2]);
        assert_eq!(a.theta(), b.theta());
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut net = Network::init(small_arch(), 1).unwrap();
        net.params.iter_mut().for_each(|p| *p = 0.0);
        let n = net.params.len();
        net.params[n - 3..].copy_from_slice(&[0.25, -0.5, 0.75]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = random_batch(&mut rng, 4, [7, 5, 4], [true; 3]);
        let tape = net.forward_batch(&batch).unwrap();
        for r in 0..4 {
            assert_eq!(tape.output().row(r).to_vec(), vec![0.25, -0.5, 0.75]);
        }
    }

    fn grad_check(net: &Network, batch: &Batch, t: &Array2<f64>, probes: &[usize]) -> f64 {
        let (_, g) = net.loss_gradient(batch, t).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for &i in probes {
            let mut p = net.clone();
            p.params[i] += h;
            let lp = p.batch_loss(batch, t).unwrap();
            p.params[i] -= 2.0 * h;
            let lm = p.batch_loss(batch, t).unwrap();
            let num = (lp - lm) / (2.0 * h);
            let rel = (g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = Network::init(small_arch(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, 5, [7, 5, 4], [true; 3]);
        let t = targets(&mut rng, 5);
        let all: Vec<usize> = (0..net.params.len()).collect();
        let worst = grad_check(&net, &batch, &t, &all);
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn masked_modality_has_zero_gradient_and_no_influence() {
        let net = Network::init(small_arch(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut batch = random_batch(&mut rng, 3, [7, 5, 4], [true, true, false]);
        let t = targets(&mut rng, 3);
        let (_, g) = net.loss_gradient(&batch, &t).unwrap();
        let enc0 = net.arch.encoders[0].iter().map(LayerShape::params).sum::<usize>();
        let enc1 = net.arch.encoders[1].iter().map(LayerShape::params).sum::<usize>();
        let enc2 = net.arch.encoders[2].iter().map(LayerShape::params).sum::<usize>();
        assert!(g[enc0 + enc1..enc0 + enc1 + enc2].iter().all(|&v| v == 0.0));
        let before = net.forward_batch(&batch).unwrap().output().clone();
        batch.inputs[2].mapv_inplace(|_| 123.0);
        let after = net.forward_batch(&batch).unwrap().output().clone();
        assert_eq!(before, after);
    }

    #[test]
    fn zero_loss_point_is_stationary() {
        let net = Network::init(small_arch(), 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = random_batch(&mut rng, 4, [7, 5, 4], [true; 3]);
        let t = net.forward_batch(&batch).unwrap().output().clone();
        let (l, g) = net.loss_gradient(&batch, &t).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-8);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2);
        for _ in 0..2000 {
            let g = vec![2.0 * x[0], 4.0 * x[1]];
            opt.step(&mut x, &g, 0.01);
        }
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2, "{x:?}");
    }

    #[test]
    fn rejects_bad_shapes() {
        let net = Network::init(small_arch(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch = random_batch(&mut rng, 2, [6, 5, 4], [true; 3]);
        assert!(matches!(net.forward_batch(&batch), Err(LocalizeError::ShapeMismatch(_))));
        assert!(Network::from_params(small_arch(), vec![0.0; 3]).is_err());
    }
}
