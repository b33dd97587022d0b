//! Small 2D-CNN binary classifier with hand-written forward and backward passes.
//!
//! Activations are stored channel-major (`C x H x W`). Each conv stage is
//! convolution, ReLU and an optional 2x2/stride-2 max pool; the head is a ReLU
//! dense layer followed by a sigmoid dense layer trained with per-unit binary
//! cross-entropy.

mod checkpoint;
mod config;
mod scalar;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use config::{ConvSpec, LayerShapes, NetConfig, Padding, Shape};
pub use scalar::Scalar;

use crate::wfdb::Label;
use scalar::{axpy, dot};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;
pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
/// Probability clipping applied before taking logarithms in the loss.
pub const LOSS_EPSILON: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Parameter-shaped list of tensors (weights, biases, gradients or moments).
pub type Tensors<T> = Vec<Vec<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Tensors<T>,
    pub second_moment: Tensors<T>,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel<T> {
    config: NetConfig,
    shapes: LayerShapes,
    /// Declaration order: per conv (weight, bias), dense1 (weight, bias),
    /// dense2 (weight, bias). Conv weights are `[out][in][ky][kx]`, dense
    /// weights `[out][in]`.
    pub params: Tensors<T>,
    pub adam: AdamState<T>,
    pub seed: u64,
}

/// Mean loss, number of correct predictions and mean gradient of a batch.
#[derive(Debug, Clone)]
pub struct BatchGradients<T> {
    pub loss: f64,
    pub correct: usize,
    pub grads: Tensors<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Sigmoid output per class, index 0 healthy, index 1 MI.
    pub class_scores: Vec<f64>,
    pub predicted_class: Label,
}

/// Activations retained for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input of each conv stage; entry 0 is the image.
    stage_inputs: Vec<Vec<T>>,
    /// Post-ReLU convolution outputs.
    conv_outputs: Vec<Vec<T>>,
    /// Flat input index of the winning element of every pooled cell.
    pool_argmax: Vec<Vec<u32>>,
    flat: Vec<T>,
    hidden: Vec<T>,
    scores: Vec<T>,
    /// Shapes actually produced, in evaluation order.
    pub trace: Vec<(String, Shape)>,
}

fn zeros_like<T: Scalar>(tensors: &Tensors<T>) -> Tensors<T> {
    tensors.iter().map(|t| vec![T::zero(); t.len()]).collect()
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// One-hot target for a label over `outputs` units.
pub fn one_hot<T: Scalar>(label: Label, outputs: usize) -> Vec<T> {
    (0..outputs)
        .map(|i| if i == label.index() { T::one() } else { T::zero() })
        .collect()
}

/// Mean over output units of the binary cross-entropy, probabilities clipped
/// to `[1e-7, 1 - 1e-7]`.
pub fn bce_loss<T: Scalar>(scores: &[T], target: &[T]) -> T {
    let eps = T::of(LOSS_EPSILON);
    let hi = T::one() - eps;
    let total: T = scores
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            // comparisons rather than max/min so a NaN score stays NaN
            let p = if p < eps {
                eps
            } else if p > hi {
                hi
            } else {
                p
            };
            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        })
        .sum();
    total / T::of(scores.len() as f64)
}

/// Loss of a prediction against a one-hot label, in double precision.
pub fn loss(prediction: &Prediction, label: Label) -> f64 {
    let target = one_hot::<f64>(label, prediction.class_scores.len());
    bce_loss(&prediction.class_scores, &target)
}

fn conv_forward<T: Scalar>(
    input: &[T],
    in_shape: Shape,
    spec: &ConvSpec,
    weights: &[T],
    bias: &[T],
    out_shape: Shape,
) -> Vec<T> {
    let (h, w) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let k = spec.kernel;
    let pad = spec.pad();
    let plane = oh * ow;
    let mut out = vec![T::zero(); out_shape.len()];
    for (oc, out_plane) in out.chunks_exact_mut(plane).enumerate() {
        out_plane.iter_mut().for_each(|v| *v = bias[oc]);
        for ic in 0..in_shape.channels {
            let in_plane = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weights[((oc * in_shape.channels + ic) * k + ky) * k + kx];
                    let ox_lo = pad.saturating_sub(kx);
                    let ox_hi = ow.min(w + pad - kx);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let in_row = &in_plane[(iy - pad) * w..(iy - pad + 1) * w];
                        let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                        axpy(
                            wv,
                            &in_row[ox_lo + kx - pad..ox_hi + kx - pad],
                            &mut out_row[ox_lo..ox_hi],
                        );
                    }
                }
            }
        }
    }
    out.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
    out
}

/// Returns (d_weights, d_bias, d_input). `d_out` is the gradient with respect
/// to the pre-activation output.
#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    input: &[T],
    in_shape: Shape,
    spec: &ConvSpec,
    weights: &[T],
    d_out: &[T],
    out_shape: Shape,
    need_input_grad: bool,
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let (h, w) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let k = spec.kernel;
    let pad = spec.pad();
    let plane = oh * ow;
    let mut d_w = vec![T::zero(); weights.len()];
    let mut d_b = vec![T::zero(); out_shape.channels];
    let mut d_in = need_input_grad.then(|| vec![T::zero(); in_shape.len()]);
    for (oc, d_plane) in d_out.chunks_exact(plane).enumerate() {
        d_b[oc] = d_plane.iter().copied().sum();
        for ic in 0..in_shape.channels {
            let in_plane = &input[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((oc * in_shape.channels + ic) * k + ky) * k + kx;
                    let wv = weights[widx];
                    let ox_lo = pad.saturating_sub(kx);
                    let ox_hi = ow.min(w + pad - kx);
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in 0..oh {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let row = (iy - pad) * w;
                        let d_row = &d_plane[oy * ow + ox_lo..oy * ow + ox_hi];
                        let in_range = row + ox_lo + kx - pad..row + ox_hi + kx - pad;
                        acc += dot(d_row, &in_plane[in_range.clone()]);
                        if let Some(d_in) = d_in.as_mut() {
                            let base = ic * h * w;
                            axpy(
                                wv,
                                d_row,
                                &mut d_in[base + in_range.start..base + in_range.end],
                            );
                        }
                    }
                    d_w[widx] = acc;
                }
            }
        }
    }
    (d_w, d_b, d_in)
}

fn pool_forward<T: Scalar>(input: &[T], in_shape: Shape, out_shape: Shape) -> (Vec<T>, Vec<u32>) {
    let (h, w) = (in_shape.height, in_shape.width);
    let (ph, pw) = (out_shape.height, out_shape.width);
    let mut out = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    for c in 0..in_shape.channels {
        let base = c * h * w;
        for py in 0..ph {
            for px in 0..pw {
                let top = base + 2 * py * w + 2 * px;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best as u32);
            }
        }
    }
    (out, argmax)
}

impl<T: Scalar> CnnModel<T> {
    /// He-uniform conv and hidden weights, Glorot-uniform output weights,
    /// zero biases.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self, CnnError> {
        let shapes = config.shapes()?;
        let lengths = config.tensor_lengths()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(lengths.len());
        let mut in_ch = config.input_channels;
        let mut uniform = |len: usize, limit: f64| -> Vec<T> {
            (0..len)
                .map(|_| T::of(rng.random_range(-limit..limit)))
                .collect()
        };
        for c in &config.convs {
            let fan_in = (in_ch * c.kernel * c.kernel) as f64;
            params.push(uniform(c.filters * in_ch * c.kernel * c.kernel, (6.0 / fan_in).sqrt()));
            params.push(vec![T::zero(); c.filters]);
            in_ch = c.filters;
        }
        let flat = shapes.flatten as f64;
        params.push(uniform(config.hidden * shapes.flatten, (6.0 / flat).sqrt()));
        params.push(vec![T::zero(); config.hidden]);
        let glorot = (6.0 / (config.hidden + config.outputs) as f64).sqrt();
        params.push(uniform(config.outputs * config.hidden, glorot));
        params.push(vec![T::zero(); config.outputs]);
        debug_assert!(params.iter().map(Vec::len).eq(lengths.iter().copied()));
        let adam = AdamState {
            first_moment: zeros_like(&params),
            second_moment: zeros_like(&params),
            step: 0,
        };
        Ok(CnnModel {
            config,
            shapes,
            params,
            adam,
            seed,
        })
    }

    /// All parameters zero.
    pub fn zeroed(config: NetConfig) -> Result<Self, CnnError> {
        let mut m = Self::init(config, 0)?;
        m.params.iter_mut().flatten().for_each(|v| *v = T::zero());
        Ok(m)
    }

    pub(crate) fn from_parts(
        config: NetConfig,
        params: Tensors<T>,
        adam: AdamState<T>,
        seed: u64,
    ) -> Result<Self, CnnError> {
        let shapes = config.shapes()?;
        let lengths = config.tensor_lengths()?;
        for (name, (t, len)) in config.tensor_names().iter().zip(params.iter().zip(&lengths)) {
            if t.len() != *len {
                return Err(CnnError::Shape(format!("{name} has {} elements, expected {len}", t.len())));
            }
        }
        if params.len() != lengths.len()
            || adam.first_moment.len() != lengths.len()
            || adam.second_moment.len() != lengths.len()
        {
            return Err(CnnError::Shape("tensor count mismatch".into()));
        }
        Ok(CnnModel {
            config,
            shapes,
            params,
            adam,
            seed,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn shapes(&self) -> &LayerShapes {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    /// Converts 8-bit intensities to network input in [0, 1].
    pub fn input_from_pixels(pixels: &[u8]) -> Vec<T> {
        let scale = T::of(1.0 / 255.0);
        pixels.iter().map(|&p| T::of(f64::from(p)) * scale).collect()
    }

    fn forward_cached(&self, input: &[T]) -> Result<ForwardCache<T>, CnnError> {
        let s = &self.shapes;
        if input.len() != s.input.len() {
            return Err(CnnError::Shape(format!(
                "input has {} values, expected {} ({})",
                input.len(),
                s.input.len(),
                s.input
            )));
        }
        let n_conv = self.config.convs.len();
        let mut trace = vec![("input".to_string(), s.input)];
        let mut stage_inputs = Vec::with_capacity(n_conv);
        let mut conv_outputs = Vec::with_capacity(n_conv);
        let mut pool_argmax = Vec::with_capacity(n_conv);
        let mut current = input.to_vec();
        let mut in_shape = s.input;
        for (i, spec) in self.config.convs.iter().enumerate() {
            let conv_shape = s.conv[i];
            let out = conv_forward(
                &current,
                in_shape,
                spec,
                &self.params[2 * i],
                &self.params[2 * i + 1],
                conv_shape,
            );
            trace.push((format!("conv{}", i + 1), conv_shape));
            stage_inputs.push(std::mem::take(&mut current));
            if spec.pool {
                let pooled_shape = s.stage[i];
                let (pooled, arg) = pool_forward(&out, conv_shape, pooled_shape);
                trace.push((format!("pool{}", i + 1), pooled_shape));
                current = pooled;
                pool_argmax.push(arg);
            } else {
                current = out.clone();
                pool_argmax.push(Vec::new());
            }
            conv_outputs.push(out);
            in_shape = s.stage[i];
        }
        let flat = current;
        trace.push(("flatten".to_string(), Shape::new(flat.len(), 1, 1)));

        let base = 2 * n_conv;
        let (w1, b1) = (&self.params[base], &self.params[base + 1]);
        let (w2, b2) = (&self.params[base + 2], &self.params[base + 3]);
        let hidden: Vec<T> = (0..s.hidden)
            .map(|j| {
                let z = dot(&w1[j * flat.len()..(j + 1) * flat.len()], &flat) + b1[j];
                z.max(T::zero())
            })
            .collect();
        trace.push(("dense1".to_string(), Shape::new(hidden.len(), 1, 1)));
        let scores: Vec<T> = (0..s.outputs)
            .map(|o| sigmoid(dot(&w2[o * s.hidden..(o + 1) * s.hidden], &hidden) + b2[o]))
            .collect();
        trace.push(("dense2".to_string(), Shape::new(scores.len(), 1, 1)));
        Ok(ForwardCache {
            stage_inputs,
            conv_outputs,
            pool_argmax,
            flat,
            hidden,
            scores,
            trace,
        })
    }

    /// Forward pass. The cache is returned only in training mode.
    pub fn forward(
        &self,
        input: &[T],
        train_mode: bool,
    ) -> Result<(Prediction, Option<ForwardCache<T>>), CnnError> {
        let cache = self.forward_cached(input)?;
        let prediction = prediction_from(&cache.scores);
        Ok((prediction, train_mode.then_some(cache)))
    }

    pub fn predict_pixels(&self, pixels: &[u8]) -> Result<Prediction, CnnError> {
        Ok(self.forward(&Self::input_from_pixels(pixels), false)?.0)
    }

    /// Gradients of the clipped loss for one sample, multiplied by `scale`.
    pub fn backward(&self, cache: &ForwardCache<T>, label: Label, scale: T) -> Tensors<T> {
        let s = &self.shapes;
        let n_conv = self.config.convs.len();
        let mut grads: Tensors<T> = Vec::with_capacity(self.params.len());
        grads.resize_with(self.params.len(), Vec::new);

        let eps = T::of(LOSS_EPSILON);
        let n_out = T::of(s.outputs as f64);
        let target = one_hot::<T>(label, s.outputs);
        // dL/dz for sigmoid + clipped BCE; zero where the clip is active.
        let d_logits: Vec<T> = cache
            .scores
            .iter()
            .zip(&target)
            .map(|(&p, &y)| {
                if p > eps && p < T::one() - eps {
                    (p - y) / n_out * scale
                } else {
                    T::zero()
                }
            })
            .collect();

        let base = 2 * n_conv;
        let w1 = &self.params[base];
        let w2 = &self.params[base + 2];
        let flat_len = cache.flat.len();

        let mut d_w2 = vec![T::zero(); w2.len()];
        let mut d_hidden = vec![T::zero(); s.hidden];
        for (o, &dz) in d_logits.iter().enumerate() {
            axpy(dz, &cache.hidden, &mut d_w2[o * s.hidden..(o + 1) * s.hidden]);
            axpy(dz, &w2[o * s.hidden..(o + 1) * s.hidden], &mut d_hidden);
        }
        for (d, &h) in d_hidden.iter_mut().zip(&cache.hidden) {
            if h <= T::zero() {
                *d = T::zero();
            }
        }
        let mut d_w1 = vec![T::zero(); w1.len()];
        let mut d_flat = vec![T::zero(); flat_len];
        for (j, &dh) in d_hidden.iter().enumerate() {
            if dh == T::zero() {
                continue;
            }
            let row = j * flat_len..(j + 1) * flat_len;
            axpy(dh, &cache.flat, &mut d_w1[row.clone()]);
            axpy(dh, &w1[row], &mut d_flat);
        }
        grads[base] = d_w1;
        grads[base + 1] = d_hidden;
        grads[base + 2] = d_w2;
        grads[base + 3] = d_logits;

        let mut d_stage = d_flat;
        for i in (0..n_conv).rev() {
            let spec = &self.config.convs[i];
            let conv_shape = s.conv[i];
            let conv_out = &cache.conv_outputs[i];
            let mut d_conv = if spec.pool {
                let mut d = vec![T::zero(); conv_shape.len()];
                for (&idx, &g) in cache.pool_argmax[i].iter().zip(&d_stage) {
                    d[idx as usize] += g;
                }
                d
            } else {
                d_stage
            };
            for (d, &a) in d_conv.iter_mut().zip(conv_out) {
                if a <= T::zero() {
                    *d = T::zero();
                }
            }
            let in_shape = if i == 0 { s.input } else { s.stage[i - 1] };
            let (d_w, d_b, d_in) = conv_backward(
                &cache.stage_inputs[i],
                in_shape,
                spec,
                &self.params[2 * i],
                &d_conv,
                conv_shape,
                i > 0,
            );
            grads[2 * i] = d_w;
            grads[2 * i + 1] = d_b;
            d_stage = d_in.unwrap_or_default();
        }
        grads
    }

    /// Mean loss and mean gradient over a batch. Per-sample work may run in
    /// parallel; the reduction is in batch order, so the result does not
    /// depend on the thread count.
    pub fn batch_gradients(
        &self,
        inputs: &[Vec<T>],
        labels: &[Label],
    ) -> Result<BatchGradients<T>, CnnError> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(CnnError::Shape(format!(
                "batch has {} inputs and {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        let scale = T::of(1.0 / inputs.len() as f64);
        type Sample<T> = (f64, bool, Tensors<T>);
        let per_sample: Vec<Result<Sample<T>, CnnError>> = inputs
            .par_iter()
            .zip(labels.par_iter())
            .map(|(x, &label)| {
                let cache = self.forward_cached(x)?;
                let l = bce_loss(&cache.scores, &one_hot::<T>(label, self.shapes.outputs));
                let hit = prediction_from(&cache.scores).predicted_class == label;
                Ok((l.as_f64(), hit, self.backward(&cache, label, scale)))
            })
            .collect();
        let mut total = 0.0;
        let mut correct = 0;
        let mut sum: Option<Tensors<T>> = None;
        for item in per_sample {
            let (l, hit, g) = item?;
            total += l;
            correct += usize::from(hit);
            match sum.as_mut() {
                None => sum = Some(g),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        a.iter_mut().zip(b).for_each(|(x, &y)| *x += y);
                    }
                }
            }
        }
        Ok(BatchGradients {
            loss: total / inputs.len() as f64,
            correct,
            grads: sum.expect("non-empty batch"),
        })
    }

    /// Bias-corrected Adam update; rejects non-finite gradients without
    /// touching the model.
    pub fn adam_step(&mut self, grads: &Tensors<T>, lr: f64) -> Result<(), CnnError> {
        if grads.len() != self.params.len() {
            return Err(CnnError::Shape("gradient tensor count mismatch".into()));
        }
        let names = self.config.tensor_names();
        for ((g, p), name) in grads.iter().zip(&self.params).zip(&names) {
            if g.len() != p.len() {
                return Err(CnnError::Shape(format!("gradient for {name} has wrong length")));
            }
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(CnnError::Numerical(format!(
                    "non-finite gradient {:?} in {name}[{pos}] at step {}",
                    g[pos],
                    self.adam.step + 1
                )));
            }
        }
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let bc1 = T::of(1.0 - ADAM_BETA1.powi(t));
        let bc2 = T::of(1.0 - ADAM_BETA2.powi(t));
        let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
        let (one_b1, one_b2) = (T::of(1.0 - ADAM_BETA1), T::of(1.0 - ADAM_BETA2));
        let eps = T::of(ADAM_EPSILON);
        let lr = T::of(lr);
        for (((p, g), m), v) in self
            .params
            .iter_mut()
            .zip(grads)
            .zip(self.adam.first_moment.iter_mut())
            .zip(self.adam.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn prediction_from<T: Scalar>(scores: &[T]) -> Prediction {
    let class_scores: Vec<f64> = scores.iter().map(|s| s.as_f64()).collect();
    let mut best = 0;
    for (i, &s) in class_scores.iter().enumerate() {
        if s > class_scores[best] {
            best = i;
        }
    }
    Prediction {
        class_scores,
        predicted_class: Label::from_index(best),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_net_count() -> usize {
        3 * 3 * 16 + 16
            + 2 * 2 * 16 * 32 + 32
            + 2 * 2 * 32 * 64 + 64
            + 2 * 2 * 64 * 128 + 128
            + 6272 * 100 + 100
            + 100 * 2 + 2
    }

    #[test]
    fn parameter_count_matches_layer_sum() {
        let m = CnnModel::<f32>::init(NetConfig::standard(), 1).unwrap();
        assert_eq!(m.param_count(), full_net_count());
        assert_eq!(NetConfig::standard().param_count().unwrap(), 670_894);
    }

    #[test]
    fn full_net_shapes() {
        let s = NetConfig::standard().shapes().unwrap();
        let dims: Vec<(usize, usize, usize)> = s
            .conv
            .iter()
            .zip(&s.stage)
            .flat_map(|(c, p)| [(c.height, c.width, c.channels), (p.height, p.width, p.channels)])
            .collect();
        assert_eq!(
            dims,
            vec![
                (128, 128, 16),
                (64, 64, 16),
                (63, 63, 32),
                (31, 31, 32),
                (30, 30, 64),
                (15, 15, 64),
                (14, 14, 128),
                (7, 7, 128)
            ]
        );
        assert_eq!(s.flatten, 6272);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = CnnModel::<f32>::init(NetConfig::reduced(), 7).unwrap();
        let b = CnnModel::<f32>::init(NetConfig::reduced(), 7).unwrap();
        let c = CnnModel::<f32>::init(NetConfig::reduced(), 8).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
        assert!(a.params[1].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_model_scores_one_half() {
        let m = CnnModel::<f32>::zeroed(NetConfig::standard()).unwrap();
        let (p, cache) = m.forward(&vec![0.0; 128 * 128], false).unwrap();
        assert!(cache.is_none());
        assert_eq!(p.class_scores, vec![0.5, 0.5]);
        assert!((loss(&p, Label::Mi) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn wrong_input_shape() {
        let m = CnnModel::<f32>::zeroed(NetConfig::reduced()).unwrap();
        assert!(matches!(m.forward(&[0.0; 15], false), Err(CnnError::Shape(_))));
    }

    #[test]
    fn loss_values() {
        let eps = 1e-7;
        let l = bce_loss(&[1.0 - eps, eps], &[1.0, 0.0]);
        assert!(l < 2e-7);
        let l = bce_loss(&[0.5f64, 0.5], &[0.0, 1.0]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        // Clipping keeps log(0) out.
        assert!(bce_loss(&[0.0f64, 1.0], &[1.0, 0.0]).is_finite());
    }

    #[test]
    fn pool_ties_route_to_first() {
        let input = [1.0f64, 1.0, 1.0, 1.0];
        let (out, arg) = pool_forward(&input, Shape::new(1, 2, 2), Shape::new(1, 1, 1));
        assert_eq!(out, vec![1.0]);
        assert_eq!(arg, vec![0]);
        let input = [0.0f64, 2.0, 3.0, 3.0];
        let (_, arg) = pool_forward(&input, Shape::new(1, 2, 2), Shape::new(1, 1, 1));
        assert_eq!(arg, vec![2]);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut m = CnnModel::<f64>::init(NetConfig::reduced(), 3).unwrap();
        let before = m.params.clone();
        // Seed the moments so decay is observable.
        m.adam.first_moment[0][0] = 1.0;
        m.adam.second_moment[0][0] = 1.0;
        let zero = zeros_like(&m.params);
        m.adam_step(&zero, 0.001).unwrap();
        assert_eq!(m.adam.first_moment[0][0], 0.9);
        assert_eq!(m.adam.second_moment[0][0], 0.999);
        assert_eq!(m.adam.step, 1);
        for (a, b) in m.params.iter().flatten().zip(before.iter().flatten()).skip(1) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut m = CnnModel::<f64>::init(NetConfig::reduced(), 3).unwrap();
        let before = m.params.clone();
        let mut g = zeros_like(&m.params);
        g[0][0] = 0.37;
        g[0][1] = -2.5;
        m.adam_step(&g, 0.001).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let want0 = before[0][0] - 0.001 * 0.37 / (0.37 + 1e-8);
        let want1 = before[0][1] + 0.001 * 2.5 / (2.5 + 1e-8);
        assert!((m.params[0][0] - want0).abs() < 1e-12);
        assert!((m.params[0][1] - want1).abs() < 1e-12);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut m = CnnModel::<f32>::init(NetConfig::reduced(), 3).unwrap();
        let before = m.clone();
        let mut g = zeros_like(&m.params);
        g[3][0] = f32::NAN;
        assert!(matches!(m.adam_step(&g, 0.001), Err(CnnError::Numerical(_))));
        assert_eq!(m, before);
    }

    #[test]
    fn saturated_prediction_has_zero_gradient() {
        let mut m = CnnModel::<f64>::init(NetConfig::reduced(), 5).unwrap();
        let n = m.params.len();
        // Push the output biases far into saturation for class MI.
        m.params[n - 1] = vec![-40.0, 40.0];
        let x = vec![0.3; 16 * 16];
        let (_, cache) = m.forward(&x, true).unwrap();
        let g = m.backward(&cache.unwrap(), Label::Mi, 1.0);
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_relu_path_has_zero_gradient() {
        let mut m = CnnModel::<f64>::init(NetConfig::reduced(), 5).unwrap();
        // Filter 0 of conv1 can never activate on non-negative input.
        for w in m.params[0][..9].iter_mut() {
            *w = -1.0;
        }
        m.params[1][0] = -0.5;
        let x: Vec<f64> = (0..256).map(|i| (i % 7) as f64 / 7.0).collect();
        let (_, cache) = m.forward(&x, true).unwrap();
        let g = m.backward(&cache.unwrap(), Label::Healthy, 1.0);
        assert!(g[0][..9].iter().all(|&v| v == 0.0));
        assert_eq!(g[1][0], 0.0);
    }
}
