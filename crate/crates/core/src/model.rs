//! A three-layer 3×3 convolutional segmentation network with a hand-written
//! backward pass, He initialization and momentum SGD.
//!
//! Layout is `3 → hidden → hidden → C` with stride 1 and zero padding 1, so
//! logits keep the spatial size of the input. The first two layers are
//! followed by ReLU.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::error::{Error, Result};
use crate::numerics::{check_finite, Tensor};

pub const INPUT_CHANNELS: usize = 3;
pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out × in × 3 × 3`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            weight: vec![0.0; out_channels * in_channels * TAPS],
            bias: vec![0.0; out_channels],
        }
    }

    #[inline]
    fn w(&self, o: usize, i: usize, tap: usize) -> f64 {
        self.weight[(o * self.in_channels + i) * TAPS + tap]
    }
}

/// Network weights. Layer order is the forward order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<ConvLayer>,
}

/// `∂L/∂θ`, laid out exactly like the [`ModelParams`] it belongs to.
pub type GradientBundle = ModelParams;

/// Momentum buffer of [`sgd_step`].
pub type Velocity = ModelParams;

impl ModelParams {
    pub fn zeros(hidden_channels: usize, num_classes: usize) -> Self {
        ModelParams {
            layers: vec![
                ConvLayer::zeros(INPUT_CHANNELS, hidden_channels),
                ConvLayer::zeros(hidden_channels, hidden_channels),
                ConvLayer::zeros(hidden_channels, num_classes),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(l.in_channels, l.out_channels))
                .collect(),
        }
    }

    pub fn hidden_channels(&self) -> usize {
        self.layers[0].out_channels
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Same layer count and per-layer dimensions.
    pub fn congruent(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.in_channels == b.in_channels && a.out_channels == b.out_channels)
    }

    /// Every scalar in checkpoint order: per layer, weights then biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.values_mut() {
            *a *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// FNV-1a over dimensions and raw bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for l in &self.layers {
            feed(l.in_channels as u64);
            feed(l.out_channels as u64);
        }
        for v in self.values() {
            feed(v.to_bits());
        }
        h
    }
}

/// He-normal weights (`σ = sqrt(2 / fan_in)`) from a seeded ChaCha stream and
/// zero biases.
pub fn init_params(seed: u64, hidden_channels: usize, num_classes: usize) -> Result<ModelParams> {
    if hidden_channels == 0 {
        return Err(Error::InvalidParameter("hidden_channels must be ≥ 1".into()));
    }
    if num_classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "num_classes must be ≥ 2, got {num_classes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(hidden_channels, num_classes);
    for layer in &mut params.layers {
        let fan_in = (layer.in_channels * TAPS) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        for w in &mut layer.weight {
            *w = normal.sample(&mut rng);
        }
    }
    Ok(params)
}

/// Activations retained by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    height: usize,
    width: usize,
    /// Input of every layer: the image, then the two post-ReLU activations.
    inputs: Vec<Vec<f64>>,
}

/// Valid output range along one axis for a tap offset of `d ∈ {-1, 0, 1}`.
#[inline]
fn tap_range(d: isize, len: usize) -> (usize, usize) {
    let lo = if d < 0 { 1 } else { 0 };
    let hi = if d > 0 { len - 1 } else { len };
    (lo, hi)
}

fn conv_forward(layer: &ConvLayer, input: &[f64], h: usize, w: usize, out: &mut [f64]) {
    let n = h * w;
    for o in 0..layer.out_channels {
        let dst = &mut out[o * n..(o + 1) * n];
        dst.fill(layer.bias[o]);
        for i in 0..layer.in_channels {
            let src = &input[i * n..(i + 1) * n];
            for tap in 0..TAPS {
                let wv = layer.w(o, i, tap);
                let dy = (tap / KERNEL) as isize - 1;
                let dx = (tap % KERNEL) as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                let (x0, x1) = tap_range(dx, w);
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let s = &src[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                    let d = &mut dst[y * w + x0..y * w + x1];
                    for (dv, sv) in d.iter_mut().zip(s) {
                        *dv += wv * sv;
                    }
                }
            }
        }
    }
}

/// Accumulates parameter gradients into `grad` and, when requested, writes
/// the input gradient into `grad_input`.
fn conv_backward(
    layer: &ConvLayer,
    input: &[f64],
    grad_out: &[f64],
    h: usize,
    w: usize,
    grad: &mut ConvLayer,
    mut grad_input: Option<&mut [f64]>,
) {
    let n = h * w;
    if let Some(gi) = grad_input.as_deref_mut() {
        gi.fill(0.0);
    }
    for o in 0..layer.out_channels {
        let go = &grad_out[o * n..(o + 1) * n];
        grad.bias[o] += go.iter().sum::<f64>();
        for i in 0..layer.in_channels {
            let src = &input[i * n..(i + 1) * n];
            for tap in 0..TAPS {
                let dy = (tap / KERNEL) as isize - 1;
                let dx = (tap % KERNEL) as isize - 1;
                let (y0, y1) = tap_range(dy, h);
                let (x0, x1) = tap_range(dx, w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let s = &src[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                    let g = &go[y * w + x0..y * w + x1];
                    acc += g.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                }
                grad.weight[(o * layer.in_channels + i) * TAPS + tap] += acc;
                if let Some(gi) = grad_input.as_deref_mut() {
                    let wv = layer.w(o, i, tap);
                    let gi = &mut gi[i * n..(i + 1) * n];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let d = &mut gi[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        let g = &go[y * w + x0..y * w + x1];
                        for (dv, gv) in d.iter_mut().zip(g) {
                            *dv += wv * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Logits `C × H × W` for a `3 × H × W` image.
pub fn forward(params: &ModelParams, image: &Tensor) -> Result<(Tensor, ForwardCache)> {
    let (c, h, w) = image.dims3()?;
    if c != params.layers[0].in_channels {
        return Err(Error::Shape(format!(
            "image has {c} channels, model expects {}",
            params.layers[0].in_channels
        )));
    }
    check_finite(image.data())?;
    let n = h * w;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut current = image.data().to_vec();
    let last = params.layers.len() - 1;
    for (li, layer) in params.layers.iter().enumerate() {
        let mut out = vec![0.0; layer.out_channels * n];
        conv_forward(layer, &current, h, w, &mut out);
        if li < last {
            for v in &mut out {
                *v = v.max(0.0);
            }
        }
        inputs.push(std::mem::replace(&mut current, out));
    }
    let logits = Tensor::from_parts(vec![params.num_classes(), h, w], current);
    let cache = ForwardCache {
        fingerprint: params.fingerprint(),
        height: h,
        width: w,
        inputs,
    };
    Ok((logits, cache))
}

/// Gradients of the scalar whose logit gradient is `grad_logits`, with
/// respect to every parameter and optionally the input image.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_logits: &Tensor,
    want_input_grad: bool,
) -> Result<(GradientBundle, Option<Tensor>)> {
    if cache.fingerprint != params.fingerprint() || cache.inputs.len() != params.layers.len() {
        return Err(Error::InvalidState(
            "forward cache was produced by different parameters".into(),
        ));
    }
    let (h, w) = (cache.height, cache.width);
    let expected = [params.num_classes(), h, w];
    if grad_logits.shape() != expected {
        return Err(Error::Shape(format!(
            "grad_logits {:?}, expected {expected:?}",
            grad_logits.shape()
        )));
    }
    let n = h * w;
    let mut grads = params.zeros_like();
    let mut upstream = grad_logits.data().to_vec();
    for li in (0..params.layers.len()).rev() {
        let layer = &params.layers[li];
        let input = &cache.inputs[li];
        let need_input = li > 0 || want_input_grad;
        let mut grad_in = if need_input {
            vec![0.0; layer.in_channels * n]
        } else {
            Vec::new()
        };
        conv_backward(
            layer,
            input,
            &upstream,
            h,
            w,
            &mut grads.layers[li],
            need_input.then_some(grad_in.as_mut_slice()),
        );
        if li > 0 {
            // input of layer li is relu(pre); relu'(pre) = [activation > 0]
            for (g, a) in grad_in.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        upstream = grad_in;
    }
    let input_grad = want_input_grad
        .then(|| Tensor::from_parts(vec![params.layers[0].in_channels, h, w], upstream));
    Ok((grads, input_grad))
}

/// Momentum SGD: `v ← μ v + g`, `θ ← θ − lr v`.
pub fn sgd_step(
    params: &mut ModelParams,
    grads: &GradientBundle,
    lr: f64,
    momentum: f64,
    velocity: &mut Velocity,
) -> Result<()> {
    if !params.congruent(grads) || !params.congruent(velocity) {
        return Err(Error::Shape("gradient/velocity not congruent with params".into()));
    }
    for ((theta, g), v) in params
        .values_mut()
        .zip(grads.values())
        .zip(velocity.values_mut())
    {
        *v = momentum * *v + g;
        *theta -= lr * *v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::new(vec![c, h, w], (0..c * h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    // Direct definition: out[o,y,x] = b[o] + Σ_{i,ky,kx} w[o,i,ky,kx] · in[i, y+ky−1, x+kx−1].
    fn conv_oracle(layer: &ConvLayer, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; layer.out_channels * h * w];
        for o in 0..layer.out_channels {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = layer.bias[o];
                    for i in 0..layer.in_channels {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += layer.weight[((o * layer.in_channels + i) * 3 + ky) * 3 + kx]
                                    * input[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(o * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    fn random_params(seed: u64, hidden: usize, classes: usize) -> ModelParams {
        let mut p = init_params(seed, hidden, classes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        for l in &mut p.layers {
            for b in &mut l.bias {
                *b = rng.gen_range(-0.2..0.2);
            }
        }
        p
    }

    #[test]
    fn init_is_deterministic_with_zero_bias() {
        let a = init_params(5, 4, 3).unwrap();
        let b = init_params(5, 4, 3).unwrap();
        assert!(a.values().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        assert_ne!(init_params(6, 4, 3).unwrap(), a);
        assert!(init_params(1, 0, 3).is_err());
        assert!(init_params(1, 4, 1).is_err());
    }

    #[test]
    fn init_scale() {
        let p = init_params(21, 16, 4).unwrap();
        let w = &p.layers[1].weight;
        assert!(w.len() >= 1000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let want = (2.0f64 / (16.0 * 9.0)).sqrt();
        assert!((var.sqrt() - want).abs() < 0.2 * want);
    }

    #[test]
    fn zero_params_give_zero_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 3, 6, 5);
        let (logits, _) = forward(&ModelParams::zeros(4, 3), &img).unwrap();
        assert_eq!(logits.shape(), &[3, 6, 5]);
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = random_params(2, 4, 3);
        let img = random_image(&mut rng, 3, 5, 5);
        let (logits, _) = forward(&params, &img).unwrap();
        let mut act = img.data().to_vec();
        for (li, layer) in params.layers.iter().enumerate() {
            act = conv_oracle(layer, &act, 5, 5);
            if li < 2 {
                act.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        for (a, b) in logits.data().iter().zip(&act) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_channels() {
        let img = Tensor::zeros(vec![2, 4, 4]);
        assert!(matches!(
            forward(&ModelParams::zeros(2, 2), &img),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn translation_equivariance_in_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = random_params(8, 4, 2);
        let (h, w) = (12, 12);
        let mut base = vec![0.5; 3 * h * w];
        for c in 0..3 {
            for y in 4..7 {
                for x in 4..7 {
                    base[(c * h + y) * w + x] = rng.gen();
                }
            }
        }
        let mut moved = vec![0.5; 3 * h * w];
        for c in 0..3 {
            for y in 0..h - 1 {
                for x in 0..w {
                    moved[(c * h + y + 1) * w + x] = base[(c * h + y) * w + x];
                }
            }
        }
        let (a, _) = forward(&params, &Tensor::new(vec![3, h, w], base).unwrap()).unwrap();
        let (b, _) = forward(&params, &Tensor::new(vec![3, h, w], moved).unwrap()).unwrap();
        for k in 0..2 {
            for y in 3..h - 4 {
                for x in 3..w - 3 {
                    let va = a.data()[(k * h + y) * w + x];
                    let vb = b.data()[(k * h + y + 1) * w + x];
                    assert!((va - vb).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_cotangent_and_stale_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = random_params(3, 3, 2);
        let img = random_image(&mut rng, 3, 4, 4);
        let (_, cache) = forward(&params, &img).unwrap();
        let (g, gi) = backward(&params, &cache, &Tensor::zeros(vec![2, 4, 4]), true).unwrap();
        assert!(g.values().all(|v| v == 0.0));
        assert!(gi.unwrap().data().iter().all(|&v| v == 0.0));

        let mut other = params.clone();
        other.layers[0].bias[0] += 1.0;
        assert!(matches!(
            backward(&other, &cache, &Tensor::zeros(vec![2, 4, 4]), false),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        // layer-0 bias very negative: every hidden unit dead, so nothing
        // upstream of layer 2 gets gradient.
        let mut params = random_params(4, 3, 2);
        params.layers[0].bias.iter_mut().for_each(|b| *b = -1e3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = random_image(&mut rng, 3, 4, 4);
        let (_, cache) = forward(&params, &img).unwrap();
        let g_logits = Tensor::new(vec![2, 4, 4], vec![1.0; 32]).unwrap();
        let (g, gi) = backward(&params, &cache, &g_logits, true).unwrap();
        assert!(g.layers[0].weight.iter().all(|&v| v == 0.0));
        assert!(g.layers[1].weight.iter().all(|&v| v == 0.0));
        assert!(gi.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(g.layers[2].bias.iter().all(|&v| v == 16.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = random_params(5, 4, 2);
        let img = random_image(&mut rng, 3, 5, 5);
        let cot: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cot = Tensor::new(vec![2, 5, 5], cot).unwrap();
        let objective = |p: &ModelParams, x: &Tensor| -> f64 {
            let (l, _) = forward(p, x).unwrap();
            l.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = forward(&params, &img).unwrap();
        let (grads, gin) = backward(&params, &cache, &cot, true).unwrap();
        let step = 1e-5;
        let analytic: Vec<f64> = grads.values().collect();
        let mut probe = params.clone();
        for (idx, a) in analytic.iter().enumerate() {
            let orig = probe.values().nth(idx).unwrap();
            *probe.values_mut().nth(idx).unwrap() = orig + step;
            let hi = objective(&probe, &img);
            *probe.values_mut().nth(idx).unwrap() = orig - step;
            let lo = objective(&probe, &img);
            *probe.values_mut().nth(idx).unwrap() = orig;
            let fd = (hi - lo) / (2.0 * step);
            let scale = a.abs().max(fd.abs()).max(1e-6);
            assert!((a - fd).abs() / scale <= 1e-6, "param {idx}: {a} vs {fd}");
        }
        let gin = gin.unwrap();
        let mut x = img.clone();
        for idx in 0..x.len() {
            let orig = x.data()[idx];
            x.data_mut()[idx] = orig + step;
            let hi = objective(&params, &x);
            x.data_mut()[idx] = orig - step;
            let lo = objective(&params, &x);
            x.data_mut()[idx] = orig;
            let fd = (hi - lo) / (2.0 * step);
            let a = gin.data()[idx];
            let scale = a.abs().max(fd.abs()).max(1e-6);
            assert!((a - fd).abs() / scale <= 1e-6, "input {idx}: {a} vs {fd}");
        }
    }

    #[test]
    fn sgd_recurrence() {
        let mut p = ModelParams::zeros(1, 2);
        let mut g = p.zeros_like();
        g.values_mut().for_each(|v| *v = 2.0);
        let mut vel = p.zeros_like();
        sgd_step(&mut p, &g, 0.0, 0.9, &mut vel).unwrap();
        assert!(p.values().all(|v| v == 0.0));

        let mut p = ModelParams::zeros(1, 2);
        let mut vel = p.zeros_like();
        sgd_step(&mut p, &g, 0.5, 0.0, &mut vel).unwrap();
        assert!(p.values().all(|v| v == -1.0));

        let mut p = ModelParams::zeros(1, 2);
        let mut vel = p.zeros_like();
        sgd_step(&mut p, &g, 0.1, 0.9, &mut vel).unwrap();
        sgd_step(&mut p, &g, 0.1, 0.9, &mut vel).unwrap();
        assert!(p.values().all(|v| (v - (-0.29 * 2.0)).abs() < 1e-15));
    }
}
