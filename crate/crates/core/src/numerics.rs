//! Dense numerical kernels: class softmax, temperature spatial softmax, KL
//! divergence and Pearson distance, each with its analytic gradient.
//!
//! Everything here works on `f64` buffers. Exponentials are always taken after
//! subtracting the running maximum, so finite inputs never overflow.

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`Distribution`].
pub const DISTRIBUTION_SUM_TOL: f64 = 1e-9;

/// Centered norms below this are treated as a constant vector by
/// [`pearson_distance`].
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Row-major dense tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "shape entries must be positive, got {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        check_finite(&data)?;
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    /// Builds a tensor without the finiteness scan. Used on hot paths whose
    /// inputs were already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets the tensor as `C × N` where `C` is the leading dimension and
    /// `N` the product of the rest.
    pub fn channels_by_pixels(&self) -> (usize, usize) {
        let c = self.shape[0];
        (c, self.data.len() / c)
    }

    /// `(C, H, W)` for a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            other => Err(Error::Shape(format!("expected rank-3 C×H×W, got {other:?}"))),
        }
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let (_, n) = self.channels_by_pixels();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::InvalidInput(format!(
                "distribution entry {i} is {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "distribution sums to {sum}, not 1"
            )));
        }
        Ok(Distribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

pub(crate) fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::InvalidInput(format!(
            "non-finite value {} at flat index {i}",
            data[i]
        ))),
        None => Ok(()),
    }
}

/// Per-pixel softmax over the leading (class) axis of a `C × N` (or
/// `C × H × W`) logit tensor.
pub fn softmax_over_classes(logits: &Tensor) -> Result<Tensor> {
    check_finite(logits.data())?;
    let (c, n) = logits.channels_by_pixels();
    let src = logits.data();
    let mut out = vec![0.0; src.len()];
    let mut column = vec![0.0; c];
    for j in 0..n {
        for k in 0..c {
            column[k] = src[k * n + j];
        }
        softmax_in_place(&mut column, 1.0);
        for k in 0..c {
            out[k * n + j] = column[k];
        }
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// `softmax(z / t)` written back into `z`.
pub(crate) fn softmax_in_place(z: &mut [f64], temperature: f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in z.iter_mut() {
        *x = ((*x - max) / temperature).exp();
        sum += *x;
    }
    for x in z.iter_mut() {
        *x /= sum;
    }
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    Ok(())
}

/// Temperature softmax over a spatial logit vector:
/// `ψ(z)_i = exp(z_i / t) / Σ_j exp(z_j / t)`.
pub fn spatial_softmax(logits: &[f64], temperature: f64) -> Result<Distribution> {
    check_temperature(temperature)?;
    if logits.is_empty() {
        return Err(Error::InvalidInput("empty logit vector".into()));
    }
    check_finite(logits)?;
    let mut probs = logits.to_vec();
    softmax_in_place(&mut probs, temperature);
    Ok(Distribution { probs })
}

/// Pulls a cotangent on `ψ(z)` back to a gradient on `z`:
/// `∂/∂z = ψ ⊙ (g − ⟨g, ψ⟩) / t`.
pub fn spatial_softmax_vjp(
    probs: &Distribution,
    cotangent: &[f64],
    temperature: f64,
) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if cotangent.len() != probs.len() {
        return Err(Error::Shape(format!(
            "cotangent length {} != distribution length {}",
            cotangent.len(),
            probs.len()
        )));
    }
    Ok(softmax_vjp(probs.probs(), cotangent, temperature))
}

pub(crate) fn softmax_vjp(probs: &[f64], cotangent: &[f64], temperature: f64) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(cotangent).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(cotangent)
        .map(|(p, g)| p * (g - inner) / temperature)
        .collect()
}

/// `KL(u ‖ v) = Σ u_i ln(u_i / v_i)` in nats, with `0 · ln(0 / ·) = 0`.
pub fn kl_divergence(u: &Distribution, v: &Distribution) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "KL operands have lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    kl_raw(u.probs(), v.probs())
}

pub(crate) fn kl_raw(u: &[f64], v: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&ui, &vi)) in u.iter().zip(v).enumerate() {
        if ui == 0.0 {
            continue;
        }
        if vi == 0.0 {
            return Err(Error::DivergenceUndefined { index: i, u_val: ui });
        }
        total += ui * (ui / vi).ln();
    }
    Ok(total)
}

/// KL value together with its gradient with respect to the logits `z` that
/// produced `v = ψ(z)` at `temperature`. The gradient is `(v − u) / t`.
pub fn kl_divergence_with_grad(
    u: &Distribution,
    v: &Distribution,
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    check_temperature(temperature)?;
    let value = kl_divergence(u, v)?;
    let grad = u
        .probs()
        .iter()
        .zip(v.probs())
        .map(|(ui, vi)| (vi - ui) / temperature)
        .collect();
    Ok((value, grad))
}

/// Result of [`pearson_distance`].
#[derive(Debug, Clone, PartialEq)]
pub struct PearsonDistance {
    /// `1 − ρ(u, v)`, in `[0, 2]`.
    pub value: f64,
    /// `∂ value / ∂ v`.
    pub grad_v: Vec<f64>,
}

/// Correlation distance `1 − ρ(u, v)` with `ρ` the Pearson coefficient.
///
/// Errors with [`Error::Degenerate`] when either argument is constant, since
/// the coefficient is undefined there.
pub fn pearson_distance(u: &[f64], v: &[f64]) -> Result<PearsonDistance> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "Pearson operands have lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::InvalidInput(
            "Pearson distance needs at least two entries".into(),
        ));
    }
    check_finite(u)?;
    check_finite(v)?;
    let a = centered(u);
    let b = centered(v);
    let na = norm(&a);
    let nb = norm(&b);
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return Err(Error::Degenerate(format!(
            "constant vector in Pearson distance (centered norms {na:e}, {nb:e})"
        )));
    }
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let rho = (dot / (na * nb)).clamp(-1.0, 1.0);
    // ∂ρ/∂v = a/(|a||b|) − ρ b/|b|²; the centering projection is a no-op on
    // both terms since a and b already sum to zero.
    let grad_v = a
        .iter()
        .zip(&b)
        .map(|(ai, bi)| -(ai / (na * nb) - rho * bi / (nb * nb)))
        .collect();
    Ok(PearsonDistance {
        value: 1.0 - rho,
        grad_v,
    })
}

pub(crate) fn centered(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
