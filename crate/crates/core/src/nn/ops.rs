use rand::Rng;

use super::{fan_in_uniform, FeatureTensor, ParamRole, Params};
use crate::error::{Error, Result};

/// Variance guard inside layer normalization.
pub const LN_EPS: f64 = 1e-5;
/// Probabilities are clamped to this before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

fn nonempty(x: &[f64], what: &str) -> Result<()> {
    if x.is_empty() {
        Err(Error::invalid(format!("{what} of an empty vector")))
    } else {
        Ok(())
    }
}

pub fn relu(x: &[f64]) -> Result<Vec<f64>> {
    nonempty(x, "relu")?;
    Ok(x.iter().map(|&v| v.max(0.0)).collect())
}

/// Gates `grad` by the sign of the forward input.
pub fn relu_backward(x: &[f64], grad: &[f64]) -> Vec<f64> {
    x.iter().zip(grad).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect()
}

pub fn tanh(x: &[f64]) -> Result<Vec<f64>> {
    nonempty(x, "tanh")?;
    Ok(x.iter().map(|v| v.tanh()).collect())
}

/// Max-shifted softmax.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    nonempty(x, "softmax")?;
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormCache {
    pub normalized: Vec<f64>,
    pub inv_std: f64,
}

/// `γ ⊙ (x − μ)/√(σ² + ε) + β` over the whole vector.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> Result<(Vec<f64>, LayerNormCache)> {
    nonempty(x, "layer_norm")?;
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(Error::dim("layer_norm scale/shift width mismatch"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let normalized: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
    let y = normalized.iter().zip(gamma).zip(beta).map(|((z, g), b)| g * z + b).collect();
    Ok((y, LayerNormCache { normalized, inv_std }))
}

/// Returns `∂L/∂x` and accumulates `∂L/∂γ`, `∂L/∂β`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &[f64],
    grad: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Vec<f64> {
    let n = grad.len() as f64;
    let gz: Vec<f64> = grad.iter().zip(gamma).map(|(g, gm)| g * gm).collect();
    for i in 0..grad.len() {
        grad_gamma[i] += grad[i] * cache.normalized[i];
        grad_beta[i] += grad[i];
    }
    let mean_gz = gz.iter().sum::<f64>() / n;
    let mean_gz_z = gz.iter().zip(&cache.normalized).map(|(a, z)| a * z).sum::<f64>() / n;
    gz.iter()
        .zip(&cache.normalized)
        .map(|(g, z)| cache.inv_std * (g - mean_gz - z * mean_gz_z))
        .collect()
}

/// Mean of each channel plane.
pub fn global_avg_pool(x: &FeatureTensor) -> Vec<f64> {
    let hw = (x.height() * x.width()) as f64;
    (0..x.channels()).map(|c| x.plane(c).iter().sum::<f64>() / hw).collect()
}

pub fn global_avg_pool_backward(grad: &[f64], h: usize, w: usize) -> FeatureTensor {
    let hw = (h * w) as f64;
    let mut out = FeatureTensor::zeros(grad.len(), h, w);
    for (c, g) in grad.iter().enumerate() {
        out.plane_mut(c).fill(g / hw);
    }
    out
}

/// `−(1/N) Σ_i log p_i[label_i]`, with probabilities clamped at `LOG_CLAMP`.
pub fn cross_entropy(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::invalid("cross_entropy of an empty batch"));
    }
    if probs.len() != labels.len() {
        return Err(Error::dim(format!("{} predictions for {} labels", probs.len(), labels.len())));
    }
    let mut total = 0.0;
    for (row, &y) in probs.iter().zip(labels) {
        let p = *row
            .get(y)
            .ok_or_else(|| Error::invalid(format!("label {y} out of range for {} classes", row.len())))?;
        total -= p.max(LOG_CLAMP).ln();
    }
    Ok(total / probs.len() as f64)
}

/// Fully connected layer `y = W x + b`, `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub out_features: usize,
    pub in_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(out_features: usize, in_features: usize) -> Result<Self> {
        if out_features == 0 || in_features == 0 {
            return Err(Error::invalid("linear layer dimensions must be positive"));
        }
        Ok(Linear {
            out_features,
            in_features,
            weight: vec![0.0; out_features * in_features],
            bias: vec![0.0; out_features],
        })
    }

    pub fn init(mut self, rng: &mut impl Rng) -> Self {
        self.weight = fan_in_uniform(rng, self.in_features, self.weight.len());
        self.bias = fan_in_uniform(rng, self.in_features, self.bias.len());
        self
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_features {
            return Err(Error::dim(format!("linear layer expects {} inputs, got {}", self.in_features, x.len())));
        }
        Ok((0..self.out_features)
            .map(|o| {
                let row = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect())
    }

    pub fn backward(&self, x: &[f64], grad: &[f64], grads: &mut Linear) -> Vec<f64> {
        let mut gx = vec![0.0; self.in_features];
        for (o, &g) in grad.iter().enumerate() {
            grads.bias[o] += g;
            let base = o * self.in_features;
            for i in 0..self.in_features {
                grads.weight[base + i] += g * x[i];
                gx[i] += g * self.weight[base + i];
            }
        }
        gx
    }
}

impl Params for Linear {
    fn visit(&self, f: &mut dyn FnMut(ParamRole, &[f64])) {
        f(ParamRole::Weight, &self.weight);
        f(ParamRole::Bias, &self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64])) {
        f(ParamRole::Weight, &mut self.weight);
        f(ParamRole::Bias, &mut self.bias);
    }
}
