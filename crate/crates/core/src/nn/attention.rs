//! Global-context self-attention:
//!
//! ```text
//! y_i = x_i + W_e2 · ReLU(LN(W_e1 · Σ_j softmax_j(w_g · x_j) · x_j))
//! ```
//!
//! `w_g` maps each position's channel vector to one attention logit; the
//! pooled context passes through a `c → r → c` bottleneck and is broadcast
//! back onto every position.

use rand::Rng;

use super::{fan_in_uniform, layer_norm, layer_norm_backward, FeatureTensor, LayerNormCache, ParamRole, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub channels: usize,
    pub inner: usize,
    /// `c` pooling logit weights.
    pub w_g: Vec<f64>,
    /// `r × c`.
    pub w_e1: Vec<f64>,
    pub ln_gamma: Vec<f64>,
    pub ln_beta: Vec<f64>,
    /// `c × r`.
    pub w_e2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCache {
    weights: Vec<f64>,
    context: Vec<f64>,
    ln: LayerNormCache,
    normed: Vec<f64>,
    activated: Vec<f64>,
}

impl AttentionCache {
    /// Softmax attention weights over positions.
    pub fn attention_weights(&self) -> &[f64] {
        &self.weights
    }
}

fn matvec(m: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows).map(|r| m[r * cols..(r + 1) * cols].iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

impl SelfAttention {
    /// Identity-initialized block (`W_e2 = 0`, unit LN scale).
    pub fn new(channels: usize, inner: usize) -> Result<Self> {
        if channels == 0 || inner == 0 {
            return Err(Error::invalid("attention widths must be positive"));
        }
        if inner >= channels {
            return Err(Error::invalid(format!("bottleneck width {inner} must be below channel count {channels}")));
        }
        Ok(SelfAttention {
            channels,
            inner,
            w_g: vec![0.0; channels],
            w_e1: vec![0.0; inner * channels],
            ln_gamma: vec![1.0; inner],
            ln_beta: vec![0.0; inner],
            w_e2: vec![0.0; channels * inner],
        })
    }

    /// Random pooling and first transform; `W_e2` stays zero.
    pub fn init(mut self, rng: &mut impl Rng) -> Self {
        self.w_g = fan_in_uniform(rng, self.channels, self.channels);
        self.w_e1 = fan_in_uniform(rng, self.channels, self.w_e1.len());
        self
    }

    pub fn forward(&self, x: &FeatureTensor) -> Result<(FeatureTensor, AttentionCache)> {
        let (c, h, w) = x.shape();
        if c != self.channels {
            return Err(Error::dim(format!("attention expects {} channels, got {c}", self.channels)));
        }
        let hw = h * w;
        let mut logits = vec![0.0; hw];
        for ch in 0..c {
            let wg = self.w_g[ch];
            for (l, v) in logits.iter_mut().zip(x.plane(ch)) {
                *l += wg * v;
            }
        }
        let weights = super::softmax(&logits)?;
        let context: Vec<f64> =
            (0..c).map(|ch| x.plane(ch).iter().zip(&weights).map(|(v, a)| v * a).sum()).collect();
        let hidden = matvec(&self.w_e1, self.inner, c, &context);
        let (normed, ln) = layer_norm(&hidden, &self.ln_gamma, &self.ln_beta)?;
        let activated: Vec<f64> = normed.iter().map(|v| v.max(0.0)).collect();
        let delta = matvec(&self.w_e2, c, self.inner, &activated);
        let mut y = x.clone();
        for (ch, d) in delta.iter().enumerate() {
            y.plane_mut(ch).iter_mut().for_each(|v| *v += d);
        }
        Ok((y, AttentionCache { weights, context, ln, normed, activated }))
    }

    pub fn backward(
        &self,
        x: &FeatureTensor,
        cache: &AttentionCache,
        grad_out: &FeatureTensor,
        grads: &mut SelfAttention,
    ) -> Result<FeatureTensor> {
        if grad_out.shape() != x.shape() || x.channels() != self.channels {
            return Err(Error::dim("attention upstream gradient has the wrong shape"));
        }
        let (c, r) = (self.channels, self.inner);
        let mut gx = grad_out.clone();

        let g_delta: Vec<f64> = (0..c).map(|ch| grad_out.plane(ch).iter().sum()).collect();
        let mut g_act = vec![0.0; r];
        for ch in 0..c {
            for i in 0..r {
                grads.w_e2[ch * r + i] += g_delta[ch] * cache.activated[i];
                g_act[i] += g_delta[ch] * self.w_e2[ch * r + i];
            }
        }
        let g_normed = super::relu_backward(&cache.normed, &g_act);
        let g_hidden =
            layer_norm_backward(&cache.ln, &self.ln_gamma, &g_normed, &mut grads.ln_gamma, &mut grads.ln_beta);
        let mut g_ctx = vec![0.0; c];
        for i in 0..r {
            for ch in 0..c {
                grads.w_e1[i * c + ch] += g_hidden[i] * cache.context[ch];
                g_ctx[ch] += g_hidden[i] * self.w_e1[i * c + ch];
            }
        }

        // context_c = Σ_j a_j x_cj
        let hw = cache.weights.len();
        let mut g_weights = vec![0.0; hw];
        for ch in 0..c {
            let xp = x.plane(ch);
            let gp = gx.plane_mut(ch);
            for j in 0..hw {
                gp[j] += cache.weights[j] * g_ctx[ch];
                g_weights[j] += g_ctx[ch] * xp[j];
            }
        }
        let mean: f64 = cache.weights.iter().zip(&g_weights).map(|(a, g)| a * g).sum();
        let g_logits: Vec<f64> = cache.weights.iter().zip(&g_weights).map(|(a, g)| a * (g - mean)).collect();
        for ch in 0..c {
            let xp = x.plane(ch);
            grads.w_g[ch] += xp.iter().zip(&g_logits).map(|(v, g)| v * g).sum::<f64>();
            let wg = self.w_g[ch];
            for (gv, gl) in gx.plane_mut(ch).iter_mut().zip(&g_logits) {
                *gv += wg * gl;
            }
        }
        Ok(gx)
    }
}

impl Params for SelfAttention {
    fn visit(&self, f: &mut dyn FnMut(ParamRole, &[f64])) {
        f(ParamRole::Weight, &self.w_g);
        f(ParamRole::Weight, &self.w_e1);
        f(ParamRole::Weight, &self.ln_gamma);
        f(ParamRole::Bias, &self.ln_beta);
        f(ParamRole::Weight, &self.w_e2);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64])) {
        f(ParamRole::Weight, &mut self.w_g);
        f(ParamRole::Weight, &mut self.w_e1);
        f(ParamRole::Weight, &mut self.ln_gamma);
        f(ParamRole::Bias, &mut self.ln_beta);
        f(ParamRole::Weight, &mut self.w_e2);
    }
}
