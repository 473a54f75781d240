//! From-scratch differentiable layers for the classical feature extractor.
//!
//! Layers are stateless during the forward pass: `forward` returns the
//! output together with whatever the backward pass needs, and `backward`
//! consumes that record. Parameter gradients are accumulated into a
//! `zeros_like` copy of the layer, so a gradient has exactly the same
//! layout as the parameters it belongs to.

mod attention;
mod conv;
mod ops;
mod proliferate;
mod spa;

pub use attention::{AttentionCache, SelfAttention};
pub use conv::{Conv2d, DepthwiseConv};
pub use ops::{
    cross_entropy, global_avg_pool, global_avg_pool_backward, layer_norm, layer_norm_backward, relu, relu_backward,
    softmax, tanh, LayerNormCache, Linear, LN_EPS, LOG_CLAMP,
};
pub use proliferate::{SelfProliferation, SelfProliferationConfig};
pub use spa::{SpaBlock, SpaCache, SpaConfig};

use rand::Rng;

use crate::error::{Error, Result};

/// Whether a parameter array multiplies its input or is added to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
}

/// Ordered access to every trainable array of a layer.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(ParamRole, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, p| n += p.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit(&mut |_, p| out.extend_from_slice(p));
        out
    }

    fn load(&mut self, values: &[f64]) -> Result<()> {
        let n = self.param_count();
        if values.len() != n {
            return Err(Error::dim(format!("{} values for {} parameters", values.len(), n)));
        }
        let mut off = 0;
        self.visit_mut(&mut |_, p| {
            p.copy_from_slice(&values[off..off + p.len()]);
            off += p.len();
        });
        Ok(())
    }

    fn fill_zero(&mut self) {
        self.visit_mut(&mut |_, p| p.fill(0.0));
    }
}

/// Uniform `±1/√fan_in` initializer.
pub(crate) fn fan_in_uniform(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Rank-3 activation tensor, channel-major (`c × h × w`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::dim(format!("empty tensor {c}×{h}×{w}")));
        }
        if data.len() != c * h * w {
            return Err(Error::dim(format!("{} values for a {c}×{h}×{w} tensor", data.len())));
        }
        Ok(FeatureTensor { c, h, w, data })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        FeatureTensor { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
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

    pub fn plane(&self, ch: usize) -> &[f64] {
        let hw = self.h * self.w;
        &self.data[ch * hw..(ch + 1) * hw]
    }

    pub fn plane_mut(&mut self, ch: usize) -> &mut [f64] {
        let hw = self.h * self.w;
        &mut self.data[ch * hw..(ch + 1) * hw]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        FeatureTensor { data: self.data.iter().map(|&v| f(v)).collect(), ..*self }
    }

    /// Elementwise `self + other`.
    pub fn add(&self, other: &FeatureTensor) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!("adding {:?} and {:?}", self.shape(), other.shape())));
        }
        Ok(FeatureTensor { data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(), ..*self })
    }

    pub fn add_assign(&mut self, other: &FeatureTensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Stacks tensors of equal spatial size along the channel axis.
    pub fn concat(parts: &[FeatureTensor]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::dim("concatenating zero tensors"))?;
        let (h, w) = (first.h, first.w);
        let mut data = Vec::new();
        let mut c = 0;
        for p in parts {
            if (p.h, p.w) != (h, w) {
                return Err(Error::dim("concatenating tensors with different spatial size"));
            }
            c += p.c;
            data.extend_from_slice(&p.data);
        }
        Ok(FeatureTensor { c, h, w, data })
    }

    /// Channels `[from, from + count)`.
    pub fn channel_slice(&self, from: usize, count: usize) -> Self {
        let hw = self.h * self.w;
        FeatureTensor { c: count, h: self.h, w: self.w, data: self.data[from * hw..(from + count) * hw].to_vec() }
    }
}
