//! Inverted-residual block: self-proliferating expansion, depthwise
//! convolution with global-context attention, 1×1 compression, and a skip
//! connection around the whole block.
//!
//! ```text
//! e = ReLU(proliferate(x))
//! d = ReLU(depthwise(e))
//! a = attention(d)
//! y = x + compress(a)
//! ```

use rand::Rng;

use super::{
    AttentionCache, Conv2d, DepthwiseConv, FeatureTensor, ParamRole, Params, SelfAttention, SelfProliferation,
    SelfProliferationConfig,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaConfig {
    pub channels: usize,
    pub proliferation: SelfProliferationConfig,
    pub primary_kernel: usize,
    pub depthwise_kernel: usize,
    pub attention_inner: usize,
}

impl SpaConfig {
    pub fn expanded(&self) -> usize {
        self.proliferation.out_channels()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaBlock {
    pub cfg: SpaConfig,
    pub expand: SelfProliferation,
    pub depthwise: DepthwiseConv,
    pub attention: SelfAttention,
    pub compress: Conv2d,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaCache {
    primary: FeatureTensor,
    expand_raw: FeatureTensor,
    expanded: FeatureTensor,
    depth_raw: FeatureTensor,
    depth: FeatureTensor,
    attention: AttentionCache,
    attended: FeatureTensor,
}

fn relu_t(x: &FeatureTensor) -> FeatureTensor {
    x.map(|v| v.max(0.0))
}

fn relu_t_backward(x: &FeatureTensor, g: &FeatureTensor) -> FeatureTensor {
    let mut out = g.clone();
    for (o, v) in out.data_mut().iter_mut().zip(x.data()) {
        if *v <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

impl SpaBlock {
    pub fn new(cfg: SpaConfig) -> Result<Self> {
        let e = cfg.expanded();
        let block = SpaBlock {
            cfg,
            expand: SelfProliferation::new(cfg.channels, cfg.primary_kernel, cfg.proliferation)?,
            depthwise: DepthwiseConv::new(e, cfg.depthwise_kernel)?,
            attention: SelfAttention::new(e, cfg.attention_inner)?,
            compress: Conv2d::new(cfg.channels, e, 1, 1, 0, true)?,
        };
        Ok(block)
    }

    pub fn init(mut self, rng: &mut impl Rng) -> Self {
        self.expand = self.expand.init(rng);
        self.depthwise = self.depthwise.init(rng);
        self.attention = self.attention.init(rng);
        self.compress = self.compress.init(rng);
        self
    }

    pub fn forward(&self, x: &FeatureTensor) -> Result<(FeatureTensor, SpaCache)> {
        if x.channels() != self.cfg.channels {
            return Err(Error::dim(format!(
                "block expects {} channels, got {}",
                self.cfg.channels,
                x.channels()
            )));
        }
        let (expand_raw, primary) = self.expand.forward(x)?;
        let expanded = relu_t(&expand_raw);
        let depth_raw = self.depthwise.forward(&expanded)?;
        let depth = relu_t(&depth_raw);
        let (attended, attention) = self.attention.forward(&depth)?;
        let compressed = self.compress.forward(&attended)?;
        let y = x.add(&compressed)?;
        Ok((y, SpaCache { primary, expand_raw, expanded, depth_raw, depth, attention, attended }))
    }

    pub fn backward(
        &self,
        x: &FeatureTensor,
        cache: &SpaCache,
        grad_out: &FeatureTensor,
        grads: &mut SpaBlock,
    ) -> Result<FeatureTensor> {
        if grad_out.shape() != x.shape() {
            return Err(Error::dim("block upstream gradient has the wrong shape"));
        }
        let g_att = self.compress.backward(&cache.attended, grad_out, &mut grads.compress)?;
        let g_depth = self.attention.backward(&cache.depth, &cache.attention, &g_att, &mut grads.attention)?;
        let g_depth_raw = relu_t_backward(&cache.depth_raw, &g_depth);
        let g_exp = self.depthwise.backward(&cache.expanded, &g_depth_raw, &mut grads.depthwise)?;
        let g_exp_raw = relu_t_backward(&cache.expand_raw, &g_exp);
        let mut gx = self.expand.backward(x, &cache.primary, &g_exp_raw, &mut grads.expand)?;
        gx.add_assign(grad_out);
        Ok(gx)
    }
}

impl Params for SpaBlock {
    fn visit(&self, f: &mut dyn FnMut(ParamRole, &[f64])) {
        self.expand.visit(f);
        self.depthwise.visit(f);
        self.attention.visit(f);
        self.compress.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64])) {
        self.expand.visit_mut(f);
        self.depthwise.visit_mut(f);
        self.attention.visit_mut(f);
        self.compress.visit_mut(f);
    }
}
