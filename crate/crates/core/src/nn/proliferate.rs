use rand::Rng;

use super::{Conv2d, DepthwiseConv, FeatureTensor, ParamRole, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfProliferationConfig {
    /// Primary feature maps produced by the dense convolution.
    pub s: usize,
    /// Maps per primary map, counting the primary itself.
    pub t: usize,
    /// Depthwise kernel of the cheap transforms (odd).
    pub cheap_kernel: usize,
}

impl Default for SelfProliferationConfig {
    fn default() -> Self {
        SelfProliferationConfig { s: 4, t: 2, cheap_kernel: 3 }
    }
}

impl SelfProliferationConfig {
    pub fn out_channels(&self) -> usize {
        self.s * self.t
    }
}

/// A few primary maps from a dense convolution, widened with `t − 1` cheap
/// depthwise transforms of each. Output channels are ordered
/// `[primary (s), transform 1 (s), …, transform t−1 (s)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfProliferation {
    pub cfg: SelfProliferationConfig,
    pub primary: Conv2d,
    pub cheap: Vec<DepthwiseConv>,
}

impl SelfProliferation {
    /// Primary convolution with odd `kernel`, stride 1 and same padding.
    pub fn new(in_channels: usize, kernel: usize, cfg: SelfProliferationConfig) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::invalid("primary kernel must be odd to preserve spatial size"));
        }
        let primary = Conv2d::new(cfg.s, in_channels, kernel, 1, kernel / 2, true)?;
        Self::from_parts(primary, cfg, None)
    }

    /// Assembles from an explicit primary convolution and optional cheap
    /// transforms (identity kernels when omitted).
    pub fn from_parts(primary: Conv2d, cfg: SelfProliferationConfig, cheap: Option<Vec<DepthwiseConv>>) -> Result<Self> {
        if cfg.t == 0 || cfg.s == 0 {
            return Err(Error::invalid("self-proliferation needs s ≥ 1 and t ≥ 1"));
        }
        if primary.out_channels != cfg.s {
            return Err(Error::invalid(format!(
                "primary convolution yields {} maps but s = {}",
                primary.out_channels, cfg.s
            )));
        }
        if primary.stride != 1 || 2 * primary.padding + 1 != primary.kernel {
            return Err(Error::invalid("primary convolution must preserve spatial size"));
        }
        let cheap = match cheap {
            Some(c) => c,
            None => (1..cfg.t)
                .map(|_| DepthwiseConv::identity(cfg.s, cfg.cheap_kernel))
                .collect::<Result<_>>()?,
        };
        if cheap.len() != cfg.t - 1 {
            return Err(Error::invalid(format!("{} cheap transforms for t = {}", cheap.len(), cfg.t)));
        }
        if cheap.iter().any(|d| d.channels != cfg.s || d.kernel != cfg.cheap_kernel) {
            return Err(Error::invalid("cheap transform shape does not match the configuration"));
        }
        Ok(SelfProliferation { cfg, primary, cheap })
    }

    pub fn init(mut self, rng: &mut impl Rng) -> Self {
        self.primary = self.primary.init(rng);
        self.cheap = self.cheap.into_iter().map(|d| d.init_identity_noise(rng, 0.1)).collect();
        self
    }

    /// Returns the stacked output and the primary maps.
    pub fn forward(&self, x: &FeatureTensor) -> Result<(FeatureTensor, FeatureTensor)> {
        let primary = self.primary.forward(x)?;
        let mut parts = Vec::with_capacity(self.cfg.t);
        parts.push(primary.clone());
        for d in &self.cheap {
            parts.push(d.forward(&primary)?);
        }
        Ok((FeatureTensor::concat(&parts)?, primary))
    }

    pub fn backward(
        &self,
        x: &FeatureTensor,
        primary: &FeatureTensor,
        grad_out: &FeatureTensor,
        grads: &mut SelfProliferation,
    ) -> Result<FeatureTensor> {
        let s = self.cfg.s;
        if grad_out.channels() != self.cfg.out_channels() {
            return Err(Error::dim("self-proliferation upstream gradient has the wrong width"));
        }
        let mut g_primary = grad_out.channel_slice(0, s);
        for (j, (d, gd)) in self.cheap.iter().zip(grads.cheap.iter_mut()).enumerate() {
            let g = d.backward(primary, &grad_out.channel_slice((j + 1) * s, s), gd)?;
            g_primary.add_assign(&g);
        }
        self.primary.backward(x, &g_primary, &mut grads.primary)
    }

    pub fn mac_count(&self, h: usize, w: usize) -> Result<usize> {
        let primary = self.primary.mac_count(h, w)?;
        Ok(primary + self.cheap.iter().map(|d| d.mac_count(h, w)).sum::<usize>())
    }
}

impl Params for SelfProliferation {
    fn visit(&self, f: &mut dyn FnMut(ParamRole, &[f64])) {
        self.primary.visit(f);
        for d in &self.cheap {
            d.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64])) {
        self.primary.visit_mut(f);
        for d in &mut self.cheap {
            d.visit_mut(f);
        }
    }
}
