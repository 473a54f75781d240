use rand::Rng;

use super::{fan_in_uniform, FeatureTensor, ParamRole, Params};
use crate::error::{Error, Result};

/// Dense 2-D cross-correlation, weights laid out `out × in × k × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Conv2d {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel == 0 {
            return Err(Error::invalid("convolution dimensions must be positive"));
        }
        if stride == 0 {
            return Err(Error::invalid("convolution stride must be at least 1"));
        }
        Ok(Conv2d {
            out_channels,
            in_channels,
            kernel,
            stride,
            padding,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: with_bias.then(|| vec![0.0; out_channels]),
        })
    }

    pub fn init(mut self, rng: &mut impl Rng) -> Self {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        self.weight = fan_in_uniform(rng, fan_in, self.weight.len());
        if let Some(b) = &mut self.bias {
            *b = fan_in_uniform(rng, fan_in, b.len());
        }
        self
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kernel || pw < self.kernel {
            return Err(Error::dim(format!(
                "{}×{} kernel larger than padded {}×{} input",
                self.kernel, self.kernel, ph, pw
            )));
        }
        Ok(((ph - self.kernel) / self.stride + 1, (pw - self.kernel) / self.stride + 1))
    }

    fn check(&self, x: &FeatureTensor) -> Result<(usize, usize)> {
        if x.channels() != self.in_channels {
            return Err(Error::dim(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        self.output_size(x.height(), x.width())
    }

    /// Valid `(output, input)` index pairs along one axis for kernel tap `k`.
    #[inline]
    fn taps(&self, out_len: usize, in_len: usize, k: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..out_len).filter_map(move |o| {
            let i = (o * self.stride + k).checked_sub(self.padding)?;
            (i < in_len).then_some((o, i))
        })
    }

    pub fn forward(&self, x: &FeatureTensor) -> Result<FeatureTensor> {
        let (oh, ow) = self.check(x)?;
        let (h, w) = (x.height(), x.width());
        let k = self.kernel;
        let mut out = FeatureTensor::zeros(self.out_channels, oh, ow);
        for o in 0..self.out_channels {
            let plane = out.plane_mut(o);
            if let Some(b) = &self.bias {
                plane.fill(b[o]);
            }
            for c in 0..self.in_channels {
                let src = x.plane(c);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = self.weight[((o * self.in_channels + c) * k + ky) * k + kx];
                        for (oy, iy) in self.taps(oh, h, ky) {
                            let row = &src[iy * w..(iy + 1) * w];
                            let dst = &mut plane[oy * ow..(oy + 1) * ow];
                            for (ox, ix) in self.taps(ow, w, kx) {
                                dst[ox] += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns `∂L/∂x`.
    pub fn backward(&self, x: &FeatureTensor, grad_out: &FeatureTensor, grads: &mut Conv2d) -> Result<FeatureTensor> {
        let (oh, ow) = self.check(x)?;
        if grad_out.shape() != (self.out_channels, oh, ow) {
            return Err(Error::dim("convolution upstream gradient has the wrong shape"));
        }
        let (h, w) = (x.height(), x.width());
        let k = self.kernel;
        let mut gx = FeatureTensor::zeros(self.in_channels, h, w);
        for o in 0..self.out_channels {
            let go = grad_out.plane(o);
            if let Some(gb) = &mut grads.bias {
                gb[o] += go.iter().sum::<f64>();
            }
            for c in 0..self.in_channels {
                let src = x.plane(c);
                for ky in 0..k {
                    for kx in 0..k {
                        let widx = ((o * self.in_channels + c) * k + ky) * k + kx;
                        let wv = self.weight[widx];
                        let mut gw = 0.0;
                        let gplane = gx.plane_mut(c);
                        for (oy, iy) in self.taps(oh, h, ky) {
                            for (ox, ix) in self.taps(ow, w, kx) {
                                let g = go[oy * ow + ox];
                                gw += g * src[iy * w + ix];
                                gplane[iy * w + ix] += g * wv;
                            }
                        }
                        grads.weight[widx] += gw;
                    }
                }
            }
        }
        Ok(gx)
    }

    /// Multiply-accumulates for one forward pass on an `h × w` input.
    pub fn mac_count(&self, h: usize, w: usize) -> Result<usize> {
        let (oh, ow) = self.output_size(h, w)?;
        Ok(self.out_channels * self.in_channels * self.kernel * self.kernel * oh * ow)
    }
}

impl Params for Conv2d {
    fn visit(&self, f: &mut dyn FnMut(ParamRole, &[f64])) {
        f(ParamRole::Weight, &self.weight);
        if let Some(b) = &self.bias {
            f(ParamRole::Bias, b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64])) {
        f(ParamRole::Weight, &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(ParamRole::Bias, b);
        }
    }
}

/// Per-channel `k × k` convolution, stride 1, zero padding `k / 2`, so the
/// spatial size is preserved. `k` must be odd.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConv {
    pub channels: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
}

impl DepthwiseConv {
    pub fn new(channels: usize, kernel: usize) -> Result<Self> {
        if channels == 0 || kernel % 2 == 0 {
            return Err(Error::invalid(format!("depthwise kernel must be odd, got {kernel}")));
        }
        Ok(DepthwiseConv { channels, kernel, weight: vec![0.0; channels * kernel * kernel] })
    }

    /// Builds a layer from explicit per-channel kernels.
    pub fn from_kernels(kernels: &[Vec<f64>], kernel: usize) -> Result<Self> {
        let mut dw = Self::new(kernels.len(), kernel)?;
        for (i, kv) in kernels.iter().enumerate() {
            if kv.len() != kernel * kernel {
                return Err(Error::dim(format!("kernel {i} has {} taps, expected {}", kv.len(), kernel * kernel)));
            }
            dw.weight[i * kernel * kernel..(i + 1) * kernel * kernel].copy_from_slice(kv);
        }
        Ok(dw)
    }

    /// Every kernel is the identity tap.
    pub fn identity(channels: usize, kernel: usize) -> Result<Self> {
        let mut dw = Self::new(channels, kernel)?;
        let center = (kernel / 2) * kernel + kernel / 2;
        for c in 0..channels {
            dw.weight[c * kernel * kernel + center] = 1.0;
        }
        Ok(dw)
    }

    /// Identity kernels plus uniform noise of amplitude `noise`.
    pub fn init_identity_noise(mut self, rng: &mut impl Rng, noise: f64) -> Self {
        let id = Self::identity(self.channels, self.kernel).expect("valid shape");
        for (w, i) in self.weight.iter_mut().zip(id.weight) {
            *w = i + rng.gen_range(-noise..noise);
        }
        self
    }

    pub fn init(mut self, rng: &mut impl Rng) -> Self {
        self.weight = fan_in_uniform(rng, self.kernel * self.kernel, self.weight.len());
        self
    }

    fn check(&self, x: &FeatureTensor) -> Result<()> {
        if x.channels() != self.channels {
            return Err(Error::dim(format!(
                "depthwise convolution has {} kernels for {} channels",
                self.channels,
                x.channels()
            )));
        }
        Ok(())
    }

    #[inline]
    fn taps(len: usize, k: usize, pad: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..len).filter_map(move |o| {
            let i = (o + k).checked_sub(pad)?;
            (i < len).then_some((o, i))
        })
    }

    pub fn forward(&self, x: &FeatureTensor) -> Result<FeatureTensor> {
        self.check(x)?;
        let (c, h, w) = x.shape();
        let (k, pad) = (self.kernel, self.kernel / 2);
        let mut out = FeatureTensor::zeros(c, h, w);
        for ch in 0..c {
            let src = x.plane(ch);
            let dst = out.plane_mut(ch);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = self.weight[(ch * k + ky) * k + kx];
                    for (oy, iy) in Self::taps(h, ky, pad) {
                        for (ox, ix) in Self::taps(w, kx, pad) {
                            dst[oy * w + ox] += wv * src[iy * w + ix];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(
        &self,
        x: &FeatureTensor,
        grad_out: &FeatureTensor,
        grads: &mut DepthwiseConv,
    ) -> Result<FeatureTensor> {
        self.check(x)?;
        if grad_out.shape() != x.shape() {
            return Err(Error::dim("depthwise upstream gradient has the wrong shape"));
        }
        let (c, h, w) = x.shape();
        let (k, pad) = (self.kernel, self.kernel / 2);
        let mut gx = FeatureTensor::zeros(c, h, w);
        for ch in 0..c {
            let src = x.plane(ch);
            let go = grad_out.plane(ch);
            let gplane = gx.plane_mut(ch);
            for ky in 0..k {
                for kx in 0..k {
                    let widx = (ch * k + ky) * k + kx;
                    let wv = self.weight[widx];
                    let mut gw = 0.0;
                    for (oy, iy) in Self::taps(h, ky, pad) {
                        for (ox, ix) in Self::taps(w, kx, pad) {
                            let g = go[oy * w + ox];
                            gw += g * src[iy * w + ix];
                            gplane[iy * w + ix] += g * wv;
                        }
                    }
                    grads.weight[widx] += gw;
                }
            }
        }
        Ok(gx)
    }

    pub fn mac_count(&self, h: usize, w: usize) -> usize {
        self.channels * self.kernel * self.kernel * h * w
    }
}

impl Params for DepthwiseConv {
    fn visit(&self, f: &mut dyn FnMut(ParamRole, &[f64])) {
        f(ParamRole::Weight, &self.weight);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(ParamRole, &mut [f64])) {
        f(ParamRole::Weight, &mut self.weight);
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::*;
    use super::*;
    use proptest::prelude::*;

    /// Literal definition: out[o,y,x] = b[o] + Σ w[o,c,i,j]·xpad[c, y·s+i, x·s+j].
    fn naive_conv(conv: &Conv2d, x: &FeatureTensor) -> FeatureTensor {
        let (oh, ow) = conv.output_size(x.height(), x.width()).unwrap();
        let k = conv.kernel;
        let mut out = vec![0.0; conv.out_channels * oh * ow];
        for o in 0..conv.out_channels {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = conv.bias.as_ref().map_or(0.0, |b| b[o]);
                    for c in 0..conv.in_channels {
                        for i in 0..k {
                            for j in 0..k {
                                let py = (y * conv.stride + i) as isize - conv.padding as isize;
                                let px = (xx * conv.stride + j) as isize - conv.padding as isize;
                                if py < 0 || px < 0 || py >= x.height() as isize || px >= x.width() as isize {
                                    continue;
                                }
                                let v = x.data()[(c * x.height() + py as usize) * x.width() + px as usize];
                                acc += conv.weight[((o * conv.in_channels + c) * k + i) * k + j] * v;
                            }
                        }
                    }
                    out[(o * oh + y) * ow + xx] = acc;
                }
            }
        }
        FeatureTensor::new(conv.out_channels, oh, ow, out).unwrap()
    }

    #[test]
    fn conv_examples() {
        let ones = FeatureTensor::new(1, 3, 3, vec![1.0; 9]).unwrap();
        let mut k = Conv2d::new(1, 1, 1, 1, 0, false).unwrap();
        k.weight = vec![2.0];
        assert_eq!(k.forward(&ones).unwrap().data(), &[2.0; 9]);
        k.weight = vec![1.0];
        assert_eq!(k.forward(&ones).unwrap(), ones);

        let ones4 = FeatureTensor::new(1, 4, 4, vec![1.0; 16]).unwrap();
        let mut k3 = Conv2d::new(1, 1, 3, 1, 0, false).unwrap();
        k3.weight = vec![1.0; 9];
        let out = k3.forward(&ones4).unwrap();
        assert_eq!(out.shape(), (1, 2, 2));
        assert_eq!(out, naive_conv(&k3, &ones4));
        assert_eq!(out.data(), &[9.0; 4]);
    }

    #[test]
    fn conv_errors() {
        let x = FeatureTensor::zeros(2, 3, 3);
        let k = Conv2d::new(1, 1, 3, 1, 0, false).unwrap();
        assert!(k.forward(&x).is_err());
        let big = Conv2d::new(1, 2, 5, 1, 0, false).unwrap();
        assert!(big.forward(&x).is_err());
        assert!(Conv2d::new(1, 1, 3, 0, 0, false).is_err());
    }

    #[test]
    fn depthwise_examples() {
        let mut r = rng(5);
        let x = random_tensor(&mut r, 2, 4, 4);
        assert_eq!(DepthwiseConv::identity(2, 3).unwrap().forward(&x).unwrap(), x);

        let mut neg = vec![0.0; 9];
        neg[4] = -1.0;
        let mut one = vec![0.0; 9];
        one[4] = 1.0;
        let dw = DepthwiseConv::from_kernels(&[one, neg], 3).unwrap();
        let y = dw.forward(&x).unwrap();
        assert_eq!(y.plane(0), x.plane(0));
        assert!(y.plane(1).iter().zip(x.plane(1)).all(|(a, b)| *a == -b));

        assert!(DepthwiseConv::identity(3, 3).unwrap().forward(&x).is_err());
        assert!(DepthwiseConv::new(2, 2).is_err());
    }

    #[test]
    fn depthwise_matches_per_channel_loop() {
        let mut r = rng(8);
        let x = random_tensor(&mut r, 3, 5, 5);
        let dw = DepthwiseConv::new(3, 3).unwrap().init(&mut r);
        let y = dw.forward(&x).unwrap();
        for c in 0..3 {
            // each channel through a one-channel dense convolution
            let mut single = Conv2d::new(1, 1, 3, 1, 1, false).unwrap();
            single.weight = dw.weight[c * 9..(c + 1) * 9].to_vec();
            let yc = naive_conv(&single, &x.channel_slice(c, 1));
            for (a, b) in y.plane(c).iter().zip(yc.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut r = rng(1);
        for &(stride, pad, bias) in &[(1, 0, true), (2, 1, true), (1, 1, false)] {
            let conv = Conv2d::new(3, 2, 3, stride, pad, bias).unwrap().init(&mut r);
            let x = random_tensor(&mut r, 2, 5, 6);
            let (oh, ow) = conv.output_size(5, 6).unwrap();
            let up = random_tensor(&mut r, 3, oh, ow);
            check_layer(&conv, &x, &up, |l, x| l.forward(x).unwrap(), |l, x, g, gr| l.backward(x, g, gr).unwrap());
        }
    }

    #[test]
    fn depthwise_gradients() {
        let mut r = rng(2);
        let dw = DepthwiseConv::new(3, 3).unwrap().init(&mut r);
        let x = random_tensor(&mut r, 3, 4, 5);
        let up = random_tensor(&mut r, 3, 4, 5);
        check_layer(&dw, &x, &up, |l, x| l.forward(x).unwrap(), |l, x, g, gr| l.backward(x, g, gr).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn conv_shape_and_oracle(
            c in 1usize..=3, o in 1usize..=3, h in 1usize..=8, w in 1usize..=8,
            k in 1usize..=3, stride in 1usize..=2, pad in 0usize..=1, seed in any::<u64>(),
        ) {
            let mut r = rng(seed);
            let conv = Conv2d::new(o, c, k, stride, pad, true).unwrap().init(&mut r);
            let x = random_tensor(&mut r, c, h, w);
            match conv.output_size(h, w) {
                Ok((oh, ow)) => {
                    prop_assert_eq!(oh, (h + 2 * pad - k) / stride + 1);
                    prop_assert_eq!(ow, (w + 2 * pad - k) / stride + 1);
                    let y = conv.forward(&x).unwrap();
                    let oracle = naive_conv(&conv, &x);
                    for (a, b) in y.data().iter().zip(oracle.data()) {
                        prop_assert!((a - b).abs() <= 1e-12);
                    }
                }
                Err(_) => prop_assert!(h + 2 * pad < k || w + 2 * pad < k),
            }
        }
    }
}
