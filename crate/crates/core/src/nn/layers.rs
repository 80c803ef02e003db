//! The fixed layer vocabulary: 2-D convolution, dense layers, group
//! normalization, pointwise activations and 2x resampling.
//!
//! Every layer has an inference path (`forward`, takes `&self`) and a
//! training path (`forward_train`) that records what `backward` needs.
//! `backward` consumes that record and accumulates parameter gradients.

use rand::Rng;

use super::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Real, Tensor};
use crate::error::{Error, Result};

/// Group normalization epsilon.
pub const GROUP_NORM_EPS: f64 = 1e-5;

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T: Real> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

impl Activation {
    /// Leaky-ReLU with slope 0.01, used throughout the encoders.
    pub const LEAKY: Activation = Activation::LeakyRelu(0.01);

    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu(s) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::from_f64(s)
                }
            }
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    #[inline]
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(s) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::from_f64(s)
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Declarative description of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        inputs: usize,
        outputs: usize,
    },
    GroupNorm {
        channels: usize,
        groups: usize,
    },
    Activation(Activation),
    /// 2x2 average pooling.
    Downsample,
    /// 2x nearest-neighbour upsampling.
    Upsample,
}

impl LayerSpec {
    /// Same-padded convolution with an odd kernel.
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                if !(stride == 1 || stride == 2) {
                    return Err(Error::Config(format!("conv2d stride {} not in {{1, 2}}", stride)));
                }
                if kernel == 0 || in_channels == 0 || out_channels == 0 {
                    return Err(Error::Config("conv2d with zero-sized dimension".into()));
                }
            }
            LayerSpec::Linear { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return Err(Error::Config("linear with zero-sized dimension".into()));
                }
            }
            LayerSpec::GroupNorm { channels, groups } => {
                if groups == 0 || channels % groups != 0 {
                    return Err(Error::Config(format!(
                        "group count {} does not divide {} channels",
                        groups, channels
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn build<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Layer<T>> {
        self.validate()?;
        Ok(match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => Layer::Conv2d(Conv2d::new(
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                rng,
            )),
            LayerSpec::Linear { inputs, outputs } => {
                Layer::Linear(Linear::new(inputs, outputs, rng))
            }
            LayerSpec::GroupNorm { channels, groups } => {
                Layer::GroupNorm(GroupNorm::new(channels, groups)?)
            }
            LayerSpec::Activation(a) => Layer::Activation(ActivationLayer::new(a)),
            LayerSpec::Downsample => Layer::Downsample(Downsample::default()),
            LayerSpec::Upsample => Layer::Upsample(Upsample::default()),
        })
    }
}

/// Receptive field (in input pixels) and output stride of a layer stack.
pub fn receptive_field(specs: &[LayerSpec]) -> (usize, usize) {
    let mut rf = 1;
    let mut jump = 1;
    for s in specs {
        match *s {
            LayerSpec::Conv2d { kernel, stride, .. } => {
                rf += (kernel - 1) * jump;
                jump *= stride;
            }
            LayerSpec::Downsample => {
                rf += jump;
                jump *= 2;
            }
            LayerSpec::Upsample => {
                jump = (jump / 2).max(1);
            }
            _ => {}
        }
    }
    (rf, jump)
}

fn uniform_tensor<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

fn missing_forward(layer: &str) -> Error {
    Error::Usage(format!("{layer}: backward called without a recorded forward pass"))
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
    cache: Option<ConvCache<T>>,
}

#[derive(Debug, Clone)]
struct ConvCache<T: Real> {
    cols: Vec<T>,
    in_shape: (usize, usize, usize),
    out_hw: (usize, usize),
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = (1.0 / fan_in as f64).sqrt();
        Self {
            weight: Param::new(uniform_tensor(
                &[out_channels, in_channels, kernel, kernel],
                bound,
                rng,
            )),
            bias: Param::new(uniform_tensor(&[out_channels], bound, rng)),
            stride,
            padding,
            cache: None,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1], s[2])
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (_, _, k) = self.dims();
        let (p, s) = (self.padding, self.stride);
        if h + 2 * p < k || w + 2 * p < k {
            return Err(Error::shape(
                "conv2d",
                format!("input {}x{} smaller than kernel {} with padding {}", h, w, k, p),
            ));
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    fn im2col(&self, x: &Tensor<T>) -> Result<(Vec<T>, (usize, usize))> {
        let (c, h, w) = x.chw()?;
        let (_, c_in, k) = self.dims();
        if c != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("expected {} input channels, got {}", c_in, c),
            ));
        }
        let (oh, ow) = self.output_hw(h, w)?;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let np = oh * ow;
        let mut cols = vec![T::zero(); c * k * k * np];
        let xd = x.data();
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ch * k + ky) * k + kx) * np;
                    for oy in 0..oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = ch * h * w + iy as usize * w;
                        let dst = row + oy * ow;
                        for ox in 0..ow {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                cols[dst + ox] = xd[src + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        Ok((cols, (oh, ow)))
    }

    fn apply(&self, cols: &[T], oh: usize, ow: usize) -> Result<Tensor<T>> {
        let (c_out, c_in, k) = self.dims();
        let np = oh * ow;
        let mut out = vec![T::zero(); c_out * np];
        for (co, chunk) in out.chunks_mut(np).enumerate() {
            chunk.fill(self.bias.value.data()[co]);
        }
        matmul_acc(self.weight.value.data(), cols, &mut out, c_out, c_in * k * k, np);
        Tensor::from_vec(&[c_out, oh, ow], out)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (cols, (oh, ow)) = self.im2col(x)?;
        self.apply(&cols, oh, ow)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (cols, (oh, ow)) = self.im2col(x)?;
        let out = self.apply(&cols, oh, ow)?;
        self.cache = Some(ConvCache {
            cols,
            in_shape: x.chw()?,
            out_hw: (oh, ow),
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_forward("conv2d"))?;
        let (c_out, c_in, k) = self.dims();
        let (oh, ow) = cache.out_hw;
        if grad.shape() != [c_out, oh, ow] {
            return Err(Error::shape(
                "conv2d backward",
                format!("grad {:?} vs output [{}, {}, {}]", grad.shape(), c_out, oh, ow),
            ));
        }
        let np = oh * ow;
        let kk = c_in * k * k;
        let g = grad.data();
        matmul_bt_acc(g, &cache.cols, self.weight.grad.data_mut(), c_out, np, kk);
        for (co, chunk) in g.chunks(np).enumerate() {
            self.bias.grad.data_mut()[co] += chunk.iter().copied().sum();
        }
        let mut dcols = vec![T::zero(); kk * np];
        matmul_at_acc(self.weight.value.data(), g, &mut dcols, c_out, kk, np);

        let (c, h, w) = cache.in_shape;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let mut dx = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((ch * k + ky) * k + kx) * np;
                    for oy in 0..oh {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = ch * h * w + iy as usize * w;
                        for ox in 0..ow {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dx[dst + ix as usize] += dcols[row + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[c, h, w], dx)
    }
}

/// Dense layer `y = W x + b` on a vector `[in]` or a row batch `[N, in]`.
#[derive(Debug, Clone)]
pub struct Linear<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (1.0 / inputs as f64).sqrt();
        Self {
            weight: Param::new(uniform_tensor(&[outputs, inputs], bound, rng)),
            bias: Param::new(uniform_tensor(&[outputs], bound, rng)),
            cache: None,
        }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (out, _) = weight.rows_cols()?;
        if bias.shape() != [out] {
            return Err(Error::shape("linear", "bias length differs from output rows"));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn rows(&self, x: &Tensor<T>) -> Result<usize> {
        let (n, d) = match x.shape() {
            &[d] => (1, d),
            &[n, d] => (n, d),
            s => return Err(Error::shape("linear", format!("unsupported input {:?}", s))),
        };
        if d != self.inputs() {
            return Err(Error::shape(
                "linear",
                format!("expected {} inputs, got {}", self.inputs(), d),
            ));
        }
        Ok(n)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.rows(x)?;
        let (o, i) = (self.outputs(), self.inputs());
        let b = self.bias.value.data();
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(b);
        }
        matmul_bt_acc(x.data(), self.weight.value.data(), &mut out, n, i, o);
        let shape: Vec<usize> = if x.rank() == 1 { vec![o] } else { vec![n, o] };
        Tensor::from_vec(&shape, out)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.forward(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(|| missing_forward("linear"))?;
        self.backward_with_input(&x, grad)
    }

    /// Backward pass against an explicitly supplied forward input.
    pub fn backward_with_input(&mut self, x: &Tensor<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.rows(x)?;
        let (o, i) = (self.outputs(), self.inputs());
        if grad.numel() != n * o {
            return Err(Error::shape(
                "linear backward",
                format!("grad has {} values, expected {}", grad.numel(), n * o),
            ));
        }
        let g = grad.data();
        matmul_at_acc(g, x.data(), self.weight.grad.data_mut(), n, o, i);
        let bg = self.bias.grad.data_mut();
        for row in g.chunks(o) {
            for (b, &v) in bg.iter_mut().zip(row) {
                *b += v;
            }
        }
        let mut dx = vec![T::zero(); n * i];
        matmul_acc(g, self.weight.value.data(), &mut dx, n, o, i);
        Tensor::from_vec(x.shape(), dx)
    }
}

/// Group normalization over `[C, ...]`, statistics per (group, all spatial positions).
#[derive(Debug, Clone)]
pub struct GroupNorm<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub groups: usize,
    cache: Option<GroupNormCache<T>>,
}

#[derive(Debug, Clone)]
struct GroupNormCache<T: Real> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Real> GroupNorm<T> {
    pub fn new(channels: usize, groups: usize) -> Result<Self> {
        LayerSpec::GroupNorm { channels, groups }.validate()?;
        Ok(Self {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            groups,
            cache: None,
        })
    }

    fn normalize(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
        let c = self.gamma.value.numel();
        if x.rank() < 1 || x.shape()[0] != c {
            return Err(Error::shape(
                "group_norm",
                format!("expected {} channels, got {:?}", c, x.shape()),
            ));
        }
        let spatial = x.numel() / c;
        let per_group = c / self.groups * spatial;
        let eps = T::from_f64(GROUP_NORM_EPS);
        let mut normalized = x.clone();
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(self.groups);
        let m = T::from_f64(per_group as f64);
        for g in 0..self.groups {
            let span = g * per_group..(g + 1) * per_group;
            let vals = &x.data()[span.clone()];
            let mean = vals.iter().copied().sum::<T>() / m;
            let var = vals.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (idx, v) in span.enumerate() {
                let ch = (g * per_group + idx) / spatial;
                let nv = (x.data()[v] - mean) * is;
                normalized.data_mut()[v] = nv;
                out.data_mut()[v] = nv * self.gamma.value.data()[ch] + self.beta.value.data()[ch];
            }
        }
        Ok((out, normalized, inv_std))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.normalize(x)?.0)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, normalized, inv_std) = self.normalize(x)?;
        self.cache = Some(GroupNormCache {
            normalized,
            inv_std,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_forward("group_norm"))?;
        let xhat = &cache.normalized;
        if grad.shape() != xhat.shape() {
            return Err(Error::shape("group_norm backward", "grad shape differs"));
        }
        let c = self.gamma.value.numel();
        let spatial = xhat.numel() / c;
        let per_group = c / self.groups * spatial;
        let m = T::from_f64(per_group as f64);
        let g = grad.data();
        for ch in 0..c {
            let span = ch * spatial..(ch + 1) * spatial;
            let mut dg = T::zero();
            let mut db = T::zero();
            for i in span {
                dg += g[i] * xhat.data()[i];
                db += g[i];
            }
            self.gamma.grad.data_mut()[ch] += dg;
            self.beta.grad.data_mut()[ch] += db;
        }
        let mut dx = vec![T::zero(); xhat.numel()];
        for grp in 0..self.groups {
            let span = grp * per_group..(grp + 1) * per_group;
            let mut sum_d = T::zero();
            let mut sum_dx = T::zero();
            for i in span.clone() {
                let d = g[i] * self.gamma.value.data()[i / spatial];
                sum_d += d;
                sum_dx += d * xhat.data()[i];
            }
            let is = cache.inv_std[grp];
            for i in span {
                let d = g[i] * self.gamma.value.data()[i / spatial];
                dx[i] = is * (d - sum_d / m - xhat.data()[i] * sum_dx / m);
            }
        }
        Tensor::from_vec(xhat.shape(), dx)
    }
}

#[derive(Debug, Clone)]
pub struct ActivationLayer<T: Real> {
    pub kind: Activation,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Real> ActivationLayer<T> {
    pub fn new(kind: Activation) -> Self {
        Self { kind, cache: None }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let k = self.kind;
        Ok(x.map(|v| k.apply(v)))
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.forward(x)?;
        self.cache = Some((x.clone(), y.clone()));
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, y) = self.cache.take().ok_or_else(|| missing_forward("activation"))?;
        if grad.shape() != x.shape() {
            return Err(Error::shape("activation backward", "grad shape differs"));
        }
        let k = self.kind;
        let data = grad
            .data()
            .iter()
            .zip(x.data().iter().zip(y.data()))
            .map(|(&g, (&xv, &yv))| g * k.derivative(xv, yv))
            .collect();
        Tensor::from_vec(x.shape(), data)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Downsample {
    in_shape: Option<(usize, usize, usize)>,
}

impl Downsample {
    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = x.chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "downsample",
                format!("spatial size {}x{} is not even", h, w),
            ));
        }
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let xd = x.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * xx;
                    out.push((xd[base] + xd[base + 1] + xd[base + w] + xd[base + w + 1]) * quarter);
                }
            }
        }
        Tensor::from_vec(&[c, oh, ow], out)
    }

    pub fn forward_train<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.forward(x)?;
        self.in_shape = Some(x.chw()?);
        Ok(y)
    }

    pub fn backward<T: Real>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = self.in_shape.take().ok_or_else(|| missing_forward("downsample"))?;
        let (oh, ow) = (h / 2, w / 2);
        if grad.shape() != [c, oh, ow] {
            return Err(Error::shape("downsample backward", "grad shape differs"));
        }
        let quarter = T::from_f64(0.25);
        let mut dx = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    dx[ch * h * w + y * w + xx] =
                        grad.data()[ch * oh * ow + (y / 2) * ow + xx / 2] * quarter;
                }
            }
        }
        Tensor::from_vec(&[c, h, w], dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Upsample {
    in_shape: Option<(usize, usize, usize)>,
}

impl Upsample {
    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = x.chw()?;
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out.push(x.data()[ch * h * w + (y / 2) * w + xx / 2]);
                }
            }
        }
        Tensor::from_vec(&[c, oh, ow], out)
    }

    pub fn forward_train<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.forward(x)?;
        self.in_shape = Some(x.chw()?);
        Ok(y)
    }

    pub fn backward<T: Real>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = self.in_shape.take().ok_or_else(|| missing_forward("upsample"))?;
        let (oh, ow) = (2 * h, 2 * w);
        if grad.shape() != [c, oh, ow] {
            return Err(Error::shape("upsample backward", "grad shape differs"));
        }
        let mut dx = vec![T::zero(); c * h * w];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    dx[ch * h * w + (y / 2) * w + xx / 2] += grad.data()[ch * oh * ow + y * ow + xx];
                }
            }
        }
        Tensor::from_vec(&[c, h, w], dx)
    }
}

#[derive(Debug, Clone)]
pub enum Layer<T: Real> {
    Conv2d(Conv2d<T>),
    Linear(Linear<T>),
    GroupNorm(GroupNorm<T>),
    Activation(ActivationLayer<T>),
    Downsample(Downsample),
    Upsample(Upsample),
}

impl<T: Real> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Linear(_) => "linear",
            Layer::GroupNorm(_) => "group_norm",
            Layer::Activation(_) => "activation",
            Layer::Downsample(_) => "downsample",
            Layer::Upsample(_) => "upsample",
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::Linear(l) => l.forward(x),
            Layer::GroupNorm(l) => l.forward(x),
            Layer::Activation(l) => l.forward(x),
            Layer::Downsample(l) => l.forward(x),
            Layer::Upsample(l) => l.forward(x),
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.forward_train(x),
            Layer::Linear(l) => l.forward_train(x),
            Layer::GroupNorm(l) => l.forward_train(x),
            Layer::Activation(l) => l.forward_train(x),
            Layer::Downsample(l) => l.forward_train(x),
            Layer::Upsample(l) => l.forward_train(x),
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.backward(grad),
            Layer::Linear(l) => l.backward(grad),
            Layer::GroupNorm(l) => l.backward(grad),
            Layer::Activation(l) => l.backward(grad),
            Layer::Downsample(l) => l.backward(grad),
            Layer::Upsample(l) => l.backward(grad),
        }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param<T>)) {
        match self {
            Layer::Conv2d(l) => {
                f("weight", &l.weight);
                f("bias", &l.bias);
            }
            Layer::Linear(l) => {
                f("weight", &l.weight);
                f("bias", &l.bias);
            }
            Layer::GroupNorm(l) => {
                f("gamma", &l.gamma);
                f("beta", &l.beta);
            }
            _ => {}
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match self {
            Layer::Conv2d(l) => {
                f("weight", &mut l.weight);
                f("bias", &mut l.bias);
            }
            Layer::Linear(l) => {
                f("weight", &mut l.weight);
                f("bias", &mut l.bias);
            }
            Layer::GroupNorm(l) => {
                f("gamma", &mut l.gamma);
                f("beta", &mut l.beta);
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn conv_zero_input_zero_bias_gives_zero() {
        let mut conv = Conv2d::<f64>::new(1, 2, 3, 1, 1, &mut rng());
        conv.bias.value.fill(0.0);
        let y = conv.forward(&Tensor::zeros(&[1, 3, 3])).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel_is_identity() {
        let mut conv = Conv2d::<f64>::new(2, 2, 1, 1, 0, &mut rng());
        conv.weight.value = Tensor::from_vec(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        conv.bias.value.fill(0.0);
        let x = Tensor::from_vec(&[2, 2, 3], (0..12).map(|v| v as f64 * 0.5).collect()).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn conv_averaging_kernel_on_ramp() {
        // 4x4 ramp x[i][j] = 4i + j; the 3x3 mean around (1,1) is 5, around (2,2) is 10.
        let mut conv = Conv2d::<f64>::new(1, 1, 3, 1, 1, &mut rng());
        conv.weight.value = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
        conv.bias.value.fill(0.0);
        let x = Tensor::from_vec(&[1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap();
        let y = conv.forward(&x).unwrap();
        assert!((y.data()[5] - 5.0).abs() < 1e-12);
        assert!((y.data()[10] - 10.0).abs() < 1e-12);
        // corner sees zero padding: (0 + 1 + 4 + 5) / 9
        assert!((y.data()[0] - 10.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn conv_output_size_formula() {
        for (h, k, s, p) in [(64, 3, 2, 1), (13, 5, 2, 2), (7, 3, 1, 0), (128, 3, 2, 1)] {
            let conv = Conv2d::<f32>::new(1, 1, k, s, p, &mut rng());
            let (oh, _) = conv.output_hw(h, h).unwrap();
            assert_eq!(oh, (h + 2 * p - k) / s + 1);
        }
        let conv = Conv2d::<f32>::new(1, 1, 5, 1, 0, &mut rng());
        assert!(conv.forward(&Tensor::zeros(&[1, 3, 3])).is_err());
        assert!(conv.forward(&Tensor::zeros(&[2, 8, 8])).is_err());
    }

    #[test]
    fn linear_examples() {
        let eye = Linear::from_parts(
            Tensor::from_vec(&[2, 2], vec![1.0f64, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[2]),
        )
        .unwrap();
        let x = Tensor::from_vec(&[2], vec![2.0, 3.0]).unwrap();
        assert_eq!(eye.forward(&x).unwrap(), x);

        let zero = Linear::from_parts(
            Tensor::zeros(&[2, 2]),
            Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(zero.forward(&x).unwrap().data(), &[1.0, 2.0]);

        let mix = Linear::from_parts(
            Tensor::from_vec(&[2, 2], vec![1.0, 1.0, 1.0, -1.0]).unwrap(),
            Tensor::zeros(&[2]),
        )
        .unwrap();
        assert_eq!(mix.forward(&x).unwrap().data(), &[5.0, -1.0]);
        assert!(mix.forward(&Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn group_norm_examples() {
        let gn = GroupNorm::<f64>::new(2, 1).unwrap();
        let constant = Tensor::full(&[2, 2, 2], 3.0);
        assert!(gn.forward(&constant).unwrap().data().iter().all(|&v| v == 0.0));

        // channel 0 holds 1s, channel 1 holds 3s: mean 2, variance 1
        let mut d = vec![1.0; 4];
        d.extend(vec![3.0; 4]);
        let x = Tensor::from_vec(&[2, 2, 2], d).unwrap();
        let y = gn.forward(&x).unwrap();
        let expected = 1.0 / (1.0 + GROUP_NORM_EPS).sqrt();
        for (i, v) in y.data().iter().enumerate() {
            let e = if i < 4 { -expected } else { expected };
            assert!((v - e).abs() < 1e-12);
        }

        let z = Tensor::from_vec(&[2, 1, 2], vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let y = gn.forward(&z).unwrap();
        for (a, b) in y.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-5);
        }

        assert!(GroupNorm::<f32>::new(6, 4).is_err());
    }

    #[test]
    fn backward_without_forward_is_a_usage_error() {
        let mut lin = Linear::<f32>::new(2, 2, &mut rng());
        let err = lin.backward(&Tensor::zeros(&[2])).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        let mut conv = Layer::<f32>::Conv2d(Conv2d::new(1, 1, 3, 1, 1, &mut rng()));
        assert!(matches!(conv.backward(&Tensor::zeros(&[1, 2, 2])), Err(Error::Usage(_))));
    }

    #[test]
    fn sum_of_outputs_with_unit_input_gives_unit_parameter_gradients() {
        let mut lin = Linear::<f64>::new(3, 2, &mut rng());
        lin.forward_train(&Tensor::full(&[3], 1.0)).unwrap();
        lin.backward(&Tensor::full(&[2], 1.0)).unwrap();
        assert!(lin.weight.grad.data().iter().all(|&g| g == 1.0));
        assert!(lin.bias.grad.data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, &mut rng());
        let x = Tensor::full(&[2, 5, 5], 0.7);
        let y = conv.forward_train(&x).unwrap();
        let dx = conv.backward(&Tensor::zeros(y.shape())).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(conv.weight.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stride_and_group_validation() {
        assert!(LayerSpec::conv(1, 1, 3, 3).validate().is_err());
        assert!(LayerSpec::GroupNorm { channels: 8, groups: 3 }.validate().is_err());
        assert!(LayerSpec::GroupNorm { channels: 8, groups: 4 }.validate().is_ok());
    }

    #[test]
    fn resampling_shapes() {
        let x = Tensor::<f32>::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let d = Downsample::default().forward(&x).unwrap();
        assert_eq!(d.data(), &[2.5]);
        let u = Upsample::default().forward(&x).unwrap();
        assert_eq!(u.shape(), &[1, 4, 4]);
        assert_eq!(u.data()[5], 1.0);
        assert!(Downsample::default().forward(&Tensor::<f32>::zeros(&[1, 3, 2])).is_err());
    }

    #[test]
    fn receptive_field_of_strided_stack() {
        let specs = [
            LayerSpec::conv(3, 8, 3, 1),
            LayerSpec::conv(8, 8, 3, 2),
            LayerSpec::conv(8, 8, 3, 1),
        ];
        assert_eq!(receptive_field(&specs), (9, 2));
    }
}
