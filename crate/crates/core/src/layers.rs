//! Layers with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward`; calling
//! `backward` consumes that cache, so each forward must be followed by at
//! most one backward. Parameter gradients accumulate until zeroed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{col2im, im2col, matmul, Float, MatRef, Tensor, Window};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Trainable array plus its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Float> Param<T> {
    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let len = shape.iter().product();
        Self { shape, value: vec![v; len], grad: vec![T::zero(); len] }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Per-call forward settings.
pub struct Pass<'a> {
    pub train: bool,
    pub rng: &'a mut ChaCha8Rng,
}

#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub window: Window,
    cache: Option<(Vec<T>, [usize; 4])>,
}

impl<T: Float> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, window: Window, bias: bool) -> Self {
        let k = window.kernel;
        Self {
            weight: Param::filled(vec![out_channels, in_channels, k, k], T::zero()),
            bias: bias.then(|| Param::filled(vec![out_channels], T::zero())),
            in_channels,
            out_channels,
            window,
            cache: None,
        }
    }

    fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        if x.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        let (oh, ow) = match (self.window.out_size(x.height), self.window.out_size(x.width)) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => {
                return Err(Error::Shape(format!(
                    "{}x{} input too small for {:?}",
                    x.height, x.width, self.window
                )))
            }
        };
        let k = self.window.kernel;
        let cols = im2col(&x, self.window, oh, ow);
        let n_cols = x.batch * oh * ow;
        let mut y = Tensor::zeros(self.out_channels, x.batch, oh, ow);
        matmul(
            MatRef::new(&self.weight.value, self.out_channels, self.in_channels * k * k),
            MatRef::new(&cols, self.in_channels * k * k, n_cols),
            &mut y.data,
            false,
        );
        if let Some(b) = &self.bias {
            for (row, &bv) in y.data.chunks_mut(n_cols).zip(&b.value) {
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
        self.cache = Some((cols, x.shape()));
        Ok(y)
    }

    fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let (cols, [c, n, h, w]) = self.cache.take().ok_or_else(no_cache)?;
        let k = self.window.kernel;
        let n_cols = dy.plane();
        let kk = self.in_channels * k * k;
        matmul(
            MatRef::new(&dy.data, self.out_channels, n_cols),
            MatRef::new(&cols, kk, n_cols).t(),
            &mut self.weight.grad,
            true,
        );
        if let Some(b) = &mut self.bias {
            for (row, g) in dy.data.chunks(n_cols).zip(b.grad.iter_mut()) {
                *g = *g + row.iter().copied().sum();
            }
        }
        let mut dcols = cols;
        matmul(
            MatRef::new(&self.weight.value, self.out_channels, kk).t(),
            MatRef::new(&dy.data, self.out_channels, n_cols),
            &mut dcols,
            false,
        );
        let mut dx = Tensor::zeros(c, n, h, w);
        col2im(&dcols, self.window, dy.height, dy.width, &mut dx);
        Ok(dx)
    }
}

/// Fractionally-strided ("full") convolution; weight layout `[in, out, k, k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub window: Window,
    cache: Option<Tensor<T>>,
}

impl<T: Float> ConvTranspose2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, window: Window, bias: bool) -> Self {
        let k = window.kernel;
        Self {
            weight: Param::filled(vec![in_channels, out_channels, k, k], T::zero()),
            bias: bias.then(|| Param::filled(vec![out_channels], T::zero())),
            in_channels,
            out_channels,
            window,
            cache: None,
        }
    }

    fn forward(&mut self, x: Tensor<T>) -> Result<Tensor<T>> {
        if x.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "upconv expects {} input channels, got {}",
                self.in_channels, x.channels
            )));
        }
        let (oh, ow) = match (
            self.window.transposed_out_size(x.height),
            self.window.transposed_out_size(x.width),
        ) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => return Err(Error::Shape(format!("{}x{} input too small", x.height, x.width))),
        };
        let k = self.window.kernel;
        let okk = self.out_channels * k * k;
        let n_cols = x.plane();
        let mut cols = vec![T::zero(); okk * n_cols];
        matmul(
            MatRef::new(&self.weight.value, self.in_channels, okk).t(),
            MatRef::new(&x.data, self.in_channels, n_cols),
            &mut cols,
            false,
        );
        let mut y = Tensor::zeros(self.out_channels, x.batch, oh, ow);
        col2im(&cols, self.window, x.height, x.width, &mut y);
        if let Some(b) = &self.bias {
            let plane = y.plane();
            for (row, &bv) in y.data.chunks_mut(plane).zip(&b.value) {
                row.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
        self.cache = Some(x);
        Ok(y)
    }

    fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        let x = self.cache.take().ok_or_else(no_cache)?;
        let k = self.window.kernel;
        let okk = self.out_channels * k * k;
        let n_cols = x.plane();
        if let Some(b) = &mut self.bias {
            for (row, g) in dy.data.chunks(dy.plane()).zip(b.grad.iter_mut()) {
                *g = *g + row.iter().copied().sum();
            }
        }
        let dcols = im2col(&dy, self.window, x.height, x.width);
        matmul(
            MatRef::new(&x.data, self.in_channels, n_cols),
            MatRef::new(&dcols, okk, n_cols).t(),
            &mut self.weight.grad,
            true,
        );
        let mut dx = Tensor::zeros(self.in_channels, x.batch, x.height, x.width);
        matmul(
            MatRef::new(&self.weight.value, self.in_channels, okk),
            MatRef::new(&dcols, okk, n_cols),
            &mut dx.data,
            false,
        );
        Ok(dx)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub channels: usize,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    train: bool,
}

impl<T: Float> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(vec![channels], T::one()),
            beta: Param::filled(vec![channels], T::zero()),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            channels,
            cache: None,
        }
    }

    fn forward(&mut self, mut x: Tensor<T>, train: bool) -> Result<Tensor<T>> {
        if x.channels != self.channels {
            return Err(Error::Shape(format!(
                "batch norm over {} channels got {}",
                self.channels, x.channels
            )));
        }
        let m = x.plane();
        let eps = T::from_f64_lossy(BATCH_NORM_EPS);
        let mom = T::from_f64_lossy(BATCH_NORM_MOMENTUM);
        let mf = T::from_usize(m).unwrap();
        let mut inv_std = Vec::with_capacity(self.channels);
        for (c, row) in x.data.chunks_mut(m).enumerate() {
            let (mean, var) = if train {
                let mean = row.iter().copied().sum::<T>() / mf;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mf;
                self.running_mean[c] = (T::one() - mom) * self.running_mean[c] + mom * mean;
                let unbiased = if m > 1 { var * mf / (mf - T::one()) } else { var };
                self.running_var[c] = (T::one() - mom) * self.running_var[c] + mom * unbiased;
                (mean, var)
            } else {
                (self.running_mean[c], self.running_var[c])
            };
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        let xhat = x.clone();
        for ((row, &g), &b) in x.data.chunks_mut(m).zip(&self.gamma.value).zip(&self.beta.value) {
            row.iter_mut().for_each(|v| *v = *v * g + b);
        }
        self.cache = Some(BnCache { xhat, inv_std, train });
        Ok(x)
    }

    fn backward(&mut self, mut dy: Tensor<T>) -> Result<Tensor<T>> {
        let BnCache { xhat, inv_std, train } = self.cache.take().ok_or_else(no_cache)?;
        let m = dy.plane();
        let mf = T::from_usize(m).unwrap();
        for (c, (drow, xrow)) in dy.data.chunks_mut(m).zip(xhat.data.chunks(m)).enumerate() {
            let sum_dy: T = drow.iter().copied().sum();
            let sum_dy_xhat: T = drow.iter().zip(xrow).map(|(&d, &xh)| d * xh).sum();
            self.beta.grad[c] = self.beta.grad[c] + sum_dy;
            self.gamma.grad[c] = self.gamma.grad[c] + sum_dy_xhat;
            let g = self.gamma.value[c];
            let inv = inv_std[c];
            if train {
                // dx = γ·inv/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
                let scale = g * inv / mf;
                for (d, &xh) in drow.iter_mut().zip(xrow) {
                    *d = scale * (mf * *d - sum_dy - xh * sum_dy_xhat);
                }
            } else {
                drow.iter_mut().for_each(|d| *d = *d * g * inv);
            }
        }
        Ok(dy)
    }
}

#[derive(Clone, Debug)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ConvTranspose(ConvTranspose2d<T>),
    BatchNorm(BatchNorm2d<T>),
    LeakyRelu(Option<Tensor<T>>),
    Relu(Option<Tensor<T>>),
    Tanh(Option<Tensor<T>>),
    Sigmoid(Option<Tensor<T>>),
    Dropout { p: f64, mask: Option<Vec<T>> },
}

fn no_cache() -> Error {
    Error::InvalidArgument("backward called without a matching forward".into())
}

impl<T: Float> Layer<T> {
    pub fn leaky_relu() -> Self {
        Layer::LeakyRelu(None)
    }
    pub fn relu() -> Self {
        Layer::Relu(None)
    }
    pub fn tanh() -> Self {
        Layer::Tanh(None)
    }
    pub fn sigmoid() -> Self {
        Layer::Sigmoid(None)
    }
    pub fn dropout(p: f64) -> Self {
        Layer::Dropout { p, mask: None }
    }

    pub fn forward(&mut self, x: Tensor<T>, pass: &mut Pass<'_>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::ConvTranspose(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, pass.train),
            Layer::LeakyRelu(cache) => {
                let slope = T::from_f64_lossy(LEAKY_SLOPE);
                let y = x.clone().map(|v| if v > T::zero() { v } else { v * slope });
                *cache = Some(x);
                Ok(y)
            }
            Layer::Relu(cache) => {
                let y = x.map(|v| v.max(T::zero()));
                *cache = Some(y.clone());
                Ok(y)
            }
            Layer::Tanh(cache) => {
                let y = x.map(|v| v.tanh());
                *cache = Some(y.clone());
                Ok(y)
            }
            Layer::Sigmoid(cache) => {
                let y = x.map(|v| T::one() / (T::one() + (-v).exp()));
                *cache = Some(y.clone());
                Ok(y)
            }
            Layer::Dropout { p, mask } => {
                if !pass.train || *p <= 0.0 {
                    *mask = None;
                    return Ok(x);
                }
                let keep = T::from_f64_lossy(1.0 / (1.0 - *p));
                let m: Vec<T> = (0..x.data.len())
                    .map(|_| if pass.rng.random::<f64>() < *p { T::zero() } else { keep })
                    .collect();
                let mut y = x;
                y.data.iter_mut().zip(&m).for_each(|(v, &k)| *v = *v * k);
                *mask = Some(m);
                Ok(y)
            }
        }
    }

    pub fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(dy),
            Layer::ConvTranspose(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::LeakyRelu(cache) => {
                let x = cache.take().ok_or_else(no_cache)?;
                let slope = T::from_f64_lossy(LEAKY_SLOPE);
                let mut dx = dy;
                dx.data.iter_mut().zip(&x.data).for_each(|(d, &v)| {
                    if v <= T::zero() {
                        *d = *d * slope
                    }
                });
                Ok(dx)
            }
            Layer::Relu(cache) => {
                let y = cache.take().ok_or_else(no_cache)?;
                let mut dx = dy;
                dx.data.iter_mut().zip(&y.data).for_each(|(d, &v)| {
                    if v <= T::zero() {
                        *d = T::zero()
                    }
                });
                Ok(dx)
            }
            Layer::Tanh(cache) => {
                let y = cache.take().ok_or_else(no_cache)?;
                let mut dx = dy;
                dx.data.iter_mut().zip(&y.data).for_each(|(d, &v)| *d = *d * (T::one() - v * v));
                Ok(dx)
            }
            Layer::Sigmoid(cache) => {
                let y = cache.take().ok_or_else(no_cache)?;
                let mut dx = dy;
                dx.data.iter_mut().zip(&y.data).for_each(|(d, &v)| *d = *d * v * (T::one() - v));
                Ok(dx)
            }
            Layer::Dropout { mask, .. } => match mask.take() {
                Some(m) => {
                    let mut dx = dy;
                    dx.data.iter_mut().zip(&m).for_each(|(d, &k)| *d = *d * k);
                    Ok(dx)
                }
                None => Ok(dy),
            },
        }
    }

    /// Trainable parameters with their local names.
    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Param<T>)> {
        match self {
            Layer::Conv(l) => {
                let mut v = vec![("weight", &mut l.weight)];
                if let Some(b) = &mut l.bias {
                    v.push(("bias", b));
                }
                v
            }
            Layer::ConvTranspose(l) => {
                let mut v = vec![("weight", &mut l.weight)];
                if let Some(b) = &mut l.bias {
                    v.push(("bias", b));
                }
                v
            }
            Layer::BatchNorm(l) => vec![("gamma", &mut l.gamma), ("beta", &mut l.beta)],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state saved alongside the parameters.
    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Vec<T>)> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean", &mut l.running_mean),
                ("running_var", &mut l.running_var),
            ],
            _ => Vec::new(),
        }
    }
}

/// Named layers applied in order.
#[derive(Clone, Debug, Default)]
pub struct Sequential<T> {
    pub layers: Vec<(String, Layer<T>)>,
}

impl<T: Float> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer<T>) {
        self.layers.push((name.into(), layer));
    }

    pub fn forward(&mut self, mut x: Tensor<T>, pass: &mut Pass<'_>) -> Result<Tensor<T>> {
        for (_, layer) in &mut self.layers {
            x = layer.forward(x, pass)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, mut dy: Tensor<T>) -> Result<Tensor<T>> {
        for (_, layer) in self.layers.iter_mut().rev() {
            dy = layer.backward(dy)?;
        }
        Ok(dy)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        for (name, layer) in &mut self.layers {
            for (pname, p) in layer.params_mut() {
                f(format!("{prefix}.{name}.{pname}"), p);
            }
        }
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Vec<T>)) {
        for (name, layer) in &mut self.layers {
            for (bname, b) in layer.buffers_mut() {
                f(format!("{prefix}.{name}.{bname}"), b);
            }
        }
    }
}
