//! Network building blocks with explicit backward passes.
//!
//! Activations use a channel-major batch layout: a feature block is
//! `[C][B]`, a spatial block is `[C][B][H][W]`, both row-major. Every GEMM then
//! sees its batch dimension contiguous, and batch normalization statistics of
//! a channel are one contiguous run.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::real::Real;

pub const KERNEL: usize = 5;
const TAPS: usize = KERNEL * KERNEL;
const PAD: isize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { name, shape, value: vec![T::zero(); n], grad: vec![T::zero(); n] }
    }

    fn filled(name: String, shape: Vec<usize>, v: T) -> Self {
        let mut p = Self::zeros(name, shape);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    fn normal<R: Rng + ?Sized>(name: String, shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(name, shape);
        for x in &mut p.value {
            let z: f64 = rng.sample(StandardNormal);
            *x = T::lit(z * std);
        }
        p
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

/// Non-trainable state saved with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Vec<T>,
}

/// Fully connected map on a `[in][B]` block.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Param<T>,
    pub b: Param<T>,
    x: Vec<T>,
    batch: usize,
}

impl<T: Real> Dense<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            w: Param::normal(alloc::format!("{name}.w"), vec![out_dim, in_dim], 0.02, rng),
            b: Param::zeros(alloc::format!("{name}.b"), vec![out_dim]),
            x: Vec::new(),
            batch: 0,
        }
    }

    pub fn infer(&self, x: &[T], batch: usize) -> Vec<T> {
        assert_eq!(x.len(), self.in_dim * batch, "dense input shape");
        let mut y = vec![T::zero(); self.out_dim * batch];
        for (row, b) in y.chunks_exact_mut(batch.max(1)).zip(&self.b.value) {
            row.iter_mut().for_each(|v| *v = *b);
        }
        T::gemm(self.out_dim, self.in_dim, batch, &self.w.value, false, x, false, T::one(), &mut y);
        y
    }

    pub fn forward(&mut self, x: &[T], batch: usize) -> Vec<T> {
        let y = self.infer(x, batch);
        self.x.clear();
        self.x.extend_from_slice(x);
        self.batch = batch;
        y
    }

    pub fn backward(&mut self, dy: &[T]) -> Vec<T> {
        let batch = self.batch;
        T::gemm(self.out_dim, batch, self.in_dim, dy, false, &self.x, true, T::one(), &mut self.w.grad);
        for (g, row) in self.b.grad.iter_mut().zip(dy.chunks_exact(batch)) {
            *g += row.iter().fold(T::zero(), |a, &v| a + v);
        }
        let mut dx = vec![T::zero(); self.in_dim * batch];
        T::gemm(self.in_dim, self.out_dim, batch, &self.w.value, true, dy, false, T::zero(), &mut dx);
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.w, &self.b]
    }
}

/// Patch matrix of a stride-2, 5x5, pad-2 window over `[C][B][H][H]`:
/// `[C·25][B·(H/2)²]`.
pub fn im2col<T: Real>(x: &[T], channels: usize, batch: usize, big: usize) -> Vec<T> {
    let small = big / 2;
    let plane = small * small;
    let ncol = batch * plane;
    let mut cols = vec![T::zero(); channels * TAPS * ncol];
    for c in 0..channels {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * TAPS + ky * KERNEL + kx) * ncol;
                for b in 0..batch {
                    let src = &x[(c * batch + b) * big * big..(c * batch + b + 1) * big * big];
                    for i in 0..small {
                        let yy = 2 * i as isize + ky as isize - PAD;
                        if yy < 0 || yy >= big as isize {
                            continue;
                        }
                        let dst = row + b * plane + i * small;
                        let srow = &src[yy as usize * big..(yy as usize + 1) * big];
                        for j in 0..small {
                            let xx = 2 * j as isize + kx as isize - PAD;
                            if xx >= 0 && xx < big as isize {
                                cols[dst + j] = srow[xx as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patches back to `[C][B][H][H]`.
pub fn col2im<T: Real>(cols: &[T], channels: usize, batch: usize, big: usize) -> Vec<T> {
    let small = big / 2;
    let plane = small * small;
    let ncol = batch * plane;
    let mut x = vec![T::zero(); channels * batch * big * big];
    for c in 0..channels {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * TAPS + ky * KERNEL + kx) * ncol;
                for b in 0..batch {
                    let base = (c * batch + b) * big * big;
                    for i in 0..small {
                        let yy = 2 * i as isize + ky as isize - PAD;
                        if yy < 0 || yy >= big as isize {
                            continue;
                        }
                        let src = row + b * plane + i * small;
                        let drow = base + yy as usize * big;
                        for j in 0..small {
                            let xx = 2 * j as isize + kx as isize - PAD;
                            if xx >= 0 && xx < big as isize {
                                x[drow + xx as usize] += cols[src + j];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Stride-2 5x5 convolution halving the spatial size.
#[derive(Debug, Clone)]
pub struct Conv<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Input spatial size.
    pub big: usize,
    pub w: Param<T>,
    pub b: Param<T>,
    cols: Vec<T>,
    batch: usize,
}

impl<T: Real> Conv<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, in_ch: usize, out_ch: usize, big: usize, rng: &mut R) -> Self {
        Self {
            in_ch,
            out_ch,
            big,
            w: Param::normal(alloc::format!("{name}.w"), vec![out_ch, in_ch, KERNEL, KERNEL], 0.02, rng),
            b: Param::zeros(alloc::format!("{name}.b"), vec![out_ch]),
            cols: Vec::new(),
            batch: 0,
        }
    }

    fn run(&self, cols: &[T], batch: usize) -> Vec<T> {
        let n = batch * (self.big / 2).pow(2);
        let mut y = vec![T::zero(); self.out_ch * n];
        for (row, b) in y.chunks_exact_mut(n).zip(&self.b.value) {
            row.iter_mut().for_each(|v| *v = *b);
        }
        T::gemm(self.out_ch, self.in_ch * TAPS, n, &self.w.value, false, cols, false, T::one(), &mut y);
        y
    }

    pub fn infer(&self, x: &[T], batch: usize) -> Vec<T> {
        assert_eq!(x.len(), self.in_ch * batch * self.big * self.big, "conv input shape");
        let cols = im2col(x, self.in_ch, batch, self.big);
        self.run(&cols, batch)
    }

    pub fn forward(&mut self, x: &[T], batch: usize) -> Vec<T> {
        assert_eq!(x.len(), self.in_ch * batch * self.big * self.big, "conv input shape");
        self.cols = im2col(x, self.in_ch, batch, self.big);
        self.batch = batch;
        self.run(&self.cols, batch)
    }

    pub fn backward(&mut self, dy: &[T]) -> Vec<T> {
        let n = self.batch * (self.big / 2).pow(2);
        let k = self.in_ch * TAPS;
        T::gemm(self.out_ch, n, k, dy, false, &self.cols, true, T::one(), &mut self.w.grad);
        for (g, row) in self.b.grad.iter_mut().zip(dy.chunks_exact(n)) {
            *g += row.iter().fold(T::zero(), |a, &v| a + v);
        }
        let mut dcols = vec![T::zero(); k * n];
        T::gemm(k, self.out_ch, n, &self.w.value, true, dy, false, T::zero(), &mut dcols);
        col2im(&dcols, self.in_ch, self.batch, self.big)
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.w, &self.b]
    }
}

/// Stride-2 5x5 transposed convolution doubling the spatial size; the exact
/// adjoint of [`Conv`]'s window geometry.
#[derive(Debug, Clone)]
pub struct Deconv<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Output spatial size.
    pub big: usize,
    pub w: Param<T>,
    pub b: Param<T>,
    x: Vec<T>,
    batch: usize,
}

impl<T: Real> Deconv<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, in_ch: usize, out_ch: usize, big: usize, rng: &mut R) -> Self {
        Self {
            in_ch,
            out_ch,
            big,
            w: Param::normal(alloc::format!("{name}.w"), vec![in_ch, out_ch, KERNEL, KERNEL], 0.02, rng),
            b: Param::zeros(alloc::format!("{name}.b"), vec![out_ch]),
            x: Vec::new(),
            batch: 0,
        }
    }

    pub fn infer(&self, x: &[T], batch: usize) -> Vec<T> {
        let n = batch * (self.big / 2).pow(2);
        assert_eq!(x.len(), self.in_ch * n, "deconv input shape");
        let k = self.out_ch * TAPS;
        let mut cols = vec![T::zero(); k * n];
        T::gemm(k, self.in_ch, n, &self.w.value, true, x, false, T::zero(), &mut cols);
        let mut y = col2im(&cols, self.out_ch, batch, self.big);
        let plane = batch * self.big * self.big;
        for (chunk, b) in y.chunks_exact_mut(plane).zip(&self.b.value) {
            chunk.iter_mut().for_each(|v| *v += *b);
        }
        y
    }

    pub fn forward(&mut self, x: &[T], batch: usize) -> Vec<T> {
        let y = self.infer(x, batch);
        self.x.clear();
        self.x.extend_from_slice(x);
        self.batch = batch;
        y
    }

    pub fn backward(&mut self, dy: &[T]) -> Vec<T> {
        let batch = self.batch;
        let n = batch * (self.big / 2).pow(2);
        let k = self.out_ch * TAPS;
        let plane = batch * self.big * self.big;
        for (g, chunk) in self.b.grad.iter_mut().zip(dy.chunks_exact(plane)) {
            *g += chunk.iter().fold(T::zero(), |a, &v| a + v);
        }
        let dcols = im2col(dy, self.out_ch, batch, self.big);
        T::gemm(self.in_ch, n, k, &self.x, false, &dcols, true, T::one(), &mut self.w.grad);
        let mut dx = vec![T::zero(); self.in_ch * n];
        T::gemm(self.in_ch, k, n, &self.w.value, false, &dcols, false, T::zero(), &mut dx);
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.w, &self.b]
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel normalization over batch and spatial positions.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(alloc::format!("{name}.gamma"), vec![channels], T::one()),
            beta: Param::zeros(alloc::format!("{name}.beta"), vec![channels]),
            running_mean: Buffer { name: alloc::format!("{name}.running_mean"), value: vec![T::zero(); channels] },
            running_var: Buffer { name: alloc::format!("{name}.running_var"), value: vec![T::one(); channels] },
            xhat: Vec::new(),
            inv_std: Vec::new(),
        }
    }

    /// Uses the running statistics.
    pub fn infer(&self, x: &[T]) -> Vec<T> {
        let n = x.len() / self.channels;
        let eps = T::lit(BN_EPS);
        let mut y = Vec::with_capacity(x.len());
        for c in 0..self.channels {
            let scale = self.gamma.value[c] / (self.running_var.value[c] + eps).sqrt();
            let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
            y.extend(x[c * n..(c + 1) * n].iter().map(|&v| v * scale + shift));
        }
        y
    }

    /// Uses batch statistics and updates the running averages.
    pub fn forward(&mut self, x: &[T]) -> Vec<T> {
        let n = x.len() / self.channels;
        assert!(n > 0, "batch norm over an empty block");
        let nf = T::lit(n as f64);
        let eps = T::lit(BN_EPS);
        let mom = T::lit(BN_MOMENTUM);
        self.xhat.clear();
        self.xhat.reserve(x.len());
        self.inv_std.clear();
        let mut y = Vec::with_capacity(x.len());
        for c in 0..self.channels {
            let chunk = &x[c * n..(c + 1) * n];
            let mean = chunk.iter().fold(T::zero(), |a, &v| a + v) / nf;
            let var = chunk.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / nf;
            let inv = T::one() / (var + eps).sqrt();
            self.inv_std.push(inv);
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for &v in chunk {
                let h = (v - mean) * inv;
                self.xhat.push(h);
                y.push(g * h + b);
            }
            let unbiased = if n > 1 { var * nf / T::lit((n - 1) as f64) } else { var };
            let rm = &mut self.running_mean.value[c];
            *rm = (T::one() - mom) * *rm + mom * mean;
            let rv = &mut self.running_var.value[c];
            *rv = (T::one() - mom) * *rv + mom * unbiased;
        }
        y
    }

    pub fn backward(&mut self, dy: &[T]) -> Vec<T> {
        let n = dy.len() / self.channels;
        let nf = T::lit(n as f64);
        let mut dx = Vec::with_capacity(dy.len());
        for c in 0..self.channels {
            let d = &dy[c * n..(c + 1) * n];
            let h = &self.xhat[c * n..(c + 1) * n];
            let mut sum_d = T::zero();
            let mut sum_dh = T::zero();
            for (&di, &hi) in d.iter().zip(h) {
                sum_d += di;
                sum_dh += di * hi;
            }
            self.gamma.grad[c] += sum_dh;
            self.beta.grad[c] += sum_d;
            let k = self.gamma.value[c] * self.inv_std[c] / nf;
            dx.extend(d.iter().zip(h).map(|(&di, &hi)| k * (nf * di - sum_d - hi * sum_dh)));
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn buffers_mut(&mut self) -> [&mut Buffer<T>; 2] {
        [&mut self.running_mean, &mut self.running_var]
    }

    pub fn buffers(&self) -> [&Buffer<T>; 2] {
        [&self.running_mean, &self.running_var]
    }
}

pub fn relu<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// `dy` masked by the stored forward output `y` of a ReLU.
pub fn relu_backward<T: Real>(y: &[T], dy: &mut [T]) {
    dy.iter_mut().zip(y).for_each(|(d, &v)| {
        if v <= T::zero() {
            *d = T::zero()
        }
    });
}

pub fn leaky_relu<T: Real>(x: &mut [T], slope: T) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = *v * slope
        }
    });
}

/// Backward of a leaky ReLU given its (pre-activation sign preserving)
/// forward output `y`.
pub fn leaky_relu_backward<T: Real>(y: &[T], dy: &mut [T], slope: T) {
    dy.iter_mut().zip(y).for_each(|(d, &v)| {
        if v < T::zero() {
            *d = *d * slope
        }
    });
}

pub fn tanh<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.tanh());
}

pub fn tanh_backward<T: Real>(y: &[T], dy: &mut [T]) {
    dy.iter_mut().zip(y).for_each(|(d, &v)| *d = *d * (T::one() - v * v));
}

pub fn sigmoid<T: Real>(a: T) -> T {
    if a >= T::zero() {
        T::one() / (T::one() + (-a).exp())
    } else {
        let e = a.exp();
        e / (T::one() + e)
    }
}

/// `[C][B][S]` → `[C·S][B]`.
pub fn spatial_to_features<T: Real>(x: &[T], channels: usize, batch: usize, spatial: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for c in 0..channels {
        for b in 0..batch {
            for s in 0..spatial {
                out[(c * spatial + s) * batch + b] = x[(c * batch + b) * spatial + s];
            }
        }
    }
    out
}

/// `[C·S][B]` → `[C][B][S]`.
pub fn features_to_spatial<T: Real>(x: &[T], channels: usize, batch: usize, spatial: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for c in 0..channels {
        for b in 0..batch {
            for s in 0..spatial {
                out[(c * batch + b) * spatial + s] = x[(c * spatial + s) * batch + b];
            }
        }
    }
    out
}
