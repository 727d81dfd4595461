//! Conditional generator and discriminator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

use super::layers::{
    features_to_spatial, leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid, spatial_to_features, tanh,
    tanh_backward, BatchNorm, Buffer, Conv, Deconv, Dense, Param,
};
use super::real::Real;

pub const LEAKY_SLOPE: f64 = 0.2;
/// Spatial size of the generator seed block and the discriminator's
/// conditioning stage.
pub const BASE_SIZE: usize = 4;
const BASE_AREA: usize = BASE_SIZE * BASE_SIZE;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("M = {0} must be 4·2^L for some L >= 1")]
    BadImageSize(usize),
    #[error("{0} must be at least 1")]
    ZeroDim(&'static str),
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GanSpec {
    pub m: usize,
    pub n_bs: usize,
    pub k_sub: usize,
    pub z_dim: usize,
    /// Width of the last hidden generator block; earlier blocks double it.
    pub g_base: usize,
    /// Width of the first discriminator block; later blocks double it.
    pub d_base: usize,
    /// Features the condition vector is mapped to before replication.
    pub cond_dim: usize,
}

impl GanSpec {
    /// Default widths: generator 4x4x256 → 128 → 64 → 2 and discriminator
    /// 64 → 128 → 256 at M = 32.
    pub fn new(m: usize, n_bs: usize, k_sub: usize, z_dim: usize) -> Self {
        Self { m, n_bs, k_sub, z_dim, g_base: 64, d_base: 64, cond_dim: 128 }
    }

    pub fn cond_width(&self) -> usize {
        2 * self.n_bs * self.k_sub
    }

    pub fn generator_input_width(&self) -> usize {
        self.z_dim + self.cond_width()
    }

    pub fn image_len(&self) -> usize {
        2 * self.m * self.m
    }

    /// Number of stride-2 stages between 4x4 and M x M.
    pub fn stages(&self) -> Result<usize, ModelError> {
        let mut s = BASE_SIZE;
        let mut l = 0;
        while s < self.m {
            s *= 2;
            l += 1;
        }
        if s != self.m || l == 0 {
            return Err(ModelError::BadImageSize(self.m));
        }
        Ok(l)
    }

    pub fn validate(&self) -> Result<usize, ModelError> {
        for (v, name) in [
            (self.n_bs, "n_bs"),
            (self.k_sub, "k_sub"),
            (self.z_dim, "z_dim"),
            (self.g_base, "g_base"),
            (self.d_base, "d_base"),
            (self.cond_dim, "cond_dim"),
        ] {
            if v == 0 {
                return Err(ModelError::ZeroDim(name));
            }
        }
        self.stages()
    }
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected != got {
        return Err(ModelError::Shape { what, expected, got });
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct UpBlock<T> {
    deconv: Deconv<T>,
    bn: BatchNorm<T>,
    out: Vec<T>,
}

/// Dense projection of `[z; y]` to a 4x4 block followed by transposed
/// convolutions up to `M x M x 2` with a tanh output.
#[derive(Debug, Clone)]
pub struct Generator<T> {
    spec: GanSpec,
    proj: Dense<T>,
    proj_bn: BatchNorm<T>,
    proj_out: Vec<T>,
    blocks: Vec<UpBlock<T>>,
    head: Deconv<T>,
    out: Vec<T>,
    batch: usize,
}

impl<T: Real> Generator<T> {
    pub fn new<R: Rng + ?Sized>(spec: GanSpec, rng: &mut R) -> Result<Self, ModelError> {
        let stages = spec.validate()?;
        let c0 = spec.g_base << (stages - 1);
        let proj = Dense::new("gen.proj", spec.generator_input_width(), c0 * BASE_AREA, rng);
        let mut blocks = Vec::new();
        let mut ch = c0;
        let mut size = BASE_SIZE;
        for i in 0..stages - 1 {
            size *= 2;
            blocks.push(UpBlock {
                deconv: Deconv::new(&format!("gen.up{i}"), ch, ch / 2, size, rng),
                bn: BatchNorm::new(&format!("gen.up{i}.bn"), ch / 2),
                out: Vec::new(),
            });
            ch /= 2;
        }
        let head = Deconv::new("gen.out", ch, 2, spec.m, rng);
        Ok(Self {
            spec,
            proj,
            proj_bn: BatchNorm::new("gen.proj.bn", c0),
            proj_out: Vec::new(),
            blocks,
            head,
            out: Vec::new(),
            batch: 0,
        })
    }

    pub fn spec(&self) -> &GanSpec {
        &self.spec
    }

    fn seed_channels(&self) -> usize {
        self.proj.out_dim / BASE_AREA
    }

    fn input(&self, z: &[T], y: &[T], batch: usize) -> Result<Vec<T>, ModelError> {
        check("latent", self.spec.z_dim * batch, z.len())?;
        check("condition", self.spec.cond_width() * batch, y.len())?;
        let mut x = Vec::with_capacity(z.len() + y.len());
        x.extend_from_slice(z);
        x.extend_from_slice(y);
        Ok(x)
    }

    /// Inference with running batch-norm statistics. `z` is `[Z][B]`, `y` is
    /// `[2NK][B]`; returns `[2][B][M][M]`.
    pub fn infer(&self, z: &[T], y: &[T], batch: usize) -> Result<Vec<T>, ModelError> {
        let x = self.input(z, y, batch)?;
        let c0 = self.seed_channels();
        let h = self.proj.infer(&x, batch);
        let mut h = self.proj_bn.infer(&features_to_spatial(&h, c0, batch, BASE_AREA));
        relu(&mut h);
        for b in &self.blocks {
            h = b.bn.infer(&b.deconv.infer(&h, batch));
            relu(&mut h);
        }
        let mut out = self.head.infer(&h, batch);
        tanh(&mut out);
        Ok(out)
    }

    /// Training-mode forward pass; caches activations for [`Self::backward`].
    pub fn forward(&mut self, z: &[T], y: &[T], batch: usize) -> Result<Vec<T>, ModelError> {
        let x = self.input(z, y, batch)?;
        let c0 = self.seed_channels();
        let h = self.proj.forward(&x, batch);
        let mut h = self.proj_bn.forward(&features_to_spatial(&h, c0, batch, BASE_AREA));
        relu(&mut h);
        self.proj_out = h.clone();
        for b in &mut self.blocks {
            let d = b.deconv.forward(&h, batch);
            h = b.bn.forward(&d);
            relu(&mut h);
            b.out = h.clone();
        }
        let mut out = self.head.forward(&h, batch);
        tanh(&mut out);
        self.out = out.clone();
        self.batch = batch;
        Ok(out)
    }

    /// Accumulates parameter gradients from `d_out` (`[2][B][M][M]`).
    pub fn backward(&mut self, d_out: &[T]) {
        let mut d = d_out.to_vec();
        tanh_backward(&self.out, &mut d);
        let mut d = self.head.backward(&d);
        for b in self.blocks.iter_mut().rev() {
            relu_backward(&b.out, &mut d);
            d = b.deconv.backward(&b.bn.backward(&d));
        }
        relu_backward(&self.proj_out, &mut d);
        let d = self.proj_bn.backward(&d);
        let c0 = self.seed_channels();
        let d = spatial_to_features(&d, c0, self.batch, BASE_AREA);
        self.proj.backward(&d);
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = Vec::new();
        v.extend(self.proj.params_mut());
        v.extend(self.proj_bn.params_mut());
        for b in &mut self.blocks {
            v.extend(b.deconv.params_mut());
            v.extend(b.bn.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = Vec::new();
        v.extend(self.proj.params());
        v.extend(self.proj_bn.params());
        for b in &self.blocks {
            v.extend(b.deconv.params());
            v.extend(b.bn.params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        let mut v: Vec<&mut Buffer<T>> = Vec::new();
        v.extend(self.proj_bn.buffers_mut());
        for b in &mut self.blocks {
            v.extend(b.bn.buffers_mut());
        }
        v
    }

    pub fn buffers(&self) -> Vec<&Buffer<T>> {
        let mut v: Vec<&Buffer<T>> = Vec::new();
        v.extend(self.proj_bn.buffers());
        for b in &self.blocks {
            v.extend(b.bn.buffers());
        }
        v
    }
}

#[derive(Debug, Clone)]
struct DownBlock<T> {
    conv: Conv<T>,
    bn: Option<BatchNorm<T>>,
    out: Vec<T>,
}

/// Strided convolutions down to 4x4, depth-wise concatenation of the
/// replicated condition embedding, a 1x1 convolution with leaky
/// rectification, and a 4x4 readout to one logit.
#[derive(Debug, Clone)]
pub struct Discriminator<T> {
    spec: GanSpec,
    blocks: Vec<DownBlock<T>>,
    cond: Dense<T>,
    cond_out: Vec<T>,
    mix: Dense<T>,
    mix_out: Vec<T>,
    readout: Dense<T>,
    batch: usize,
    #[doc(hidden)]
    pub fault_slope: Option<f64>,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(spec: GanSpec, rng: &mut R) -> Result<Self, ModelError> {
        let stages = spec.validate()?;
        let mut blocks = Vec::new();
        let mut ch = 2;
        let mut size = spec.m;
        for i in 0..stages {
            let out = spec.d_base << i;
            blocks.push(DownBlock {
                conv: Conv::new(&format!("disc.down{i}"), ch, out, size, rng),
                // No normalization on the layer that sees raw images.
                bn: (i > 0).then(|| BatchNorm::new(&format!("disc.down{i}.bn"), out)),
                out: Vec::new(),
            });
            ch = out;
            size /= 2;
        }
        let cond = Dense::new("disc.cond", spec.cond_width(), spec.cond_dim, rng);
        let mix = Dense::new("disc.mix", ch + spec.cond_dim, ch, rng);
        let readout = Dense::new("disc.readout", ch * BASE_AREA, 1, rng);
        Ok(Self {
            spec,
            blocks,
            cond,
            cond_out: Vec::new(),
            mix,
            mix_out: Vec::new(),
            readout,
            batch: 0,
            fault_slope: None,
        })
    }

    pub fn spec(&self) -> &GanSpec {
        &self.spec
    }

    fn feature_channels(&self) -> usize {
        self.mix.out_dim
    }

    fn slope(&self) -> T {
        T::lit(LEAKY_SLOPE)
    }

    fn backward_slope(&self) -> T {
        T::lit(self.fault_slope.unwrap_or(LEAKY_SLOPE))
    }

    fn check_inputs(&self, img: &[T], y: &[T], batch: usize) -> Result<(), ModelError> {
        check("image", self.spec.image_len() * batch, img.len())?;
        check("condition", self.spec.cond_width() * batch, y.len())
    }

    /// Replicates `[F][B]` over the 4x4 grid and appends it to `[C][B][16]`.
    fn concat(features: &[T], cond: &[T], cond_dim: usize, batch: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(features.len() + cond_dim * batch * BASE_AREA);
        out.extend_from_slice(features);
        for f in 0..cond_dim {
            for b in 0..batch {
                let v = cond[f * batch + b];
                out.extend(core::iter::repeat_n(v, BASE_AREA));
            }
        }
        out
    }

    /// Logits for `[2][B][M][M]` images and `[2NK][B]` conditions, using
    /// running statistics.
    pub fn infer_logits(&self, img: &[T], y: &[T], batch: usize) -> Result<Vec<T>, ModelError> {
        self.check_inputs(img, y, batch)?;
        let mut h = img.to_vec();
        for b in &self.blocks {
            h = b.conv.infer(&h, batch);
            if let Some(bn) = &b.bn {
                h = bn.infer(&h);
            }
            leaky_relu(&mut h, self.slope());
        }
        let mut c = self.cond.infer(y, batch);
        leaky_relu(&mut c, self.slope());
        let joint = Self::concat(&h, &c, self.spec.cond_dim, batch);
        let mut mixed = self.mix.infer(&joint, batch * BASE_AREA);
        leaky_relu(&mut mixed, self.slope());
        let flat = spatial_to_features(&mixed, self.feature_channels(), batch, BASE_AREA);
        Ok(self.readout.infer(&flat, batch))
    }

    pub fn infer(&self, img: &[T], y: &[T], batch: usize) -> Result<Vec<T>, ModelError> {
        Ok(self.infer_logits(img, y, batch)?.into_iter().map(probability).collect())
    }

    /// Training-mode forward pass returning logits.
    pub fn forward(&mut self, img: &[T], y: &[T], batch: usize) -> Result<Vec<T>, ModelError> {
        self.check_inputs(img, y, batch)?;
        let slope = self.slope();
        let mut h = img.to_vec();
        for b in &mut self.blocks {
            h = b.conv.forward(&h, batch);
            if let Some(bn) = &mut b.bn {
                h = bn.forward(&h);
            }
            leaky_relu(&mut h, slope);
            b.out = h.clone();
        }
        let mut c = self.cond.forward(y, batch);
        leaky_relu(&mut c, slope);
        self.cond_out = c.clone();
        let joint = Self::concat(&h, &c, self.spec.cond_dim, batch);
        let mut mixed = self.mix.forward(&joint, batch * BASE_AREA);
        leaky_relu(&mut mixed, slope);
        self.mix_out = mixed.clone();
        let flat = spatial_to_features(&mixed, self.feature_channels(), batch, BASE_AREA);
        self.batch = batch;
        Ok(self.readout.forward(&flat, batch))
    }

    /// Accumulates parameter gradients from `d_logits` and returns the
    /// gradient with respect to the input image.
    pub fn backward(&mut self, d_logits: &[T]) -> Vec<T> {
        let batch = self.batch;
        let slope = self.backward_slope();
        let ch = self.feature_channels();
        let d_flat = self.readout.backward(d_logits);
        let mut d_mixed = features_to_spatial(&d_flat, ch, batch, BASE_AREA);
        leaky_relu_backward(&self.mix_out, &mut d_mixed, slope);
        let d_joint = self.mix.backward(&d_mixed);
        let split = ch * batch * BASE_AREA;
        let (d_feat, d_rep) = d_joint.split_at(split);
        let mut d_cond = vec![T::zero(); self.spec.cond_dim * batch];
        for (i, d) in d_cond.iter_mut().enumerate() {
            *d = d_rep[i * BASE_AREA..(i + 1) * BASE_AREA].iter().fold(T::zero(), |a, &v| a + v);
        }
        leaky_relu_backward(&self.cond_out, &mut d_cond, slope);
        self.cond.backward(&d_cond);
        let mut d = d_feat.to_vec();
        for b in self.blocks.iter_mut().rev() {
            leaky_relu_backward(&b.out, &mut d, slope);
            if let Some(bn) = &mut b.bn {
                d = bn.backward(&d);
            }
            d = b.conv.backward(&d);
        }
        d
    }

    /// Parameters of the condition embedding, the only weights that see `y`.
    pub fn condition_weights_mut(&mut self) -> &mut Param<T> {
        &mut self.cond.w
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.conv.params_mut());
            if let Some(bn) = &mut b.bn {
                v.extend(bn.params_mut());
            }
        }
        v.extend(self.cond.params_mut());
        v.extend(self.mix.params_mut());
        v.extend(self.readout.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = Vec::new();
        for b in &self.blocks {
            v.extend(b.conv.params());
            if let Some(bn) = &b.bn {
                v.extend(bn.params());
            }
        }
        v.extend(self.cond.params());
        v.extend(self.mix.params());
        v.extend(self.readout.params());
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        let mut v: Vec<&mut Buffer<T>> = Vec::new();
        for b in &mut self.blocks {
            if let Some(bn) = &mut b.bn {
                v.extend(bn.buffers_mut());
            }
        }
        v
    }

    pub fn buffers(&self) -> Vec<&Buffer<T>> {
        let mut v: Vec<&Buffer<T>> = Vec::new();
        for b in &self.blocks {
            if let Some(bn) = &b.bn {
                v.extend(bn.buffers());
            }
        }
        v
    }
}

/// Logistic probability clamped to `[1e-7, 1 − 1e-7]`.
pub fn probability<T: Real>(logit: T) -> T {
    let p = sigmoid(logit);
    let lo = T::lit(super::loss::PROB_CLAMP);
    p.max(lo).min(T::one() - lo)
}

/// Both networks of one model.
#[derive(Debug, Clone)]
pub struct Gan<T> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
}

impl<T: Real> Gan<T> {
    pub fn new<R: Rng + ?Sized>(spec: GanSpec, rng: &mut R) -> Result<Self, ModelError> {
        Ok(Self { generator: Generator::new(spec, rng)?, discriminator: Discriminator::new(spec, rng)? })
    }

    pub fn spec(&self) -> &GanSpec {
        self.generator.spec()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.generator.params();
        v.extend(self.discriminator.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.generator.params_mut();
        v.extend(self.discriminator.params_mut());
        v
    }

    pub fn buffers(&self) -> Vec<&Buffer<T>> {
        let mut v = self.generator.buffers();
        v.extend(self.discriminator.buffers());
        v
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer<T>> {
        let mut v = self.generator.buffers_mut();
        v.extend(self.discriminator.buffers_mut());
        v
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
