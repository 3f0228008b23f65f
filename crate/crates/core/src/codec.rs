//! Desk-scale variational autoencoder.
//!
//! The encoder maps an image to a diagonal Gaussian over a latent map with 8×
//! smaller spatial dims. Once pretrained it is frozen; the small convolutional
//! decoder exists only to pretrain it.

use candle_core::{DType, Device, Module, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::ModelConfig;
use crate::error::{invalid, shape_err, Error, Result};
use crate::image::Image;
use crate::layers::{conv2d, upsample2x, Conv, ResBlock};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::{ParamStore, Scope};

pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 20.0;

/// Per-position mean and log-variance, each `(B, C, h, w)`.
#[derive(Debug, Clone)]
pub struct GaussianLatent {
    pub mu: Tensor,
    pub logvar: Tensor,
}

impl GaussianLatent {
    pub fn new(mu: Tensor, logvar: Tensor) -> Result<Self> {
        if mu.dims() != logvar.dims() || mu.rank() != 4 {
            return Err(shape_err!(
                "mu {:?} and logvar {:?} must share a (B,C,h,w) shape",
                mu.dims(),
                logvar.dims()
            ));
        }
        let logvar = logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)?;
        Ok(Self { mu, logvar })
    }

    pub fn detach(&self) -> Self {
        Self {
            mu: self.mu.detach(),
            logvar: self.logvar.detach(),
        }
    }

    pub fn mean(&self) -> LatentMap {
        LatentMap {
            z: self.mu.clone(),
        }
    }
}

/// A latent map `(B, C, h, w)`: an encoder sample or a generated latent.
#[derive(Debug, Clone)]
pub struct LatentMap {
    pub z: Tensor,
}

impl LatentMap {
    pub fn new(z: Tensor) -> Result<Self> {
        if z.rank() != 4 {
            return Err(shape_err!("latent must be (B,C,h,w), got {:?}", z.dims()));
        }
        Ok(Self { z })
    }

    /// `(B, C, h, w)` of i.i.d. standard normals from a seed.
    pub fn random(
        batch: usize,
        channels: usize,
        h: usize,
        w: usize,
        seed: u64,
        dtype: DType,
    ) -> Result<Self> {
        let eps = standard_normal((batch, channels, h, w), seed, dtype, &Device::Cpu)?;
        Self::new(eps)
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        self.z.dims4().expect("rank checked at construction")
    }

    pub fn all_finite(&self) -> Result<bool> {
        let v = self.z.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        Ok(v.iter().all(|x| x.is_finite()))
    }

    /// `"INFL"`, four u64 dims, then f32 values, all little-endian.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = LATENT_MAGIC.to_vec();
        let (b, c, h, w) = self.dims();
        for d in [b, c, h, w] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in self.z.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()? {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8], dtype: DType) -> Result<Self> {
        if buf.len() < 36 || &buf[..4] != LATENT_MAGIC {
            return Err(invalid!("not a latent file"));
        }
        let dims: Vec<usize> = buf[4..36]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
            .collect();
        let count = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if count.and_then(|n| n.checked_mul(4)) != Some(buf.len() - 36) {
            return Err(invalid!("latent file is truncated or has trailing bytes"));
        }
        let data: Vec<f32> = buf[36..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let z = Tensor::from_vec(data, (dims[0], dims[1], dims[2], dims[3]), &Device::Cpu)?;
        Self::new(z.to_dtype(dtype)?)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>, dtype: DType) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf, dtype)
    }
}

const LATENT_MAGIC: &[u8; 4] = b"INFL";

pub(crate) fn standard_normal(
    shape: (usize, usize, usize, usize),
    seed: u64,
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

/// `z = mu + exp(logvar / 2) · ε`, `ε ~ N(0, I)` drawn from `seed`.
pub fn reparameterize(g: &GaussianLatent, seed: u64) -> Result<LatentMap> {
    let eps = standard_normal(g.mu.dims4()?, seed, g.mu.dtype(), g.mu.device())?;
    let std = (&g.logvar * 0.5)?.exp()?;
    LatentMap::new((&g.mu + std.mul(&eps)?)?)
}

/// Mean over elements of `½(mu² + exp(logvar) − 1 − logvar)`, as a scalar tensor.
pub fn kl_divergence(g: &GaussianLatent) -> Result<Tensor> {
    let t = ((g.mu.sqr()? + g.logvar.exp()?)? - 1.0)?;
    Ok(((t - &g.logvar)? * 0.5)?.mean_all()?)
}

pub fn kl_value(g: &GaussianLatent) -> Result<f64> {
    Ok(kl_divergence(g)?.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[derive(Debug, Clone)]
pub struct Encoder {
    conv_in: Conv,
    stages: Vec<(Conv, ResBlock)>,
    conv_out: Conv,
    latent_channels: usize,
}

impl Encoder {
    pub fn new(cfg: &ModelConfig, s: &Scope) -> Result<Self> {
        let ch = &cfg.encoder_channels;
        let conv_in = conv2d(3, ch[0], 3, 1, 1, &s.pp("conv_in"))?;
        let mut stages = Vec::with_capacity(3);
        let mut prev = ch[0];
        for (i, &c) in ch.iter().enumerate() {
            let st = s.pp(format!("down{i}"));
            stages.push((conv2d(prev, c, 3, 2, 1, &st.pp("conv"))?, ResBlock::new(c, &st.pp("res"))?));
            prev = c;
        }
        let conv_out = conv2d(prev, 2 * cfg.latent_channels, 1, 1, 0, &s.pp("conv_out"))?;
        Ok(Self {
            conv_in,
            stages,
            conv_out,
            latent_channels: cfg.latent_channels,
        })
    }

    /// `(B, 3, H, W)` → Gaussian over `(B, C, H/8, W/8)`.
    pub fn encode(&self, x: &Tensor) -> Result<GaussianLatent> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(shape_err!("encoder expects 3 channels, got {c}"));
        }
        if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
            return Err(shape_err!("encoder input {h}x{w} is not divisible by 8"));
        }
        let mut t = self.conv_in.forward(x)?;
        for (down, res) in &self.stages {
            t = res.forward(&down.forward(&t.silu()?)?)?;
        }
        let out = self.conv_out.forward(&t.silu()?)?;
        let c = self.latent_channels;
        GaussianLatent::new(out.narrow(1, 0, c)?, out.narrow(1, c, c)?)
    }

    pub fn encode_image(&self, x: &Image, dtype: DType) -> Result<GaussianLatent> {
        if x.pixels().iter().any(|v| !v.is_finite()) {
            return Err(invalid!("non-finite pixels"));
        }
        self.encode(&x.to_tensor(&Device::Cpu, dtype)?.unsqueeze(0)?)
    }
}

/// Throwaway convolutional decoder used only while pretraining the encoder.
#[derive(Debug, Clone)]
pub struct VaeDecoder {
    conv_in: Conv,
    res_in: ResBlock,
    stages: Vec<Conv>,
    conv_out: Conv,
}

impl VaeDecoder {
    pub fn new(cfg: &ModelConfig, s: &Scope) -> Result<Self> {
        let ch = &cfg.encoder_channels;
        let top = ch[2];
        let conv_in = conv2d(cfg.latent_channels, top, 3, 1, 1, &s.pp("conv_in"))?;
        let res_in = ResBlock::new(top, &s.pp("res_in"))?;
        let widths = [ch[1], ch[0], ch[0]];
        let mut stages = Vec::with_capacity(3);
        let mut prev = top;
        for (i, &c) in widths.iter().enumerate() {
            stages.push(conv2d(prev, c, 3, 1, 1, &s.pp(format!("up{i}")))?);
            prev = c;
        }
        let conv_out = conv2d(prev, 3, 3, 1, 1, &s.pp("conv_out"))?;
        Ok(Self {
            conv_in,
            res_in,
            stages,
            conv_out,
        })
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let mut t = self.res_in.forward(&self.conv_in.forward(z)?)?;
        for conv in &self.stages {
            t = conv.forward(&upsample2x(&t)?)?.silu()?;
        }
        Ok(self.conv_out.forward(&t)?.tanh()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    pub l1: f64,
    pub kl: f64,
    pub total: f64,
}

/// Encoder plus throwaway decoder, sharing one parameter store under the
/// `encoder.` and `vae_decoder.` prefixes.
#[derive(Debug, Clone)]
pub struct Vae {
    pub encoder: Encoder,
    pub decoder: VaeDecoder,
}

impl Vae {
    pub fn new(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        Ok(Self {
            encoder: Encoder::new(cfg, &store.root().pp("encoder"))?,
            decoder: VaeDecoder::new(cfg, &store.root().pp("vae_decoder"))?,
        })
    }

    /// L1 reconstruction + `beta`·KL on a batch, as a differentiable scalar.
    pub fn loss(&self, batch: &Tensor, beta: f64, seed: u64) -> Result<(Tensor, VaeLoss)> {
        let g = self.encoder.encode(batch)?;
        let z = reparameterize(&g, seed)?;
        let recon = self.decoder.decode(&z.z)?;
        let l1 = (recon - batch)?.abs()?.mean_all()?;
        let kl = kl_divergence(&g)?;
        let total = (&l1 + (&kl * beta)?)?;
        let scalar = |t: &Tensor| -> Result<f64> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        let (l1v, klv) = (scalar(&l1)?, scalar(&kl)?);
        Ok((
            total,
            VaeLoss {
                l1: l1v,
                kl: klv,
                total: l1v + beta * klv,
            },
        ))
    }
}

/// Single-writer pretraining loop state for the [`Vae`].
#[derive(Debug)]
pub struct VaePretrainer {
    opt: AdamW,
    pub beta: f64,
    pub lr: f64,
    pub step: u64,
}

impl VaePretrainer {
    pub fn new(store: &ParamStore, beta: f64, lr: f64) -> Result<Self> {
        let mut vars = store.trainable_vars("encoder.");
        vars.extend(store.trainable_vars("vae_decoder."));
        let opt = AdamW::new(
            vars,
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        Ok(Self {
            opt,
            beta,
            lr,
            step: 0,
        })
    }

    /// One gradient step. A non-finite loss leaves the parameters untouched.
    pub fn step(&mut self, vae: &Vae, batch: &[Image], seed: u64) -> Result<VaeLoss> {
        let dtype = vae.encoder.conv_out.weight().dtype();
        let x = Image::stack(batch, &Device::Cpu, dtype)?;
        let (total, report) = vae.loss(&x, self.beta, seed)?;
        if !report.total.is_finite() {
            return Err(Error::NonFinite {
                step: self.step,
                what: format!("vae loss {report:?}"),
            });
        }
        let grads = total.backward()?;
        self.opt.step(&grads, self.lr)?;
        self.step += 1;
        Ok(report)
    }
}
