//! Reconstruction, perceptual and adversarial objectives.

use candle_core::{DType, Module, Tensor, D};

use crate::error::{shape_err, Result};
use crate::layers::{conv2d, frozen_conv2d, Conv};
use crate::params::{ParamStore, Scope};

/// Root seed of the fixed feature network, independent of any run seed so
/// perceptual losses and feature distances are comparable across runs.
pub const FEATURE_NET_SEED: u64 = 0x1f3a_5c7e_9b2d_4f60;

/// Channel widths of the feature network's three stride-2 stages.
pub const FEATURE_CHANNELS: [usize; 3] = [16, 32, 64];

/// A frozen, randomly initialized three-stage convolutional pyramid.
///
/// Serves both as the perceptual-loss network and as the default feature
/// extractor for distribution distances.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    stages: Vec<Conv>,
}

impl FeaturePyramid {
    pub fn new(s: &Scope) -> Result<Self> {
        let mut stages = Vec::with_capacity(3);
        let mut prev = 3;
        for (i, &c) in FEATURE_CHANNELS.iter().enumerate() {
            stages.push(frozen_conv2d(prev, c, 3, 2, 1, &s.pp(format!("stage{i}")))?);
            prev = c;
        }
        Ok(Self { stages })
    }

    /// The canonical instance built from [`FEATURE_NET_SEED`].
    pub fn standard(dtype: DType) -> Result<Self> {
        let store = ParamStore::new(FEATURE_NET_SEED, dtype);
        Self::new(&store.root().pp("features"))
    }

    /// Activations after each stage, `(B, C_i, H/2^i, W/2^i)`.
    pub fn activations(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.stages.len());
        let mut t = x.clone();
        for conv in &self.stages {
            t = conv.forward(&t)?.silu()?;
            out.push(t.clone());
        }
        Ok(out)
    }

    /// Mean squared difference of channel-normalized activations, averaged
    /// over stages.
    pub fn perceptual_loss(&self, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        if x.dims() != y.dims() {
            return Err(shape_err!("perceptual loss on {:?} vs {:?}", x.dims(), y.dims()));
        }
        let fx = self.activations(x)?;
        let fy = self.activations(y)?;
        let mut total: Option<Tensor> = None;
        for (a, b) in fx.iter().zip(&fy) {
            let d = (channel_normalize(a)? - channel_normalize(b)?)?.sqr()?.mean_all()?;
            total = Some(match total {
                None => d,
                Some(t) => (t + d)?,
            });
        }
        let n = fx.len() as f64;
        Ok((total.expect("three stages") / n)?)
    }

    /// Global-average-pooled final-stage features, `(B, 64)`.
    pub fn pooled_features(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.activations(x)?.pop().expect("three stages");
        Ok(last.mean(D::Minus1)?.mean(D::Minus1)?)
    }

    /// Final-stage features before pooling, one row per spatial position and
    /// image: `(B · h · w, 64)`.
    pub fn spatial_features(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.activations(x)?.pop().expect("three stages");
        let (b, c, h, w) = last.dims4()?;
        Ok(last
            .permute((0, 2, 3, 1))?
            .contiguous()?
            .reshape((b * h * w, c))?)
    }
}

/// Unit L2 norm across channels at each position.
fn channel_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(1)? + 1e-6)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// PatchGAN discriminator: three 4×4 stride-2 convs then a 3×3 conv to one
/// logit per patch, LeakyReLU(0.2) in between.
#[derive(Debug, Clone)]
pub struct PatchGan {
    convs: Vec<Conv>,
}

impl PatchGan {
    /// Smallest accepted input side.
    pub const MIN_INPUT: usize = 16;

    pub fn new(s: &Scope) -> Result<Self> {
        let widths = [3, 32, 64, 64];
        let mut convs = Vec::with_capacity(4);
        for i in 0..3 {
            convs.push(conv2d(widths[i], widths[i + 1], 4, 2, 1, &s.pp(format!("conv{i}")))?);
        }
        convs.push(conv2d(64, 1, 3, 1, 1, &s.pp("conv_out"))?);
        Ok(Self { convs })
    }

    /// `(B, 3, H, W)` → patch logits `(B, 1, H/8, W/8)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 || h < Self::MIN_INPUT || w < Self::MIN_INPUT {
            return Err(shape_err!(
                "discriminator needs (B,3,H,W) with sides >= {}, got {:?}",
                Self::MIN_INPUT,
                x.dims()
            ));
        }
        let mut t = x.clone();
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            t = conv.forward(&t)?;
            if i < last {
                t = leaky_relu(&t, 0.2)?;
            }
        }
        Ok(t)
    }
}

fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Hinge discriminator loss `mean(relu(1 − D(real))) + mean(relu(1 + D(fake)))`.
pub fn discriminator_hinge(real_logits: &Tensor, fake_logits: &Tensor) -> Result<Tensor> {
    let real = (1.0 - real_logits)?.relu()?.mean_all()?;
    let fake = (fake_logits + 1.0)?.relu()?.mean_all()?;
    Ok((real + fake)?)
}

/// Generator adversarial loss `−mean(D(fake))`.
pub fn generator_hinge(fake_logits: &Tensor) -> Result<Tensor> {
    Ok(fake_logits.mean_all()?.neg()?)
}

/// `(g_loss, d_loss)` as plain numbers.
pub fn adversarial_losses(real_logits: &Tensor, fake_logits: &Tensor) -> Result<(f64, f64)> {
    Ok((
        scalar(&generator_hinge(fake_logits)?)?,
        scalar(&discriminator_hinge(real_logits, fake_logits)?)?,
    ))
}

pub fn l1_loss(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.dims() != y.dims() {
        return Err(shape_err!("l1 loss on {:?} vs {:?}", x.dims(), y.dims()));
    }
    Ok((x - y)?.abs()?.mean_all()?)
}

pub(crate) fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_g: f64,
}

/// Loss components of one step. `total` is recomputed from the components
/// in `f64`, so `total == l1 + lambda_p·perceptual + lambda_g·adversarial_g`
/// holds to rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l1: f64,
    pub perceptual: f64,
    pub adversarial_g: f64,
    pub discriminator: f64,
    pub total: f64,
    pub lambda_p: f64,
    /// Effective adversarial weight this step (zero during warmup).
    pub lambda_g: f64,
}

impl LossBreakdown {
    pub fn new(l1: f64, perceptual: f64, adversarial_g: f64, discriminator: f64, w: LossWeights) -> Self {
        Self {
            l1,
            perceptual,
            adversarial_g,
            discriminator,
            total: l1 + w.lambda_p * perceptual + w.lambda_g * adversarial_g,
            lambda_p: w.lambda_p,
            lambda_g: w.lambda_g,
        }
    }

    /// `|total − (l1 + λ_P·perceptual + λ_G·adversarial_g)|`.
    pub fn identity_residual(&self) -> f64 {
        (self.total - (self.l1 + self.lambda_p * self.perceptual + self.lambda_g * self.adversarial_g))
            .abs()
    }

    pub fn all_finite(&self) -> bool {
        [self.l1, self.perceptual, self.adversarial_g, self.discriminator, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// The differentiable generator objective and its breakdown. The
/// discriminator term is only evaluated when `weights.lambda_g > 0`.
pub fn total_generator_loss(
    target: &Tensor,
    recon: &Tensor,
    weights: LossWeights,
    features: &FeaturePyramid,
    disc: Option<&PatchGan>,
) -> Result<(Tensor, LossBreakdown)> {
    let l1 = l1_loss(recon, target)?;
    let perc = features.perceptual_loss(recon, target)?;
    let mut total = (&l1 + (&perc * weights.lambda_p)?)?;
    let mut adv_value = 0.0;
    if let (Some(d), true) = (disc, weights.lambda_g > 0.0) {
        let adv = generator_hinge(&d.forward(recon)?)?;
        adv_value = scalar(&adv)?;
        total = (total + (adv * weights.lambda_g)?)?;
    }
    let breakdown = LossBreakdown::new(scalar(&l1)?, scalar(&perc)?, adv_value, 0.0, weights);
    Ok((total, breakdown))
}
