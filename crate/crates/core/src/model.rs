//! The full generator bundle: frozen encoder, arbitrary-resolution decoder
//! and discriminator, sharing one parameter store.

use candle_core::{DType, Device, Tensor};

use crate::checkpoint::Checkpoint;
use crate::codec::{Encoder, GaussianLatent, LatentMap, Vae};
use crate::config::{ModelConfig, RunConfig};
use crate::decoder::{ArrDecoder, TargetResolution};
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::params::ParamStore;
use crate::training::losses::PatchGan;
use crate::training::trainer::{Trainer, TrainerState};

/// Parameter groups as stored in checkpoints.
pub const GROUP_ENCODER: &str = "encoder";
pub const GROUP_VAE_DECODER: &str = "vae_decoder";
pub const GROUP_DECODER: &str = "decoder";
pub const GROUP_DISCRIMINATOR: &str = "discriminator";

/// Prefix of optimizer-state tensors inside a checkpoint.
const OPTIM_PREFIX: &str = "optim.";
pub const KIND_INFGEN: &str = "infgen";
pub const KIND_VAE: &str = "vae";

/// The group a parameter name belongs to: everything before the first dot.
pub fn group_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

#[derive(Debug, Clone)]
pub struct InfGen {
    config: ModelConfig,
    store: ParamStore,
    pub encoder: Encoder,
    pub decoder: ArrDecoder,
    pub discriminator: PatchGan,
}

impl InfGen {
    pub fn new(config: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(seed, dtype);
        let root = store.root();
        Ok(Self {
            encoder: Encoder::new(config, &root.pp(GROUP_ENCODER))?,
            decoder: ArrDecoder::new(config, &root.pp(GROUP_DECODER))?,
            discriminator: PatchGan::new(&root.pp(GROUP_DISCRIMINATOR))?,
            config: config.clone(),
            store,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    /// Copies pretrained encoder weights out of a VAE's store.
    pub fn load_encoder_from(&self, vae_store: &ParamStore) -> Result<()> {
        let prefix = format!("{GROUP_ENCODER}.");
        let snapshot = vae_store.export()?;
        self.store.import(&prefix, &snapshot)
    }

    /// Resizes to the encoder's fixed input side and encodes a batch.
    pub fn encode_images(&self, images: &[Image]) -> Result<GaussianLatent> {
        if images.is_empty() {
            return Err(invalid!("no images to encode"));
        }
        let s = self.config.input_size;
        let resized = images
            .iter()
            .map(|im| if im.dims() == (s, s) { Ok(im.clone()) } else { im.resize(s, s) })
            .collect::<Result<Vec<_>>>()?;
        let x = Image::stack(&resized, self.device(), self.dtype())?;
        Ok(self.encoder.encode(&x)?.detach())
    }

    /// Encoder mean of an image at its own resolution (sides divisible by 8).
    pub fn encode_native(&self, image: &Image) -> Result<LatentMap> {
        Ok(self.encoder.encode_image(image, self.dtype())?.detach().mean())
    }

    pub fn decode(&self, z: &LatentMap, t: TargetResolution) -> Result<Tensor> {
        self.decoder.decode(z, t)
    }

    /// Model weights, frozen flags and (if given) resumable optimizer state.
    pub fn to_checkpoint(&self, run: &RunConfig, trainer: Option<&Trainer>) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new(run.digest(), run.to_text());
        ckpt.meta.insert("kind".into(), KIND_INFGEN.into());
        ckpt.groups.insert(GROUP_ENCODER.into(), true);
        ckpt.groups.insert(GROUP_DECODER.into(), false);
        ckpt.groups.insert(GROUP_DISCRIMINATOR.into(), false);
        ckpt.tensors = self.store.export()?;
        if let Some(tr) = trainer {
            let state = tr.export_state()?;
            ckpt.step = state.step;
            ckpt.meta.insert("gen_updates".into(), state.gen_updates.to_string());
            ckpt.meta.insert("disc_updates".into(), state.disc_updates.to_string());
            for (k, v) in state.tensors {
                ckpt.tensors.insert(format!("{OPTIM_PREFIX}{k}"), v);
            }
        }
        Ok(ckpt)
    }

    /// Loads every model tensor; nothing changes if any is missing or misshapen.
    pub fn load_checkpoint(&self, ckpt: &Checkpoint) -> Result<()> {
        expect_kind(ckpt, KIND_INFGEN)?;
        self.store.import("", &ckpt.tensors)
    }

    /// Encode at `S_in` (mean), decode at `t`.
    pub fn reconstruct(&self, image: &Image, t: TargetResolution) -> Result<Image> {
        let z = self.encode_images(std::slice::from_ref(image))?.mean();
        Image::from_tensor(&self.decoder.decode(&z, t)?.detach())
    }
}

/// A VAE with its own store, for encoder pretraining.
#[derive(Debug, Clone)]
pub struct VaeModel {
    pub store: ParamStore,
    pub vae: Vae,
}

impl VaeModel {
    pub fn new(config: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::new(seed, dtype);
        let vae = Vae::new(config, &store)?;
        Ok(Self { store, vae })
    }
}

fn expect_kind(ckpt: &Checkpoint, kind: &str) -> Result<()> {
    match ckpt.meta.get("kind").map(String::as_str) {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::Checkpoint(format!(
            "expected a {kind} checkpoint, found {}",
            other.unwrap_or("unknown")
        ))),
    }
}

/// Optimizer state saved alongside a model, if any.
pub fn trainer_state(ckpt: &Checkpoint) -> Result<Option<TrainerState>> {
    let parse = |key: &str| -> Result<Option<u64>> {
        ckpt.meta
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Checkpoint(format!("bad {key} value {v:?}")))
            })
            .transpose()
    };
    let (Some(gen_updates), Some(disc_updates)) = (parse("gen_updates")?, parse("disc_updates")?) else {
        return Ok(None);
    };
    Ok(Some(TrainerState {
        step: ckpt.step,
        gen_updates,
        disc_updates,
        tensors: ckpt.tensors_with_prefix(OPTIM_PREFIX),
    }))
}

impl VaeModel {
    pub fn to_checkpoint(&self, run: &RunConfig, step: u64) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new(run.digest(), run.to_text());
        ckpt.step = step;
        ckpt.meta.insert("kind".into(), KIND_VAE.into());
        ckpt.groups.insert(GROUP_ENCODER.into(), false);
        ckpt.groups.insert(GROUP_VAE_DECODER.into(), false);
        ckpt.tensors = self.store.export()?;
        Ok(ckpt)
    }

    pub fn load_checkpoint(&self, ckpt: &Checkpoint) -> Result<()> {
        expect_kind(ckpt, KIND_VAE)?;
        self.store.import("", &ckpt.tensors)
    }
}
