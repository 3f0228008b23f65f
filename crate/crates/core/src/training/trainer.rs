//! Alternating discriminator / generator optimization of the decoder.

use std::collections::BTreeMap;

use candle_core::{Tensor, Var};
use serde::Serialize;

use crate::codec::reparameterize;
use crate::config::TrainConfig;
use crate::decoder::TargetResolution;
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::model::{InfGen, GROUP_DECODER, GROUP_DISCRIMINATOR};
use crate::optim::{AdamW, AdamWConfig, CosineSchedule};
use crate::params::split_seed;

use super::data::{sample_training_batch, TrainingPair};
use super::losses::{discriminator_hinge, scalar, total_generator_loss, FeaturePyramid, LossBreakdown, LossWeights};

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub stage: usize,
    pub lr: f64,
    pub height: usize,
    pub width: usize,
    pub l1: f64,
    pub perceptual: f64,
    pub adversarial_g: f64,
    pub discriminator: f64,
    pub total: f64,
}

impl StepRecord {
    pub fn losses(&self, lambda_p: f64, lambda_g: f64) -> LossBreakdown {
        LossBreakdown {
            l1: self.l1,
            perceptual: self.perceptual,
            adversarial_g: self.adversarial_g,
            discriminator: self.discriminator,
            total: self.total,
            lambda_p,
            lambda_g,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain numeric record")
    }
}

/// Derives a per-step seed for a named random stream.
pub fn step_seed(root: u64, stream: &str, step: u64) -> u64 {
    split_seed(root ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15), stream)
}

pub struct Trainer {
    config: TrainConfig,
    gen_opt: AdamW,
    disc_opt: AdamW,
    schedule: CosineSchedule,
    features: FeaturePyramid,
    seed: u64,
    step: u64,
    last_breakdown: Option<LossBreakdown>,
}

impl Trainer {
    pub fn new(model: &InfGen, config: &TrainConfig, seed: u64) -> Result<Self> {
        let opt_cfg = AdamWConfig {
            beta1: config.beta1,
            beta2: config.beta2,
            weight_decay: config.weight_decay,
            ..Default::default()
        };
        let store = model.store();
        let gen_vars = store.trainable_vars(&format!("{GROUP_DECODER}."));
        let disc_vars = store.trainable_vars(&format!("{GROUP_DISCRIMINATOR}."));
        Ok(Self {
            gen_opt: AdamW::new(gen_vars, opt_cfg)?,
            disc_opt: AdamW::new(disc_vars, opt_cfg)?,
            schedule: CosineSchedule {
                lr_max: config.lr,
                lr_min: config.lr_min,
                total_steps: config.total_steps(),
            },
            features: FeaturePyramid::standard(model.dtype())?,
            config: config.clone(),
            seed,
            step: 0,
            last_breakdown: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.schedule.lr(self.step)
    }

    pub fn features(&self) -> &FeaturePyramid {
        &self.features
    }

    pub fn last_breakdown(&self) -> Option<LossBreakdown> {
        self.last_breakdown
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.total_steps()
    }

    fn adversarial_active(&self) -> bool {
        self.config.lambda_g > 0.0 && self.step >= self.config.adv_warmup
    }

    /// The batch this trainer draws at its current step.
    pub fn next_batch(&self, sources: &[Image], input_size: usize) -> Result<Vec<TrainingPair>> {
        let (_, stage) = self.config.stage_at(self.step);
        let seed = step_seed(self.seed, "data", self.step);
        sample_training_batch(sources, stage, stage.batch, input_size, seed)
    }

    fn stack_pairs(model: &InfGen, pairs: &[TrainingPair]) -> Result<(Tensor, Tensor, TargetResolution)> {
        let first = pairs.first().ok_or_else(|| invalid!("empty training batch"))?;
        let t = first.target_resolution;
        if pairs.iter().any(|p| p.target_resolution != t) {
            return Err(invalid!("a batch must share one target resolution"));
        }
        let inputs: Vec<Image> = pairs.iter().map(|p| p.input_image.clone()).collect();
        let targets: Vec<Image> = pairs.iter().map(|p| p.target_image.clone()).collect();
        let x_in = Image::stack(&inputs, model.device(), model.dtype())?;
        let x_t = Image::stack(&targets, model.device(), model.dtype())?;
        Ok((x_in, x_t, t))
    }

    fn reconstruct(&self, model: &InfGen, x_in: &Tensor, t: TargetResolution) -> Result<Tensor> {
        let g = model.encoder.encode(x_in)?.detach();
        let z = if self.config.sample_latent {
            reparameterize(&g, step_seed(self.seed, "reparam", self.step))?
        } else {
            g.mean()
        };
        model.decoder.decode(&z, t)
    }

    /// One training step: a discriminator update (once past warmup), then a
    /// generator update against the updated discriminator. The encoder is
    /// never touched. A non-finite loss aborts the step with every parameter
    /// restored.
    pub fn train_step(&mut self, model: &InfGen, pairs: &[TrainingPair]) -> Result<StepRecord> {
        let (x_in, x_t, t) = Self::stack_pairs(model, pairs)?;
        let lr = self.lr();
        let adv = self.adversarial_active();
        let recon = self.reconstruct(model, &x_in, t)?;

        let d_loss = discriminator_hinge(
            &model.discriminator.forward(&x_t)?,
            &model.discriminator.forward(&recon.detach())?,
        )?;
        let d_value = scalar(&d_loss)?;
        if !d_value.is_finite() {
            return Err(self.non_finite(format!("discriminator loss {d_value}")));
        }
        let disc_snapshot = if adv {
            let snap = snapshot(model, GROUP_DISCRIMINATOR)?;
            self.disc_opt.step(&d_loss.backward()?, lr)?;
            Some(snap)
        } else {
            None
        };

        let weights = LossWeights {
            lambda_p: self.config.lambda_p,
            lambda_g: if adv { self.config.lambda_g } else { 0.0 },
        };
        let (g_total, mut breakdown) =
            total_generator_loss(&x_t, &recon, weights, &self.features, Some(&model.discriminator))?;
        breakdown.discriminator = d_value;
        if !breakdown.all_finite() {
            if let Some(snap) = disc_snapshot {
                restore(&snap)?;
            }
            return Err(self.non_finite(format!("{breakdown:?}")));
        }
        self.gen_opt.step(&g_total.backward()?, lr)?;

        let (stage, _) = self.config.stage_at(self.step);
        let record = StepRecord {
            step: self.step,
            stage,
            lr,
            height: t.h,
            width: t.w,
            l1: breakdown.l1,
            perceptual: breakdown.perceptual,
            adversarial_g: breakdown.adversarial_g,
            discriminator: breakdown.discriminator,
            total: breakdown.total,
        };
        self.last_breakdown = Some(breakdown);
        self.step += 1;
        Ok(record)
    }

    /// Updates only the discriminator against the current generator's
    /// reconstructions, returning the hinge loss before the update.
    pub fn discriminator_only_step(&mut self, model: &InfGen, pairs: &[TrainingPair]) -> Result<f64> {
        let (x_in, x_t, t) = Self::stack_pairs(model, pairs)?;
        let recon = self.reconstruct(model, &x_in, t)?.detach();
        let d_loss = discriminator_hinge(
            &model.discriminator.forward(&x_t)?,
            &model.discriminator.forward(&recon)?,
        )?;
        let value = scalar(&d_loss)?;
        if !value.is_finite() {
            return Err(self.non_finite(format!("discriminator loss {value}")));
        }
        self.disc_opt.step(&d_loss.backward()?, self.lr())?;
        self.step += 1;
        Ok(value)
    }

    fn non_finite(&self, what: String) -> Error {
        Error::NonFinite {
            step: self.step,
            what,
        }
    }

    /// Step counter and both optimizers' moments, keyed `gen.*` / `disc.*`.
    pub fn export_state(&self) -> Result<TrainerState> {
        let (gen_t, gen) = self.gen_opt.export_state()?;
        let (disc_t, disc) = self.disc_opt.export_state()?;
        let mut tensors = BTreeMap::new();
        for (k, v) in gen {
            tensors.insert(format!("gen.{k}"), v);
        }
        for (k, v) in disc {
            tensors.insert(format!("disc.{k}"), v);
        }
        Ok(TrainerState {
            step: self.step,
            gen_updates: gen_t,
            disc_updates: disc_t,
            tensors,
        })
    }

    pub fn import_state(&mut self, state: &TrainerState) -> Result<()> {
        let pick = |prefix: &str| -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
            state
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect()
        };
        self.gen_opt.import_state(state.gen_updates, &pick("gen."))?;
        self.disc_opt.import_state(state.disc_updates, &pick("disc."))?;
        self.step = state.step;
        Ok(())
    }
}

/// Resumable optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub step: u64,
    pub gen_updates: u64,
    pub disc_updates: u64,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

fn snapshot(model: &InfGen, group: &str) -> Result<Vec<(Var, Tensor)>> {
    model
        .store()
        .params_with_prefix(&format!("{group}."))
        .into_iter()
        .map(|(_, p)| {
            let copy = p.var.as_tensor().copy()?;
            Ok((p.var, copy))
        })
        .collect()
}

fn restore(snap: &[(Var, Tensor)]) -> Result<()> {
    for (var, t) in snap {
        var.set(t)?;
    }
    Ok(())
}
