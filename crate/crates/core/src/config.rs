//! Run configuration: a flat `key = value` text file.
//!
//! Unknown or duplicate keys are rejected, every value is type-checked and the
//! whole configuration is validated before use. Checkpoints embed a digest of
//! the architecture keys so weights are never loaded into a mismatched model.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inpe::CoordConvention;
use crate::training::losses::PatchGan;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub latent_channels: usize,
    pub fourier_m: usize,
    pub sigma_b: f64,
    pub half_pixel: bool,
    pub self_attention: bool,
    /// Width after the token projection, then after each of the three 2× stages.
    pub head_channels: Vec<usize>,
    /// Width of each of the three stride-2 encoder stages.
    pub encoder_channels: Vec<usize>,
    /// Fixed encoder input side `S_in`.
    pub input_size: usize,
    pub max_res: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            blocks: 4,
            heads: 4,
            mlp_ratio: 2,
            latent_channels: 4,
            fourier_m: 64,
            sigma_b: 10.0,
            half_pixel: false,
            self_attention: false,
            head_channels: vec![64, 64, 32, 16],
            encoder_channels: vec![16, 32, 64],
            input_size: 64,
            max_res: 512,
        }
    }
}

impl ModelConfig {
    pub fn coord_convention(&self) -> CoordConvention {
        if self.half_pixel {
            CoordConvention::HalfPixel
        } else {
            CoordConvention::PixelIndex
        }
    }

    /// Latent spatial side for the fixed encoder input.
    pub fn latent_side(&self) -> usize {
        self.input_size / 8
    }

    /// A very small model for gradient checks and fast tests.
    pub fn tiny() -> Self {
        Self {
            d_model: 16,
            blocks: 1,
            heads: 2,
            mlp_ratio: 2,
            latent_channels: 4,
            fourier_m: 4,
            sigma_b: 2.0,
            head_channels: vec![8, 8, 8, 4],
            encoder_channels: vec![4, 8, 8],
            input_size: 16,
            max_res: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.blocks == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return bad("d_model, blocks, heads and mlp_ratio must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return bad(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            ));
        }
        if self.latent_channels == 0 || self.fourier_m == 0 {
            return bad("latent_channels and fourier_m must be positive".into());
        }
        if !(self.sigma_b.is_finite() && self.sigma_b > 0.0) {
            return bad("sigma_b must be a positive finite number".into());
        }
        if self.head_channels.len() != 4 || self.head_channels.contains(&0) {
            return bad("head_channels needs four positive widths".into());
        }
        if self.encoder_channels.len() != 3 || self.encoder_channels.contains(&0) {
            return bad("encoder_channels needs three positive widths".into());
        }
        if self.input_size < 16 || self.input_size % 8 != 0 {
            return bad("input_size must be a multiple of 8 and at least 16".into());
        }
        if self.max_res < self.input_size {
            return bad("max_res must be at least input_size".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub min_side: usize,
    pub max_side: usize,
    pub steps: u64,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    pub lambda_p: f64,
    pub lambda_g: f64,
    pub adv_warmup: u64,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Sample `z` by reparameterization; when false the encoder mean is used.
    pub sample_latent: bool,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1: StageConfig {
                min_side: 64,
                max_side: 128,
                steps: 5000,
                batch: 4,
            },
            stage2: StageConfig {
                min_side: 64,
                max_side: 256,
                steps: 1000,
                batch: 1,
            },
            lambda_p: 0.1,
            lambda_g: 0.1,
            adv_warmup: 200,
            lr: 2e-4,
            lr_min: 1e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.99,
            sample_latent: true,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        self.stage1.steps + self.stage2.steps
    }

    pub fn stage_at(&self, step: u64) -> (usize, &StageConfig) {
        if step < self.stage1.steps {
            (1, &self.stage1)
        } else {
            (2, &self.stage2)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeConfig {
    pub beta: f64,
    pub lr: f64,
    pub steps: u64,
    pub batch: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            beta: 1e-4,
            lr: 1e-3,
            steps: 2000,
            batch: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vae: VaeConfig,
    pub extrapolation_cap: f64,
    pub patch_size: usize,
    pub data_dir: Option<PathBuf>,
    pub synthetic_images: usize,
    pub synthetic_size: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            vae: VaeConfig::default(),
            extrapolation_cap: 2.0,
            patch_size: 32,
            data_dir: None,
            synthetic_images: 64,
            synthetic_size: 256,
            out_dir: PathBuf::from("."),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

/// Keys whose values change the shape or meaning of stored weights.
const ARCHITECTURE_KEYS: &[&str] = &[
    "d_model",
    "blocks",
    "heads",
    "mlp_ratio",
    "latent_channels",
    "fourier_m",
    "sigma_b",
    "half_pixel",
    "self_attention",
    "head_channels",
    "encoder_channels",
    "input_size",
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "d_model" => m.d_model = parse_num(key, v)?,
            "blocks" => m.blocks = parse_num(key, v)?,
            "heads" => m.heads = parse_num(key, v)?,
            "mlp_ratio" => m.mlp_ratio = parse_num(key, v)?,
            "latent_channels" => m.latent_channels = parse_num(key, v)?,
            "fourier_m" => m.fourier_m = parse_num(key, v)?,
            "sigma_b" => m.sigma_b = parse_num(key, v)?,
            "half_pixel" => m.half_pixel = parse_bool(key, v)?,
            "self_attention" => m.self_attention = parse_bool(key, v)?,
            "head_channels" => m.head_channels = parse_list(key, v)?,
            "encoder_channels" => m.encoder_channels = parse_list(key, v)?,
            "input_size" => m.input_size = parse_num(key, v)?,
            "max_res" => m.max_res = parse_num(key, v)?,
            "stage1_min" => t.stage1.min_side = parse_num(key, v)?,
            "stage1_max" => t.stage1.max_side = parse_num(key, v)?,
            "stage1_steps" => t.stage1.steps = parse_num(key, v)?,
            "stage1_batch" => t.stage1.batch = parse_num(key, v)?,
            "stage2_min" => t.stage2.min_side = parse_num(key, v)?,
            "stage2_max" => t.stage2.max_side = parse_num(key, v)?,
            "stage2_steps" => t.stage2.steps = parse_num(key, v)?,
            "stage2_batch" => t.stage2.batch = parse_num(key, v)?,
            "lambda_p" => t.lambda_p = parse_num(key, v)?,
            "lambda_g" => t.lambda_g = parse_num(key, v)?,
            "adv_warmup" => t.adv_warmup = parse_num(key, v)?,
            "lr" => t.lr = parse_num(key, v)?,
            "lr_min" => t.lr_min = parse_num(key, v)?,
            "weight_decay" => t.weight_decay = parse_num(key, v)?,
            "beta1" => t.beta1 = parse_num(key, v)?,
            "beta2" => t.beta2 = parse_num(key, v)?,
            "sample_latent" => t.sample_latent = parse_bool(key, v)?,
            "log_every" => t.log_every = parse_num(key, v)?,
            "vae_beta" => self.vae.beta = parse_num(key, v)?,
            "vae_lr" => self.vae.lr = parse_num(key, v)?,
            "vae_steps" => self.vae.steps = parse_num(key, v)?,
            "vae_batch" => self.vae.batch = parse_num(key, v)?,
            "extrapolation_cap" => self.extrapolation_cap = parse_num(key, v)?,
            "patch_size" => self.patch_size = parse_num(key, v)?,
            "data_dir" => {
                self.data_dir = if v.is_empty() { None } else { Some(PathBuf::from(v)) }
            }
            "synthetic_images" => self.synthetic_images = parse_num(key, v)?,
            "synthetic_size" => self.synthetic_size = parse_num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.train;
        vec![
            ("seed", self.seed.to_string()),
            ("d_model", m.d_model.to_string()),
            ("blocks", m.blocks.to_string()),
            ("heads", m.heads.to_string()),
            ("mlp_ratio", m.mlp_ratio.to_string()),
            ("latent_channels", m.latent_channels.to_string()),
            ("fourier_m", m.fourier_m.to_string()),
            ("sigma_b", m.sigma_b.to_string()),
            ("half_pixel", m.half_pixel.to_string()),
            ("self_attention", m.self_attention.to_string()),
            ("head_channels", join(&m.head_channels)),
            ("encoder_channels", join(&m.encoder_channels)),
            ("input_size", m.input_size.to_string()),
            ("max_res", m.max_res.to_string()),
            ("stage1_min", t.stage1.min_side.to_string()),
            ("stage1_max", t.stage1.max_side.to_string()),
            ("stage1_steps", t.stage1.steps.to_string()),
            ("stage1_batch", t.stage1.batch.to_string()),
            ("stage2_min", t.stage2.min_side.to_string()),
            ("stage2_max", t.stage2.max_side.to_string()),
            ("stage2_steps", t.stage2.steps.to_string()),
            ("stage2_batch", t.stage2.batch.to_string()),
            ("lambda_p", t.lambda_p.to_string()),
            ("lambda_g", t.lambda_g.to_string()),
            ("adv_warmup", t.adv_warmup.to_string()),
            ("lr", t.lr.to_string()),
            ("lr_min", t.lr_min.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("beta1", t.beta1.to_string()),
            ("beta2", t.beta2.to_string()),
            ("sample_latent", t.sample_latent.to_string()),
            ("log_every", t.log_every.to_string()),
            ("vae_beta", self.vae.beta.to_string()),
            ("vae_lr", self.vae.lr.to_string()),
            ("vae_steps", self.vae.steps.to_string()),
            ("vae_batch", self.vae.batch.to_string()),
            ("extrapolation_cap", self.extrapolation_cap.to_string()),
            ("patch_size", self.patch_size.to_string()),
            (
                "data_dir",
                self.data_dir
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("synthetic_images", self.synthetic_images.to_string()),
            ("synthetic_size", self.synthetic_size.to_string()),
            ("out_dir", self.out_dir.display().to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 over the canonical architecture keys.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if ARCHITECTURE_KEYS.contains(&k) {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(self.digest())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        for (name, s) in [("stage1", &t.stage1), ("stage2", &t.stage2)] {
            if s.min_side < 8 || s.min_side > s.max_side || s.max_side > self.model.max_res {
                return Err(Error::Config(format!(
                    "{name}: need 8 <= min ({}) <= max ({}) <= max_res ({})",
                    s.min_side, s.max_side, self.model.max_res
                )));
            }
            if s.batch == 0 {
                return Err(Error::Config(format!("{name}: batch must be positive")));
            }
        }
        if t.lambda_p < 0.0 || t.lambda_g < 0.0 {
            return bad("loss weights must be non-negative");
        }
        let min_side = t.stage1.min_side.min(t.stage2.min_side);
        if t.lambda_g > 0.0 && min_side < PatchGan::MIN_INPUT {
            return Err(Error::Config(format!(
                "lambda_g > 0 needs training crops of at least {} pixels (got {min_side})",
                PatchGan::MIN_INPUT
            )));
        }
        if !(t.lr > 0.0 && t.lr_min >= 0.0 && t.lr_min <= t.lr) {
            return bad("need 0 <= lr_min <= lr and lr > 0");
        }
        if !(0.0..1.0).contains(&t.beta1) || !(0.0..1.0).contains(&t.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if t.weight_decay < 0.0 || t.log_every == 0 {
            return bad("weight_decay must be >= 0 and log_every > 0");
        }
        if self.vae.beta < 0.0 || self.vae.lr <= 0.0 || self.vae.batch == 0 {
            return bad("vae_beta >= 0, vae_lr > 0 and vae_batch > 0 required");
        }
        if self.extrapolation_cap <= 1.0 {
            return bad("extrapolation_cap must exceed 1");
        }
        if self.patch_size < 11 {
            return bad("patch_size must be at least 11 (SSIM window)");
        }
        if self.synthetic_size < t.stage2.max_side.max(t.stage1.max_side)
            && self.data_dir.is_none()
        {
            return bad("synthetic_size must cover the largest training crop");
        }
        Ok(())
    }
}
