//! Arbitrary-resolution image decoding from a fixed-size latent.
//!
//! A frozen convolutional encoder maps an image to a small latent map; a
//! cross-attention decoder turns that latent into an image of any requested
//! height and width in one forward pass. Larger sizes are reached by
//! re-encoding and decoding repeatedly.

pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod decoder;
pub mod error;
pub mod extrapolation;
pub mod image;
pub mod inpe;
pub mod latency;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod training;

pub use candle_core::{DType, Device, Tensor, Var};
pub use checkpoint::Checkpoint;
pub use codec::{GaussianLatent, LatentMap};
pub use config::{ModelConfig, RunConfig, StageConfig, TrainConfig, VaeConfig};
pub use decoder::{ArrDecoder, TargetResolution, TokenGrid};
pub use error::{Error, Result};
pub use extrapolation::{plan_schedule, run_extrapolation, ExtrapolationPlan, ScaleLimits};
pub use image::Image;
pub use inpe::{FourierConfig, GridCoord, NormalizedCoord, SpherePoint};
pub use metrics::{FeatureExtractor, FeatureStats, MetricReport};
pub use model::{InfGen, VaeModel};
pub use training::{LossBreakdown, StepRecord, Trainer, TrainingPair};
