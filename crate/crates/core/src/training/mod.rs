//! Decoder training: data sampling, objectives and the optimization loop.

pub mod data;
pub mod losses;
pub mod trainer;

pub use data::{sample_training_batch, sample_training_pair, synthetic_dataset, synthetic_image, TrainingPair};
pub use losses::{
    adversarial_losses, total_generator_loss, FeaturePyramid, LossBreakdown, LossWeights, PatchGan,
};
pub use trainer::{StepRecord, Trainer, TrainerState};
