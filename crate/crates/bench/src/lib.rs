//! Shared fixtures for the criterion benches.

use infgen_core::config::ModelConfig;
use infgen_core::model::InfGen;
use infgen_core::{DType, LatentMap, Result};

/// Square output sides timed by the decode benches.
pub const DECODE_SIDES: [usize; 4] = [64, 128, 192, 256];

/// Freshly initialized desk-size model and a seeded latent of its native size.
pub fn desk_fixture(seed: u64) -> Result<(InfGen, LatentMap)> {
    let cfg = ModelConfig::default();
    let model = InfGen::new(&cfg, seed, DType::F32)?;
    let side = cfg.latent_side();
    let z = LatentMap::random(1, cfg.latent_channels, side, side, seed ^ 0x5eed, DType::F32)?;
    Ok((model, z))
}
