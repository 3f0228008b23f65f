//! Training data: image sources and the random crop / resize protocol.
//!
//! Each pair takes a random crop of the source. The crop itself is the
//! decoder's target; a bilinear resize of it to `S_in × S_in` is the encoder
//! input.

use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::StageConfig;
use crate::decoder::TargetResolution;
use crate::error::{invalid, Error, Result};
use crate::image::Image;

#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub input_image: Image,
    pub target_image: Image,
    pub target_resolution: TargetResolution,
}

/// Draws `(t_h, t_w)` independently uniform in `[min_side, min(max_side, bound)]`.
fn draw_dims(
    rng: &mut ChaCha8Rng,
    stage: &StageConfig,
    bound_h: usize,
    bound_w: usize,
) -> Result<(usize, usize)> {
    if bound_h < stage.min_side || bound_w < stage.min_side {
        return Err(invalid!(
            "source {bound_h}x{bound_w} is smaller than the stage minimum {}",
            stage.min_side
        ));
    }
    let th = rng.gen_range(stage.min_side..=stage.max_side.min(bound_h));
    let tw = rng.gen_range(stage.min_side..=stage.max_side.min(bound_w));
    Ok((th, tw))
}

fn crop_pair(
    rng: &mut ChaCha8Rng,
    source: &Image,
    th: usize,
    tw: usize,
    input_size: usize,
) -> Result<TrainingPair> {
    let top = rng.gen_range(0..=source.height() - th);
    let left = rng.gen_range(0..=source.width() - tw);
    let target_image = source.crop(top, left, th, tw)?;
    let input_image = target_image.resize(input_size, input_size)?;
    Ok(TrainingPair {
        input_image,
        target_image,
        target_resolution: TargetResolution::new(th, tw)?,
    })
}

pub fn sample_training_pair(
    source: &Image,
    stage: &StageConfig,
    input_size: usize,
    seed: u64,
) -> Result<TrainingPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (th, tw) = draw_dims(&mut rng, stage, source.height(), source.width())?;
    crop_pair(&mut rng, source, th, tw, input_size)
}

/// A batch of pairs sharing one target resolution, sources drawn with replacement.
pub fn sample_training_batch(
    sources: &[Image],
    stage: &StageConfig,
    batch: usize,
    input_size: usize,
    seed: u64,
) -> Result<Vec<TrainingPair>> {
    if sources.is_empty() {
        return Err(invalid!("no training images"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..sources.len())).collect();
    let bound_h = picks.iter().map(|&i| sources[i].height()).min().unwrap_or(0);
    let bound_w = picks.iter().map(|&i| sources[i].width()).min().unwrap_or(0);
    let (th, tw) = draw_dims(&mut rng, stage, bound_h, bound_w)?;
    picks
        .into_iter()
        .map(|i| crop_pair(&mut rng, &sources[i], th, tw, input_size))
        .collect()
}

/// Smooth procedural image: a few random plane waves and Gaussian blobs per
/// channel, squashed into `[-1, 1]`. Defined in normalized coordinates, so
/// the same seed renders the same content at any size.
pub fn synthetic_image(seed: u64, height: usize, width: usize) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    struct Wave {
        fx: f32,
        fy: f32,
        phase: f32,
        amp: f32,
    }
    struct Blob {
        cx: f32,
        cy: f32,
        r2: f32,
        amp: f32,
    }
    let mut channels = Vec::with_capacity(3);
    for _ in 0..3 {
        let base: f32 = rng.gen_range(-0.5..0.5);
        let waves: Vec<Wave> = (0..3)
            .map(|_| Wave {
                fx: rng.gen_range(-4.0..4.0),
                fy: rng.gen_range(-4.0..4.0),
                phase: rng.gen_range(0.0..2.0 * PI),
                amp: rng.gen_range(0.1..0.5),
            })
            .collect();
        let blobs: Vec<Blob> = (0..2)
            .map(|_| Blob {
                cx: rng.gen_range(0.0..1.0),
                cy: rng.gen_range(0.0..1.0),
                r2: rng.gen_range(0.005..0.05),
                amp: rng.gen_range(-1.0..1.0),
            })
            .collect();
        channels.push((base, waves, blobs));
    }
    Image::from_fn(height, width, |y, x| {
        let u = (x as f32 + 0.5) / width as f32;
        let v = (y as f32 + 0.5) / height as f32;
        let mut rgb = [0.0f32; 3];
        for (c, (base, waves, blobs)) in channels.iter().enumerate() {
            let mut s = *base;
            for w in waves {
                s += w.amp * (2.0 * PI * (w.fx * u + w.fy * v) + w.phase).sin();
            }
            for b in blobs {
                let d2 = (u - b.cx).powi(2) + (v - b.cy).powi(2);
                s += b.amp * (-d2 / b.r2).exp();
            }
            rgb[c] = s.tanh();
        }
        rgb
    })
}

pub fn synthetic_dataset(count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<Image>> {
    (0..count as u64)
        .map(|i| synthetic_image(seed.wrapping_mul(0x9e37_79b9).wrapping_add(i), height, width))
        .collect()
}

/// Loads every `.png` in a directory, sorted by file name.
pub fn load_png_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, Image)>> {
    let dir = dir.as_ref();
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|s| s.to_str())
                .is_some_and(|s| s.eq_ignore_ascii_case("png"))
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let name = p
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            Ok((name, Image::load_png(&p)?))
        })
        .collect()
}
