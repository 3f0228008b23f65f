//! RGB raster type used at every pixel-space boundary of the pipeline.
//!
//! Pixels are stored row-major, channel-interleaved (`H×W×3`) as `f32` in
//! `[-1, 1]`. 8-bit PNG files map linearly onto that range.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{imageops, ImageBuffer, Rgb, RgbImage};

use crate::error::{invalid, shape_err, Error, Result};

/// Smallest height/width an [`Image`] may have.
pub const MIN_SIDE: usize = 8;

const RANGE_TOL: f32 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(invalid!(
                "image must be at least {MIN_SIDE}x{MIN_SIDE}, got {height}x{width}"
            ));
        }
        if pixels.len() != height * width * 3 {
            return Err(shape_err!(
                "expected {} pixel values for {height}x{width}x3, got {}",
                height * width * 3,
                pixels.len()
            ));
        }
        if let Some(v) = pixels
            .iter()
            .find(|v| !v.is_finite() || v.abs() > 1.0 + RANGE_TOL)
        {
            return Err(invalid!("pixel value {v} outside [-1, 1]"));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let pixels = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, pixels)
    }

    /// Builds an image from a per-pixel function of `(row, col)`; results are clamped.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend(f(y, x).map(|v| v.clamp(-1.0, 1.0)));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    /// Channel-mean luminance in `[0, 1]`, row-major.
    pub fn gray01(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / 3.0 + 1.0) * 0.5)
            .collect()
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(invalid!(
                "crop {height}x{width}@({top},{left}) exceeds {}x{}",
                self.height,
                self.width
            ));
        }
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let row = (y * self.width + left) * 3;
            pixels.extend_from_slice(&self.pixels[row..row + width * 3]);
        }
        Self::new(height, width, pixels)
    }

    /// Bilinear (triangle filter) resize.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let buf: ImageBuffer<Rgb<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .ok_or_else(|| shape_err!("pixel buffer does not match dims"))?;
        let out = imageops::resize(
            &buf,
            width as u32,
            height as u32,
            imageops::FilterType::Triangle,
        );
        let pixels = out.into_raw().into_iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Self::new(height, width, pixels)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        let pixels = self.pixels.iter().map(|&v| f(v).clamp(-1.0, 1.0)).collect();
        Self::new(self.height, self.width, pixels)
    }

    /// `(3, H, W)` tensor.
    pub fn to_tensor(&self, device: &Device, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(&self.pixels, (self.height, self.width, 3), device)?
            .permute((2, 0, 1))?
            .contiguous()?
            .to_dtype(dtype)?;
        Ok(t)
    }

    /// Accepts `(3, H, W)` or `(1, 3, H, W)`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            3 => t.clone(),
            _ => return Err(shape_err!("expected (3,H,W) image tensor, got {:?}", t.dims())),
        };
        let (c, h, w) = t.dims3()?;
        if c != 3 {
            return Err(shape_err!("expected 3 channels, got {c}"));
        }
        let pixels = t
            .to_dtype(DType::F32)?
            .permute((1, 2, 0))?
            .flatten_all()?
            .to_vec1::<f32>()?;
        Self::new(h, w, pixels)
    }

    /// Splits a `(B, 3, H, W)` tensor into images.
    pub fn batch_from_tensor(t: &Tensor) -> Result<Vec<Self>> {
        let b = t.dim(0)?;
        (0..b).map(|i| Self::from_tensor(&t.get(i)?)).collect()
    }

    /// Stacks same-sized images into a `(B, 3, H, W)` tensor.
    pub fn stack(images: &[Image], device: &Device, dtype: DType) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| invalid!("cannot stack an empty image batch"))?;
        if let Some(bad) = images.iter().find(|im| im.dims() != first.dims()) {
            return Err(shape_err!(
                "batch mixes {:?} and {:?}",
                first.dims(),
                bad.dims()
            ));
        }
        let ts = images
            .iter()
            .map(|im| im.to_tensor(device, dtype))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&ts, 0)?)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .pixels
            .iter()
            .map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length checked at construction")
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let pixels = img.as_raw().iter().map(|&v| v as f32 / 127.5 - 1.0).collect();
        Self::new(img.height() as usize, img.width() as usize, pixels)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
            ));
        }
        let img = image::open(path)?.to_rgb8();
        Self::from_rgb8(&img)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}
