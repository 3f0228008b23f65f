//! Reconstruction metrics and Fréchet feature distances over image patches.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use candle_core::{DType, Device, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, shape_err, Error, Result};
use crate::image::Image;
use crate::training::losses::FeaturePyramid;

/// Returned by [`psnr`] when the images are (numerically) identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_dims(x: &Image, y: &Image) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(shape_err!("images differ in size: {:?} vs {:?}", x.dims(), y.dims()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio with pixels mapped to `[0, 1]`, over all channels.
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    same_dims(x, y)?;
    let n = x.pixels().len() as f64;
    let mse = x
        .pixels()
        .iter()
        .zip(y.pixels())
        .map(|(a, b)| {
            let d = (*a as f64 - *b as f64) / 2.0;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(-10.0 * mse.log10())
}

fn gaussian_kernel() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a row-major `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM on the grayscale (channel mean) image in `[0, 1]`, with an
/// 11×11 Gaussian window (σ = 1.5) evaluated where it fits entirely.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    same_dims(x, y)?;
    let (h, w) = x.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"));
    }
    let k = gaussian_kernel();
    let gx = x.gray01();
    let gy = y.gray01();
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p * q).collect() };
    let mx = filter_valid(&gx, h, w, &k);
    let my = filter_valid(&gy, h, w, &k);
    let mxx = filter_valid(&prod(&gx, &gx), h, w, &k);
    let myy = filter_valid(&prod(&gy, &gy), h, w, &k);
    let mxy = filter_valid(&prod(&gx, &gy), h, w, &k);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Non-overlapping `patch × patch` tiles anchored at the top-left corner,
/// row-major.
pub fn crop_patches(x: &Image, patch: usize) -> Result<Vec<Image>> {
    let (h, w) = x.dims();
    if patch == 0 || h < patch || w < patch {
        return Err(invalid!("image {h}x{w} is smaller than patch {patch}"));
    }
    let mut out = Vec::with_capacity((h / patch) * (w / patch));
    for i in 0..h / patch {
        for j in 0..w / patch {
            out.push(x.crop(i * patch, j * patch, patch, patch)?);
        }
    }
    Ok(out)
}

/// Gaussian summary of a feature set: mean, unbiased covariance, count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl FeatureStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(shape_err!("covariance {}x{} for mean of length {d}", cov.nrows(), cov.ncols()));
        }
        if n < 2 {
            return Err(invalid!("feature statistics need at least 2 samples, got {n}"));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-9 * scale {
            return Err(invalid!("covariance is not symmetric"));
        }
        Ok(Self { mean, cov, n })
    }

    /// Statistics of the rows of `samples`.
    pub fn from_rows(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(invalid!("feature statistics need at least 2 samples, got {n}"));
        }
        let d = samples[0].len();
        if samples.iter().any(|r| r.len() != d) {
            return Err(shape_err!("feature rows have differing lengths"));
        }
        let x = DMatrix::from_fn(n, d, |i, j| samples[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
        cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean, cov, n)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Pooled statistics of the union of both sample sets.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(shape_err!("merging stats of dims {} and {}", self.dim(), other.dim()));
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        let mean = &self.mean + &delta * (nb / n);
        let scatter = &self.cov * (na - 1.0)
            + &other.cov * (nb - 1.0)
            + &delta * delta.transpose() * (na * nb / n);
        let mut cov = scatter / (n - 1.0);
        cov = (&cov + cov.transpose()) * 0.5;
        Self::new(mean, cov, self.n + other.n)
    }
}

/// Symmetric PSD square root. Eigenvalues slightly below zero (numerical
/// noise) are clamped; clearly negative ones are an error.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let tol = 1e-6 * eig.eigenvalues.amax().max(1.0);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if !v.is_finite() || *v < -tol {
            return Err(Error::MatrixSqrt(format!("eigenvalue {v} is not positive semi-definite")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`.
///
/// The trace of `(Σ_a Σ_b)^{1/2}` equals that of the symmetric
/// `(Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2}`, which is what is computed.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(shape_err!("feature dims differ: {} vs {}", a.dim(), b.dim()));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let sa = psd_sqrt(&a.cov)?;
    let inner = &sa * &b.cov * &sa;
    let tr_sqrt = psd_sqrt(&inner)?.trace();
    let d = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(Error::MatrixSqrt(format!("non-finite distance {d}")));
    }
    Ok(d.max(0.0))
}

/// Maps images to feature vectors for distribution distances.
pub trait FeatureExtractor {
    /// Short metric name used in reports.
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    /// One or more feature rows per image.
    fn extract(&self, images: &[Image]) -> Result<Vec<Vec<f64>>>;
}

const EXTRACT_CHUNK: usize = 64;

fn run_pyramid(
    images: &[Image],
    f: impl Fn(&Tensor) -> Result<Tensor>,
) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<&Image>> = BTreeMap::new();
    for im in images {
        groups.entry(im.dims()).or_default().push(im);
    }
    for ims in groups.values() {
        for chunk in ims.chunks(EXTRACT_CHUNK) {
            let owned: Vec<Image> = chunk.iter().map(|&i| i.clone()).collect();
            let x = Image::stack(&owned, &Device::Cpu, DType::F32)?;
            let feats = f(&x)?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
            rows.extend(feats);
        }
    }
    Ok(rows)
}

/// Global-average-pooled pyramid features, one row per image ("rFD").
#[derive(Debug, Clone)]
pub struct PooledFeatures {
    net: FeaturePyramid,
}

impl PooledFeatures {
    pub fn new() -> Result<Self> {
        Ok(Self {
            net: FeaturePyramid::standard(DType::F32)?,
        })
    }
}

impl FeatureExtractor for PooledFeatures {
    fn name(&self) -> &str {
        "rfd"
    }

    fn dim(&self) -> usize {
        crate::training::losses::FEATURE_CHANNELS[2]
    }

    fn extract(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        run_pyramid(images, |x| self.net.pooled_features(x))
    }
}

/// Pre-pool spatial pyramid features, one row per final-stage position
/// ("rsFD", a spatial-feature approximation of sFID).
#[derive(Debug, Clone)]
pub struct SpatialFeatures {
    net: FeaturePyramid,
}

impl SpatialFeatures {
    pub fn new() -> Result<Self> {
        Ok(Self {
            net: FeaturePyramid::standard(DType::F32)?,
        })
    }
}

impl FeatureExtractor for SpatialFeatures {
    fn name(&self) -> &str {
        "rsfd"
    }

    fn dim(&self) -> usize {
        crate::training::losses::FEATURE_CHANNELS[2]
    }

    fn extract(&self, images: &[Image]) -> Result<Vec<Vec<f64>>> {
        run_pyramid(images, |x| self.net.spatial_features(x))
    }
}

pub fn feature_stats(images: &[Image], extractor: &dyn FeatureExtractor) -> Result<FeatureStats> {
    FeatureStats::from_rows(&extractor.extract(images)?)
}

/// Crops every image into patches, then compares the two patch sets'
/// feature distributions.
pub fn patch_frechet(
    a: &[Image],
    b: &[Image],
    patch: usize,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    let crop_all = |set: &[Image]| -> Result<Vec<Image>> {
        let mut out = Vec::new();
        for im in set {
            out.extend(crop_patches(im, patch)?);
        }
        Ok(out)
    };
    let sa = feature_stats(&crop_all(a)?, extractor)?;
    let sb = feature_stats(&crop_all(b)?, extractor)?;
    frechet_distance(&sa, &sb)
}

/// Metrics of a generated set against its references, paired by position.
pub fn evaluate_pairs(reference: &[Image], generated: &[Image], patch: usize) -> Result<BTreeMap<String, f64>> {
    if reference.len() != generated.len() || reference.is_empty() {
        return Err(invalid!(
            "need equally many reference and generated images, got {} and {}",
            reference.len(),
            generated.len()
        ));
    }
    let n = reference.len() as f64;
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for (r, g) in reference.iter().zip(generated) {
        psnr_sum += psnr(r, g)?;
        ssim_sum += ssim(r, g)?;
    }
    let mut out = BTreeMap::new();
    out.insert("psnr".to_string(), psnr_sum / n);
    out.insert("ssim".to_string(), ssim_sum / n);
    let pooled = PooledFeatures::new()?;
    let spatial = SpatialFeatures::new()?;
    out.insert(format!("{}_patch", pooled.name()), patch_frechet(reference, generated, patch, &pooled)?);
    out.insert(format!("{}_patch", spatial.name()), patch_frechet(reference, generated, patch, &spatial)?);
    Ok(out)
}

/// A flat `key=value` report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub run_id: String,
    pub config_digest: String,
    pub metrics: BTreeMap<String, f64>,
    pub extra: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run_id={}", self.run_id);
        let _ = writeln!(s, "config_digest={}", self.config_digest);
        for (k, v) in &self.extra {
            let _ = writeln!(s, "{k}={v}");
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "{k}={v:.6}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> Image {
        Image::from_fn(h, w, |y, x| [f(y, x); 3]).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let x = gray(16, 16, |y, x| ((y * 16 + x) as f32 / 256.0) - 0.5);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
        let zeros = gray(8, 8, |_, _| -1.0);
        let ones = gray(8, 8, |_, _| 1.0);
        assert!(psnr(&zeros, &ones).unwrap().abs() < 1e-12);
        // A [0,1] offset of 0.1 everywhere is MSE 0.01.
        let a = gray(8, 8, |_, _| 0.0);
        let b = gray(8, 8, |_, _| 0.2);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert!(psnr(&a, &gray(8, 9, |_, _| 0.0)).is_err());
    }

    #[test]
    fn ssim_cases() {
        let x = gray(24, 24, |y, x| ((y as f32 * 0.7 + x as f32 * 1.3).sin()) * 0.8);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let checker = gray(32, 32, |y, x| if (x + y) % 2 == 0 { 0.9 } else { -0.9 });
        let neg = checker.map(|v| -v).unwrap();
        assert!(ssim(&checker, &neg).unwrap() < -0.95);
        assert!(ssim(&gray(10, 20, |_, _| 0.0), &gray(10, 20, |_, _| 0.0)).is_err());
    }

    #[test]
    fn ssim_of_constants_matches_closed_form() {
        let (a, b) = (-0.2f32, 0.8f32);
        let x = gray(16, 16, |_, _| a);
        let y = gray(16, 16, |_, _| b);
        let (ua, ub) = ((a as f64 + 1.0) / 2.0, (b as f64 + 1.0) / 2.0);
        let want = (2.0 * ua * ub + SSIM_C1) / (ua * ua + ub * ub + SSIM_C1);
        assert!((ssim(&x, &y).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn patches() {
        let x = Image::filled(458, 458, [0.0; 3]).unwrap();
        assert_eq!(crop_patches(&x, 229).unwrap().len(), 4);
        let x = Image::filled(229, 229, [0.0; 3]).unwrap();
        assert_eq!(crop_patches(&x, 229).unwrap().len(), 1);
        let x = Image::filled(200, 300, [0.0; 3]).unwrap();
        assert!(crop_patches(&x, 229).is_err());
        let x = gray(70, 100, |y, x| ((y * 100 + x) as f32 / 7000.0) * 2.0 - 1.0);
        let p = crop_patches(&x, 32).unwrap();
        assert_eq!(p.len(), 2 * 3);
        assert_eq!(p[4].get(0, 0, 0), x.get(32, 32, 0));
    }

    fn stats_1d(mean: f64, var: f64) -> FeatureStats {
        FeatureStats::new(DVector::from_element(1, mean), DMatrix::from_element(1, 1, var), 10).unwrap()
    }

    #[test]
    fn frechet_closed_forms() {
        let a = stats_1d(0.0, 2.0);
        assert!(frechet_distance(&a, &a).unwrap().abs() < 1e-12);
        assert!((frechet_distance(&a, &stats_1d(1.0, 2.0)).unwrap() - 1.0).abs() < 1e-12);
        let i = FeatureStats::new(DVector::zeros(2), DMatrix::identity(2, 2), 5).unwrap();
        let four = FeatureStats::new(DVector::zeros(2), DMatrix::identity(2, 2) * 4.0, 5).unwrap();
        assert!((frechet_distance(&i, &four).unwrap() - 2.0).abs() < 1e-10);
        let three = FeatureStats::new(DVector::zeros(3), DMatrix::identity(3, 3), 5).unwrap();
        assert!(frechet_distance(&i, &three).is_err());
        let bad = FeatureStats::new(DVector::zeros(2), DMatrix::from_diagonal_element(2, 2, -1.0), 5).unwrap();
        assert!(matches!(frechet_distance(&bad, &i), Err(Error::MatrixSqrt(_))));
    }

    fn rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect()
    }

    proptest! {
        #[test]
        fn merge_matches_pooled_and_is_order_independent(seed in any::<u64>(), na in 2usize..20, nb in 2usize..20) {
            let all = rows(seed, na + nb, 3);
            let a = FeatureStats::from_rows(&all[..na]).unwrap();
            let b = FeatureStats::from_rows(&all[na..]).unwrap();
            let pooled = FeatureStats::from_rows(&all).unwrap();
            let ab = a.merge(&b).unwrap();
            let ba = b.merge(&a).unwrap();
            prop_assert!((&ab.mean - &pooled.mean).amax() < 1e-9);
            prop_assert!((&ab.cov - &pooled.cov).amax() < 1e-9);
            prop_assert!((&ab.cov - &ba.cov).amax() < 1e-9);
            prop_assert!((&ab.mean - &ba.mean).amax() < 1e-9);
        }

        #[test]
        fn frechet_symmetric_and_zero_on_self(seed in any::<u64>()) {
            let a = FeatureStats::from_rows(&rows(seed, 12, 4)).unwrap();
            let b = FeatureStats::from_rows(&rows(seed ^ 1, 9, 4)).unwrap();
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-6);
            prop_assert!(frechet_distance(&a, &a).unwrap() < 1e-6);
        }

        #[test]
        fn psnr_and_ssim_symmetric(seed in any::<u64>()) {
            let x = crate::training::synthetic_image(seed, 16, 20).unwrap();
            let y = crate::training::synthetic_image(seed ^ 7, 16, 20).unwrap();
            prop_assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
            prop_assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-9);
            let s = ssim(&x, &y).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn report_format() {
        let mut metrics = BTreeMap::new();
        metrics.insert("psnr".to_string(), 31.5);
        let r = MetricReport {
            run_id: "r1".into(),
            config_digest: "abc".into(),
            metrics,
            extra: BTreeMap::new(),
        };
        assert_eq!(r.to_text(), "run_id=r1\nconfig_digest=abc\npsnr=31.500000\n");
    }
}
