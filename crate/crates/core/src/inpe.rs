//! Implicit neural positional embedding.
//!
//! A token at integer position `(x, y)` of a `grid_w × grid_h` grid is
//! normalized to `[0, 1)²`, lifted onto the unit sphere, expanded into random
//! Fourier features and passed through a small MLP. The embedding depends
//! only on the normalized position, so grids of any size share one
//! coordinate system.

use std::f64::consts::PI;

use candle_core::{DType, Module, Tensor};
use candle_nn::Linear;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape_err, Result};
use crate::layers::linear_normal;
use crate::params::{Init, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridCoord {
    pub x: usize,
    pub y: usize,
    pub grid_w: usize,
    pub grid_h: usize,
}

impl GridCoord {
    pub fn new(x: usize, y: usize, grid_w: usize, grid_h: usize) -> Result<Self> {
        let c = Self {
            x,
            y,
            grid_w,
            grid_h,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if self.grid_w == 0 || self.grid_h == 0 {
            return Err(invalid!(
                "degenerate grid {}x{}",
                self.grid_w,
                self.grid_h
            ));
        }
        if self.x >= self.grid_w || self.y >= self.grid_h {
            return Err(invalid!(
                "coordinate ({}, {}) outside {}x{} grid",
                self.x,
                self.y,
                self.grid_w,
                self.grid_h
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedCoord {
    pub x_hat: f64,
    pub y_hat: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SpherePoint {
    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Where inside a cell a token's coordinate is taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CoordConvention {
    /// `x / W`: the cell's top-left corner.
    #[default]
    PixelIndex,
    /// `(x + 0.5) / W`: the cell center.
    HalfPixel,
}

pub fn standardize_coords(c: &GridCoord) -> Result<NormalizedCoord> {
    standardize_coords_with(c, CoordConvention::PixelIndex)
}

pub fn standardize_coords_with(
    c: &GridCoord,
    convention: CoordConvention,
) -> Result<NormalizedCoord> {
    c.validate()?;
    let offset = match convention {
        CoordConvention::PixelIndex => 0.0,
        CoordConvention::HalfPixel => 0.5,
    };
    Ok(NormalizedCoord {
        x_hat: (c.x as f64 + offset) / c.grid_w as f64,
        y_hat: (c.y as f64 + offset) / c.grid_h as f64,
    })
}

/// Longitude `2πx̂`, latitude `πŷ`. Every `ŷ = 0.5` lands on the pole `(0, 0, 1)`.
pub fn sphere_map(n: NormalizedCoord) -> SpherePoint {
    let lat = PI * n.y_hat;
    let lon = 2.0 * PI * n.x_hat;
    SpherePoint {
        x: lat.cos() * lon.cos(),
        y: lat.cos() * lon.sin(),
        z: lat.sin(),
    }
}

/// The frozen random frequency matrix `B` (`m × 3`).
#[derive(Debug, Clone, PartialEq)]
pub struct FourierConfig {
    pub b_matrix: DMatrix<f64>,
    pub sigma_b: f64,
}

impl FourierConfig {
    pub fn new(b_matrix: DMatrix<f64>, sigma_b: f64) -> Result<Self> {
        if b_matrix.nrows() == 0 || b_matrix.ncols() != 3 {
            return Err(shape_err!(
                "frequency matrix must be m x 3 with m >= 1, got {}x{}",
                b_matrix.nrows(),
                b_matrix.ncols()
            ));
        }
        Ok(Self { b_matrix, sigma_b })
    }

    /// Entries i.i.d. `N(0, sigma_b²)`.
    pub fn sample(m: usize, sigma_b: f64, seed: u64) -> Result<Self> {
        let dist = Normal::new(0.0, sigma_b).map_err(|e| invalid!("sigma_b: {e}"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = DMatrix::from_fn(m, 3, |_, _| dist.sample(&mut rng));
        Self::new(b, sigma_b)
    }

    pub fn m(&self) -> usize {
        self.b_matrix.nrows()
    }
}

/// `[cos(B·p), sin(B·p)]`, length `2m`.
pub fn fourier_features(p: &SpherePoint, f: &FourierConfig) -> Result<Vec<f64>> {
    if f.b_matrix.ncols() != 3 {
        return Err(shape_err!(
            "frequency matrix has {} columns, sphere points have 3",
            f.b_matrix.ncols()
        ));
    }
    let m = f.m();
    let proj: Vec<f64> = (0..m)
        .map(|i| {
            let row = f.b_matrix.row(i);
            row[0] * p.x + row[1] * p.y + row[2] * p.z
        })
        .collect();
    let mut out = Vec::with_capacity(2 * m);
    out.extend(proj.iter().map(|v| v.cos()));
    out.extend(proj.iter().map(|v| v.sin()));
    Ok(out)
}

/// Sphere points of every token of a grid, row-major.
pub fn grid_sphere_points(
    grid_h: usize,
    grid_w: usize,
    convention: CoordConvention,
) -> Result<Vec<SpherePoint>> {
    let mut pts = Vec::with_capacity(grid_h * grid_w);
    for y in 0..grid_h {
        for x in 0..grid_w {
            let c = GridCoord::new(x, y, grid_w, grid_h)?;
            pts.push(sphere_map(standardize_coords_with(&c, convention)?));
        }
    }
    Ok(pts)
}

/// Fourier features followed by a two-hidden-layer SiLU MLP.
#[derive(Debug, Clone)]
pub struct Inpe {
    b_matrix: Tensor,
    sigma_b: f64,
    fc1: Linear,
    fc2: Linear,
    out: Linear,
    convention: CoordConvention,
    d_model: usize,
}

impl Inpe {
    pub fn new(
        m: usize,
        d_model: usize,
        sigma_b: f64,
        convention: CoordConvention,
        s: &Scope,
    ) -> Result<Self> {
        if m == 0 {
            return Err(invalid!("INPE needs at least one frequency"));
        }
        let b_matrix = s.frozen("b_matrix", (m, 3), Init::Normal { std: sigma_b })?;
        Ok(Self {
            b_matrix,
            sigma_b,
            // Kaiming-scaled so embeddings start at roughly unit size, comparable
            // to the normalized tokens they are added to.
            fc1: linear_normal(2 * m, d_model, (2.0 / (2 * m) as f64).sqrt(), &s.pp("fc1"))?,
            fc2: linear_normal(d_model, d_model, (2.0 / d_model as f64).sqrt(), &s.pp("fc2"))?,
            out: linear_normal(d_model, d_model, (2.0 / d_model as f64).sqrt(), &s.pp("out"))?,
            convention,
            d_model,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn convention(&self) -> CoordConvention {
        self.convention
    }

    pub fn fourier_config(&self) -> Result<FourierConfig> {
        let (m, _) = self.b_matrix.dims2()?;
        let data = self
            .b_matrix
            .to_dtype(DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        FourierConfig::new(DMatrix::from_row_slice(m, 3, &data), self.sigma_b)
    }

    /// `(n, 3)` sphere points → `(n, 2m)` features.
    pub fn features(&self, points: &Tensor) -> Result<Tensor> {
        let proj = points.matmul(&self.b_matrix.t()?)?;
        Ok(Tensor::cat(&[proj.cos()?, proj.sin()?], 1)?)
    }

    /// `(n, 2m)` features → `(n, d_model)` embeddings.
    pub fn mlp(&self, features: &Tensor) -> Result<Tensor> {
        let h = self.fc1.forward(features)?.silu()?;
        let h = self.fc2.forward(&h)?.silu()?;
        Ok(self.out.forward(&h)?)
    }

    pub fn embed_points(&self, points: &[SpherePoint]) -> Result<Tensor> {
        let flat: Vec<f64> = points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let t = Tensor::from_vec(flat, (points.len(), 3), self.b_matrix.device())?
            .to_dtype(self.b_matrix.dtype())?;
        self.mlp(&self.features(&t)?)
    }

    /// Embeddings for every token of a grid, row-major: `(grid_h·grid_w, d_model)`.
    pub fn embed_grid(&self, grid_h: usize, grid_w: usize) -> Result<Tensor> {
        self.embed_points(&grid_sphere_points(grid_h, grid_w, self.convention)?)
    }

    /// Embedding of a single coordinate.
    pub fn embed(&self, c: &GridCoord) -> Result<Vec<f64>> {
        let p = sphere_map(standardize_coords_with(c, self.convention)?);
        Ok(self
            .embed_points(&[p])?
            .squeeze(0)?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn standardize_examples() {
        let n = standardize_coords(&GridCoord::new(0, 0, 64, 64).unwrap()).unwrap();
        assert_eq!((n.x_hat, n.y_hat), (0.0, 0.0));
        let n = standardize_coords(&GridCoord::new(32, 16, 64, 64).unwrap()).unwrap();
        assert_eq!((n.x_hat, n.y_hat), (0.5, 0.25));
        let n = standardize_coords(&GridCoord::new(7, 7, 8, 8).unwrap()).unwrap();
        assert_eq!((n.x_hat, n.y_hat), (0.875, 0.875));
    }

    #[test]
    fn degenerate_grid_rejected() {
        let c = GridCoord {
            x: 0,
            y: 0,
            grid_w: 0,
            grid_h: 4,
        };
        assert!(standardize_coords(&c).is_err());
        assert!(GridCoord::new(0, 0, 4, 0).is_err());
        assert!(GridCoord::new(4, 0, 4, 4).is_err());
    }

    #[test]
    fn half_pixel_convention() {
        let c = GridCoord::new(0, 1, 4, 2).unwrap();
        let n = standardize_coords_with(&c, CoordConvention::HalfPixel).unwrap();
        assert_eq!((n.x_hat, n.y_hat), (0.125, 0.75));
    }

    #[test]
    fn sphere_map_examples() {
        let p = sphere_map(NormalizedCoord { x_hat: 0.0, y_hat: 0.0 });
        assert!(close(p.x, 1.0) && close(p.y, 0.0) && close(p.z, 0.0));
        let p = sphere_map(NormalizedCoord { x_hat: 0.25, y_hat: 0.0 });
        assert!(close(p.x, 0.0) && close(p.y, 1.0) && close(p.z, 0.0));
        for x_hat in [0.0, 0.1, 0.37, 0.9] {
            let p = sphere_map(NormalizedCoord { x_hat, y_hat: 0.5 });
            assert!(close(p.x, 0.0) && close(p.y, 0.0) && close(p.z, 1.0));
        }
    }

    #[test]
    fn fourier_examples() {
        let p = SpherePoint { x: 0.3, y: -0.2, z: 0.9 };
        let zero = FourierConfig::new(DMatrix::zeros(4, 3), 1.0).unwrap();
        assert_eq!(
            fourier_features(&p, &zero).unwrap(),
            vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );

        let e = SpherePoint { x: 1.0, y: 0.0, z: 0.0 };
        let pi = FourierConfig::new(DMatrix::from_row_slice(1, 3, &[PI, 0.0, 0.0]), 1.0).unwrap();
        let f = fourier_features(&e, &pi).unwrap();
        assert!(close(f[0], -1.0) && f[1].abs() < 1e-15);

        let one = FourierConfig::new(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]), 1.0).unwrap();
        let f = fourier_features(&e, &one).unwrap();
        assert!((f[0] - 0.5403).abs() < 1e-4 && (f[1] - 0.8415).abs() < 1e-4);
    }

    #[test]
    fn bad_frequency_matrix_rejected() {
        assert!(FourierConfig::new(DMatrix::zeros(4, 2), 1.0).is_err());
        assert!(FourierConfig::new(DMatrix::zeros(0, 3), 1.0).is_err());
        let mut f = FourierConfig::sample(2, 1.0, 0).unwrap();
        f.b_matrix = DMatrix::zeros(2, 4);
        let p = SpherePoint { x: 1.0, y: 0.0, z: 0.0 };
        assert!(fourier_features(&p, &f).is_err());
    }

    #[test]
    fn embedding_depends_only_on_normalized_position() {
        let store = ParamStore::new(3, DType::F64);
        let inpe = Inpe::new(8, 16, 10.0, CoordConvention::PixelIndex, &store.root()).unwrap();
        let a = inpe.embed(&GridCoord::new(4, 4, 8, 8).unwrap()).unwrap();
        let b = inpe.embed(&GridCoord::new(8, 8, 16, 16).unwrap()).unwrap();
        assert_eq!(a.len(), 16);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        let again = inpe.embed(&GridCoord::new(4, 4, 8, 8).unwrap()).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn zero_mlp_collapses_to_output_bias() {
        let store = ParamStore::zeros(DType::F64);
        let inpe = Inpe::new(4, 8, 10.0, CoordConvention::PixelIndex, &store.root()).unwrap();
        let bias = store.get("out.bias").unwrap().var;
        bias.set(&Tensor::new(&[0.5f64, -1.0, 2.0, 0.0, 1.0, 3.0, -2.0, 0.25], bias.device()).unwrap())
            .unwrap();
        for (x, y) in [(0, 0), (3, 1), (5, 6)] {
            let e = inpe.embed(&GridCoord::new(x, y, 7, 7).unwrap()).unwrap();
            assert_eq!(e, vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0, -2.0, 0.25]);
        }
    }

    #[test]
    fn tensor_features_match_scalar_path() {
        let store = ParamStore::new(11, DType::F64);
        let inpe = Inpe::new(6, 8, 10.0, CoordConvention::PixelIndex, &store.root()).unwrap();
        let cfg = inpe.fourier_config().unwrap();
        let pts = grid_sphere_points(3, 5, CoordConvention::PixelIndex).unwrap();
        let flat: Vec<f64> = pts.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let t = Tensor::from_vec(flat, (15, 3), &candle_core::Device::Cpu).unwrap();
        let feats = inpe.features(&t).unwrap().to_vec2::<f64>().unwrap();
        for (p, row) in pts.iter().zip(feats) {
            let want = fourier_features(p, &cfg).unwrap();
            for (a, b) in row.iter().zip(want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
