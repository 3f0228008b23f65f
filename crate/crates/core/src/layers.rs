//! Thin constructors over `candle_nn` layers wired to a [`Scope`], plus the
//! normalization layer built from differentiable primitives.

use candle_core::{Module, Tensor, D};
use candle_nn::{Conv2dConfig, Linear};

use crate::error::Result;
use crate::params::{Init, Scope};

pub fn linear(in_dim: usize, out_dim: usize, s: &Scope) -> Result<Linear> {
    let w = s.param("weight", (out_dim, in_dim), Init::fan_in(in_dim))?;
    let b = s.param("bias", out_dim, Init::fan_in(in_dim))?;
    Ok(Linear::new(w, Some(b)))
}

/// Linear layer with normal weights of the given std and zero bias.
pub fn linear_normal(in_dim: usize, out_dim: usize, std: f64, s: &Scope) -> Result<Linear> {
    let w = s.param("weight", (out_dim, in_dim), Init::Normal { std })?;
    let b = s.param("bias", out_dim, Init::Const(0.0))?;
    Ok(Linear::new(w, Some(b)))
}

/// 2D convolution with zero padding.
///
/// Strided convs pad explicitly and drop trailing rows and columns that no
/// window reaches, so the backend's backward pass always sees an input whose
/// size is an exact fit for the stride.
#[derive(Debug, Clone)]
pub struct Conv {
    inner: candle_nn::Conv2d,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Conv {
    pub fn new(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (_, _, kh, kw) = weight.dims4()?;
        if kh != kw {
            return Err(crate::error::shape_err!("square kernels only, got {kh}x{kw}"));
        }
        let cfg = Conv2dConfig {
            padding: if stride == 1 { padding } else { 0 },
            stride,
            ..Default::default()
        };
        Ok(Self {
            inner: candle_nn::Conv2d::new(weight, Some(bias), cfg),
            kernel: kh,
            stride,
            padding,
        })
    }

    pub fn weight(&self) -> &Tensor {
        self.inner.weight()
    }
}

impl Module for Conv {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        if self.stride == 1 {
            return self.inner.forward(x);
        }
        let (p, k, s) = (self.padding, self.kernel, self.stride);
        let mut t = x.clone();
        for dim in [2, 3] {
            let padded = t.dim(dim)? + 2 * p;
            if padded < k {
                return Err(candle_core::Error::Msg(format!(
                    "conv input side {} too small for kernel {k}",
                    t.dim(dim)?
                )));
            }
            let used = (padded - k) / s * s + k;
            t = t.pad_with_zeros(dim, p, p)?.narrow(dim, 0, used)?;
        }
        self.inner.forward(&t)
    }
}

pub fn conv2d(
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    s: &Scope,
) -> Result<Conv> {
    let fan_in = in_ch * kernel * kernel;
    let w = s.param("weight", (out_ch, in_ch, kernel, kernel), Init::fan_in(fan_in))?;
    let b = s.param("bias", out_ch, Init::fan_in(fan_in))?;
    Conv::new(w, b, stride, padding)
}

/// A conv whose weights are excluded from optimization.
pub fn frozen_conv2d(
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    s: &Scope,
) -> Result<Conv> {
    let fan_in = in_ch * kernel * kernel;
    let std = (2.0 / fan_in as f64).sqrt();
    let w = s.frozen("weight", (out_ch, in_ch, kernel, kernel), Init::Normal { std })?;
    let b = s.frozen("bias", out_ch, Init::Const(0.0))?;
    Conv::new(w, b, stride, padding)
}

/// Nearest-neighbour 2× upsampling of `(B, C, H, W)` via broadcast, so the
/// backward pass is a plain sum.
pub fn upsample2x(x: &Tensor) -> candle_core::Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    x.reshape((b, c, h, 1, w, 1))?
        .broadcast_as((b, c, h, 2, w, 2))?
        .reshape((b, c, 2 * h, 2 * w))
}

/// Layer normalization over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize, s: &Scope) -> Result<Self> {
        Ok(Self {
            weight: s.param("weight", dim, Init::Const(1.0))?,
            bias: s.param("bias", dim, Init::Const(0.0))?,
            eps: 1e-5,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let dim = x.dim(D::Minus1)? as f64;
        let mean = (x.sum_keepdim(D::Minus1)? / dim)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = (xc.sqr()?.sum_keepdim(D::Minus1)? / dim)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        xn.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// `Linear → SiLU → Linear`.
#[derive(Debug, Clone)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(dim: usize, hidden: usize, s: &Scope) -> Result<Self> {
        Ok(Self {
            fc1: linear(dim, hidden, &s.pp("fc1"))?,
            fc2: linear(hidden, dim, &s.pp("fc2"))?,
        })
    }
}

impl Module for Mlp {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.silu()?)
    }
}

/// `x + conv2(silu(conv1(silu(x))))`, 3×3 convs at constant width.
#[derive(Debug, Clone)]
pub struct ResBlock {
    conv1: Conv,
    conv2: Conv,
}

impl ResBlock {
    pub fn new(ch: usize, s: &Scope) -> Result<Self> {
        Ok(Self {
            conv1: conv2d(ch, ch, 3, 1, 1, &s.pp("conv1"))?,
            conv2: conv2d(ch, ch, 3, 1, 1, &s.pp("conv2"))?,
        })
    }
}

impl Module for ResBlock {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let h = self.conv1.forward(&x.silu()?)?;
        let h = self.conv2.forward(&h.silu()?)?;
        x + h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use candle_core::{DType, Device};

    #[test]
    fn upsample2x_matches_nearest() {
        let x = Tensor::arange(0f32, 12.0, &Device::Cpu).unwrap().reshape((1, 2, 2, 3)).unwrap();
        let a = upsample2x(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = x.upsample_nearest2d(4, 6).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strided_conv_matches_backend_and_backprops_odd_shapes() {
        let store = ParamStore::new(4, DType::F64);
        let conv = conv2d(2, 3, 4, 2, 1, &store.root().pp("c")).unwrap();
        let w = conv.weight().clone();
        let b = store.get("c.bias").unwrap().var.as_tensor().clone();
        let x = candle_core::Var::from_tensor(
            &Tensor::randn(0f64, 1.0, (1, 2, 15, 10), &Device::Cpu).unwrap(),
        )
        .unwrap();
        let ours = conv.forward(&x).unwrap();
        let reference = x
            .conv2d(&w, 1, 2, 1, 1)
            .unwrap()
            .broadcast_add(&b.reshape((1, 3, 1, 1)).unwrap())
            .unwrap();
        assert_eq!(ours.dims(), reference.dims());
        let diff = (ours.clone() - reference).unwrap().abs().unwrap().max_all().unwrap();
        assert!(diff.to_scalar::<f64>().unwrap() < 1e-12);
        let g = ours.sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(x.as_tensor()).unwrap().dims(), &[1, 2, 15, 10]);
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let store = ParamStore::new(0, DType::F64);
        let ln = LayerNorm::new(4, &store.root().pp("ln")).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 10.0], [-4.0, 0.0, 0.0, 4.0]], &Device::Cpu)
            .unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        for row in y {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
