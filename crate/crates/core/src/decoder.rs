//! The arbitrary-resolution decoder.
//!
//! For a target `(h, w)` a grid of `⌈h/8⌉ × ⌈w/8⌉` mask tokens is built from a
//! single learned vector. The mask tokens query the latent tokens through a
//! stack of cross-attention blocks, with positional embeddings added to
//! queries and keys only, and a convolutional head upsamples the grid 8× and
//! center-crops it to exactly `h × w`.

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::Linear;

use crate::codec::LatentMap;
use crate::config::ModelConfig;
use crate::error::{invalid, shape_err, Result};
use crate::image::{Image, MIN_SIDE};
use crate::inpe::Inpe;
use crate::layers::{conv2d, linear, upsample2x, Conv, LayerNorm, Mlp};
use crate::params::{Init, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TargetResolution {
    pub h: usize,
    pub w: usize,
}

impl TargetResolution {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(invalid!("target resolution {h}x{w} must be positive"));
        }
        Ok(Self { h, w })
    }

    pub fn bounded(h: usize, w: usize, max_res: usize) -> Result<Self> {
        if h > max_res || w > max_res {
            return Err(invalid!("target {h}x{w} exceeds max_res {max_res}"));
        }
        Self::new(h, w)
    }

    /// Mask-token grid `(⌈h/8⌉, ⌈w/8⌉)`.
    pub fn grid_dims(&self) -> (usize, usize) {
        (self.h.div_ceil(8), self.w.div_ceil(8))
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }
}

/// `(B, grid_h·grid_w, d)` tokens, row-major over the grid.
#[derive(Debug, Clone)]
pub struct TokenGrid {
    pub tokens: Tensor,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl TokenGrid {
    pub fn new(tokens: Tensor, grid_h: usize, grid_w: usize) -> Result<Self> {
        let (_, n, _) = tokens.dims3()?;
        if n != grid_h * grid_w {
            return Err(shape_err!(
                "{n} tokens do not fill a {grid_h}x{grid_w} grid"
            ));
        }
        Ok(Self {
            tokens,
            grid_h,
            grid_w,
        })
    }

    pub fn len(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_model(&self) -> usize {
        self.tokens.dim(2).expect("rank checked at construction")
    }
}

/// Softmax whose max-shift is excluded from the graph.
pub fn softmax_last(xs: &Tensor) -> Result<Tensor> {
    let max = xs.max_keepdim(D::Minus1)?.detach();
    let num = xs.broadcast_sub(&max)?.exp()?;
    let den = num.sum_keepdim(D::Minus1)?;
    Ok(num.broadcast_div(&den)?)
}

fn split_heads(x: &Tensor, heads: usize) -> Result<Tensor> {
    let (b, n, d) = x.dims3()?;
    Ok(x.reshape((b, n, heads, d / heads))?.transpose(1, 2)?.contiguous()?)
}

/// Multi-head scaled dot-product attention on already-projected inputs.
/// `q: (B, nq, d)`, `k, v: (B, nk, d)`. Returns the merged `(B, nq, d)` output
/// and the `(B, heads, nq, nk)` attention weights.
pub fn multi_head_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
) -> Result<(Tensor, Tensor)> {
    let (b, nq, d) = q.dims3()?;
    let (bk, _, dk) = k.dims3()?;
    if bk != b || dk != d || v.dims() != k.dims() {
        return Err(shape_err!(
            "attention operands disagree: q {:?}, k {:?}, v {:?}",
            q.dims(),
            k.dims(),
            v.dims()
        ));
    }
    if heads == 0 || d % heads != 0 {
        return Err(invalid!("{heads} heads do not divide d_model {d}"));
    }
    let scale = 1.0 / ((d / heads) as f64).sqrt();
    let (qh, kh, vh) = (
        split_heads(q, heads)?,
        split_heads(k, heads)?,
        split_heads(v, heads)?,
    );
    let scores = (qh.matmul(&kh.t()?)? * scale)?;
    let probs = softmax_last(&scores)?;
    let out = probs
        .matmul(&vh)?
        .transpose(1, 2)?
        .contiguous()?
        .reshape((b, nq, d))?;
    Ok((out, probs))
}

#[derive(Debug, Clone)]
pub struct CrossAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    heads: usize,
}

impl CrossAttention {
    pub fn new(d: usize, heads: usize, s: &Scope) -> Result<Self> {
        Ok(Self {
            wq: linear(d, d, &s.pp("wq"))?,
            wk: linear(d, d, &s.pp("wk"))?,
            wv: linear(d, d, &s.pp("wv"))?,
            wo: linear(d, d, &s.pp("wo"))?,
            heads,
        })
    }

    pub fn from_parts(wq: Linear, wk: Linear, wv: Linear, wo: Linear, heads: usize) -> Self {
        Self {
            wq,
            wk,
            wv,
            wo,
            heads,
        }
    }

    /// Queries from `q_in`, keys from `k_in`, values from `v_in`; output projected.
    pub fn forward(&self, q_in: &Tensor, k_in: &Tensor, v_in: &Tensor) -> Result<Tensor> {
        let (out, _) = self.forward_with_weights(q_in, k_in, v_in)?;
        Ok(out)
    }

    pub fn forward_with_weights(
        &self,
        q_in: &Tensor,
        k_in: &Tensor,
        v_in: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let q = self.wq.forward(q_in)?;
        let k = self.wk.forward(k_in)?;
        let v = self.wv.forward(v_in)?;
        let (out, probs) = multi_head_attention(&q, &k, &v, self.heads)?;
        Ok((self.wo.forward(&out)?, probs))
    }
}

/// Pre-norm block: optional mask self-attention, cross-attention to the
/// latent, then a token-wise MLP, each with a residual connection.
#[derive(Debug, Clone)]
pub struct CrossAttentionBlock {
    self_attn: Option<(LayerNorm, CrossAttention)>,
    norm_q: LayerNorm,
    norm_kv: LayerNorm,
    attn: CrossAttention,
    norm_mlp: LayerNorm,
    mlp: Mlp,
}

impl CrossAttentionBlock {
    pub fn new(cfg: &ModelConfig, s: &Scope) -> Result<Self> {
        let d = cfg.d_model;
        let self_attn = if cfg.self_attention {
            Some((
                LayerNorm::new(d, &s.pp("norm_self"))?,
                CrossAttention::new(d, cfg.heads, &s.pp("self_attn"))?,
            ))
        } else {
            None
        };
        Ok(Self {
            self_attn,
            norm_q: LayerNorm::new(d, &s.pp("norm_q"))?,
            norm_kv: LayerNorm::new(d, &s.pp("norm_kv"))?,
            attn: CrossAttention::new(d, cfg.heads, &s.pp("attn"))?,
            norm_mlp: LayerNorm::new(d, &s.pp("norm_mlp"))?,
            mlp: Mlp::new(d, d * cfg.mlp_ratio, &s.pp("mlp"))?,
        })
    }

    /// Raw-tensor form: `mask (B, nq, d)`, `latent (B, nk, d)`, positional
    /// embeddings `(nq, d)` and `(nk, d)`.
    pub fn forward_tokens(
        &self,
        mask: &Tensor,
        latent: &Tensor,
        pe_mask: &Tensor,
        pe_latent: &Tensor,
    ) -> Result<Tensor> {
        let (_, nq, d) = mask.dims3()?;
        let (_, nk, dk) = latent.dims3()?;
        if dk != d || pe_mask.dims() != [nq, d] || pe_latent.dims() != [nk, d] {
            return Err(shape_err!(
                "block inputs disagree: mask {:?}, latent {:?}, pe {:?}/{:?}",
                mask.dims(),
                latent.dims(),
                pe_mask.dims(),
                pe_latent.dims()
            ));
        }
        let mut x = mask.clone();
        if let Some((norm, sa)) = &self.self_attn {
            let h = norm.forward(&x)?;
            let hp = h.broadcast_add(pe_mask)?;
            x = (&x + sa.forward(&hp, &hp, &h)?)?;
        }
        let q_in = self.norm_q.forward(&x)?.broadcast_add(pe_mask)?;
        let kv = self.norm_kv.forward(latent)?;
        let k_in = kv.broadcast_add(pe_latent)?;
        let x = (&x + self.attn.forward(&q_in, &k_in, &kv)?)?;
        let x = (&x + self.mlp.forward(&self.norm_mlp.forward(&x)?)?)?;
        Ok(x)
    }

    pub fn forward(
        &self,
        mask: &TokenGrid,
        latent: &TokenGrid,
        pe_mask: &Tensor,
        pe_latent: &Tensor,
    ) -> Result<TokenGrid> {
        let out = self.forward_tokens(&mask.tokens, &latent.tokens, pe_mask, pe_latent)?;
        TokenGrid::new(out, mask.grid_h, mask.grid_w)
    }

    /// Cross-attention weights `(B, heads, nq, nk)` for the given inputs.
    pub fn attention_weights(
        &self,
        mask: &Tensor,
        latent: &Tensor,
        pe_mask: &Tensor,
        pe_latent: &Tensor,
    ) -> Result<Tensor> {
        let q_in = self.norm_q.forward(mask)?.broadcast_add(pe_mask)?;
        let kv = self.norm_kv.forward(latent)?;
        let k_in = kv.broadcast_add(pe_latent)?;
        Ok(self.attn.forward_with_weights(&q_in, &k_in, &kv)?.1)
    }
}

/// Token grid → pixels: 1×1 projection, three (2× nearest upsample, 3×3 conv,
/// SiLU) stages, a 3×3 RGB conv, tanh, then a center crop of the ceiling
/// overshoot.
#[derive(Debug, Clone)]
pub struct UpsampleHead {
    proj_in: Conv,
    stages: Vec<Conv>,
    conv_out: Conv,
}

impl UpsampleHead {
    pub fn new(d_model: usize, channels: &[usize], s: &Scope) -> Result<Self> {
        let proj_in = conv2d(d_model, channels[0], 1, 1, 0, &s.pp("proj_in"))?;
        let mut stages = Vec::with_capacity(3);
        for i in 0..3 {
            stages.push(conv2d(channels[i], channels[i + 1], 3, 1, 1, &s.pp(format!("up{i}")))?);
        }
        let conv_out = conv2d(channels[3], 3, 3, 1, 1, &s.pp("conv_out"))?;
        Ok(Self {
            proj_in,
            stages,
            conv_out,
        })
    }

    /// `(B, 3, h, w)` image tensor in `[-1, 1]`.
    pub fn forward(&self, grid: &TokenGrid, t: TargetResolution) -> Result<Tensor> {
        if (grid.grid_h, grid.grid_w) != t.grid_dims() {
            return Err(shape_err!(
                "grid {}x{} does not match target {}x{} (expects {:?})",
                grid.grid_h,
                grid.grid_w,
                t.h,
                t.w,
                t.grid_dims()
            ));
        }
        let (b, _, d) = grid.tokens.dims3()?;
        let mut x = grid
            .tokens
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, d, grid.grid_h, grid.grid_w))?;
        x = self.proj_in.forward(&x)?;
        for conv in &self.stages {
            x = conv.forward(&upsample2x(&x)?)?.silu()?;
        }
        let x = self.conv_out.forward(&x)?.tanh()?;
        let (_, _, full_h, full_w) = x.dims4()?;
        let top = (full_h - t.h) / 2;
        let left = (full_w - t.w) / 2;
        Ok(x.narrow(2, top, t.h)?.narrow(3, left, t.w)?)
    }
}

/// The generator `(z, (h, w)) → x_(h,w)`.
#[derive(Debug, Clone)]
pub struct ArrDecoder {
    mask_seed: Tensor,
    latent_proj: Linear,
    inpe: Inpe,
    blocks: Vec<CrossAttentionBlock>,
    norm_out: LayerNorm,
    head: UpsampleHead,
    latent_channels: usize,
    d_model: usize,
    max_res: usize,
}

impl ArrDecoder {
    pub fn new(cfg: &ModelConfig, s: &Scope) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let blocks = (0..cfg.blocks)
            .map(|i| CrossAttentionBlock::new(cfg, &s.pp(format!("blocks.{i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mask_seed: s.param("mask_token", d, Init::Normal { std: 0.02 })?,
            latent_proj: linear(cfg.latent_channels, d, &s.pp("latent_proj"))?,
            inpe: Inpe::new(
                cfg.fourier_m,
                d,
                cfg.sigma_b,
                cfg.coord_convention(),
                &s.pp("inpe"),
            )?,
            blocks,
            norm_out: LayerNorm::new(d, &s.pp("norm_out"))?,
            head: UpsampleHead::new(d, &cfg.head_channels, &s.pp("head"))?,
            latent_channels: cfg.latent_channels,
            d_model: d,
            max_res: cfg.max_res,
        })
    }

    pub fn inpe(&self) -> &Inpe {
        &self.inpe
    }

    pub fn blocks(&self) -> &[CrossAttentionBlock] {
        &self.blocks
    }

    pub fn head(&self) -> &UpsampleHead {
        &self.head
    }

    pub fn max_res(&self) -> usize {
        self.max_res
    }

    pub fn dtype(&self) -> DType {
        self.mask_seed.dtype()
    }

    /// Every token of the grid is the one learned mask vector.
    pub fn make_mask_token_grid(&self, t: TargetResolution, batch: usize) -> Result<TokenGrid> {
        let (gh, gw) = t.grid_dims();
        let tokens = self
            .mask_seed
            .reshape((1, 1, self.d_model))?
            .broadcast_as((batch, gh * gw, self.d_model))?
            .contiguous()?;
        TokenGrid::new(tokens, gh, gw)
    }

    /// Flattens `(B, C, h, w)` row-major and projects channels to `d_model`.
    pub fn latent_tokens(&self, z: &LatentMap) -> Result<TokenGrid> {
        let (b, c, h, w) = z.dims();
        if c != self.latent_channels {
            return Err(shape_err!(
                "latent has {c} channels, decoder expects {}",
                self.latent_channels
            ));
        }
        if h == 0 || w == 0 {
            return Err(shape_err!("empty latent"));
        }
        let flat = z.z.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?;
        TokenGrid::new(self.latent_proj.forward(&flat)?, h, w)
    }

    fn check_target(&self, t: TargetResolution) -> Result<()> {
        if t.h > self.max_res || t.w > self.max_res {
            return Err(invalid!(
                "target {}x{} exceeds max_res {}",
                t.h,
                t.w,
                self.max_res
            ));
        }
        if t.h < MIN_SIDE || t.w < MIN_SIDE {
            return Err(invalid!(
                "target {}x{} is below the {MIN_SIDE}-pixel image minimum",
                t.h,
                t.w
            ));
        }
        Ok(())
    }

    /// Mask tokens after all blocks, before the upsampling head.
    pub fn decode_tokens(&self, z: &LatentMap, t: TargetResolution) -> Result<TokenGrid> {
        self.check_target(t)?;
        let latent = self.latent_tokens(z)?;
        let batch = latent.tokens.dim(0)?;
        let mut mask = self.make_mask_token_grid(t, batch)?;
        let pe_mask = self.inpe.embed_grid(mask.grid_h, mask.grid_w)?;
        let pe_latent = self.inpe.embed_grid(latent.grid_h, latent.grid_w)?;
        for block in &self.blocks {
            mask = block.forward(&mask, &latent, &pe_mask, &pe_latent)?;
        }
        let tokens = self.norm_out.forward(&mask.tokens)?;
        TokenGrid::new(tokens, mask.grid_h, mask.grid_w)
    }

    /// Single forward pass to a `(B, 3, h, w)` image tensor.
    pub fn decode(&self, z: &LatentMap, t: TargetResolution) -> Result<Tensor> {
        let tokens = self.decode_tokens(z, t)?;
        self.head.forward(&tokens, t)
    }

    pub fn decode_images(&self, z: &LatentMap, t: TargetResolution) -> Result<Vec<Image>> {
        Image::batch_from_tensor(&self.decode(z, t)?)
    }

    pub fn decode_image(&self, z: &LatentMap, t: TargetResolution) -> Result<Image> {
        if z.dims().0 != 1 {
            return Err(invalid!("decode_image expects a single latent"));
        }
        Image::from_tensor(&self.decode(z, t)?)
    }

    pub fn device(&self) -> &Device {
        self.mask_seed.device()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn tiny_decoder(seed: u64) -> (ParamStore, ArrDecoder) {
        let store = ParamStore::new(seed, DType::F64);
        let dec = ArrDecoder::new(&ModelConfig::tiny(), &store.root().pp("decoder")).unwrap();
        (store, dec)
    }

    #[test]
    fn mask_grid_dims() {
        for ((h, w), g) in [((512, 512), (64, 64)), ((1000, 600), (125, 75)), ((9, 9), (2, 2))] {
            assert_eq!(TargetResolution::new(h, w).unwrap().grid_dims(), g);
        }
        assert!(TargetResolution::new(0, 4).is_err());
        let (_, dec) = tiny_decoder(0);
        let g = dec.make_mask_token_grid(TargetResolution::new(9, 17).unwrap(), 2).unwrap();
        assert_eq!((g.grid_h, g.grid_w), (2, 3));
        assert_eq!(g.tokens.dims(), &[2, 6, 16]);
        let v = g.tokens.to_vec3::<f64>().unwrap();
        assert!(v.iter().flatten().all(|tok| tok == &v[0][0]));
    }

    fn identity(d: usize) -> Linear {
        let w = Tensor::eye(d, DType::F64, &Device::Cpu).unwrap();
        let b = Tensor::zeros(d, DType::F64, &Device::Cpu).unwrap();
        Linear::new(w, Some(b))
    }

    #[test]
    fn single_key_attention_returns_its_value() {
        let d = 4;
        let attn = CrossAttention::from_parts(identity(d), identity(d), identity(d), identity(d), 2);
        let q = Tensor::new(&[[[0.3f64, -1.0, 2.0, 0.1], [5.0, 0.0, -3.0, 1.0]]], &Device::Cpu).unwrap();
        let kv = Tensor::new(&[[[1.0f64, 2.0, 3.0, 4.0]]], &Device::Cpu).unwrap();
        let out = attn.forward(&q, &kv, &kv).unwrap().to_vec3::<f64>().unwrap();
        for row in &out[0] {
            assert_eq!(row, &vec![1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn equal_logits_average_the_values() {
        let d = 2;
        let attn = CrossAttention::from_parts(identity(d), identity(d), identity(d), identity(d), 1);
        let q = Tensor::new(&[[[0.0f64, 0.0]]], &Device::Cpu).unwrap();
        let k = Tensor::new(&[[[1.0f64, -3.0], [2.0, 7.0]]], &Device::Cpu).unwrap();
        let v = Tensor::new(&[[[2.0f64, 4.0], [6.0, -8.0]]], &Device::Cpu).unwrap();
        let out = attn.forward(&q, &k, &v).unwrap().to_vec3::<f64>().unwrap();
        assert!((out[0][0][0] - 4.0).abs() < 1e-12 && (out[0][0][1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (_, dec) = tiny_decoder(4);
        let z = LatentMap::random(2, 4, 2, 2, 1, DType::F64).unwrap();
        let t = TargetResolution::new(24, 24).unwrap();
        let latent = dec.latent_tokens(&z).unwrap();
        let mask = dec.make_mask_token_grid(t, 2).unwrap();
        let pe_m = dec.inpe().embed_grid(3, 3).unwrap();
        let pe_l = dec.inpe().embed_grid(2, 2).unwrap();
        let w = dec.blocks()[0]
            .attention_weights(&mask.tokens, &latent.tokens, &pe_m, &pe_l)
            .unwrap();
        assert_eq!(w.dims(), &[2, 2, 9, 4]);
        let sums = w.sum(D::Minus1).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-6));
    }

    #[test]
    fn upsample_head_crops_centrally() {
        let (_, dec) = tiny_decoder(2);
        for ((gh, gw), (h, w)) in [((8, 8), (64, 64)), ((13, 8), (100, 64))] {
            let toks = Tensor::randn(0.0f64, 1.0, (1, gh * gw, 16), &Device::Cpu).unwrap();
            let g = TokenGrid::new(toks, gh, gw).unwrap();
            let out = dec.head().forward(&g, TargetResolution::new(h, w).unwrap()).unwrap();
            assert_eq!(out.dims(), &[1, 3, h, w]);
        }
        let toks = Tensor::zeros((1, 4, 16), DType::F64, &Device::Cpu).unwrap();
        let g = TokenGrid::new(toks, 2, 2).unwrap();
        assert!(dec.head().forward(&g, TargetResolution::new(24, 16).unwrap()).is_err());
    }

    #[test]
    fn zero_head_gives_constant_image() {
        let store = ParamStore::zeros(DType::F64);
        let dec = ArrDecoder::new(&ModelConfig::tiny(), &store.root()).unwrap();
        let bias = store.get("head.conv_out.bias").unwrap().var;
        bias.set(&Tensor::new(&[0.3f64, -0.2, 0.0], &Device::Cpu).unwrap()).unwrap();
        let toks = Tensor::randn(0.0f64, 1.0, (1, 6, 16), &Device::Cpu).unwrap();
        let g = TokenGrid::new(toks, 2, 3).unwrap();
        let out = dec.head().forward(&g, TargetResolution::new(16, 20).unwrap()).unwrap();
        let im = out.squeeze(0).unwrap().to_vec3::<f64>().unwrap();
        for (c, want) in [0.3f64.tanh(), (-0.2f64).tanh(), 0.0].iter().enumerate() {
            assert!(im[c].iter().flatten().all(|v| (v - want).abs() < 1e-12));
        }
    }

    #[test]
    fn decode_shapes_and_determinism() {
        let (_, dec) = tiny_decoder(5);
        let z = LatentMap::random(1, 4, 2, 2, 3, DType::F64).unwrap();
        for (h, w) in [(16, 16), (20, 12), (9, 33)] {
            let out = dec.decode(&z, TargetResolution::new(h, w).unwrap()).unwrap();
            assert_eq!(out.dims(), &[1, 3, h, w]);
        }
        let t = TargetResolution::new(20, 12).unwrap();
        let a = dec.decode(&z, t).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let b = dec.decode(&z, t).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decode_rejects_bad_inputs() {
        let (_, dec) = tiny_decoder(5);
        let z = LatentMap::random(1, 3, 2, 2, 3, DType::F64).unwrap();
        assert!(dec.decode(&z, TargetResolution::new(16, 16).unwrap()).is_err());
        let z = LatentMap::random(1, 4, 2, 2, 3, DType::F64).unwrap();
        assert!(dec.decode(&z, TargetResolution::new(65, 16).unwrap()).is_err());
        assert!(dec.decode(&z, TargetResolution::new(4, 16).unwrap()).is_err());
    }

    #[test]
    fn self_attention_toggle_builds_and_runs() {
        let store = ParamStore::new(0, DType::F64);
        let cfg = ModelConfig {
            self_attention: true,
            ..ModelConfig::tiny()
        };
        let dec = ArrDecoder::new(&cfg, &store.root()).unwrap();
        assert!(store.get("blocks.0.self_attn.wq.weight").is_some());
        let z = LatentMap::random(1, 4, 2, 2, 3, DType::F64).unwrap();
        let out = dec.decode(&z, TargetResolution::new(16, 24).unwrap()).unwrap();
        assert_eq!(out.dims(), &[1, 3, 16, 24]);
    }
}
