//! Decoupled-weight-decay Adam and the cosine learning-rate schedule.
//!
//! Moment buffers are exposed so that checkpoints resume bit-exactly.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug)]
struct Slot {
    name: String,
    var: Var,
    m: Tensor,
    v: Tensor,
}

#[derive(Debug)]
pub struct AdamW {
    slots: Vec<Slot>,
    config: AdamWConfig,
    t: u64,
}

impl AdamW {
    pub fn new(vars: Vec<(String, Var)>, config: AdamWConfig) -> Result<Self> {
        let slots = vars
            .into_iter()
            .map(|(name, var)| {
                let m = var.zeros_like()?;
                let v = var.zeros_like()?;
                Ok(Slot { name, var, m, v })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            slots,
            config,
            t: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn num_params(&self) -> usize {
        self.slots.iter().map(|s| s.var.elem_count()).sum()
    }

    /// One update at learning rate `lr`. Parameters without a gradient are left alone.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.t += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        for slot in &mut self.slots {
            let Some(g) = grads.get(slot.var.as_tensor()) else {
                continue;
            };
            // Gradients can carry an op graph; keep optimizer state graph-free.
            let g = &g.detach();
            let m = ((&slot.m * c.beta1)? + (g * (1.0 - c.beta1))?)?;
            let v = ((&slot.v * c.beta2)? + (g.sqr()? * (1.0 - c.beta2))?)?;
            let m_hat = (&m / bias1)?;
            let v_hat = (&v / bias2)?;
            let update = (m_hat / (v_hat.sqrt()? + c.eps)?)?;
            let decayed = (slot.var.as_tensor() * (1.0 - lr * c.weight_decay))?;
            slot.var.set(&(decayed - (update * lr)?)?)?;
            slot.m = m;
            slot.v = v;
        }
        Ok(())
    }

    /// Moment buffers keyed `"<param>.m"` / `"<param>.v"`, plus the step count.
    pub fn export_state(&self) -> Result<(u64, BTreeMap<String, (Vec<usize>, Vec<f32>)>)> {
        let mut out = BTreeMap::new();
        for s in &self.slots {
            for (suffix, t) in [("m", &s.m), ("v", &s.v)] {
                let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
                out.insert(format!("{}.{suffix}", s.name), (t.dims().to_vec(), data));
            }
        }
        Ok((self.t, out))
    }

    pub fn import_state(
        &mut self,
        t: u64,
        state: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    ) -> Result<()> {
        let mut staged = Vec::with_capacity(self.slots.len());
        for s in &self.slots {
            let mut pair = Vec::with_capacity(2);
            for suffix in ["m", "v"] {
                let key = format!("{}.{suffix}", s.name);
                let (dims, data) = state
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {key}")))?;
                if dims.as_slice() != s.var.dims() {
                    return Err(Error::Checkpoint(format!("optimizer state {key} has wrong shape")));
                }
                pair.push(
                    Tensor::from_slice(data, dims.as_slice(), s.var.device())?
                        .to_dtype(s.var.dtype())?,
                );
            }
            staged.push(pair);
        }
        for (s, mut pair) in self.slots.iter_mut().zip(staged) {
            s.v = pair.pop().expect("two entries");
            s.m = pair.pop().expect("two entries");
        }
        self.t = t;
        Ok(())
    }
}

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return self.lr_min;
        }
        let p = (step.min(self.total_steps) as f64) / self.total_steps as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (PI * p).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn cosine_endpoints() {
        let s = CosineSchedule {
            lr_max: 2e-4,
            lr_min: 1e-5,
            total_steps: 100,
        };
        assert!((s.lr(0) - 2e-4).abs() < 1e-18);
        assert!((s.lr(100) - 1e-5).abs() < 1e-18);
        assert!((s.lr(50) - 1.05e-4).abs() < 1e-12);
        assert!((s.lr(1000) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let x = Var::new(&[3.0f64, -2.0], &Device::Cpu).unwrap();
        let mut opt = AdamW::new(
            vec![("x".into(), x.clone())],
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        for _ in 0..2000 {
            let loss = x.as_tensor().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&grads, 0.05).unwrap();
        }
        let v = x.as_tensor().to_vec1::<f64>().unwrap();
        assert!(v.iter().all(|a| a.abs() < 1e-2), "{v:?}");
    }

    #[test]
    fn state_roundtrip() {
        let x = Var::new(&[1.0f32, 2.0], &Device::Cpu).unwrap();
        let mut a = AdamW::new(vec![("x".into(), x.clone())], AdamWConfig::default()).unwrap();
        let g = x.as_tensor().sqr().unwrap().sum_all().unwrap().backward().unwrap();
        a.step(&g, 0.1).unwrap();
        let (t, st) = a.export_state().unwrap();
        let y = Var::new(&[1.0f32, 2.0], &Device::Cpu).unwrap();
        let mut b = AdamW::new(vec![("x".into(), y)], AdamWConfig::default()).unwrap();
        b.import_state(t, &st).unwrap();
        assert_eq!(b.export_state().unwrap(), (t, st));
    }
}
