//! Named parameter storage with deterministic initialization.
//!
//! Every parameter is initialized from a ChaCha stream keyed by
//! `(root seed, parameter name)`, so a model's initial weights do not depend
//! on construction order.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Const(f64),
    Normal { std: f64 },
    /// Uniform on `[-bound, bound]`.
    Uniform { bound: f64 },
}

impl Init {
    /// PyTorch-style default for linear and conv weights.
    pub fn fan_in(fan_in: usize) -> Self {
        Init::Uniform {
            bound: 1.0 / (fan_in as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub var: Var,
    pub trainable: bool,
}

#[derive(Debug)]
struct Inner {
    entries: BTreeMap<String, Param>,
}

/// Shared, cloneable handle to a set of named parameters.
#[derive(Debug, Clone)]
pub struct ParamStore {
    inner: Arc<Mutex<Inner>>,
    seed: u64,
    dtype: DType,
    device: Device,
    zero_init: bool,
}

/// FNV-1a, used only to derive per-name seeds.
pub fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives an independent seed for a named subsystem from a root seed.
pub fn split_seed(root: u64, what: &str) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(root ^ name_hash(what));
    rng.gen()
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            inner: Arc::new(Mutex::new(Inner {
                entries: BTreeMap::new(),
            })),
            seed,
            dtype,
            device: Device::Cpu,
            zero_init: false,
        }
    }

    /// A store whose every newly created parameter is zero, whatever its `Init`.
    pub fn zeros(dtype: DType) -> Self {
        Self {
            zero_init: true,
            ..Self::new(0, dtype)
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("parameter store poisoned")
    }

    pub fn root(&self) -> Scope {
        Scope {
            store: self.clone(),
            prefix: String::new(),
        }
    }

    fn sample(&self, name: &str, shape: &Shape, init: Init) -> Result<Tensor> {
        let n = shape.elem_count();
        let init = if self.zero_init { Init::Const(0.0) } else { init };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name));
        let data: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::Normal { std } => (0..n)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v * std
                })
                .collect(),
            Init::Uniform { bound } => (0..n).map(|_| rng.gen_range(-bound..=bound)).collect(),
        };
        Ok(Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    fn get_or_init(&self, name: &str, shape: Shape, init: Init, trainable: bool) -> Result<Tensor> {
        if let Some(p) = self.lock().entries.get(name) {
            if p.var.shape() != &shape {
                return Err(shape_err!(
                    "parameter {name} has shape {:?}, requested {:?}",
                    p.var.dims(),
                    shape.dims()
                ));
            }
            return Ok(p.var.as_tensor().clone());
        }
        let value = self.sample(name, &shape, init)?;
        let var = Var::from_tensor(&value)?;
        let t = var.as_tensor().clone();
        self.lock()
            .entries
            .insert(name.to_string(), Param { var, trainable });
        Ok(t)
    }

    pub fn names(&self) -> Vec<String> {
        self.lock().entries.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<Param> {
        self.lock().entries.get(name).cloned()
    }

    /// All parameters whose name starts with `prefix`, sorted by name.
    pub fn params_with_prefix(&self, prefix: &str) -> Vec<(String, Param)> {
        self.lock()
            .entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Trainable variables under `prefix`, sorted by name.
    pub fn trainable_vars(&self, prefix: &str) -> Vec<(String, Var)> {
        self.params_with_prefix(prefix)
            .into_iter()
            .filter(|(_, p)| p.trainable)
            .map(|(k, p)| (k, p.var))
            .collect()
    }

    /// Snapshot of every tensor as flat `f32` data.
    pub fn export(&self) -> Result<BTreeMap<String, (Vec<usize>, Vec<f32>)>> {
        let mut out = BTreeMap::new();
        for (k, p) in self.lock().entries.iter() {
            let t = p.var.as_tensor();
            let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            out.insert(k.clone(), (t.dims().to_vec(), data));
        }
        Ok(out)
    }

    /// Overwrites existing parameters in place. Every name under `prefix` must
    /// be supplied with a matching shape; nothing is modified on error.
    pub fn import(
        &self,
        prefix: &str,
        tensors: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    ) -> Result<()> {
        let entries = self.params_with_prefix(prefix);
        let mut staged = Vec::with_capacity(entries.len());
        for (name, p) in &entries {
            let (dims, data) = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if dims.as_slice() != p.var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {dims:?}, model expects {:?}",
                    p.var.dims()
                )));
            }
            let t = Tensor::from_slice(data, dims.as_slice(), &self.device)?.to_dtype(self.dtype)?;
            staged.push((p.var.clone(), t));
        }
        for (var, t) in staged {
            var.set(&t)?;
        }
        Ok(())
    }
}

/// A naming scope into a [`ParamStore`], in the spirit of a variable builder.
#[derive(Debug, Clone)]
pub struct Scope {
    store: ParamStore,
    prefix: String,
}

impl Scope {
    pub fn pp(&self, name: impl std::fmt::Display) -> Scope {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        Scope {
            store: self.store.clone(),
            prefix,
        }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn param(&self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Tensor> {
        self.store
            .get_or_init(&self.path(name), shape.into(), init, true)
    }

    /// A parameter excluded from optimization but persisted with the model.
    pub fn frozen(&self, name: &str, shape: impl Into<Shape>, init: Init) -> Result<Tensor> {
        self.store
            .get_or_init(&self.path(name), shape.into(), init, false)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }
}
