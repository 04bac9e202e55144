//! Minimal network plumbing on top of candle tensors: a named parameter
//! store with per-parameter freezing, a few layers, and checkpoint I/O.

mod kernels;
mod layers;
pub mod loss;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use candle_core::{DType, Device, Tensor, Var};
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

pub use kernels::{channel_stats, conv2d, leaky_relu, normalize, NormStats};
pub use layers::{BatchNorm2d, Conv2d, InstanceNorm2d};

use crate::error::{Error, Result};
use crate::seed;

/// A trainable tensor or a running-statistics buffer.
#[derive(Clone, Debug)]
pub struct Param {
    var: Var,
    frozen: Arc<AtomicBool>,
}

impl Param {
    /// The value used in forward passes. Frozen parameters are detached, so
    /// no gradient ever reaches them.
    pub fn t(&self) -> Tensor {
        if self.is_frozen() {
            self.var.as_detached_tensor()
        } else {
            self.var.as_tensor().clone()
        }
    }

    pub fn var(&self) -> &Var {
        &self.var
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.load(Ordering::Relaxed)
    }

    pub fn set(&self, value: &Tensor) -> Result<()> {
        Ok(self.var.set(value)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Weight,
    Buffer,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Normal(f64),
    /// Normal with std `sqrt(2 / fan_in)`.
    He,
    Const(f64),
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    kind: Kind,
    param: Param,
}

/// Owns every parameter of one network, in registration order.
#[derive(Debug)]
pub struct ParamStore {
    device: Device,
    dtype: DType,
    rng: seed::Rng,
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
}

impl ParamStore {
    pub fn new(dtype: DType, seed_value: u64) -> Self {
        ParamStore {
            device: Device::Cpu,
            dtype,
            rng: seed::rng(seed_value),
            entries: Vec::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    fn add(&mut self, name: String, kind: Kind, shape: &[usize], init: Init) -> Result<Param> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Checkpoint(format!("duplicate parameter name {name}")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => self.normal(n, std),
            Init::He => {
                let fan_in: usize = shape[1..].iter().product();
                self.normal(n, (2.0 / fan_in.max(1) as f64).sqrt())
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let param = Param {
            var: Var::from_tensor(&t)?,
            frozen: Arc::new(AtomicBool::new(false)),
        };
        self.entries.push(Entry {
            name,
            kind,
            param: param.clone(),
        });
        Ok(param)
    }

    fn normal(&mut self, n: usize, std: f64) -> Vec<f64> {
        let d = Normal::new(0.0, std).expect("finite std");
        (0..n).map(|_| d.sample(&mut self.rng)).collect()
    }

    pub fn weight(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Result<Param> {
        self.add(name.into(), Kind::Weight, shape, init)
    }

    pub fn buffer(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Result<Param> {
        self.add(name.into(), Kind::Buffer, shape, init)
    }

    /// Freeze (or unfreeze) every entry for which `pred(name, kind)` holds.
    pub fn set_frozen(&self, frozen: bool, pred: impl Fn(&str, Kind) -> bool) {
        for e in &self.entries {
            if pred(&e.name, e.kind) {
                e.param.frozen.store(frozen, Ordering::Relaxed);
            }
        }
    }

    pub fn freeze_all(&self) {
        self.set_frozen(true, |_, _| true);
    }

    /// Unfrozen weights, for an optimizer.
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.entries
            .iter()
            .filter(|e| e.kind == Kind::Weight && !e.param.is_frozen())
            .map(|e| e.param.var.clone())
            .collect()
    }

    pub fn vars_with_prefix(&self, prefix: &str) -> Vec<Var> {
        self.entries
            .iter()
            .filter(|e| e.kind == Kind::Weight && !e.param.is_frozen() && e.name.starts_with(prefix))
            .map(|e| e.param.var.clone())
            .collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.param)
    }

    /// Buffers count toward the total; only unfrozen weights are trainable.
    pub fn count(&self) -> ParamCount {
        let mut c = ParamCount { total: 0, trainable: 0 };
        for e in &self.entries {
            let n = e.param.var.elem_count();
            c.total += n;
            if e.kind == Kind::Weight && !e.param.is_frozen() {
                c.trainable += n;
            }
        }
        c
    }

    /// SHA-256 over names and raw values of every entry whose name passes
    /// `filter`.
    pub fn checksum_where(&self, filter: impl Fn(&str) -> bool) -> Result<String> {
        let mut h = Sha256::new();
        for e in self.entries.iter().filter(|e| filter(&e.name)) {
            h.update(e.name.as_bytes());
            let flat = e.param.var.as_tensor().flatten_all()?;
            match self.dtype {
                DType::F64 => flat.to_vec1::<f64>()?.iter().for_each(|v| h.update(v.to_le_bytes())),
                _ => flat
                    .to_dtype(DType::F32)?
                    .to_vec1::<f32>()?
                    .iter()
                    .for_each(|v| h.update(v.to_le_bytes())),
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn checksum(&self) -> Result<String> {
        self.checksum_where(|_| true)
    }

    /// Write every entry to a safetensors file with `metadata` in its header.
    pub fn save(&self, path: &Path, metadata: HashMap<String, String>) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tensors: Vec<(String, Tensor)> = self
            .entries
            .iter()
            .map(|e| (e.name.clone(), e.param.var.as_tensor().clone()))
            .collect();
        safetensors::serialize_to_file(tensors, Some(metadata), path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    /// Overwrite every entry from a checkpoint; names and shapes must match.
    pub fn load(&self, path: &Path) -> Result<HashMap<String, String>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let meta = read_metadata(&bytes, path)?;
        let tensors = candle_core::safetensors::load_buffer(&bytes, &self.device)?;
        for e in &self.entries {
            let t = tensors
                .get(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("{}: missing tensor {}", path.display(), e.name)))?;
            if t.dims() != e.param.var.dims() {
                return Err(Error::Checkpoint(format!(
                    "{}: tensor {} has shape {:?}, expected {:?}",
                    path.display(),
                    e.name,
                    t.dims(),
                    e.param.var.dims()
                )));
            }
            e.param.var.set(&t.to_dtype(self.dtype)?)?;
        }
        if tensors.len() != self.entries.len() {
            return Err(Error::Checkpoint(format!(
                "{}: {} tensors, network has {}",
                path.display(),
                tensors.len(),
                self.entries.len()
            )));
        }
        Ok(meta)
    }

    /// Copy values from another store with identical layout.
    pub fn copy_from(&self, other: &ParamStore) -> Result<()> {
        for (a, b) in self.entries.iter().zip(&other.entries) {
            if a.name != b.name {
                return Err(Error::Checkpoint(format!(
                    "layout mismatch at {} vs {}",
                    a.name, b.name
                )));
            }
            a.param.var.set(&b.param.var.as_tensor().to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

/// Header metadata of a checkpoint file.
pub fn read_checkpoint_metadata(path: &Path) -> Result<HashMap<String, String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_metadata(&bytes, path)
}

fn read_metadata(bytes: &[u8], path: &Path) -> Result<HashMap<String, String>> {
    let (_, meta) = safetensors::SafeTensors::read_metadata(bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(meta.metadata().clone().unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new(DType::F32, 3);
        s.weight("a.w", &[4, 2, 3, 3], Init::He).unwrap();
        s.weight("a.b", &[4], Init::Const(0.0)).unwrap();
        s.buffer("a.mean", &[4], Init::Const(0.0)).unwrap();
        s
    }

    #[test]
    fn counts_and_freezing() {
        let s = store();
        assert_eq!(
            s.count(),
            ParamCount {
                total: 80,
                trainable: 76
            }
        );
        s.set_frozen(true, |n, _| n == "a.w");
        assert_eq!(s.count().trainable, 4);
        assert_eq!(s.trainable_vars().len(), 1);
        assert!(s.get("a.w").unwrap().is_frozen());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        assert_eq!(store().checksum().unwrap(), store().checksum().unwrap());
        let mut other = ParamStore::new(DType::F32, 4);
        other.weight("a.w", &[4, 2, 3, 3], Init::He).unwrap();
        assert_ne!(
            store().checksum_where(|n| n == "a.w").unwrap(),
            other.checksum().unwrap()
        );
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store();
        assert!(s.weight("a.b", &[1], Init::Const(0.0)).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.safetensors");
        let a = store();
        a.save(&path, HashMap::from([("kind".to_string(), "test".to_string())]))
            .unwrap();
        let mut b = ParamStore::new(DType::F32, 99);
        b.weight("a.w", &[4, 2, 3, 3], Init::He).unwrap();
        b.weight("a.b", &[4], Init::Const(1.0)).unwrap();
        b.buffer("a.mean", &[4], Init::Const(1.0)).unwrap();
        let meta = b.load(&path).unwrap();
        assert_eq!(meta["kind"], "test");
        assert_eq!(a.checksum().unwrap(), b.checksum().unwrap());
        assert_eq!(read_checkpoint_metadata(&path).unwrap()["kind"], "test");

        let mut c = ParamStore::new(DType::F32, 0);
        c.weight("a.w", &[4, 2, 3, 1], Init::He).unwrap();
        assert!(c.load(&path).is_err());
    }

    #[test]
    fn frozen_params_receive_no_gradient() {
        let s = store();
        s.set_frozen(true, |n, _| n == "a.b");
        let w = s.get("a.w").unwrap();
        let b = s.get("a.b").unwrap();
        let loss = (w.t().sum_all().unwrap() + b.t().sum_all().unwrap()).unwrap();
        let grads = loss.backward().unwrap();
        assert!(grads.get(w.var().as_tensor()).is_some());
        assert!(grads.get(b.var().as_tensor()).is_none());
    }
}
