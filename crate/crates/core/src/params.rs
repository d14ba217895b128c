//! Named parameter collections and their on-disk checkpoints.
//!
//! A checkpoint is a directory holding one SSTB file per tensor plus a
//! `manifest.json` listing names, shapes and the architecture description.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sst_autograd::{Tape, Tensor, Var};

use crate::error::{Result, SstError};
use crate::sstb;

/// Ordered named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: String,
    pub parameter_count: usize,
    pub arch: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter `{name}`");
        self.names.push(name);
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every tensor as a leaf on `tape`, in order.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.var(t.clone())).collect()
    }

    pub fn map_tensors(&self, f: impl Fn(&Tensor) -> Tensor) -> ParamSet {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(f).collect(),
        }
    }

    /// Rounds every value to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    /// Hex SHA-256 over names, shapes and exact `f64` bit patterns.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn save(&self, dir: &Path, kind: &str, arch: serde_json::Value) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.len());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let file = format!("{name}.sstb");
            let data: Vec<f32> = t.data().iter().map(|&v| v as f32).collect();
            sstb::write_tensor(&dir.join(&file), t.shape(), &data)?;
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                file,
            });
        }
        let manifest = CheckpointManifest {
            kind: kind.to_string(),
            parameter_count: self.parameter_count(),
            arch,
            tensors: entries,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path, expected_kind: &str) -> Result<(ParamSet, CheckpointManifest)> {
        let manifest: CheckpointManifest =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.kind != expected_kind {
            return Err(SstError::Checkpoint(format!(
                "{} holds a `{}` checkpoint, expected `{expected_kind}`",
                dir.display(),
                manifest.kind
            )));
        }
        let mut params = ParamSet::new();
        for e in &manifest.tensors {
            let (dims, data) = sstb::read_tensor(&dir.join(&e.file))?;
            if dims != e.shape {
                return Err(SstError::HeaderMismatch(format!(
                    "tensor `{}` has dims {dims:?}, manifest says {:?}",
                    e.name, e.shape
                )));
            }
            params.push(
                e.name.clone(),
                Tensor::new(dims, data.into_iter().map(f64::from).collect()),
            );
        }
        Ok((params, manifest))
    }
}
