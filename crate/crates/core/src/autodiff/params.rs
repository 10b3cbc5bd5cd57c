//! Named parameter tensors, their tape bindings, and checkpoint
//! persistence.
//!
//! Checkpoint format (version 1, little-endian):
//!
//! ```text
//! magic   b"SHSD"
//! version u32 = 1
//! count   u32
//! per parameter, in registration order:
//!   name_len u32, name utf-8 bytes,
//!   ndim u32, dims u32 x ndim,
//!   data f64 x product(dims)
//! ```
//!
//! f64 payloads are stored as raw IEEE bits, so save/load round-trips
//! bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Gradients, Tape, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SHSD";
const VERSION: u32 = 1;

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// An ordered collection of named parameters. Registration order is the
/// canonical order for tape binding, optimizer state, and checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Param] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Param] {
        &mut self.entries
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn register(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("parameter {name:?} already registered")));
        }
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::shape(format!(
                "parameter {name:?}: {} values for shape {shape:?}",
                data.len()
            )));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    /// Registers a weight matrix with Xavier-uniform init.
    pub fn register_xavier(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.register(name, &[rows, cols], data)
    }

    /// Registers a zero-initialized parameter (typically a bias).
    pub fn register_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        let numel: usize = shape.iter().product();
        self.register(name, shape, vec![0.0; numel])
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    /// Binds every parameter as a tracked leaf on `tape`, in registration
    /// order so node ids are reproducible.
    pub fn leaves(&self, tape: &Tape) -> Result<TapeParams> {
        let mut tensors = Vec::with_capacity(self.entries.len());
        for p in &self.entries {
            tensors.push(tape.leaf(p.data.clone(), &p.shape)?);
        }
        Ok(TapeParams {
            tensors,
            index: self.index.clone(),
        })
    }

    /// Binds every parameter as an untracked constant: the no-grad
    /// evaluation path.
    pub fn constants(&self) -> Result<TapeParams> {
        let mut tensors = Vec::with_capacity(self.entries.len());
        for p in &self.entries {
            tensors.push(Tensor::constant(p.data.clone(), &p.shape)?);
        }
        Ok(TapeParams {
            tensors,
            index: self.index.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for p in &self.entries {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
            let end = *cursor + n;
            let slice = bytes
                .get(*cursor..end)
                .ok_or_else(|| Error::invalid("checkpoint truncated"))?;
            *cursor = end;
            Ok(slice)
        };
        let u32_at = |cursor: &mut usize| -> Result<u32> {
            let b = take(cursor, 4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };
        if take(&mut cursor, 4)? != MAGIC {
            return Err(Error::invalid("not a checkpoint file (bad magic)"));
        }
        let version = u32_at(&mut cursor)?;
        if version != VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {version}")));
        }
        let count = u32_at(&mut cursor)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = u32_at(&mut cursor)? as usize;
            let name = std::str::from_utf8(take(&mut cursor, name_len)?)
                .map_err(|_| Error::invalid("checkpoint parameter name is not utf-8"))?
                .to_string();
            let ndim = u32_at(&mut cursor)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32_at(&mut cursor)? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = take(&mut cursor, numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect();
            store.register(&name, &shape, data)?;
        }
        if cursor != bytes.len() {
            return Err(Error::invalid("trailing bytes after checkpoint payload"));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// SHA-256 of the serialized checkpoint, the determinism fingerprint.
    pub fn sha256_hex(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parameters bound to one tape (or as constants), looked up by name.
pub struct TapeParams {
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl TapeParams {
    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
}

/// Extracts per-parameter gradients in registration order, zero-filled for
/// parameters the loss never touched.
pub fn collect_grads(store: &ParamStore, bound: &TapeParams, grads: &Gradients) -> Vec<Vec<f64>> {
    store
        .entries()
        .iter()
        .zip(bound.tensors())
        .map(|(p, t)| {
            grads
                .get(t)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; p.data.len()])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn sample_store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        store.register_xavier("layer.w", 3, 4, &mut rng).unwrap();
        store.register_zeros("layer.b", &[4]).unwrap();
        store
            .register("odd", &[2, 1, 2], vec![0.1, -0.2, 5e-300, f64::MIN_POSITIVE])
            .unwrap();
        store
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let store = sample_store();
        let back = ParamStore::from_bytes(&store.to_bytes()).unwrap();
        assert_eq!(store, back);
        for (a, b) in store.entries().iter().zip(back.entries()) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.bin");
        let store = sample_store();
        store.save(&path).unwrap();
        let back = ParamStore::load(&path).unwrap();
        assert_eq!(store.sha256_hex(), back.sha256_hex());
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut store = ParamStore::new();
        store.register_zeros("p", &[1]).unwrap();
        assert!(store.register_zeros("p", &[1]).is_err());
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let bytes = sample_store().to_bytes();
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn hash_changes_with_one_bit() {
        let store = sample_store();
        let mut other = store.clone();
        let flipped = f64::from_bits(other.entries()[0].data[0].to_bits() ^ 1);
        other.entries_mut()[0].data[0] = flipped;
        assert_ne!(store.sha256_hex(), other.sha256_hex());
    }
}
