use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AutodiffError, Result};
use crate::params::ParamStore;
use crate::real::{Precision, Real};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// One named tensor with its Adam moments.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CheckpointTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// JSON checkpoint of a [`ParamStore`] plus free-form metadata.
///
/// Floats are written in shortest round-trip form, so save followed by load
/// reproduces every value bit for bit.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Checkpoint<T> {
    pub format_version: u32,
    pub precision: Precision,
    pub adam_steps: u64,
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<CheckpointTensor<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn from_store(store: &ParamStore<T>, meta: serde_json::Value) -> Self {
        let tensors = store
            .params
            .iter()
            .map(|p| CheckpointTensor {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().to_vec(),
                m: p.m.data().to_vec(),
                v: p.v.data().to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            precision: T::PRECISION,
            adam_steps: store.adam_t,
            meta,
            tensors,
        }
    }

    /// Rebuilds the store, preserving registration order.
    pub fn to_store(&self) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for t in &self.tensors {
            let id = store.insert(t.name.clone(), Tensor::new(t.shape.clone(), t.data.clone())?)?;
            let p = &mut store.params[id.index()];
            p.m = Tensor::new(t.shape.clone(), t.m.clone())?;
            p.v = Tensor::new(t.shape.clone(), t.v.clone())?;
        }
        store.adam_t = self.adam_steps;
        Ok(store)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let r = BufReader::new(File::open(path)?);
        let ck: Self = serde_json::from_reader(r)
            .map_err(|e| AutodiffError::Checkpoint(format!("{}: {e}", path.display())))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let ck: Self = serde_json::from_slice(bytes)?;
        ck.validate()?;
        Ok(ck)
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(AutodiffError::Checkpoint(format!(
                "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.precision != T::PRECISION {
            return Err(AutodiffError::Checkpoint(format!(
                "checkpoint precision {} does not match {}",
                self.precision,
                T::PRECISION
            )));
        }
        Ok(())
    }
}

/// Reads only the precision tag of a checkpoint file.
pub fn peek_precision(path: impl AsRef<Path>) -> Result<Precision> {
    #[derive(Deserialize)]
    struct Header {
        precision: Precision,
    }
    let r = BufReader::new(File::open(path)?);
    let h: Header = serde_json::from_reader(r)?;
    Ok(h.precision)
}
