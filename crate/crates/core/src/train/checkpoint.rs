//! Binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//! magic `INPNTCKP`, u32 version, model name and head as u32-length UTF-8,
//! u64 seed, u64 split seed, u64 epoch, f64 dev loss, the parameter tensors,
//! then the Adam state (u64 t, f64 β1 β2 ε, first moments, second moments).
//! A tensor list is a u32 count followed by, per tensor, u32 rank, u64 dims
//! and the f64 values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{builtin_with_head, Head, ModelName, ModelSpec, ParamSet};
use crate::optim::AdamState;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 8] = b"INPNTCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelName,
    pub head: Head,
    pub seed: u64,
    pub split_seed: u64,
    /// Completed epochs when saved.
    pub epoch: usize,
    pub dev_loss: f64,
    pub params: ParamSet,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn spec(&self) -> ModelSpec {
        builtin_with_head(self.model, self.head)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut w, self.model.as_str());
        put_str(&mut w, self.head.as_str());
        w.extend_from_slice(&self.seed.to_le_bytes());
        w.extend_from_slice(&self.split_seed.to_le_bytes());
        w.extend_from_slice(&(self.epoch as u64).to_le_bytes());
        w.extend_from_slice(&self.dev_loss.to_le_bytes());
        put_tensors(&mut w, &self.params.tensors);
        w.extend_from_slice(&self.adam.t.to_le_bytes());
        for h in [self.adam.beta1, self.adam.beta2, self.adam.epsilon] {
            w.extend_from_slice(&h.to_le_bytes());
        }
        put_tensors(&mut w, &self.adam.m);
        put_tensors(&mut w, &self.adam.v);
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let model: ModelName = r.string()?.parse()?;
        let head: Head = r.string()?.parse()?;
        let seed = r.u64()?;
        let split_seed = r.u64()?;
        let epoch = r.u64()? as usize;
        let dev_loss = r.f64()?;
        let params = ParamSet {
            tensors: r.tensors()?,
        };
        let t = r.u64()?;
        let (beta1, beta2, epsilon) = (r.f64()?, r.f64()?, r.f64()?);
        let m = r.tensors()?;
        let v = r.tensors()?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ckpt = Checkpoint {
            model,
            head,
            seed,
            split_seed,
            epoch,
            dev_loss,
            params,
            adam: AdamState {
                beta1,
                beta2,
                epsilon,
                t,
                m,
                v,
            },
        };
        let spec = ckpt.spec();
        spec.check_params(&ckpt.params)
            .map_err(|e| Error::Format(format!("parameters do not fit {}: {e}", model)))?;
        let moments_fit = |ms: &[Tensor]| {
            ms.len() == ckpt.params.tensors.len()
                && ms.iter().zip(&ckpt.params.tensors).all(|(a, b)| a.shape() == b.shape())
        };
        if !moments_fit(&ckpt.adam.m) || !moments_fit(&ckpt.adam.v) {
            return Err(Error::Format("optimizer moments do not match parameters".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(w: &mut Vec<u8>, s: &str) {
    w.extend_from_slice(&(s.len() as u32).to_le_bytes());
    w.extend_from_slice(s.as_bytes());
}

fn put_tensors(w: &mut Vec<u8>, ts: &[Tensor]) {
    w.extend_from_slice(&(ts.len() as u32).to_le_bytes());
    for t in ts {
        w.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            w.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            w.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated: needed {n} bytes at offset {}, file is {}", self.pos, self.bytes.len()))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("name is not UTF-8".into()))
    }

    fn tensors(&mut self) -> Result<Vec<Tensor>> {
        let count = self.u32()? as usize;
        let mut out = Vec::new();
        for _ in 0..count {
            let rank = self.u32()? as usize;
            if rank == 0 || rank > crate::tensor::MAX_RANK {
                return Err(Error::Format(format!("tensor rank {rank} at offset {}", self.pos)));
            }
            let dims = (0..rank)
                .map(|_| self.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let shape = Shape::new(&dims).map_err(|e| Error::Format(e.to_string()))?;
            let raw = self.take(shape.numel().checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            out.push(Tensor::from_vec(&shape, data).map_err(|e| Error::Format(e.to_string()))?);
        }
        Ok(out)
    }
}
