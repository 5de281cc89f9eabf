//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "NSCK" | version u32 | epoch u64 | learning_rate f64 | seed u64 | rng_counter u64
//! count u32 | count × { name_len u32 | name bytes | rank u32 | dims u64 × rank | data f64 × prod(dims) }
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::params::Parameters;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"NSCK";
pub const FORMAT_VERSION: u32 = 1;

/// Name under which the optimizer step counter is stored as a 1-element tensor.
const STEP_NAME: &str = "opt.step";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub learning_rate: f64,
    pub seed: u64,
    pub rng_counter: u64,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture<P: Parameters + ?Sized>(
        params: &P,
        optimizer: Option<&OptimizerState>,
        epoch: u64,
        learning_rate: f64,
        rng: &Rng,
    ) -> Self {
        let mut tensors: Vec<(String, Tensor)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        if let Some(opt) = optimizer {
            tensors.extend(opt.named_tensors().into_iter().map(|(n, t)| (n, t.clone())));
            tensors.push((STEP_NAME.into(), Tensor::from_vec(vec![opt.step as f64])));
        }
        Checkpoint {
            epoch,
            learning_rate,
            seed: rng.seed(),
            rng_counter: rng.counter(),
            tensors,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn rng(&self) -> Rng {
        Rng::from_state(self.seed, self.rng_counter)
    }

    /// Copy stored tensors into `params` by name; every parameter must be
    /// present with a matching shape.
    pub fn restore_params<P: Parameters + ?Sized>(&self, params: &mut P) -> Result<()> {
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let sources = names
            .iter()
            .map(|n| {
                self.get(n)
                    .ok_or_else(|| Error::Format(format!("checkpoint has no tensor `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        for ((dst, src), name) in params.tensors_mut().into_iter().zip(sources).zip(&names) {
            if dst.shape() != src.shape() {
                return Err(Error::Format(format!(
                    "tensor `{name}` has shape {:?} in checkpoint, {:?} in model",
                    src.shape(),
                    dst.shape()
                )));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    /// Copy stored optimizer memory into `state`, which must already have
    /// the right number and shapes of moment tensors.
    pub fn restore_optimizer(&self, state: &mut OptimizerState) -> Result<()> {
        let step = self
            .get(STEP_NAME)
            .ok_or_else(|| Error::Format("checkpoint has no optimizer state".into()))?;
        for (prefix, tensors) in [("opt.first", &mut state.first), ("opt.second", &mut state.second)] {
            for (k, t) in tensors.iter_mut().enumerate() {
                let name = format!("{prefix}.{k}");
                let src = self
                    .get(&name)
                    .ok_or_else(|| Error::Format(format!("checkpoint has no tensor `{name}`")))?;
                if src.shape() != t.shape() {
                    return Err(Error::Format(format!("tensor `{name}` has the wrong shape")));
                }
                *t = src.clone();
            }
        }
        state.step = step.data()[0] as u64;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.learning_rate.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.rng_counter.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let epoch = r.u64()?;
        let learning_rate = f64::from_bits(r.u64()?);
        let seed = r.u64()?;
        let rng_counter = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("tensor `{name}` is too large")))?;
            if n > r.remaining() / 8 {
                return Err(Error::Format(format!("tensor `{name}` is truncated")));
            }
            let data = (0..n)
                .map(|_| r.u64().map(f64::from_bits))
                .collect::<Result<Vec<_>>>()?;
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint {
            epoch,
            learning_rate,
            seed,
            rng_counter,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format(format!(
                "unexpected end of checkpoint at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
