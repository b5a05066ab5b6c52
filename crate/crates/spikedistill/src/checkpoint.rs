//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SPKDCKP1"
//! 8       4     format version (u32) = 1
//! 12      8     epoch (u64)
//! 20      8     master seed (u64)          — all rng streams derive from
//!                                            (seed, purpose, epoch, iter),
//!                                            so this is the full rng state
//! 28      8     optimizer step count (u64)
//! 36      4     tensor count (u32)
//! then per tensor:
//!         4     name length (u32)
//!         *     name (utf-8)
//!         1     dtype tag (0 = f32, 1 = f64)
//!         4     rank (u32)
//!         8*r   extents (u64 each)
//!         *     raw values, little-endian
//! ```
//!
//! save → load → save is byte-identical; loading into a mismatched
//! architecture fails fast on the first name or shape difference.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::Parameter;
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SPKDCKP1";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub epoch: u64,
    pub master_seed: u64,
    pub optim_step: u64,
    /// Ordered (name, tensor) pairs; order is part of the byte format.
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.master_seed.to_le_bytes());
        out.extend_from_slice(&self.optim_step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.tag());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
            let slice = bytes
                .get(*pos..*pos + n)
                .ok_or_else(|| Error::Format(format!("checkpoint truncated reading {what}")))?;
            *pos += n;
            Ok(slice)
        };
        let magic = take(&mut pos, 8, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let epoch = u64::from_le_bytes(take(&mut pos, 8, "epoch")?.try_into().unwrap());
        let master_seed = u64::from_le_bytes(take(&mut pos, 8, "seed")?.try_into().unwrap());
        let optim_step = u64::from_le_bytes(take(&mut pos, 8, "optim step")?.try_into().unwrap());
        let count = u32::from_le_bytes(take(&mut pos, 4, "tensor count")?.try_into().unwrap());
        let mut tensors = Vec::with_capacity(count as usize);
        for i in 0..count {
            let nlen =
                u32::from_le_bytes(take(&mut pos, 4, "name length")?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, nlen, "name")?)
                .map_err(|_| Error::Format(format!("tensor {i}: name is not utf-8")))?
                .to_string();
            let dtype = take(&mut pos, 1, "dtype")?[0];
            if Dtype::from_tag(dtype) != Some(T::DTYPE) {
                return Err(Error::Format(format!(
                    "tensor {name}: dtype tag {dtype} does not match expected {:?}",
                    T::DTYPE
                )));
            }
            let rank =
                u32::from_le_bytes(take(&mut pos, 4, "rank")?.try_into().unwrap()) as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(
                    u64::from_le_bytes(take(&mut pos, 8, "extent")?.try_into().unwrap()) as usize,
                );
            }
            let numel: usize = shape.iter().product();
            let raw = take(&mut pos, numel * T::WIDTH, "tensor data")?;
            let data = raw.chunks(T::WIDTH).map(T::read_le).collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - pos)));
        }
        Ok(Checkpoint { epoch, master_seed, optim_step, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }

    /// Copy stored tensors into `params`, matching on full name; every
    /// parameter must be present with an identical shape.
    pub fn apply_to_params(&self, params: &mut [Parameter<T>]) -> Result<()> {
        for p in params.iter_mut() {
            let stored = self
                .tensors
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::State(format!("checkpoint has no tensor named {}", p.name)))?;
            if stored.1.shape() != p.value.shape() {
                return Err(Error::State(format!(
                    "checkpoint tensor {} has shape {:?}, model expects {:?}",
                    p.name,
                    stored.1.shape(),
                    p.value.shape()
                )));
            }
            p.value = stored.1.clone();
        }
        Ok(())
    }

    pub fn tensors_with_prefix(&self, prefix: &str) -> Vec<(String, Tensor<T>)> {
        self.tensors
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect()
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n.starts_with(prefix))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f32> {
        Checkpoint {
            epoch: 3,
            master_seed: 77,
            optim_step: 120,
            tensors: vec![
                ("teacher/conv0/w".into(), Tensor::new(vec![2, 3], vec![1.5; 6]).unwrap()),
                ("teacher/conv0/b".into(), Tensor::new(vec![3], vec![0.0, -1.0, 2.25]).unwrap()),
            ],
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ckpt = sample();
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.epoch, 3);
        assert_eq!(back.master_seed, 77);
        assert_eq!(back.tensors[1].1.data(), ckpt.tensors[1].1.data());
    }

    #[test]
    fn corrupt_magic_and_truncation_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(Checkpoint::<f32>::from_bytes(&bytes).is_err());
        let bytes = sample().to_bytes();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::<f64>::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn apply_fails_fast_on_architecture_mismatch() {
        let ckpt = sample();
        let mut wrong_shape =
            vec![Parameter::new("teacher/conv0/w", Tensor::<f32>::zeros(&[3, 3]))];
        assert!(ckpt.apply_to_params(&mut wrong_shape).is_err());
        let mut wrong_name = vec![Parameter::new("student/conv0/w", Tensor::<f32>::zeros(&[2, 3]))];
        assert!(ckpt.apply_to_params(&mut wrong_name).is_err());
        let mut ok = vec![
            Parameter::new("teacher/conv0/w", Tensor::<f32>::zeros(&[2, 3])),
            Parameter::new("teacher/conv0/b", Tensor::<f32>::zeros(&[3])),
        ];
        ckpt.apply_to_params(&mut ok).unwrap();
        assert_eq!(ok[0].value.data(), &[1.5; 6]);
    }

    #[test]
    fn prefix_queries() {
        let ckpt = sample();
        assert!(ckpt.has_prefix("teacher/"));
        assert!(!ckpt.has_prefix("distill/"));
        assert_eq!(ckpt.tensors_with_prefix("teacher/conv0/").len(), 2);
    }
}
