//! Binary model container.
//!
//! Layout (little-endian): `"RCKP"`, u16 version, u16 flags, u32 metadata
//! length, UTF-8 JSON metadata, u32 tensor count, then per tensor
//! `[u16 name len][name][u32 rows][u32 cols][rows × cols × f64]`.

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::nn::{Parameterized, Tensor2D};
use crate::{Error, Result, Scalar};

pub const MAGIC: &[u8; 4] = b"RCKP";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: Value,
    pub tensors: Vec<(String, Tensor2D<f64>)>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar, M: Parameterized<T> + ?Sized>(model: &M, metadata: Value) -> Self {
        let mut tensors = Vec::new();
        model.visit(&mut |name, t| {
            let data = t.data().iter().map(|x| x.as_f64()).collect();
            tensors.push((name.to_string(), Tensor2D::from_vec(t.rows(), t.cols(), data).expect("same shape")));
        });
        Self { metadata, tensors }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor2D<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies stored tensors into `model`; names and shapes must match exactly.
    pub fn load_into<T: Scalar, M: Parameterized<T> + ?Sized>(&self, model: &mut M) -> Result<()> {
        let mut problem: Option<String> = None;
        let mut seen = 0;
        model.visit_mut(&mut |name, t| {
            if problem.is_some() {
                return;
            }
            match self.tensor(name) {
                None => problem = Some(format!("checkpoint lacks tensor {name}")),
                Some(src) if src.shape() != t.shape() => {
                    problem = Some(format!("tensor {name}: checkpoint {:?}, model {:?}", src.shape(), t.shape()))
                }
                Some(src) => {
                    for (d, &s) in t.data_mut().iter_mut().zip(src.data()) {
                        *d = T::of(s);
                    }
                    seen += 1;
                }
            }
        });
        if let Some(p) = problem {
            return Err(Error::Shape(p));
        }
        if seen != self.tensors.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} tensors, model uses {seen}",
                self.tensors.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.metadata.to_string();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::Corrupt { offset: pos as u64, reason: format!("truncated while reading {what}") });
            }
            pos += n;
            Ok(&bytes[pos - n..pos])
        };
        if take(4, "magic")? != MAGIC {
            return Err(Error::Corrupt { offset: 0, reason: "bad checkpoint magic".into() });
        }
        let version = u16::from_le_bytes(take(2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Corrupt { offset: 4, reason: format!("unsupported checkpoint version {version}") });
        }
        take(2, "flags")?;
        let meta_len = u32::from_le_bytes(take(4, "metadata length")?.try_into().unwrap()) as usize;
        let metadata: Value = serde_json::from_slice(take(meta_len, "metadata")?)?;
        let count = u32::from_le_bytes(take(4, "tensor count")?.try_into().unwrap());
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(2, "name length")?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(name_len, "tensor name")?.to_vec())
                .map_err(|_| Error::Corrupt { offset: 0, reason: "tensor name is not UTF-8".into() })?;
            let rows = u32::from_le_bytes(take(4, "rows")?.try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(take(4, "cols")?.try_into().unwrap()) as usize;
            let raw = take(rows * cols * 8, &name)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor2D::from_vec(rows, cols, data)?));
        }
        if pos != bytes.len() {
            return Err(Error::Corrupt { offset: pos as u64, reason: "trailing bytes".into() });
        }
        Ok(Self { metadata, tensors })
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes())
            .and_then(|_| fs::rename(&tmp, path))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;

    #[test]
    fn round_trip_and_load() {
        let mut rng = crate::seeded_rng(1);
        let d: Dense<f64> = Dense::glorot(3, 2, &mut rng);
        let ck = Checkpoint::from_model(&d, serde_json::json!({"kind": "dense"}));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let mut target: Dense<f64> = Dense::zeros(3, 2);
        back.load_into(&mut target).unwrap();
        assert_eq!(target, d);
        let mut wrong: Dense<f64> = Dense::zeros(2, 2);
        assert!(back.load_into(&mut wrong).is_err());
    }

    #[test]
    fn rejects_damage() {
        let d: Dense<f64> = Dense::zeros(2, 2);
        let bytes = Checkpoint::from_model(&d, Value::Null).to_bytes();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Corrupt { .. })));
    }
}
