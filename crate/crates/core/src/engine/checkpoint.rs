//! Versioned binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HYXP" | version u32
//! config_len u64 | config utf-8
//! best_val_mrr f64
//! n_curvatures u32 | f64 * n
//! n_tensors u32 | per tensor:
//!     name_len u32 | name | dtype u8 (0 = f64) | space u8 (0 euclidean, 1 poincare, 2 lorentz)
//!     [curvature tensor index u32 when lorentz] | trainable u8
//!     ndim u32 | dims u64 * ndim | data f64 * prod(dims)
//! has_optimizer u8 | [step u64 | skipped u64 | per tensor: m f64 * len, v f64 * len]
//! ```

use std::path::Path;

use super::optim::AdamState;
use super::params::{ParamId, ParamSpace, ParamStore};
use crate::error::{Error, Result};
use crate::fsio;

pub const MAGIC: &[u8; 4] = b"HYXP";
pub const VERSION: u32 = 1;

const DTYPE_F64: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Serialised run configuration the parameters were trained with.
    pub config_text: String,
    pub best_val_mrr: f64,
    pub curvatures: Vec<f64>,
    pub params: ParamStore,
    pub optimizer: Option<AdamState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(self.config_text.len() as u64);
        w.bytes(self.config_text.as_bytes());
        w.f64s(&[self.best_val_mrr]);
        w.u32(self.curvatures.len() as u32);
        w.f64s(&self.curvatures);
        w.u32(self.params.len() as u32);
        for (_, t) in self.params.iter() {
            w.u32(t.name.len() as u32);
            w.bytes(t.name.as_bytes());
            w.u8(DTYPE_F64);
            match t.space {
                ParamSpace::Euclidean => w.u8(0),
                ParamSpace::Poincare => w.u8(1),
                ParamSpace::Lorentz { curvature } => {
                    w.u8(2);
                    w.u32(curvature.0 as u32);
                }
            }
            w.u8(u8::from(t.trainable));
            w.u32(t.shape.len() as u32);
            for d in &t.shape {
                w.u64(*d as u64);
            }
            w.f64s(&t.data);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                w.u64(s.step);
                w.u64(s.skipped);
                for (m, v) in s.m.iter().zip(&s.v) {
                    w.f64s(m);
                    w.f64s(v);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {VERSION})"
            )));
        }
        let n = r.len()?;
        let config_text = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("config is not utf-8".into()))?;
        let best_val_mrr = r.f64()?;
        let nc = r.u32()? as usize;
        let curvatures = r.f64s(nc)?;
        let nt = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..nt {
            let nl = r.u32()? as usize;
            let name = String::from_utf8(r.take(nl)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F64 {
                return Err(Error::Checkpoint(format!("tensor {name}: unknown dtype {dtype}")));
            }
            let space = match r.u8()? {
                0 => ParamSpace::Euclidean,
                1 => ParamSpace::Poincare,
                2 => ParamSpace::Lorentz {
                    curvature: ParamId(r.u32()? as usize),
                },
                s => return Err(Error::Checkpoint(format!("tensor {name}: unknown space {s}"))),
            };
            let trainable = r.u8()? != 0;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().product();
            let data = r.f64s(numel)?;
            if params.id(&name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
            let id = params.add(name, shape, data, space);
            params.set_trainable(id, trainable);
        }
        for (_, t) in params.iter() {
            if let ParamSpace::Lorentz { curvature } = t.space {
                if curvature.0 >= params.len() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {} references missing curvature {}",
                        t.name, curvature.0
                    )));
                }
            }
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let skipped = r.u64()?;
                let mut m = Vec::with_capacity(params.len());
                let mut v = Vec::with_capacity(params.len());
                for (_, t) in params.iter() {
                    m.push(r.f64s(t.data.len())?);
                    v.push(r.f64s(t.data.len())?);
                }
                Some(AdamState { step, skipped, m, v })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        Ok(Self {
            config_text,
            best_val_mrr,
            curvatures,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        let k = params.add("k", vec![1], vec![0.54], ParamSpace::Euclidean);
        params.add("w", vec![2, 3], (0..6).map(f64::from).collect(), ParamSpace::Euclidean);
        params.add("b", vec![3], vec![1.5, 0.5, 1.0], ParamSpace::Lorentz { curvature: k });
        let p = params.add("p", vec![2], vec![0.1, -0.2], ParamSpace::Poincare);
        params.set_trainable(p, false);
        let optimizer = Some(AdamState {
            step: 7,
            skipped: 1,
            m: params.iter().map(|(_, t)| vec![0.25; t.data.len()]).collect(),
            v: params.iter().map(|(_, t)| vec![0.5; t.data.len()]).collect(),
        });
        Checkpoint {
            config_text: "[model]\nhidden_dim = 3\n".into(),
            best_val_mrr: 4.25,
            curvatures: vec![1.0, 0.7],
            params,
            optimizer,
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_version_and_bad_input() {
        let mut bytes = sample().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");

        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"NOPE").is_err());
    }
}
