//! Binary parameter checkpoint.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes   "SEATCKPT"
//! version    u32       1
//! meta_len   u32       byte length of the metadata block
//! meta       UTF-8     `key=value` lines (model config, standardizer, ...)
//! adam       4 x f64   lr, beta1, beta2, epsilon
//! step       u64       Adam step counter
//! n_slots    u32
//! per slot:
//!   name_len u32, name UTF-8
//!   rows u32, cols u32
//!   value    rows*cols f64 (row-major)
//!   m        rows*cols f64
//!   v        rows*cols f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{AdamConfig, Matrix, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SEATCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub adam: AdamConfig,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn meta_get(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_require(&self, key: &str) -> Result<&str> {
        self.meta_get(key)
            .ok_or_else(|| Error::InvalidInput(format!("checkpoint is missing {key:?}")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let mut meta = String::new();
        for (k, v) in &self.meta {
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
        for x in [self.adam.lr, self.adam.beta1, self.adam.beta2, self.adam.epsilon] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&self.params.step().to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for s in self.params.slots() {
            w.write_all(&(s.name.len() as u32).to_le_bytes())?;
            w.write_all(s.name.as_bytes())?;
            w.write_all(&(s.value.rows() as u32).to_le_bytes())?;
            w.write_all(&(s.value.cols() as u32).to_le_bytes())?;
            for m in [&s.value, &s.m, &s.v] {
                for x in m.data() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        buf
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("corrupt checkpoint: {m}"));
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        read_exact(&mut r, &mut meta_bytes)?;
        let meta_text = String::from_utf8(meta_bytes).map_err(|_| bad("metadata not UTF-8"))?;
        let meta = meta_text
            .lines()
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| bad("metadata line without '='"))
            })
            .collect::<Result<Vec<_>>>()?;
        let adam = AdamConfig {
            lr: read_f64(&mut r)?,
            beta1: read_f64(&mut r)?,
            beta2: read_f64(&mut r)?,
            epsilon: read_f64(&mut r)?,
        };
        let step = read_u64(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| bad("slot name not UTF-8"))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut read_mat = || -> Result<Matrix> {
                let data = (0..rows * cols)
                    .map(|_| read_f64(&mut r))
                    .collect::<Result<Vec<_>>>()?;
                Matrix::from_vec(rows, cols, data)
            };
            let value = read_mat()?;
            let m = read_mat()?;
            let v = read_mat()?;
            let id = params.add(name, value)?;
            let slot = params.slot_mut(id);
            slot.m = m;
            slot.v = v;
        }
        params.set_step(step);
        Ok(Checkpoint { meta, adam, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::InvalidInput(format!("corrupt checkpoint: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let mut p = ParamStore::new();
        let a = p.add("enc.w", Matrix::from_rows(&[vec![1.5, -2.0, 1e-300]]).unwrap()).unwrap();
        p.add("b", Matrix::column(&[f64::MIN_POSITIVE, 7.0])).unwrap();
        p.slot_mut(a).grad.set(0, 1, 0.5);
        p.adam_update(&AdamConfig::with_lr(0.01));
        let ck = Checkpoint {
            meta: vec![("model".into(), "mlp".into()), ("note".into(), "a=b".into())],
            adam: AdamConfig::with_lr(0.01),
            params: p,
        };
        let back = Checkpoint::read_from(ck.to_bytes().as_slice()).unwrap();
        assert_eq!(back.meta_get("note"), Some("a=b"));
        assert_eq!(back.params.step(), 1);
        assert_eq!(back.params.slots(), ck.params.slots());
        assert_eq!(back.adam, ck.adam);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::read_from(&b"NOTACKPT\x01\0\0\0"[..]).is_err());
        let ck = Checkpoint {
            meta: vec![],
            adam: AdamConfig::default(),
            params: ParamStore::new(),
        };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::read_from(&bytes[..bytes.len() - 2]).is_err());
    }
}
