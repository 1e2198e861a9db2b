//! Versioned binary weight container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic bytes "SKRN"
//! 4       4     u32 format version (currently 1)
//! 8       1     policy kind: 0 learned, 1 random, 2 always-update
//! 9       8     f64 p_skip (0 unless the policy is random)
//! 17      1     binarizer: 0 deterministic, 1 bernoulli
//! 18      4     u32 tensor count N
//! then N records:
//!   u32 name length, name bytes (UTF-8),
//!   u32 rank (1 or 2), u64 dims[rank],
//!   f64 data[product(dims)] little-endian, row-major
//! ```
//!
//! Tensors are written in parameter-store order with their registered
//! names, so an independent implementation can exchange weights by name.

use crate::cells::{Binarizer, PolicyKind, SkipPolicy};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"SKRN";
pub const VERSION: u32 = 1;

pub fn save(path: &Path, store: &ParamStore, policy: SkipPolicy) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let (kind, p_skip) = match policy.kind {
        PolicyKind::Learned => (0u8, 0.0),
        PolicyKind::Random { p_skip } => (1u8, p_skip),
        PolicyKind::AlwaysUpdate => (2u8, 0.0),
    };
    out.push(kind);
    out.extend_from_slice(&p_skip.to_le_bytes());
    out.push(match policy.binarizer {
        Binarizer::Deterministic => 0u8,
        Binarizer::Bernoulli => 1u8,
        Binarizer::Identity => {
            return Err(Error::Config(
                "the identity binarizer is diagnostic-only and not serializable".into(),
            ))
        }
    });
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, tensor) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let (r, c) = tensor.shape();
        if r == 1 {
            out.extend_from_slice(&1u32.to_le_bytes());
            out.extend_from_slice(&(c as u64).to_le_bytes());
        } else {
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(r as u64).to_le_bytes());
            out.extend_from_slice(&(c as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, SkipPolicy)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = Cursor::new(&bytes, path);

    let magic = cursor.take(4)?;
    if magic != MAGIC {
        return Err(Error::Data(format!(
            "{}: bad checkpoint magic {magic:?}",
            path.display()
        )));
    }
    let version = cursor.u32()?;
    if version != VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let kind = cursor.u8()?;
    let p_skip = cursor.f64()?;
    let binarizer = match cursor.u8()? {
        0 => Binarizer::Deterministic,
        1 => Binarizer::Bernoulli,
        other => {
            return Err(Error::Data(format!(
                "{}: unknown binarizer tag {other}",
                path.display()
            )))
        }
    };
    let policy = SkipPolicy {
        kind: match kind {
            0 => PolicyKind::Learned,
            1 => PolicyKind::Random { p_skip },
            2 => PolicyKind::AlwaysUpdate,
            other => {
                return Err(Error::Data(format!(
                    "{}: unknown policy tag {other}",
                    path.display()
                )))
            }
        },
        binarizer,
    };

    let count = cursor.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = cursor.u32()? as usize;
        let name_bytes = cursor.take(name_len)?;
        let name = String::from_utf8(name_bytes.to_vec())
            .map_err(|e| Error::Data(format!("{}: bad tensor name: {e}", path.display())))?;
        let rank = cursor.u32()?;
        let (rows, cols) = match rank {
            1 => (1usize, cursor.u64()? as usize),
            2 => {
                let r = cursor.u64()? as usize;
                let c = cursor.u64()? as usize;
                (r, c)
            }
            other => {
                return Err(Error::Data(format!(
                    "{}: unsupported tensor rank {other}",
                    path.display()
                )))
            }
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(cursor.f64()?);
        }
        store.add(name, Tensor::from_vec(rows, cols, data));
    }
    if cursor.remaining() != 0 {
        return Err(Error::Data(format!(
            "{}: {} trailing bytes after the last tensor",
            path.display(),
            cursor.remaining()
        )));
    }
    Ok((store, policy))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Cursor {
            bytes,
            pos: 0,
            path,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data(format!(
                "{}: truncated checkpoint at byte {}",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{CellKind, CellParams, StackSpec};
    use crate::rng::Rng;

    #[test]
    fn roundtrip_is_bitwise() {
        let mut store = ParamStore::new();
        let mut rng = Rng::from_seed(5);
        let spec = StackSpec::new(CellKind::Lstm, 2, vec![7]);
        let _params = CellParams::init(spec, true, &mut store, &mut rng).unwrap();

        let dir = std::env::temp_dir().join(format!("skiprnn-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.skrn");
        let policy = SkipPolicy::random(0.25);
        save(&path, &store, policy).unwrap();
        let (loaded, loaded_policy) = load(&path).unwrap();
        assert_eq!(loaded_policy, policy);
        assert_eq!(loaded.len(), store.len());
        for (id, name, tensor) in store.iter() {
            assert_eq!(loaded.name(id), name);
            assert_eq!(loaded.get(id).shape(), tensor.shape());
            for (a, b) in loaded.get(id).data().iter().zip(tensor.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_corrupt_magic() {
        let dir = std::env::temp_dir().join(format!("skiprnn-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.skrn");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(load(&path), Err(Error::Data(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
