//! Model checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "ENASCKPT"
//! version      u32       1
//! hash_len     u32
//! hash         hash_len bytes, ASCII hex descriptor hash
//! seed         u64
//! n_tensors    u32
//! per tensor:  rank u32, then rank x u64 extents
//! n_values     u64       sum of tensor sizes
//! values       n_values x f64
//! ```
//!
//! Tensors are parameters in graph visiting order followed by buffers
//! (batch-norm running statistics).

use std::path::Path;

use super::tensor::Tensor;
use super::NnError;

pub const MAGIC: &[u8; 8] = b"ENASCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub descriptor_hash: String,
    pub seed: u64,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.descriptor_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.descriptor_hash.as_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut total = 0u64;
        for t in &self.tensors {
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            total += t.len() as u64;
        }
        out.extend_from_slice(&total.to_le_bytes());
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let hash_len = r.u32()? as usize;
        let descriptor_hash = String::from_utf8(r.take(hash_len)?.to_vec())
            .map_err(|_| NnError::Checkpoint("hash is not utf-8".into()))?;
        let seed = r.u64()?;
        let n = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|e| e as usize))
                .collect::<Result<Vec<_>, _>>()?;
            shapes.push(shape);
        }
        let total = r.u64()? as usize;
        let expected: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if total != expected {
            return Err(NnError::Checkpoint(format!("value count {total} != {expected}")));
        }
        let mut tensors = Vec::with_capacity(n);
        for shape in shapes {
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            tensors.push(Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            descriptor_hash,
            seed,
            tensors,
        })
    }

    pub fn read(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NnError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            seed in any::<u64>(),
            sizes in proptest::collection::vec(0usize..6, 0..4),
            fill in -1e6f64..1e6,
        ) {
            let tensors = sizes
                .iter()
                .map(|&n| Tensor::new(vec![n, 2], (0..2 * n).map(|i| fill + i as f64).collect()).unwrap())
                .collect();
            let ck = Checkpoint { descriptor_hash: "ab12".into(), seed, tensors };
            prop_assert_eq!(Checkpoint::decode(&ck.encode()).unwrap(), ck);
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let ck = Checkpoint {
            descriptor_hash: "00".into(),
            seed: 1,
            tensors: vec![Tensor::from_vec(vec![1.0, 2.0])],
        };
        let bytes = ck.encode();
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
