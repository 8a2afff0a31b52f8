//! Binary parameter snapshots.
//!
//! Layout, little-endian: `RPRC`, u32 format version, u64 each of `f`,
//! `|P|`, `|R|`, `n_f`, `c`, `d`, `hidden`, u64 vocabulary hash, u32
//! parameter count, then per parameter a u32 name length, the UTF-8 name,
//! u32 rank, u64 dims and the row-major `f64` values.

use crate::error::{Error, Result};
use crate::kernel::Tensor;
use crate::model::{ModelDims, ModelParams, ParamId};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RPRC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ModelParams, vocab_hash: u64) -> Vec<u8> {
    let d = params.dims();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        d.factors,
        d.preferred_aspects,
        d.rejected_aspects,
        d.filters,
        d.kernel_width,
        d.embedding_dim,
        d.attention_hidden,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&vocab_hash.to_le_bytes());
    out.extend_from_slice(&(ParamId::ALL.len() as u32).to_le_bytes());
    for (id, t) in params.iter() {
        let name = id.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.buf.len() - self.pos {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("dimension overflows usize".into()))
    }
}

/// Decoded snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab_hash: u64,
}

/// Parses a snapshot. With `expected_vocab_hash` set, a different stored
/// hash is an error. Nothing is returned unless the whole file is valid.
pub fn decode_checkpoint(bytes: &[u8], expected_vocab_hash: Option<u64>) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let header: Vec<usize> = (0..7).map(|_| r.usize()).collect::<Result<_>>()?;
    let vocab_hash = r.u64()?;
    if let Some(expected) = expected_vocab_hash {
        if expected != vocab_hash {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash {vocab_hash:016x} does not match corpus vocabulary {expected:016x}"
            )));
        }
    }
    let count = r.u32()? as usize;
    if count != ParamId::ALL.len() {
        return Err(Error::Checkpoint(format!("{count} parameters, expected {}", ParamId::ALL.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for &id in &ParamId::ALL {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        if name != id.name() {
            return Err(Error::Checkpoint(format!("parameter `{name}` where `{}` was expected", id.name())));
        }
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.usize()).collect::<Result<_>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n.ok_or_else(|| Error::Checkpoint(format!("`{name}` shape overflows")))?;
        if n > (bytes.len() - r.pos) / 8 {
            return Err(Error::Checkpoint(format!("truncated inside `{name}`")));
        }
        let data: Vec<f64> =
            (0..n).map(|_| r.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))).collect::<Result<_>>()?;
        tensors.push(Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last parameter".into()));
    }
    let dims = ModelDims {
        n_users: tensors[ParamId::UserFactors.key()].rows(),
        n_items: tensors[ParamId::ItemFactors.key()].rows(),
        factors: header[0],
        preferred_aspects: header[1],
        rejected_aspects: header[2],
        filters: header[3],
        kernel_width: header[4],
        embedding_dim: header[5],
        attention_hidden: header[6],
        vocab_size: tensors[ParamId::WordEmbeddings.key()].rows(),
    };
    let params = ModelParams::from_tensors(dims, tensors).map_err(|e| Error::Checkpoint(format!("header mismatch: {e}")))?;
    Ok(Checkpoint { params, vocab_hash })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ModelDims {
        ModelDims {
            n_users: 3,
            n_items: 4,
            factors: 2,
            preferred_aspects: 2,
            rejected_aspects: 3,
            filters: 2,
            kernel_width: 3,
            embedding_dim: 2,
            attention_hidden: 4,
            vocab_size: 6,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = ModelParams::random_uniform(dims(), 1, 1.0).unwrap();
        let bytes = encode_checkpoint(&p, 42);
        let c = decode_checkpoint(&bytes, Some(42)).unwrap();
        assert_eq!(c.vocab_hash, 42);
        for ((_, a), (_, b)) in p.iter().zip(c.params.iter()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode_checkpoint(&c.params, 42), bytes);
    }

    #[test]
    fn every_truncation_fails() {
        let bytes = encode_checkpoint(&ModelParams::random_uniform(dims(), 2, 1.0).unwrap(), 7);
        for cut in [1, 8, 40, bytes.len() / 2] {
            assert!(decode_checkpoint(&bytes[..bytes.len() - cut], None).is_err());
        }
    }

    #[test]
    fn vocab_hash_mismatch_fails() {
        let bytes = encode_checkpoint(&ModelParams::zeros(dims()).unwrap(), 7);
        assert!(matches!(decode_checkpoint(&bytes, Some(8)), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn header_disagreeing_with_shapes_fails() {
        let mut bytes = encode_checkpoint(&ModelParams::zeros(dims()).unwrap(), 7);
        // bump `f` in the header
        bytes[8] = 5;
        assert!(matches!(decode_checkpoint(&bytes, None), Err(Error::Checkpoint(_))));
        let mut bytes = encode_checkpoint(&ModelParams::zeros(dims()).unwrap(), 7);
        bytes[4] = 9;
        assert!(decode_checkpoint(&bytes, None).is_err());
    }
}
