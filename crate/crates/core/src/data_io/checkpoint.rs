//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic    8 bytes  "EXLABCK\0"
//! version  u32
//! spec     u32 length + UTF-8
//! seed     u64
//! round    u64
//! phase    u32 length + UTF-8
//! count    u32      number of tensors
//! payload  u64      byte length of what follows
//! tensors  per tensor: u32 rank, rank x u64 dims, f64 values
//! ```

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nets::{Layer, NetworkSpec, Parameters};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EXLABCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    /// Network description (`NetworkSpec` display form) or a free tag for
    /// raw tensors such as the noise set.
    pub spec: String,
    pub seed: u64,
    pub round: u64,
    pub phase: String,
}

impl CheckpointHeader {
    pub fn new(spec: impl Into<String>, seed: u64, round: u64, phase: impl Into<String>) -> Self {
        CheckpointHeader {
            version: CHECKPOINT_VERSION,
            spec: spec.into(),
            seed,
            round,
            phase: phase.into(),
        }
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn encode_tensors(header: &CheckpointHeader, tensors: &[&Tensor]) -> Vec<u8> {
    let mut payload = Vec::new();
    for t in tensors {
        payload.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            payload.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut buf = Vec::with_capacity(64 + payload.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&header.version.to_le_bytes());
    put_str(&mut buf, &header.spec);
    buf.extend_from_slice(&header.seed.to_le_bytes());
    buf.extend_from_slice(&header.round.to_le_bytes());
    put_str(&mut buf, &header.phase);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    buf.extend_from_slice(&payload);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::CorruptPayload(format!(
                    "needed {n} bytes at offset {}, file has {}",
                    self.at,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CorruptPayload("header string is not UTF-8".into()))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<(CheckpointHeader, Vec<Tensor>)> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptPayload("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let spec = r.string()?;
    let seed = r.u64()?;
    let round = r.u64()?;
    let phase = r.string()?;
    let count = r.u32()? as usize;
    let payload_len = r.u64()? as usize;
    if bytes.len() - r.at != payload_len {
        return Err(Error::CorruptPayload(format!(
            "payload is {} bytes, header says {payload_len}",
            bytes.len() - r.at
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n.checked_mul(8).is_none_or(|b| b > bytes.len() - r.at) {
            return Err(Error::CorruptPayload(format!(
                "tensor of shape {shape:?} exceeds payload"
            )));
        }
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push(Tensor::new(shape, data).map_err(|e| Error::CorruptPayload(e.to_string()))?);
    }
    if r.at != bytes.len() {
        return Err(Error::CorruptPayload("trailing bytes after last tensor".into()));
    }
    let header = CheckpointHeader {
        version,
        spec,
        seed,
        round,
        phase,
    };
    Ok((header, tensors))
}

pub fn save_tensors(path: &Path, header: &CheckpointHeader, tensors: &[&Tensor]) -> Result<()> {
    fs::write(path, encode_tensors(header, tensors)).map_err(|e| Error::io(path, e))
}

pub fn load_tensors(path: &Path) -> Result<(CheckpointHeader, Vec<Tensor>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&bytes)
}

/// Writes parameters; the header's `spec` field is overwritten with
/// `spec`'s display form so the file is self-describing.
pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, params: &Parameters, header: &CheckpointHeader) -> Result<()> {
    let header = CheckpointHeader {
        spec: spec.to_string(),
        ..header.clone()
    };
    let tensors: Vec<&Tensor> = params.tensors().map(|(_, t)| t).collect();
    save_tensors(path, &header, &tensors)
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, Parameters, CheckpointHeader)> {
    let (header, tensors) = load_tensors(path)?;
    let spec: NetworkSpec = header
        .spec
        .parse()
        .map_err(|e: Error| Error::CorruptPayload(format!("bad spec in header: {e}")))?;
    if tensors.len() != 2 * spec.num_layers() {
        return Err(Error::CorruptPayload(format!(
            "{} tensors for a {}-layer network",
            tensors.len(),
            spec.num_layers()
        )));
    }
    let mut it = tensors.into_iter();
    let mut layers = Vec::with_capacity(spec.num_layers());
    while let (Some(weight), Some(bias)) = (it.next(), it.next()) {
        layers.push(Layer { weight, bias });
    }
    let params = Parameters::from_layers(&spec, layers).map_err(|e| Error::CorruptPayload(e.to_string()))?;
    Ok((spec, params, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::init_params;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = NetworkSpec::classifier(&[2, 5, 3]).unwrap();
        let params = init_params(&spec, 9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_checkpoint(&path, &spec, &params, &CheckpointHeader::new("", 9, 4, "sub")).unwrap();
        let (spec2, params2, header) = load_checkpoint(&path).unwrap();
        assert_eq!(spec, spec2);
        assert!(params.bit_eq(&params2));
        assert_eq!((header.seed, header.round, header.phase.as_str()), (9, 4, "sub"));
    }

    #[test]
    fn truncation_and_version() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_tensors(&CheckpointHeader::new("noise", 1, 0, "z"), &[&t]);
        for cut in [4, 20, bytes.len() - 1] {
            assert!(
                matches!(decode_tensors(&bytes[..cut]), Err(Error::CorruptPayload(_))),
                "cut {cut}"
            );
        }
        let mut future = bytes.clone();
        future[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_tensors(&future),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }
}
