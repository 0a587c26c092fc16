//! Model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FPCM"  u32 version
//! u64 n   n bytes of canonical topology text (includes the mean offset)
//! u64 seed  u64 iterations  [u8; 32] SHA-256 digest of the training set
//! u64 blob count, then per blob: u64 length, length x f32
//! ```
//!
//! Blobs are weights then biases for each conv/fc layer in topology order.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::rng::RngStream;
use crate::synthgen::FingerprintRecord;
use crate::topology::NetworkTopology;

pub const MAGIC: &[u8; 4] = b"FPCM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub iterations: u64,
    pub dataset_digest: [u8; 32],
}

impl TrainingMetadata {
    pub fn digest_hex(&self) -> String {
        self.dataset_digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// SHA-256 over `(finger_id, impression_id, class, pixels)` of each record in order.
pub fn dataset_digest<'a>(records: impl IntoIterator<Item = &'a FingerprintRecord>) -> [u8; 32] {
    let mut h = Sha256::new();
    for r in records {
        h.update(r.finger_id.to_le_bytes());
        h.update(r.impression_id.to_le_bytes());
        h.update([r.class.code() as u8]);
        for d in r.image.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in r.image.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().into()
}

pub fn encode(network: &Network<f32>, meta: &TrainingMetadata) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let text = network.topology().to_text();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&meta.iterations.to_le_bytes());
    out.extend_from_slice(&meta.dataset_digest);
    let params = network.params();
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::TruncatedBlob(format!(
                    "{what} needs {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Network<f32>, TrainingMetadata)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let n = r.u64("topology length")?;
    let text = std::str::from_utf8(r.take(n as usize, "topology text")?)
        .map_err(|e| Error::Config(format!("topology text is not UTF-8: {e}")))?;
    let topology = NetworkTopology::parse(text)?;
    let seed = r.u64("seed")?;
    let iterations = r.u64("iterations")?;
    let dataset_digest: [u8; 32] = r.take(32, "dataset digest")?.try_into().expect("32 bytes");

    // Parameter shapes come from a freshly built network of the same topology.
    let mut network = Network::<f32>::new(topology, &mut RngStream::new(0, 0))?;
    let blobs = r.u64("blob count")? as usize;
    let mut params = network.params_mut();
    if blobs != params.len() {
        return Err(Error::WeightLengthMismatch {
            layer: blobs.min(params.len()) / 2,
            expected: params.len(),
            found: blobs,
        });
    }
    for (i, p) in params.iter_mut().enumerate() {
        let len = r.u64("blob length")? as usize;
        if len != p.len() {
            return Err(Error::WeightLengthMismatch {
                layer: i / 2,
                expected: p.len(),
                found: len,
            });
        }
        let raw = r.take(len.saturating_mul(4), &format!("blob {i}"))?;
        for (dst, chunk) in p.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Config(format!(
            "{} trailing bytes after the last blob",
            bytes.len() - r.pos
        )));
    }
    Ok((
        network,
        TrainingMetadata {
            seed,
            iterations,
            dataset_digest,
        },
    ))
}

pub fn save_model(path: &Path, network: &Network<f32>, meta: &TrainingMetadata) -> Result<()> {
    std::fs::write(path, encode(network, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(Network<f32>, TrainingMetadata)> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
