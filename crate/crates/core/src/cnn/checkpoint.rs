//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "GAFCNNCK"
//! version    u32       1
//! elem       u8        scalar width in bytes (4 or 8)
//! digest     32 bytes  SHA-256 of the JSON layer configuration
//! cfg_len    u32       length of the JSON layer configuration
//! cfg        cfg_len bytes
//! seed       u64
//! step       u64       Adam step counter
//! tensors    u32       tensor count N
//! then for each of params[0..N], first_moment[0..N], second_moment[0..N]:
//!   len      u64
//!   data     len * elem bytes
//! checksum   32 bytes  SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AdamState, CnnError, CnnModel, NetConfig, Scalar, Tensors};

const MAGIC: &[u8; 8] = b"GAFCNNCK";
const VERSION: u32 = 1;

fn corrupt(msg: impl Into<String>) -> CnnError {
    CnnError::Checkpoint(msg.into())
}

pub fn write_checkpoint<T: Scalar>(model: &CnnModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    out.extend_from_slice(&model.config.digest());
    let cfg = serde_json::to_vec(&model.config).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&model.seed.to_le_bytes());
    out.extend_from_slice(&model.adam.step.to_le_bytes());
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for group in [&model.params, &model.adam.first_moment, &model.adam.second_moment] {
        for tensor in group {
            out.extend_from_slice(&(tensor.len() as u64).to_le_bytes());
            for &v in tensor {
                v.write_le(&mut out);
            }
        }
    }
    let checksum = Sha256::digest(&out);
    out.extend_from_slice(&checksum);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CnnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CnnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CnnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<CnnModel<T>, CnnError> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(corrupt("checksum mismatch (truncated or corrupted file)"));
    }
    let mut r = Reader { bytes: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version} (expected {VERSION})")));
    }
    let elem = r.take(1)?[0] as usize;
    if elem != T::BYTES {
        return Err(corrupt(format!(
            "checkpoint holds {elem}-byte scalars, requested {}-byte",
            T::BYTES
        )));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    let cfg_len = r.u32()? as usize;
    let config: NetConfig = serde_json::from_slice(r.take(cfg_len)?)
        .map_err(|e| corrupt(format!("bad layer configuration: {e}")))?;
    if config.digest() != digest {
        return Err(corrupt("layer configuration digest mismatch"));
    }
    let seed = r.u64()?;
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let expected = config.tensor_lengths()?;
    if count != expected.len() {
        return Err(corrupt(format!("{count} tensors, configuration needs {}", expected.len())));
    }
    let read_group = |r: &mut Reader| -> Result<Tensors<T>, CnnError> {
        expected
            .iter()
            .map(|&want| {
                let len = r.u64()? as usize;
                if len != want {
                    return Err(corrupt(format!("tensor of {len} elements, expected {want}")));
                }
                let raw = r.take(len.checked_mul(T::BYTES).ok_or_else(|| corrupt("overflow"))?)?;
                Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
            })
            .collect()
    };
    let params = read_group(&mut r)?;
    let first_moment = read_group(&mut r)?;
    let second_moment = read_group(&mut r)?;
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after tensors"));
    }
    CnnModel::from_parts(
        config,
        params,
        AdamState {
            first_moment,
            second_moment,
            step,
        },
        seed,
    )
}

pub fn save_checkpoint<T: Scalar>(model: &CnnModel<T>, path: &Path) -> Result<(), CnnError> {
    fs::write(path, write_checkpoint(model))
        .map_err(|e| corrupt(format!("cannot write {}: {e}", path.display())))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<CnnModel<T>, CnnError> {
    let bytes = fs::read(path).map_err(|e| corrupt(format!("cannot read {}: {e}", path.display())))?;
    read_checkpoint(&bytes)
}
