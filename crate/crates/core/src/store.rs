//! Single-file checkpoints: a JSON manifest followed by raw little-endian
//! parameter bytes.
//!
//! Layout: 8-byte magic, `u64` little-endian manifest length, manifest JSON,
//! payload. The manifest lists every parameter with its byte offset and carries
//! a SHA-256 of the payload.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Arch, BaseModel, ModelConfig, MoeModel, Network, Role};

pub const MAGIC: &[u8; 8] = b"VXMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const F64_BYTES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub role: Role,
    pub frozen: bool,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub arch: Arch,
    pub config: ModelConfig,
    pub phase: String,
    pub seed: u64,
    pub payload_bytes: usize,
    pub payload_sha256: String,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub network: Network,
}

impl Checkpoint {
    pub fn into_base(self) -> Result<BaseModel> {
        BaseModel::from_network(self.network)
    }

    pub fn into_moe(self) -> Result<MoeModel> {
        MoeModel::from_network(self.network)
    }
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

/// Serializes `net` into `path` and returns the manifest written.
pub fn save_checkpoint(net: &Network, phase: &str, seed: u64, path: &Path) -> Result<Manifest> {
    let mut payload = Vec::with_capacity(net.num_params() * F64_BYTES);
    let mut params = Vec::with_capacity(net.params().len());
    for p in net.params() {
        let offset = payload.len();
        for x in &p.data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        params.push(ParamEntry {
            name: p.name.clone(),
            role: p.role,
            frozen: p.frozen,
            shape: p.shape.clone(),
            dtype: "f64".into(),
            offset,
            bytes: payload.len() - offset,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        arch: net.arch(),
        config: net.config().clone(),
        phase: phase.to_string(),
        seed,
        payload_bytes: payload.len(),
        payload_sha256: hex::encode(Sha256::digest(&payload)),
        params,
    };
    let header = serde_json::to_vec(&manifest)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut put = |b: &[u8]| w.write_all(b).map_err(|e| Error::io(path, e));
    put(MAGIC)?;
    put(&(header.len() as u64).to_le_bytes())?;
    put(&header)?;
    put(&payload)?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

/// Parses a checkpoint held in memory.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(integrity("missing checkpoint magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| integrity("manifest extends past end of file"))?;
    let header = &bytes[16..header_end];
    let raw: serde_json::Value =
        serde_json::from_slice(header).map_err(|e| integrity(format!("unreadable manifest: {e}")))?;
    let version = raw
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| integrity("manifest has no format_version"))?;
    if version != FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: version as u32,
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest =
        serde_json::from_value(raw).map_err(|e| integrity(format!("malformed manifest: {e}")))?;
    let payload = &bytes[header_end..];
    if payload.len() != manifest.payload_bytes {
        return Err(integrity(format!(
            "payload is {} bytes, manifest says {}",
            payload.len(),
            manifest.payload_bytes
        )));
    }
    if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
        return Err(integrity("payload digest mismatch"));
    }

    let mut net = Network::skeleton(&manifest.config, manifest.arch)?;
    if net.params().len() != manifest.params.len() {
        return Err(integrity(format!(
            "manifest lists {} parameters, model has {}",
            manifest.params.len(),
            net.params().len()
        )));
    }
    let mut expected_offset = 0;
    let mut seen = vec![false; net.params().len()];
    for e in &manifest.params {
        if e.offset != expected_offset {
            return Err(integrity(format!("{}: offset {} out of order", e.name, e.offset)));
        }
        if e.dtype != "f64" {
            return Err(integrity(format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let id = net
            .find(&e.name)
            .ok_or_else(|| integrity(format!("unknown parameter {}", e.name)))?;
        if std::mem::replace(&mut seen[id.0], true) {
            return Err(integrity(format!("duplicate parameter {}", e.name)));
        }
        let p = net.param_mut(id);
        if p.shape != e.shape || p.role != e.role || p.frozen != e.frozen {
            return Err(integrity(format!("{}: layout disagrees with model", e.name)));
        }
        if e.bytes != p.numel() * F64_BYTES {
            return Err(integrity(format!("{}: byte count {} wrong", e.name, e.bytes)));
        }
        let src = &payload[e.offset..e.offset + e.bytes];
        for (x, chunk) in p.data.iter_mut().zip(src.chunks_exact(F64_BYTES)) {
            *x = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        expected_offset += e.bytes;
    }
    if expected_offset != payload.len() {
        return Err(integrity("payload has trailing bytes"));
    }
    Ok(Checkpoint {
        manifest,
        network: net,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{all_params, param_digest};
    use crate::model::{convert_to_moe, init_base};
    use crate::seqfmt::Vocabulary;

    fn moe() -> MoeModel {
        let v = Vocabulary::new(48, 64).unwrap();
        let base = init_base(&ModelConfig::tiny(v), 1).unwrap();
        convert_to_moe(&base, &v, 2).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = moe();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(m.network(), "convert", 5, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.manifest.phase, "convert");
        let net = back.network;
        assert_eq!(
            param_digest(&net, &all_params(&net)).unwrap(),
            param_digest(m.network(), &all_params(m.network())).unwrap()
        );
        for (a, b) in net.params().iter().zip(m.network().params()) {
            assert_eq!(a.frozen, b.frozen);
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let m = moe();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(m.network(), "x", 0, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 8]),
            Err(Error::Integrity(_))
        ));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 1;
        assert!(matches!(decode_checkpoint(&flipped), Err(Error::Integrity(_))));
        assert!(matches!(decode_checkpoint(b"not a checkpoint"), Err(Error::Integrity(_))));
    }

    #[test]
    fn unknown_version_rejected() {
        let m = moe();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(m.network(), "x", 0, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[16..16 + n].to_vec()).unwrap();
        let patched = header.replacen("\"format_version\":1", "\"format_version\":9", 1);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(patched.len() as u64).to_le_bytes());
        out.extend_from_slice(patched.as_bytes());
        out.extend_from_slice(&bytes[16 + n..]);
        assert!(matches!(
            decode_checkpoint(&out),
            Err(Error::Version { found: 9, expected: 1 })
        ));
    }
}
