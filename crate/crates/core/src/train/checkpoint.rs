//! Binary checkpoint: `"TCLF"`, `u32` version, `u32` config length, the
//! config as JSON, `u64` parameter count, little-endian `f64` parameters in
//! [`Network::to_vector`] order, and a CRC32 of everything before it.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Network;

use super::config::TrainConfig;

pub const MAGIC: &[u8; 4] = b"TCLF";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(cfg: &TrainConfig, net: &Network) -> Vec<u8> {
    let json = serde_json::to_vec(cfg).expect("config is plain data");
    let params = net.to_vector();
    let mut out = Vec::with_capacity(24 + json.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = *pos + n;
    if end > bytes.len() {
        return Err(Error::Length {
            needed: end,
            found: bytes.len(),
        });
    }
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

/// Rebuilds the network from the stored config, then loads the parameters.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(TrainConfig, Network)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing TCLF magic".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Corruption { stored, computed });
    }
    let mut pos = 4;
    let version = u32::from_le_bytes(take(body, &mut pos, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(take(body, &mut pos, 4)?.try_into().expect("4 bytes")) as usize;
    let cfg: TrainConfig = serde_json::from_slice(take(body, &mut pos, len)?)?;
    let count = u64::from_le_bytes(take(body, &mut pos, 8)?.try_into().expect("8 bytes")) as usize;
    let raw = take(body, &mut pos, count.checked_mul(8).ok_or_else(|| Error::Format("bad count".into()))?)?;
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut net = super::build_network(&cfg)?;
    net.set_from_vector(&params)?;
    Ok((cfg, net))
}

pub fn save_checkpoint(path: impl AsRef<Path>, cfg: &TrainConfig, net: &Network) -> Result<()> {
    fs::write(path, encode_checkpoint(cfg, net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(TrainConfig, Network)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::MissingData(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&bytes)
}
