//! `KDCK` checkpoints:
//!
//!   magic "KDCK" | version u32 | config length u32 | config JSON
//!   | parameter count u64 | little-endian f32 values in layout order

use std::io::{Read, Write};

use super::{ModelConfig, ModelParams};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"KDCK";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams) -> Result<()> {
    let cfg = serde_json::to_vec(params.config())?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 4);
    for &v in &params.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_checkpoint(&mut out, params)?;
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let bad = |reason: String| Error::BadFormat {
        kind: "checkpoint",
        reason,
    };
    let take = |at: usize, n: usize| -> Result<&[u8]> {
        bytes
            .get(at..at.checked_add(n).ok_or_else(|| bad("length overflow".into()))?)
            .ok_or_else(|| bad(format!("truncated at byte {at}")))
    };
    if take(0, 4)? != CHECKPOINT_MAGIC {
        return Err(bad("wrong magic".into()));
    }
    let version = u32::from_le_bytes(take(4, 4)?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let cfg_len = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes")) as usize;
    let config: ModelConfig =
        serde_json::from_slice(take(12, cfg_len)?).map_err(|e| bad(format!("config: {e}")))?;
    config.validate()?;
    let at = 12 + cfg_len;
    let count = u64::from_le_bytes(take(at, 8)?.try_into().expect("8 bytes"));
    let expected = config.n_params();
    if count != expected as u64 {
        return Err(bad(format!("{count} parameters, config implies {expected}")));
    }
    let body = &bytes[at + 8..];
    if body.len() != expected * 4 {
        return Err(bad(format!("body has {} bytes, expected {}", body.len(), expected * 4)));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    ModelParams::from_data(config, data)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
