//! Debug checkpoints: `SUDFCKPT`, format version (u32), tensor count (u32),
//! then per tensor a u32 length and that many `f32`, all little-endian, in
//! [`Network::params`] order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::Network;

const MAGIC: &[u8; 8] = b"SUDFCKPT";
const VERSION: u32 = 1;

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    let params = net.params();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.len() as u32).to_le_bytes());
        for &v in p {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Overwrites the parameters of `net`, whose architecture must match.
pub fn load_checkpoint(net: &mut Network, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cursor = bytes.as_slice();
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (head, rest) = cursor.split_at(n);
        cursor = rest;
        Ok(head)
    };
    if take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    let version = u32_at(take(4)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32_at(take(4)?) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32_at(take(4)?) as usize;
        let raw = take(len * 4)?;
        tensors.push(
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect::<Vec<_>>(),
        );
    }
    let mut params = net.params_mut();
    if params.len() != tensors.len()
        || params.iter().zip(&tensors).any(|(p, t)| p.len() != t.len())
    {
        return Err(Error::Checkpoint("architecture mismatch".into()));
    }
    for (p, t) in params.iter_mut().zip(tensors) {
        p.copy_from_slice(&t);
    }
    Ok(())
}
