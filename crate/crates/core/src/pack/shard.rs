//! "LVMS" shards. Little-endian layout:
//! `b"LVMS"`, `u32` version, `u32` K, `u32` L, `u64` window count,
//! then `count * L` token ids as `u16`.

use std::path::Path;

use super::{PackedWindow, VocabularyLayout};
use crate::error::{Error, Result};

pub const SHARD_MAGIC: &[u8; 4] = b"LVMS";
pub const SHARD_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShardHeader {
    pub codebook_size: usize,
    pub window: usize,
    pub count: usize,
}

pub fn shard_to_bytes(layout: &VocabularyLayout, window: usize, windows: &[PackedWindow]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + windows.len() * window * 2);
    out.extend_from_slice(SHARD_MAGIC);
    out.extend_from_slice(&SHARD_VERSION.to_le_bytes());
    out.extend_from_slice(&(layout.codebook_size() as u32).to_le_bytes());
    out.extend_from_slice(&(window as u32).to_le_bytes());
    out.extend_from_slice(&(windows.len() as u64).to_le_bytes());
    for w in windows {
        if w.len() != window {
            return Err(Error::Length(format!("window of {} tokens in a shard of L={window}", w.len())));
        }
        for &id in w.ids() {
            layout.check(id)?;
            out.extend_from_slice(&(id as u16).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn shard_from_bytes(bytes: &[u8]) -> Result<(ShardHeader, Vec<PackedWindow>)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length(format!("shard of {} bytes has no complete header", bytes.len())));
    }
    if &bytes[..4] != SHARD_MAGIC {
        return Err(Error::CorruptShard("bad magic, expected LVMS".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let version = u32_at(4);
    if version != SHARD_VERSION as usize {
        return Err(Error::CorruptShard(format!("unsupported version {version}")));
    }
    let k = u32_at(8);
    let window = u32_at(12);
    let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let layout = VocabularyLayout::new(k).map_err(|_| Error::CorruptShard(format!("codebook size {k}")))?;
    if window < 3 {
        return Err(Error::CorruptShard(format!("window length {window}")));
    }
    let body = (count as u128) * (window as u128) * 2;
    let have = (bytes.len() - HEADER_LEN) as u128;
    if have != body {
        return Err(Error::Length(format!(
            "shard header promises {count} windows of {window} tokens ({body} bytes), body has {have}"
        )));
    }
    let mut windows = Vec::with_capacity(count as usize);
    for chunk in bytes[HEADER_LEN..].chunks_exact(window * 2) {
        let ids = chunk
            .chunks_exact(2)
            .map(|b| {
                let id = u16::from_le_bytes([b[0], b[1]]) as u32;
                layout.check(id).map(|_| id)
            })
            .collect::<Result<Vec<u32>>>()?;
        windows.push(PackedWindow::new(ids));
    }
    let header = ShardHeader {
        codebook_size: k,
        window,
        count: count as usize,
    };
    Ok((header, windows))
}

pub fn write_shard(path: &Path, layout: &VocabularyLayout, window: usize, windows: &[PackedWindow]) -> Result<()> {
    let bytes = shard_to_bytes(layout, window, windows)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_shard(path: &Path) -> Result<(ShardHeader, Vec<PackedWindow>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    shard_from_bytes(&bytes).map_err(|e| match e {
        Error::CorruptShard(m) => Error::CorruptShard(format!("{}: {m}", path.display())),
        Error::Length(m) => Error::Length(format!("{}: {m}", path.display())),
        other => other,
    })
}
