//! Tokenized-corpus file ("LVMT"): one framed token list per sentence, tagged
//! with its sentence kind so statistics survive tokenization.
//!
//! Layout (little-endian): `b"LVMT"`, `u32` version, `u32` K, `u64` count,
//! then per sentence `u8` kind index, `u32` length, `length` × `u16` ids.

use std::path::Path;

use super::VocabularyLayout;
use crate::error::{Error, Result};
use crate::forge::SentenceKind;

pub const STREAM_MAGIC: &[u8; 4] = b"LVMT";
pub const STREAM_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenStream {
    pub kind: SentenceKind,
    pub ids: Vec<u32>,
}

pub fn streams_to_bytes(layout: &VocabularyLayout, streams: &[TokenStream]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(STREAM_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(layout.codebook_size() as u32).to_le_bytes());
    out.extend_from_slice(&(streams.len() as u64).to_le_bytes());
    for s in streams {
        let kind = SentenceKind::ALL.iter().position(|k| *k == s.kind).unwrap() as u8;
        out.push(kind);
        out.extend_from_slice(&(s.ids.len() as u32).to_le_bytes());
        for &id in &s.ids {
            layout.check(id)?;
            out.extend_from_slice(&(id as u16).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn streams_from_bytes(bytes: &[u8]) -> Result<(VocabularyLayout, Vec<TokenStream>)> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|e| *e <= bytes.len())
            .ok_or_else(|| Error::Length(format!("token stream truncated at byte {pos}")))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4)? != STREAM_MAGIC {
        return Err(Error::Format("bad magic, expected LVMT".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != STREAM_VERSION {
        return Err(Error::Format(format!("unsupported token stream version {version}")));
    }
    let k = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let layout = VocabularyLayout::new(k).map_err(|_| Error::Format(format!("codebook size {k}")))?;
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let mut streams = Vec::new();
    for _ in 0..count {
        let kind = take(1)?[0] as usize;
        let kind = *SentenceKind::ALL
            .get(kind)
            .ok_or_else(|| Error::Format(format!("unknown sentence kind index {kind}")))?;
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let raw = take(len.checked_mul(2).ok_or_else(|| Error::Length("stream length overflow".into()))?)?;
        let ids = raw
            .chunks_exact(2)
            .map(|b| {
                let id = u16::from_le_bytes([b[0], b[1]]) as u32;
                layout.check(id).map(|_| id)
            })
            .collect::<Result<Vec<u32>>>()?;
        streams.push(TokenStream { kind, ids });
    }
    if pos != bytes.len() {
        return Err(Error::Length(format!("{} trailing bytes after token streams", bytes.len() - pos)));
    }
    Ok((layout, streams))
}

pub fn write_token_streams(path: &Path, layout: &VocabularyLayout, streams: &[TokenStream]) -> Result<()> {
    let bytes = streams_to_bytes(layout, streams)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_token_streams(path: &Path) -> Result<(VocabularyLayout, Vec<TokenStream>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    streams_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let l = VocabularyLayout::new(8).unwrap();
        let streams = vec![
            TokenStream { kind: SentenceKind::Video, ids: vec![8, 1, 2, 9] },
            TokenStream { kind: SentenceKind::VideoAnnotGrouped, ids: vec![8, 9] },
        ];
        let bytes = streams_to_bytes(&l, &streams).unwrap();
        let (l2, back) = streams_from_bytes(&bytes).unwrap();
        assert_eq!((l2, back.clone()), (l, streams));
        assert_eq!(streams_to_bytes(&l2, &back).unwrap(), bytes);
        for cut in 0..bytes.len() {
            assert!(streams_from_bytes(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(streams_from_bytes(&extra).is_err());
    }
}
