//! Token streams, sequence packing and on-disk shards.

mod shard;
mod stats;
mod stream;

pub use shard::{read_shard, shard_from_bytes, shard_to_bytes, write_shard, ShardHeader, SHARD_MAGIC, SHARD_VERSION};
pub use stats::{corpus_stats, corpus_stats_from_streams, DataCategory, CorpusStats, PAPER_REFERENCE};
pub use stream::{
    read_token_streams, streams_from_bytes, streams_to_bytes, write_token_streams, TokenStream, STREAM_MAGIC,
    STREAM_VERSION,
};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::forge::VisualSentence;
use crate::rng;
use crate::vq::Tokenizer;

/// Desk-scale training window length.
pub const DESK_WINDOW: usize = 1024;

/// Id assignment: image tokens `0..K`, then BOS, then EOS.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VocabularyLayout {
    k: usize,
}

impl VocabularyLayout {
    pub fn new(codebook_size: usize) -> Result<Self> {
        // ids are stored as u16 on disk
        if codebook_size == 0 || codebook_size + 2 > u16::MAX as usize + 1 {
            return Err(Error::Config(format!(
                "codebook size {codebook_size} does not fit a 16-bit vocabulary"
            )));
        }
        Ok(VocabularyLayout { k: codebook_size })
    }

    pub fn codebook_size(&self) -> usize {
        self.k
    }

    pub fn bos(&self) -> u32 {
        self.k as u32
    }

    pub fn eos(&self) -> u32 {
        self.k as u32 + 1
    }

    pub fn vocab_size(&self) -> usize {
        self.k + 2
    }

    pub fn is_image_token(&self, id: u32) -> bool {
        (id as usize) < self.k
    }

    pub fn check(&self, id: u32) -> Result<()> {
        if (id as usize) < self.vocab_size() {
            Ok(())
        } else {
            Err(Error::InvalidToken {
                id: id as usize,
                limit: self.vocab_size(),
            })
        }
    }

    /// Wraps per-image grids as `[BOS, grid0.., grid1.., .., EOS]`.
    pub fn frame<'a>(&self, grids: impl IntoIterator<Item = &'a [u32]>) -> Vec<u32> {
        let mut out = vec![self.bos()];
        for g in grids {
            out.extend_from_slice(g);
        }
        out.push(self.eos());
        out
    }
}

pub fn sentence_to_tokens(sentence: &VisualSentence, tok: &Tokenizer) -> Result<Vec<u32>> {
    let size = tok.config().image_size;
    if let Some(img) = sentence.images().iter().find(|i| i.width() != size || i.height() != size) {
        return Err(Error::dim(format!(
            "image is {}x{}, tokenizer expects {size}x{size}",
            img.width(),
            img.height()
        )));
    }
    let layout = VocabularyLayout::new(tok.config().codebook_size)?;
    let grids = tok.encode_batch(sentence.images())?;
    Ok(layout.frame(grids.iter().map(|g| g.ids())))
}

/// Exactly `len` token ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedWindow {
    ids: Vec<u32>,
}

impl PackedWindow {
    pub fn new(ids: Vec<u32>) -> Self {
        PackedWindow { ids }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Order in which `pack_windows` concatenates `n` streams.
pub fn pack_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, "pack"));
    order
}

/// Shuffles streams by seed, concatenates them and cuts consecutive
/// `window`-token windows. The partial tail is dropped; sentences may
/// straddle window boundaries and nothing masks attention between them.
pub fn pack_windows(streams: &[Vec<u32>], window: usize, seed: u64) -> Result<Vec<PackedWindow>> {
    if window < 3 {
        return Err(Error::Config(format!("window length {window} is below 3")));
    }
    let total: usize = streams.iter().map(Vec::len).sum();
    let mut flat = Vec::with_capacity(total);
    for i in pack_order(streams.len(), seed) {
        flat.extend_from_slice(&streams[i]);
    }
    Ok(flat
        .chunks_exact(window)
        .map(|c| PackedWindow::new(c.to_vec()))
        .collect())
}
