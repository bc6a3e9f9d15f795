//! Token distribution over the five data categories of the training corpus.

use std::fmt;

use super::TokenStream;
use crate::forge::{ManifestEntry, SentenceKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum DataCategory {
    SingleImages,
    ImagesWithAnnotations,
    Videos,
    VideosWithAnnotations,
    SyntheticViews,
}

impl DataCategory {
    pub const ALL: [DataCategory; 5] = [
        DataCategory::SingleImages,
        DataCategory::ImagesWithAnnotations,
        DataCategory::Videos,
        DataCategory::VideosWithAnnotations,
        DataCategory::SyntheticViews,
    ];

    /// Category groups are labelled data (class labels), so they count as annotated images.
    pub fn of(kind: SentenceKind) -> Self {
        match kind {
            SentenceKind::Single => DataCategory::SingleImages,
            SentenceKind::Category | SentenceKind::Pair | SentenceKind::MultiAnnot => {
                DataCategory::ImagesWithAnnotations
            }
            SentenceKind::Video => DataCategory::Videos,
            SentenceKind::VideoAnnotInterleaved | SentenceKind::VideoAnnotGrouped => {
                DataCategory::VideosWithAnnotations
            }
            SentenceKind::Multiview => DataCategory::SyntheticViews,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DataCategory::SingleImages => "single images",
            DataCategory::ImagesWithAnnotations => "images with annotations",
            DataCategory::Videos => "videos",
            DataCategory::VideosWithAnnotations => "videos with annotations",
            DataCategory::SyntheticViews => "synthetic 3D views",
        }
    }
}

/// Reference distribution of the original 420B-token corpus, in percent.
/// Reported next to desk statistics for comparison; never reproduced.
pub const PAPER_REFERENCE: [(DataCategory, f64); 5] = [
    (DataCategory::SingleImages, 88.49),
    (DataCategory::ImagesWithAnnotations, 7.15),
    (DataCategory::Videos, 4.24),
    (DataCategory::VideosWithAnnotations, 0.06),
    (DataCategory::SyntheticViews, 0.05),
];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub sentences: [u64; 5],
    pub tokens: [u64; 5],
}

impl CorpusStats {
    fn add(&mut self, kind: SentenceKind, tokens: u64) {
        let i = DataCategory::of(kind) as usize;
        self.sentences[i] += 1;
        self.tokens[i] += tokens;
    }

    pub fn total_tokens(&self) -> u64 {
        self.tokens.iter().sum()
    }

    /// Percentages per category; all zero for an empty corpus.
    pub fn percentages(&self) -> [f64; 5] {
        let total = self.total_tokens();
        let mut out = [0.0; 5];
        if total > 0 {
            for (o, t) in out.iter_mut().zip(self.tokens) {
                *o = 100.0 * t as f64 / total as f64;
            }
        }
        out
    }

    /// CSV with one row per category: `category,sentences,tokens,percent,reference_percent`.
    pub fn to_csv(&self) -> String {
        let pct = self.percentages();
        let mut out = String::from("category,sentences,tokens,percent,reference_percent\n");
        for (i, c) in DataCategory::ALL.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.2}\n",
                c.label(),
                self.sentences[i],
                self.tokens[i],
                pct[i],
                PAPER_REFERENCE[i].1
            ));
        }
        out
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = self.percentages();
        writeln!(f, "{:<26}{:>12}{:>14}{:>9}{:>11}", "category", "sentences", "tokens", "%", "ref %")?;
        for (i, c) in DataCategory::ALL.iter().enumerate() {
            writeln!(
                f,
                "{:<26}{:>12}{:>14}{:>9.2}{:>11.2}",
                c.label(),
                self.sentences[i],
                self.tokens[i],
                pct[i],
                PAPER_REFERENCE[i].1
            )?;
        }
        write!(f, "{:<26}{:>12}{:>14}", "total", self.sentences.iter().sum::<u64>(), self.total_tokens())
    }
}

/// Counts from manifests: each sentence costs BOS + images + EOS.
pub fn corpus_stats(entries: &[ManifestEntry], tokens_per_image: usize) -> CorpusStats {
    let mut s = CorpusStats::default();
    for e in entries {
        s.add(e.kind, 2 + (e.paths.len() * tokens_per_image) as u64);
    }
    s
}

pub fn corpus_stats_from_streams(streams: &[TokenStream]) -> CorpusStats {
    let mut s = CorpusStats::default();
    for t in streams {
        s.add(t.kind, t.ids.len() as u64);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sums_to_100() {
        let total: f64 = PAPER_REFERENCE.iter().map(|r| r.1).sum();
        assert!((total - 99.99).abs() < 1e-9, "published figures are rounded: {total}");
    }

    #[test]
    fn single_only_corpus() {
        let entries = vec![
            ManifestEntry {
                kind: SentenceKind::Single,
                paths: vec!["a.ppm".into()],
            };
            3
        ];
        let s = corpus_stats(&entries, 64);
        assert_eq!(s.tokens[0], 3 * 66);
        assert_eq!(s.percentages(), [100.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
