//! Sentence manifests: UTF-8, one sentence per line, `kind<TAB>path1,path2,...`.

use std::path::{Path, PathBuf};

use super::sentence::{SentenceKind, VisualSentence};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub kind: SentenceKind,
    pub paths: Vec<PathBuf>,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(e.kind.name());
        out.push('\t');
        let paths: Vec<String> = e.paths.iter().map(|p| p.to_string_lossy().into_owned()).collect();
        out.push_str(&paths.join(","));
        out.push('\n');
    }
    out
}

/// Parses manifest text; `source_name` labels line-numbered errors.
pub fn parse_manifest(text: &str, source_name: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let (kind, paths) = line
            .split_once('\t')
            .ok_or_else(|| err("expected kind<TAB>paths".into()))?;
        let kind: SentenceKind = kind.parse().map_err(|e: Error| err(e.to_string()))?;
        let paths: Vec<PathBuf> = paths.split(',').map(PathBuf::from).collect();
        if paths.iter().any(|p| p.as_os_str().is_empty()) {
            return Err(err("empty image path".into()));
        }
        if paths.len() > super::sentence::MAX_SENTENCE_IMAGES {
            return Err(err(format!("{} images exceed the 16-image limit", paths.len())));
        }
        entries.push(ManifestEntry { kind, paths });
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, &path.display().to_string())
}

/// Loads the images of a manifest entry; relative paths resolve against `base`.
pub fn load_sentence(entry: &ManifestEntry, base: &Path) -> Result<VisualSentence> {
    let images = entry
        .paths
        .iter()
        .map(|p| Image::read_ppm(&base.join(p)))
        .collect::<Result<Vec<_>>>()?;
    VisualSentence::new(entry.kind, images)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let entries = vec![
            ManifestEntry {
                kind: SentenceKind::Single,
                paths: vec!["img/0.ppm".into()],
            },
            ManifestEntry {
                kind: SentenceKind::Pair,
                paths: vec!["a.ppm".into(), "b.ppm".into()],
            },
        ];
        let text = format_manifest(&entries);
        assert_eq!(text, "single\timg/0.ppm\npair\ta.ppm,b.ppm\n");
        assert_eq!(parse_manifest(&text, "m").unwrap(), entries);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_manifest("single\ta.ppm\nbogus line\n", "corpus.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(err.to_string().starts_with("corpus.tsv:2:"));
        let err = parse_manifest("\nnot_a_kind\ta.ppm\n", "m").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        assert!(parse_manifest("single\ta.ppm,,b.ppm", "m").is_err());
    }
}
