//! Prompt manifests (`mode<TAB>paths<TAB>n_predict`) and result records.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::forge::MAX_SENTENCE_IMAGES;
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptMode {
    Sequential,
    Analogy,
}

impl PromptMode {
    pub fn name(self) -> &'static str {
        match self {
            PromptMode::Sequential => "sequential",
            PromptMode::Analogy => "analogy",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(PromptMode::Sequential),
            "analogy" => Ok(PromptMode::Analogy),
            _ => Err(Error::Format(format!("unknown prompt mode {s:?}"))),
        }
    }
}

/// A prompt as stored on disk. For analogy prompts the images are
/// `in1, out1, ..., inN, outN, query`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSpec {
    pub mode: PromptMode,
    pub images: Vec<PathBuf>,
    pub n_predict: usize,
}

impl PromptSpec {
    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() || self.n_predict == 0 {
            return Err(Error::Format("a prompt needs images and at least one prediction".into()));
        }
        if self.images.len() > MAX_SENTENCE_IMAGES {
            return Err(Error::Format(format!(
                "{} prompt images exceed the {MAX_SENTENCE_IMAGES}-image limit",
                self.images.len()
            )));
        }
        if self.mode == PromptMode::Analogy {
            if self.images.len() % 2 == 0 {
                return Err(Error::Format(format!(
                    "analogy prompts hold example pairs plus a query; got {} images",
                    self.images.len()
                )));
            }
            if self.n_predict != 1 {
                return Err(Error::Format("analogy prompts predict exactly one image".into()));
            }
        }
        Ok(())
    }

    pub fn load_images(&self, base: &Path) -> Result<Vec<Image>> {
        self.images.iter().map(|p| Image::read_ppm(&base.join(p))).collect()
    }
}

pub fn format_prompt_manifest(specs: &[PromptSpec]) -> String {
    let mut out = String::new();
    for s in specs {
        let paths: Vec<String> = s.images.iter().map(|p| p.to_string_lossy().into_owned()).collect();
        out.push_str(&format!("{}\t{}\t{}\n", s.mode, paths.join(","), s.n_predict));
    }
    out
}

pub fn parse_prompt_manifest(text: &str, source_name: &str) -> Result<Vec<PromptSpec>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |message: String| Error::Parse {
            source_name: source_name.to_string(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err("expected mode<TAB>paths<TAB>n_predict".into()));
        }
        let mode: PromptMode = fields[0].parse().map_err(|e: Error| err(e.to_string()))?;
        let images: Vec<PathBuf> = fields[1].split(',').map(PathBuf::from).collect();
        if images.iter().any(|p| p.as_os_str().is_empty()) {
            return Err(err("empty image path".into()));
        }
        let n_predict = fields[2]
            .parse()
            .map_err(|_| err(format!("bad prediction count {:?}", fields[2])))?;
        let spec = PromptSpec { mode, images, n_predict };
        spec.validate().map_err(|e| err(e.to_string()))?;
        out.push(spec);
    }
    Ok(out)
}

pub fn read_prompt_manifest(path: &Path) -> Result<Vec<PromptSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prompt_manifest(&text, &path.display().to_string())
}

/// One row of a results table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub task: String,
    pub model: String,
    pub context: usize,
    pub value: f64,
    pub seed: u64,
}

impl EvalRecord {
    pub fn new(task: impl Into<String>, model: impl Into<String>, context: usize, value: f64, seed: u64) -> Result<Self> {
        let r = EvalRecord {
            task: task.into(),
            model: model.into(),
            context,
            value,
            seed,
        };
        if !value.is_finite() {
            return Err(Error::Training(format!("non-finite {} value for {}", r.task, r.model)));
        }
        if [&r.task, &r.model].iter().any(|s| s.contains([',', '\n'])) {
            return Err(Error::Format(format!("record names may not contain commas: {:?}", r)));
        }
        Ok(r)
    }

    pub const CSV_HEADER: &'static str = "task,model,context,value,seed";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.task, self.model, self.context, self.value, self.seed)
    }

    pub fn to_csv(records: &[EvalRecord]) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in records {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str, source_name: &str) -> Result<Vec<EvalRecord>> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message,
            };
            if i == 0 {
                if line != Self::CSV_HEADER {
                    return Err(err(format!("expected header {:?}", Self::CSV_HEADER)));
                }
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(err("expected 5 fields".into()));
            }
            let context = f[2].parse().map_err(|_| err(format!("bad context {:?}", f[2])))?;
            let value = f[3].parse().map_err(|_| err(format!("bad value {:?}", f[3])))?;
            let seed = f[4].parse().map_err(|_| err(format!("bad seed {:?}", f[4])))?;
            out.push(EvalRecord::new(f[0], f[1], context, value, seed).map_err(|e| err(e.to_string()))?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let specs = vec![
            PromptSpec {
                mode: PromptMode::Sequential,
                images: (0..7).map(|i| PathBuf::from(format!("f{i}.ppm"))).collect(),
                n_predict: 1,
            },
            PromptSpec {
                mode: PromptMode::Analogy,
                images: (0..11).map(|i| PathBuf::from(format!("a/{i}.ppm"))).collect(),
                n_predict: 1,
            },
        ];
        let text = format_prompt_manifest(&specs);
        assert_eq!(parse_prompt_manifest(&text, "m").unwrap(), specs);
    }

    #[test]
    fn manifest_errors_name_the_line() {
        let e = parse_prompt_manifest("sequential\ta.ppm\t1\nanalogy\ta.ppm,b.ppm\t1\n", "p.tsv").unwrap_err();
        assert!(e.to_string().starts_with("p.tsv:2:"), "{e}");
        assert!(parse_prompt_manifest("sideways\ta.ppm\t1\n", "p").is_err());
        assert!(parse_prompt_manifest("sequential\ta.ppm\tx\n", "p").is_err());
    }

    #[test]
    fn records_round_trip() {
        let rs = vec![
            EvalRecord::new("context_sweep", "desk-small", 3, 41.25, 7).unwrap(),
            EvalRecord::new("segmentation", "m", 5, 0.1 + 0.2, 7).unwrap(),
        ];
        assert_eq!(EvalRecord::parse_csv(&EvalRecord::to_csv(&rs), "r").unwrap(), rs);
        assert!(EvalRecord::new("t", "m", 0, f64::NAN, 0).is_err());
        assert!(EvalRecord::new("a,b", "m", 0, 1.0, 0).is_err());
    }
}
