//! `key=value` run configuration. Every key has a default; unknown keys are
//! errors. The resolved table is written next to each command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lvm_core::tensor::OptimizerConfig;
use lvm_core::vq::TokenizerConfig;
use lvm_core::{Error, Result};

/// Known keys with their defaults. `auto` optimizer values are filled from
/// the step count by the command that trains.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("image_size", "32"),
    ("f", "4"),
    ("K", "256"),
    ("L", "1024"),
    ("preset", "desk-small"),
    ("presets", "desk-micro,desk-small"),
    ("steps", "0"),
    ("batch", "2"),
    ("checkpoint_every", "500"),
    ("opt.base_lr", "auto"),
    ("opt.final_lr", "auto"),
    ("opt.warmup_steps", "auto"),
    ("opt.decay_steps", "auto"),
    ("opt.weight_decay", "auto"),
    ("opt.beta1", "0.9"),
    ("opt.beta2", "0.95"),
    ("opt.eps", "1e-8"),
    ("tokenizer_images", "2000"),
    ("tokenizer_steps", "2000"),
    ("tokens", "200000"),
    ("mix", "full"),
    ("shard_windows", "1024"),
    ("data", "data/corpus.tsv"),
    ("tokenizer_data", "data/tokenizer.tsv"),
    ("tokenizer", "tokenizer/tokenizer.lvmw"),
    ("streams", "tokens/streams.lvmt"),
    ("shards", "shards"),
    ("checkpoint", "model/model.lvmw"),
    ("resume", ""),
    ("prompts", "prompts.tsv"),
    ("out", "out"),
    ("shots", "5"),
    ("queries", "256"),
    ("videos", "100"),
    ("temperature", "1.0"),
    ("top_k", "0"),
    ("deterministic", "false"),
];

pub const RESOLVED_NAME: &str = "run.cfg";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Applies `key=value` lines over the defaults. `#` starts a comment.
    /// Any problem is a config error, so a bad file is a usage failure.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config(format!("{source_name}:{}: {message}", i + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                if value.contains(['\n', '#']) {
                    return Err(Error::Config(format!("value for {key} may not contain newlines or '#'")));
                }
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key {key:?}"))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("config key {key} is not declared"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
    }

    pub fn path(&self, key: &str) -> PathBuf {
        PathBuf::from(self.raw(key))
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    /// Tokenizer shape from `image_size`, `f` and `K`.
    pub fn tokenizer_config(&self) -> Result<TokenizerConfig> {
        let cfg = TokenizerConfig {
            image_size: self.get("image_size")?,
            downsample: self.get("f")?,
            codebook_size: self.get("K")?,
            ..TokenizerConfig::desk()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Optimizer fields with every `auto` replaced from `defaults`; the
    /// resolved values are written back.
    pub fn resolve_optimizer(&mut self, defaults: &OptimizerConfig) -> Result<OptimizerConfig> {
        for (k, v) in defaults.to_pairs("opt.") {
            if self.raw(&k) == "auto" {
                self.set(&k, &v)?;
            }
        }
        OptimizerConfig::from_lookup("opt.", |k| Ok(self.raw(k).to_string()))
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_NAME);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })
    }
}
