//! Flat pipeline configuration.
//!
//! One namespace of `key = value` settings covers every stage. Files are
//! UTF-8 with `#` comments. Precedence, lowest to highest: built-in
//! defaults, the PLNMT_SEED environment variable (seed only), the config
//! file, command-line flags. [`PipelineConfig::render`] produces the
//! canonical form that gets logged and embedded in checkpoints.

use std::fs;
use std::path::Path;

use plannmt::codemodel::CodeConfig;
use plannmt::nmt::NmtConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`, got '{text}'")]
    BadLine { line: usize, text: String },
    #[error("config line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: key '{key}' needs {expected}, got '{value}'")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub bpe_merges: usize,
    pub vocab_cap: usize,
    /// Decoding beam width.
    pub beam: usize,
    pub code_n: usize,
    pub code_k: usize,
    pub code_hidden: usize,
    pub code_embed: usize,
    pub code_tau: f64,
    pub code_hard: bool,
    pub code_anneal_tau: bool,
    pub code_epochs: usize,
    pub code_lr: f64,
    pub code_batch_size: usize,
    pub code_holdout: f64,
    pub nmt_hidden: usize,
    pub nmt_dropout: f64,
    pub nmt_lr: f64,
    pub nmt_anneal_factor: f64,
    pub nmt_anneal_patience: usize,
    pub nmt_epochs: usize,
    pub nmt_batch_size: usize,
    pub nmt_holdout: f64,
    /// Decode-time length cap; 0 means 2·source length + 10.
    pub nmt_max_len: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let code = CodeConfig::default();
        let nmt = NmtConfig::default();
        PipelineConfig {
            seed: 1,
            bpe_merges: 300,
            vocab_cap: 1000,
            beam: 5,
            code_n: code.n,
            code_k: code.k,
            code_hidden: code.hidden,
            code_embed: code.embed,
            code_tau: code.tau,
            code_hard: code.hard,
            code_anneal_tau: code.anneal_tau,
            code_epochs: code.epochs,
            code_lr: code.lr,
            code_batch_size: code.batch_size,
            code_holdout: code.holdout_frac,
            nmt_hidden: nmt.hidden,
            nmt_dropout: nmt.dropout,
            nmt_lr: nmt.lr,
            nmt_anneal_factor: nmt.anneal_factor,
            nmt_anneal_patience: nmt.anneal_patience_steps,
            nmt_epochs: nmt.epochs,
            nmt_batch_size: nmt.batch_size,
            nmt_holdout: nmt.holdout_frac,
            nmt_max_len: 0,
        }
    }
}

fn parse_usize(key: &str, value: &str, line: usize) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        expected: "an unsigned integer",
    })
}

fn parse_u64(key: &str, value: &str, line: usize) -> Result<u64, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        expected: "an unsigned integer",
    })
}

fn parse_f64(key: &str, value: &str, line: usize) -> Result<f64, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
        expected: "a number",
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            expected: "true or false",
        }),
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        match key {
            "seed" => self.seed = parse_u64(key, value, line)?,
            "bpe_merges" => self.bpe_merges = parse_usize(key, value, line)?,
            "vocab_cap" => self.vocab_cap = parse_usize(key, value, line)?,
            "beam" => self.beam = parse_usize(key, value, line)?,
            "code_n" => self.code_n = parse_usize(key, value, line)?,
            "code_k" => self.code_k = parse_usize(key, value, line)?,
            "code_hidden" => self.code_hidden = parse_usize(key, value, line)?,
            "code_embed" => self.code_embed = parse_usize(key, value, line)?,
            "code_tau" => self.code_tau = parse_f64(key, value, line)?,
            "code_hard" => self.code_hard = parse_bool(key, value, line)?,
            "code_anneal_tau" => self.code_anneal_tau = parse_bool(key, value, line)?,
            "code_epochs" => self.code_epochs = parse_usize(key, value, line)?,
            "code_lr" => self.code_lr = parse_f64(key, value, line)?,
            "code_batch_size" => self.code_batch_size = parse_usize(key, value, line)?,
            "code_holdout" => self.code_holdout = parse_f64(key, value, line)?,
            "nmt_hidden" => self.nmt_hidden = parse_usize(key, value, line)?,
            "nmt_dropout" => self.nmt_dropout = parse_f64(key, value, line)?,
            "nmt_lr" => self.nmt_lr = parse_f64(key, value, line)?,
            "nmt_anneal_factor" => self.nmt_anneal_factor = parse_f64(key, value, line)?,
            "nmt_anneal_patience" => self.nmt_anneal_patience = parse_usize(key, value, line)?,
            "nmt_epochs" => self.nmt_epochs = parse_usize(key, value, line)?,
            "nmt_batch_size" => self.nmt_batch_size = parse_usize(key, value, line)?,
            "nmt_holdout" => self.nmt_holdout = parse_f64(key, value, line)?,
            "nmt_max_len" => self.nmt_max_len = parse_usize(key, value, line)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::BadLine {
                    line,
                    text: content.to_string(),
                });
            };
            self.set(key.trim(), value.trim(), line)?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.merge_text(&text)
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };
        put("seed", self.seed.to_string());
        put("bpe_merges", self.bpe_merges.to_string());
        put("vocab_cap", self.vocab_cap.to_string());
        put("beam", self.beam.to_string());
        put("code_n", self.code_n.to_string());
        put("code_k", self.code_k.to_string());
        put("code_hidden", self.code_hidden.to_string());
        put("code_embed", self.code_embed.to_string());
        put("code_tau", self.code_tau.to_string());
        put("code_hard", self.code_hard.to_string());
        put("code_anneal_tau", self.code_anneal_tau.to_string());
        put("code_epochs", self.code_epochs.to_string());
        put("code_lr", self.code_lr.to_string());
        put("code_batch_size", self.code_batch_size.to_string());
        put("code_holdout", self.code_holdout.to_string());
        put("nmt_hidden", self.nmt_hidden.to_string());
        put("nmt_dropout", self.nmt_dropout.to_string());
        put("nmt_lr", self.nmt_lr.to_string());
        put("nmt_anneal_factor", self.nmt_anneal_factor.to_string());
        put("nmt_anneal_patience", self.nmt_anneal_patience.to_string());
        put("nmt_epochs", self.nmt_epochs.to_string());
        put("nmt_batch_size", self.nmt_batch_size.to_string());
        put("nmt_holdout", self.nmt_holdout.to_string());
        put("nmt_max_len", self.nmt_max_len.to_string());
        out
    }

    pub fn code_config(&self) -> CodeConfig {
        CodeConfig {
            n: self.code_n,
            k: self.code_k,
            hidden: self.code_hidden,
            embed: self.code_embed,
            tau: self.code_tau,
            hard: self.code_hard,
            anneal_tau: self.code_anneal_tau,
            epochs: self.code_epochs,
            lr: self.code_lr,
            batch_size: self.code_batch_size,
            holdout_frac: self.code_holdout,
            seed: self.seed,
        }
    }

    pub fn nmt_config(&self) -> NmtConfig {
        NmtConfig {
            hidden: self.nmt_hidden,
            dropout: self.nmt_dropout,
            lr: self.nmt_lr,
            anneal_factor: self.nmt_anneal_factor,
            anneal_patience_steps: self.nmt_anneal_patience,
            max_len: if self.nmt_max_len == 0 {
                None
            } else {
                Some(self.nmt_max_len)
            },
            epochs: self.nmt_epochs,
            batch_size: self.nmt_batch_size,
            holdout_frac: self.nmt_holdout,
            seed: self.seed,
        }
    }
}
