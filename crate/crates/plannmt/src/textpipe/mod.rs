//! Corpus ingestion, byte-pair encoding, vocabularies, and planner-code
//! augmentation of target sentences.

mod bpe;
mod corpus;
mod vocab;

pub use bpe::{join_bpe, BpeModel};
pub use corpus::{augment_targets_with_codes, load_parallel_corpus, SentenceRecord};
pub use vocab::{
    is_reserved_surface, Vocabulary, CODE_BASE_ID, EOC_ID, EOC_TOKEN, EOS_ID, EOS_TOKEN, PAD_ID,
    PAD_TOKEN, UNK_ID, UNK_TOKEN,
};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: expected {expected} lines, found {actual}")]
    LineCountMismatch {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("line {line}: {words} target words but {tags} tags")]
    TagAlignment {
        line: usize,
        words: usize,
        tags: usize,
    },
    #[error("{path}: {detail}")]
    BadFormat { path: String, detail: String },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no code assignment for record {index}")]
    MissingCode { index: usize },
    #[error("vocabulary cap {cap} does not cover the {reserved} reserved tokens")]
    VocabCapTooSmall { cap: usize, reserved: usize },
}

impl TextError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        TextError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
