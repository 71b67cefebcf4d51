//! Structure-planned neural machine translation.
//!
//! The pipeline learns a short sequence of discrete planner codes describing
//! the coarse structure of each target sentence (its simplified POS-tag
//! sequence), prepends those codes to the training targets, and trains a
//! standard attentional seq2seq model on the augmented corpus. At decoding
//! time the model first commits to a code prefix, which steers the structure
//! of the translation; forcing a different prefix reorders the output.
//!
//! Modules, in pipeline order:
//! - [`numcore`]: tensors, autodiff tape, gradient checking
//! - [`textpipe`]: corpora, BPE, vocabularies, code-augmented targets
//! - [`structann`]: POS-tag simplification to the closed alphabet
//! - [`codes`]: planner-code assignments and their file format
//! - [`codemodel`]: the discrete autoencoder that learns and extracts codes
//! - [`nmt`]: the attentional encoder-decoder and its training loop
//! - [`decode`]: beam search with forced code prefixes, code stripping
//! - [`eval`]: BLEU, reconstruction/prediction accuracy, code histograms
//! - [`checkpoint`]: binary parameter persistence
//! - [`optim`]: NAG with gradient clipping and plateau annealing
//! - [`toygen`]: deterministic toy corpus generator used by the test suite

pub mod checkpoint;
pub mod codemodel;
pub mod codes;
pub mod decode;
pub mod eval;
pub mod nmt;
pub mod numcore;
pub mod optim;
pub mod structann;
pub mod textpipe;
pub mod toygen;
