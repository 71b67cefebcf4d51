//! The planner-code model: a discrete autoencoder over sentence structure.
//!
//! A backward LSTM reads the simplified tag sequence and an affine head turns
//! its final state into N blocks of K logits. Gumbel-Softmax discretizes each
//! block into an (approximately) one-hot code vector. The decoder starts from
//! the sum of an affine map of the concatenated codes and a backward-LSTM
//! summary of the source sentence, then reconstructs the tag sequence with a
//! forward LSTM under teacher forcing and cross-entropy loss. After training,
//! codes are the noise-free argmax of the encoder logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codes::CodeAssignment;
use crate::numcore::{argmax, LstmState, NodeId, NumError, ParamStore, Tape, Tensor};
use crate::optim::NagOptimizer;
use crate::structann::simplify_tags;
use crate::textpipe::{SentenceRecord, Vocabulary};

/// Internal tag alphabet: begin/end markers plus the closed structure symbols.
pub const TAG_ALPHABET: [&str; 7] = ["<s>", "</s>", "N", "V", "PRP", ",", "."];
pub const TAG_BOS: usize = 0;
pub const TAG_EOS: usize = 1;

pub fn tag_symbol_id(sym: &str) -> Option<usize> {
    TAG_ALPHABET.iter().position(|t| *t == sym)
}

/// Encode simplified structure symbols to internal ids (no bos/eos).
pub fn encode_tag_symbols(symbols: &[&str]) -> Vec<usize> {
    symbols
        .iter()
        .map(|s| tag_symbol_id(s).expect("simplified symbol"))
        .collect()
}

#[derive(Debug, Error)]
pub enum CodeModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("bad code-model config: {0}")]
    Config(String),
    #[error("empty {0} sequence")]
    Empty(&'static str),
    #[error("expected {expected} code vectors, got {actual}")]
    CodeCount { expected: usize, actual: usize },
    #[error("no records with usable tags to train on")]
    NoTaggedRecords,
}

#[derive(Debug, Clone)]
pub struct CodeConfig {
    /// codes per sentence
    pub n: usize,
    /// code alphabet size
    pub k: usize,
    pub hidden: usize,
    pub embed: usize,
    /// Gumbel-Softmax temperature
    pub tau: f64,
    /// straight-through hard sampling
    pub hard: bool,
    /// anneal tau linearly to half its value over the epochs
    pub anneal_tau: bool,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for CodeConfig {
    fn default() -> Self {
        CodeConfig {
            n: 2,
            k: 4,
            hidden: 256,
            embed: 256,
            tau: 1.0,
            hard: true,
            anneal_tau: false,
            epochs: 50,
            lr: 0.25,
            batch_size: 16,
            holdout_frac: 0.05,
            seed: 1,
        }
    }
}

impl CodeConfig {
    pub fn validate(&self) -> Result<(), CodeModelError> {
        if self.n < 1 {
            return Err(CodeModelError::Config("n must be at least 1".into()));
        }
        if self.k < 2 {
            return Err(CodeModelError::Config("k must be at least 2".into()));
        }
        if self.tau <= 0.0 {
            return Err(CodeModelError::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.hidden == 0 || self.embed == 0 || self.batch_size == 0 {
            return Err(CodeModelError::Config("zero-sized dimension".into()));
        }
        Ok(())
    }

    /// Information capacity of one assignment, N·log2 K bits.
    pub fn capacity_bits(&self) -> f64 {
        self.n as f64 * (self.k as f64).log2()
    }

    fn tau_at_epoch(&self, epoch: usize) -> f64 {
        if !self.anneal_tau || self.epochs <= 1 {
            return self.tau;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.tau * (1.0 - 0.5 * t)
    }
}

/// Fresh parameters for the given source vocabulary size.
pub fn build_params(config: &CodeConfig, src_vocab_size: usize) -> ParamStore {
    let mut store = ParamStore::new(config.seed);
    let (h, e) = (config.hidden, config.embed);
    store.add_embedding("tag_embed", TAG_ALPHABET.len(), e).expect("fresh store");
    store.add_lstm("enc_tags", e, h).expect("fresh store");
    store.add_affine("enc_fc", h, config.n * config.k).expect("fresh store");
    store.add_embedding("src_embed", src_vocab_size, e).expect("fresh store");
    store.add_lstm("enc_src", e, h).expect("fresh store");
    store.add_affine("dec_init", config.n * config.k, h).expect("fresh store");
    store.add_lstm("dec_tags", e, h).expect("fresh store");
    store.add_affine("out", h, TAG_ALPHABET.len()).expect("fresh store");
    store
}

/// One prepared training pair: encoded source and simplified-tag ids.
#[derive(Debug, Clone)]
pub struct CodeExample {
    pub src_ids: Vec<usize>,
    pub tag_ids: Vec<usize>,
}

/// Simplify and encode a record's tags. Returns None when the record has no
/// tags, the simplified sequence is empty, or the source is empty; such
/// records are excluded from training and get the all-zeros code.
pub fn prepare_example(record: &SentenceRecord, src_vocab: &Vocabulary) -> Option<CodeExample> {
    let tags = record.target_tags.as_ref()?;
    let simplified = simplify_tags(tags);
    if simplified.is_empty() || record.source.is_empty() {
        return None;
    }
    Some(CodeExample {
        src_ids: src_vocab.encode_seq(&record.source),
        tag_ids: encode_tag_symbols(&simplified),
    })
}

/// Backward LSTM over the tag sequence, then the encoder head, sliced into
/// N logit blocks of size K.
pub fn encode_structure(
    tape: &mut Tape,
    store: &ParamStore,
    tag_ids: &[usize],
    config: &CodeConfig,
) -> Result<Vec<NodeId>, CodeModelError> {
    if tag_ids.is_empty() {
        return Err(CodeModelError::Empty("tag"));
    }
    let embed = tape.param(store, "tag_embed")?;
    let mut state = tape.zero_state(config.hidden);
    for &t in tag_ids.iter().rev() {
        let x = tape.embed_row(embed, t)?;
        state = tape.lstm_cell(store, "enc_tags", x, state)?;
    }
    let flat = tape.affine(store, "enc_fc", state.h)?;
    let mut blocks = Vec::with_capacity(config.n);
    for i in 0..config.n {
        blocks.push(tape.slice(flat, i * config.k, config.k)?);
    }
    Ok(blocks)
}

/// One standard-Gumbel draw per class: -ln(-ln u).
pub fn sample_gumbel<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// softmax((logits + noise) / tau); in hard mode the forward value is the
/// exact one-hot of the argmax while gradients flow through the soft vector.
pub fn gumbel_softmax(
    tape: &mut Tape,
    logits: NodeId,
    noise: &[f64],
    tau: f64,
    hard: bool,
) -> Result<NodeId, CodeModelError> {
    if tau <= 0.0 {
        return Err(CodeModelError::Config(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if tape.value(logits).len() != noise.len() {
        return Err(CodeModelError::Config(format!(
            "noise length {} does not match {} logits",
            noise.len(),
            tape.value(logits).len()
        )));
    }
    let g = tape.constant_vec(noise.to_vec());
    let sum = tape.add(logits, g)?;
    let scaled = tape.scale(sum, 1.0 / tau);
    let soft = tape.softmax(scaled)?;
    if hard {
        Ok(tape.onehot_st(soft)?)
    } else {
        Ok(soft)
    }
}

/// Noise-free discretization: exact one-hot of the logits' argmax. Used for
/// validation and wherever extraction semantics are wanted inside a graph.
pub fn hard_onehot(tape: &mut Tape, logits: NodeId) -> Result<NodeId, CodeModelError> {
    Ok(tape.onehot_st(logits)?)
}

/// Backward LSTM over the source plus the code conditioning:
/// h0 = dec_init([C_1 … C_N]) + s_1.
pub fn condition_decoder(
    tape: &mut Tape,
    store: &ParamStore,
    src_ids: &[usize],
    code_vecs: &[NodeId],
    config: &CodeConfig,
) -> Result<NodeId, CodeModelError> {
    if src_ids.is_empty() {
        return Err(CodeModelError::Empty("source"));
    }
    if code_vecs.len() != config.n {
        return Err(CodeModelError::CodeCount {
            expected: config.n,
            actual: code_vecs.len(),
        });
    }
    let embed = tape.param(store, "src_embed")?;
    let mut state = tape.zero_state(config.hidden);
    for &t in src_ids.iter().rev() {
        let x = tape.embed_row(embed, t)?;
        state = tape.lstm_cell(store, "enc_src", x, state)?;
    }
    let cc = tape.concat(code_vecs)?;
    let fd = tape.affine(store, "dec_init", cc)?;
    Ok(tape.add(fd, state.h)?)
}

/// Teacher-forced reconstruction of the tag sequence from h0. Returns the
/// mean token cross-entropy (end-of-sequence included) and per-step logits.
pub fn reconstruct_tags(
    tape: &mut Tape,
    store: &ParamStore,
    tag_ids: &[usize],
    h0: NodeId,
    config: &CodeConfig,
) -> Result<(NodeId, Vec<NodeId>), CodeModelError> {
    let embed = tape.param(store, "tag_embed")?;
    let c0 = tape.constant(Tensor::zeros(&[config.hidden]));
    let mut state = LstmState { h: h0, c: c0 };
    let inputs = std::iter::once(TAG_BOS).chain(tag_ids.iter().copied());
    let targets = tag_ids.iter().copied().chain(std::iter::once(TAG_EOS));
    let mut losses = Vec::with_capacity(tag_ids.len() + 1);
    let mut step_logits = Vec::with_capacity(tag_ids.len() + 1);
    for (inp, tgt) in inputs.zip(targets) {
        let x = tape.embed_row(embed, inp)?;
        state = tape.lstm_cell(store, "dec_tags", x, state)?;
        let logits = tape.affine(store, "out", state.h)?;
        losses.push(tape.softmax_xent(logits, tgt)?);
        step_logits.push(logits);
    }
    let loss = tape.mean_scalars(&losses)?;
    Ok((loss, step_logits))
}

/// Full per-sentence loss. With noise the codes go through Gumbel-Softmax
/// (training); without, they are the noise-free argmax one-hots (validation).
pub fn sentence_loss(
    tape: &mut Tape,
    store: &ParamStore,
    example: &CodeExample,
    noise: Option<&[Vec<f64>]>,
    tau: f64,
    config: &CodeConfig,
) -> Result<NodeId, CodeModelError> {
    let logit_blocks = encode_structure(tape, store, &example.tag_ids, config)?;
    let mut code_vecs = Vec::with_capacity(config.n);
    for (i, &block) in logit_blocks.iter().enumerate() {
        let vec = match noise {
            Some(ns) => gumbel_softmax(tape, block, &ns[i], tau, config.hard)?,
            None => hard_onehot(tape, block)?,
        };
        code_vecs.push(vec);
    }
    let h0 = condition_decoder(tape, store, &example.src_ids, &code_vecs, config)?;
    let (loss, _) = reconstruct_tags(tape, store, &example.tag_ids, h0, config)?;
    Ok(loss)
}

/// Mean sentence loss over a batch on one tape.
pub fn batch_loss(
    tape: &mut Tape,
    store: &ParamStore,
    examples: &[&CodeExample],
    noise: Option<&[Vec<Vec<f64>>]>,
    tau: f64,
    config: &CodeConfig,
) -> Result<NodeId, CodeModelError> {
    if examples.is_empty() {
        return Err(CodeModelError::Empty("batch"));
    }
    let mut losses = Vec::with_capacity(examples.len());
    for (j, ex) in examples.iter().enumerate() {
        let ns = noise.map(|n| n[j].as_slice());
        losses.push(sentence_loss(tape, store, ex, ns, tau, config)?);
    }
    Ok(tape.mean_scalars(&losses)?)
}

/// Noise-free mean loss over a dataset (fresh tape per sentence).
pub fn dataset_loss(
    store: &ParamStore,
    examples: &[CodeExample],
    config: &CodeConfig,
) -> Result<f64, CodeModelError> {
    if examples.is_empty() {
        return Err(CodeModelError::Empty("dataset"));
    }
    let mut total = 0.0;
    for ex in examples {
        let mut tape = Tape::inference();
        let loss = sentence_loss(&mut tape, store, ex, None, config.tau, config)?;
        total += tape.value(loss).as_scalar()?;
    }
    Ok(total / examples.len() as f64)
}

/// Deterministic code extraction: argmax per logit block, ties to the lowest
/// index. No Gumbel noise is involved.
pub fn extract_codes_example(
    store: &ParamStore,
    tag_ids: &[usize],
    config: &CodeConfig,
) -> Result<CodeAssignment, CodeModelError> {
    let mut tape = Tape::inference();
    let blocks = encode_structure(&mut tape, store, tag_ids, config)?;
    Ok(CodeAssignment(
        blocks
            .iter()
            .map(|&b| argmax(tape.value(b).data()))
            .collect(),
    ))
}

/// Codes for every record, in order. Records without usable tags get the
/// reserved all-zeros assignment.
pub fn extract_codes(
    records: &[SentenceRecord],
    store: &ParamStore,
    config: &CodeConfig,
) -> Result<Vec<CodeAssignment>, CodeModelError> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let assignment = match r
            .target_tags
            .as_ref()
            .map(|tags| simplify_tags(tags))
            .filter(|s| !s.is_empty())
        {
            Some(simplified) => {
                extract_codes_example(store, &encode_tag_symbols(&simplified), config)?
            }
            None => CodeAssignment(vec![0; config.n]),
        };
        out.push(assignment);
    }
    Ok(out)
}

/// Greedy tag decoding from (source, codes): the structure the model thinks
/// the codes stand for. Returns internal tag ids without bos/eos.
pub fn greedy_reconstruct(
    store: &ParamStore,
    src_ids: &[usize],
    codes: &CodeAssignment,
    config: &CodeConfig,
    max_len: usize,
) -> Result<Vec<usize>, CodeModelError> {
    let mut tape = Tape::inference();
    let mut code_vecs = Vec::with_capacity(config.n);
    for &c in &codes.0 {
        let mut onehot = vec![0.0; config.k];
        if c >= config.k {
            return Err(CodeModelError::Config(format!(
                "code value {c} out of range for k={}",
                config.k
            )));
        }
        onehot[c] = 1.0;
        code_vecs.push(tape.constant_vec(onehot));
    }
    let h0 = condition_decoder(&mut tape, store, src_ids, &code_vecs, config)?;
    let embed = tape.param(store, "tag_embed")?;
    let c0 = tape.constant(Tensor::zeros(&[config.hidden]));
    let mut state = LstmState { h: h0, c: c0 };
    let mut prev = TAG_BOS;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let x = tape.embed_row(embed, prev)?;
        state = tape.lstm_cell(store, "dec_tags", x, state)?;
        let logits = tape.affine(store, "out", state.h)?;
        let next = argmax(tape.value(logits).data());
        if next == TAG_EOS {
            break;
        }
        out.push(next);
        prev = next;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CodeEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct CodeTrainLog {
    pub epochs: Vec<CodeEpochStats>,
    pub best_epoch: usize,
    pub num_train: usize,
    pub num_val: usize,
}

/// Train on every usable record and return the parameters with the best
/// validation loss, evaluated noise-free each epoch on a held-out slice.
pub fn train_code_model(
    records: &[SentenceRecord],
    src_vocab: &Vocabulary,
    config: &CodeConfig,
) -> Result<(ParamStore, CodeTrainLog), CodeModelError> {
    config.validate()?;
    let examples: Vec<CodeExample> = records
        .iter()
        .filter_map(|r| prepare_example(r, src_vocab))
        .collect();
    if examples.is_empty() {
        return Err(CodeModelError::NoTaggedRecords);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    shuffle(&mut order, &mut rng);
    let holdout = if examples.len() >= 4 {
        ((examples.len() as f64 * config.holdout_frac).round() as usize)
            .clamp(1, examples.len() / 2)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(holdout);
    let val: Vec<CodeExample> = if val_idx.is_empty() {
        examples.clone()
    } else {
        val_idx.iter().map(|&i| examples[i].clone()).collect()
    };
    let mut train: Vec<usize> = train_idx.to_vec();

    let mut params = build_params(config, src_vocab.len());
    let mut opt = NagOptimizer::new(config.lr, &params);
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut log = CodeTrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        num_train: train.len(),
        num_val: val.len(),
    };

    for epoch in 0..config.epochs {
        let tau = config.tau_at_epoch(epoch);
        shuffle(&mut train, &mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in train.chunks(config.batch_size) {
            let batch: Vec<&CodeExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let noise: Vec<Vec<Vec<f64>>> = batch
                .iter()
                .map(|_| (0..config.n).map(|_| sample_gumbel(&mut rng, config.k)).collect())
                .collect();
            opt.lookahead(&mut params)?;
            let mut tape = Tape::inference();
            let loss = batch_loss(&mut tape, &params, &batch, Some(&noise), tau, config)?;
            epoch_loss += tape.value(loss).as_scalar()?;
            batches += 1;
            let mut grads = tape.backward(loss, &params)?;
            opt.step(&mut params, &mut grads)?;
        }
        let train_loss = if batches > 0 { epoch_loss / batches as f64 } else { 0.0 };
        let val_loss = dataset_loss(&params, &val, config)?;
        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            best_epoch = epoch;
        }
        log.epochs.push(CodeEpochStats {
            epoch,
            train_loss,
            val_loss,
            tau,
        });
    }
    log.best_epoch = best_epoch;
    Ok((best_params, log))
}

fn shuffle<R: Rng>(xs: &mut [usize], rng: &mut R) {
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
}
