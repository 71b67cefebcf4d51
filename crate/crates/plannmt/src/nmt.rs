//! Attention translation model: two bidirectional encoder layers, a
//! two-layer decoder with key-value attention feeding the first layer,
//! and a residual combination of the decoder layers before the output
//! projection. The same architecture serves the baseline and the
//! planned system; they differ only in the training targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numcore::{LstmState, NodeId, NumError, ParamStore, Tape};
use crate::optim::{LrSchedule, NagOptimizer};

#[derive(Debug, Error)]
pub enum NmtError {
    #[error("nmt config: {0}")]
    Config(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("no training examples")]
    NoExamples,
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Width, regularization, and schedule knobs. Research-scale settings
/// (hidden 256 or 1000, patience 20k steps) are impractical on a desk run,
/// so the defaults are scaled down while keeping every ratio intact.
#[derive(Debug, Clone, PartialEq)]
pub struct NmtConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub anneal_factor: f64,
    pub anneal_patience_steps: usize,
    /// Decode-time cap; `None` means 2·source length + 10.
    pub max_len: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub holdout_frac: f64,
    pub seed: u64,
}

impl Default for NmtConfig {
    fn default() -> Self {
        NmtConfig {
            hidden: 64,
            dropout: 0.2,
            lr: 0.25,
            anneal_factor: 10.0,
            anneal_patience_steps: 500,
            max_len: None,
            epochs: 10,
            batch_size: 16,
            holdout_frac: 0.05,
            seed: 1,
        }
    }
}

impl NmtConfig {
    pub fn validate(&self) -> Result<(), NmtError> {
        if self.hidden == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(NmtError::Config(
                "hidden, epochs, and batch_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NmtError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(NmtError::Config(format!("bad learning rate {}", self.lr)));
        }
        if self.anneal_factor <= 1.0 {
            return Err(NmtError::Config(format!(
                "anneal factor {} must exceed 1",
                self.anneal_factor
            )));
        }
        if self.anneal_patience_steps == 0 {
            return Err(NmtError::Config("anneal patience must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_frac) {
            return Err(NmtError::Config(format!(
                "holdout fraction {} outside [0, 1)",
                self.holdout_frac
            )));
        }
        Ok(())
    }
}

/// One encoded sentence pair. The target carries any code prefix already;
/// the trailing end-of-sequence token is appended during loss assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct NmtExample {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

/// Embeddings, the four encoder LSTMs, the two decoder LSTMs, the three
/// attention projections, the two decoder-state initializers, and the
/// output projection. Embedding width equals the hidden width.
pub fn build_params(config: &NmtConfig, src_vocab: usize, tgt_vocab: usize) -> ParamStore {
    let h = config.hidden;
    let mut store = ParamStore::new(config.seed);
    store.add_embedding("src_embed", src_vocab, h).expect("fresh store");
    store.add_embedding("tgt_embed", tgt_vocab, h).expect("fresh store");
    store.add_lstm("enc1.fwd", h, h).expect("fresh store");
    store.add_lstm("enc1.bwd", h, h).expect("fresh store");
    store.add_lstm("enc2.fwd", 2 * h, h).expect("fresh store");
    store.add_lstm("enc2.bwd", 2 * h, h).expect("fresh store");
    store.add_affine("attn.query", h, h).expect("fresh store");
    store.add_affine("attn.key", 2 * h, h).expect("fresh store");
    store.add_affine("attn.val", 2 * h, h).expect("fresh store");
    store.add_lstm("dec1", 2 * h, h).expect("fresh store");
    store.add_lstm("dec2", h, h).expect("fresh store");
    store.add_affine("dec_init1", 2 * h, h).expect("fresh store");
    store.add_affine("dec_init2", 2 * h, h).expect("fresh store");
    store.add_affine("out", h, tgt_vocab).expect("fresh store");
    store
}

fn run_direction(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    inputs: &[NodeId],
    hidden: usize,
    reversed: bool,
) -> Result<Vec<NodeId>, NmtError> {
    let mut state = tape.zero_state(hidden);
    let mut out = Vec::with_capacity(inputs.len());
    if reversed {
        for &x in inputs.iter().rev() {
            state = tape.lstm_cell(store, prefix, x, state)?;
            out.push(state.h);
        }
        out.reverse();
    } else {
        for &x in inputs {
            state = tape.lstm_cell(store, prefix, x, state)?;
            out.push(state.h);
        }
    }
    Ok(out)
}

fn bidirectional_layer(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    inputs: &[NodeId],
    hidden: usize,
) -> Result<Vec<NodeId>, NmtError> {
    let fwd = run_direction(tape, store, &format!("{prefix}.fwd"), inputs, hidden, false)?;
    let bwd = run_direction(tape, store, &format!("{prefix}.bwd"), inputs, hidden, true)?;
    fwd.iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat(&[f, b]).map_err(NmtError::from))
        .collect()
}

/// Encode a source sentence into one final-layer state per position.
/// Each state is the concatenation of the forward and backward layer-2
/// hidden states, so it has width 2·hidden.
pub fn encode_source(
    tape: &mut Tape,
    store: &ParamStore,
    src_ids: &[usize],
    config: &NmtConfig,
) -> Result<Vec<NodeId>, NmtError> {
    if src_ids.is_empty() {
        return Err(NmtError::Empty("source"));
    }
    let table = tape.param(store, "src_embed")?;
    let mut xs = Vec::with_capacity(src_ids.len());
    for &id in src_ids {
        let e = tape.embed_row(table, id)?;
        xs.push(tape.dropout(e, config.dropout)?);
    }
    let layer1 = bidirectional_layer(tape, store, "enc1", &xs, config.hidden)?;
    let mut mid = Vec::with_capacity(layer1.len());
    for &a in &layer1 {
        mid.push(tape.dropout(a, config.dropout)?);
    }
    bidirectional_layer(tape, store, "enc2", &mid, config.hidden)
}

/// Scaled dot-product attention over projected keys and values. Returns
/// the context vector and the weight distribution over source positions.
pub fn attention_context(
    tape: &mut Tape,
    store: &ParamStore,
    query: NodeId,
    states: &[NodeId],
) -> Result<(NodeId, NodeId), NmtError> {
    if states.is_empty() {
        return Err(NmtError::Empty("encoder states"));
    }
    let dim = tape.value(query).data().len();
    let scale = 1.0 / (dim as f64).sqrt();
    let mut scores = Vec::with_capacity(states.len());
    let mut values = Vec::with_capacity(states.len());
    for &s in states {
        let key = tape.affine(store, "attn.key", s)?;
        let raw = tape.dot(query, key)?;
        scores.push(tape.scale(raw, scale));
        values.push(tape.affine(store, "attn.val", s)?);
    }
    let packed = tape.pack_scalars(&scores)?;
    let weights = tape.softmax(packed)?;
    let context = tape.axpy_many(weights, &values)?;
    Ok((context, weights))
}

/// Decoder state between steps: both LSTM layers plus the context vector
/// computed at the previous step, which joins the next layer-1 input.
#[derive(Debug, Clone, Copy)]
pub struct DecState {
    pub l1: LstmState,
    pub l2: LstmState,
    pub context: NodeId,
}

/// Initial decoder state: both layers start from the mean of the encoder
/// states pushed through a tanh affine map; cells and context start at zero.
pub fn init_decoder_state(
    tape: &mut Tape,
    store: &ParamStore,
    enc_states: &[NodeId],
    config: &NmtConfig,
) -> Result<DecState, NmtError> {
    if enc_states.is_empty() {
        return Err(NmtError::Empty("encoder states"));
    }
    let mean = tape.mean_vecs(enc_states)?;
    let a1 = tape.affine(store, "dec_init1", mean)?;
    let h1 = tape.tanh(a1);
    let a2 = tape.affine(store, "dec_init2", mean)?;
    let h2 = tape.tanh(a2);
    let zero = tape.constant_vec(vec![0.0; config.hidden]);
    Ok(DecState {
        l1: LstmState { h: h1, c: zero },
        l2: LstmState { h: h2, c: zero },
        context: zero,
    })
}

/// One decoder step up to the output logits. Layer 1 consumes the previous
/// token's embedding joined with the previous step's context; its hidden
/// state queries the attention whose context is stored for the next step;
/// layer 2 consumes layer 1's output; the residual sum of both hidden
/// states feeds the output projection.
pub fn decoder_step_logits(
    tape: &mut Tape,
    store: &ParamStore,
    prev_id: usize,
    state: DecState,
    enc_states: &[NodeId],
    config: &NmtConfig,
) -> Result<(NodeId, DecState), NmtError> {
    let table = tape.param(store, "tgt_embed")?;
    let e = tape.embed_row(table, prev_id)?;
    let e = tape.dropout(e, config.dropout)?;
    let ctx_in = tape.dropout(state.context, config.dropout)?;
    let x1 = tape.concat(&[e, ctx_in])?;
    let l1 = tape.lstm_cell(store, "dec1", x1, state.l1)?;
    let raw_query = tape.affine(store, "attn.query", l1.h)?;
    let (context, _) = attention_context(tape, store, raw_query, enc_states)?;
    let x2 = tape.dropout(l1.h, config.dropout)?;
    let l2 = tape.lstm_cell(store, "dec2", x2, state.l2)?;
    let combined = tape.add(l1.h, l2.h)?;
    let combined = tape.dropout(combined, config.dropout)?;
    let logits = tape.affine(store, "out", combined)?;
    Ok((logits, DecState { l1, l2, context }))
}

/// One decoder step returning the probability distribution over the
/// target vocabulary alongside the new state.
pub fn decoder_step(
    tape: &mut Tape,
    store: &ParamStore,
    prev_id: usize,
    state: DecState,
    enc_states: &[NodeId],
    config: &NmtConfig,
) -> Result<(NodeId, DecState), NmtError> {
    let (logits, next) = decoder_step_logits(tape, store, prev_id, state, enc_states, config)?;
    let probs = tape.softmax(logits)?;
    Ok((probs, next))
}

/// Teacher-forced token losses for one sentence pair, one scalar per
/// target position including the final end-of-sequence prediction. The
/// decoder starts from the end-of-sequence token.
pub fn sequence_token_losses(
    tape: &mut Tape,
    store: &ParamStore,
    example: &NmtExample,
    eos_id: usize,
    config: &NmtConfig,
) -> Result<Vec<NodeId>, NmtError> {
    let enc = encode_source(tape, store, &example.src, config)?;
    let mut state = init_decoder_state(tape, store, &enc, config)?;
    let mut prev = eos_id;
    let mut losses = Vec::with_capacity(example.tgt.len() + 1);
    for &gold in example.tgt.iter().chain(std::iter::once(&eos_id)) {
        let (logits, next) = decoder_step_logits(tape, store, prev, state, &enc, config)?;
        losses.push(tape.softmax_xent(logits, gold)?);
        state = next;
        prev = gold;
    }
    Ok(losses)
}

/// Mean cross-entropy per target token across a batch. Averaging over
/// tokens rather than sentences keeps the scale of the gradient flat as
/// sentence lengths vary within a bucket.
pub fn batch_loss(
    tape: &mut Tape,
    store: &ParamStore,
    batch: &[&NmtExample],
    eos_id: usize,
    config: &NmtConfig,
) -> Result<NodeId, NmtError> {
    if batch.is_empty() {
        return Err(NmtError::Empty("batch"));
    }
    let mut all = Vec::new();
    for ex in batch {
        all.extend(sequence_token_losses(tape, store, ex, eos_id, config)?);
    }
    tape.mean_scalars(&all).map_err(NmtError::from)
}

/// Dropout-free mean token loss over a whole dataset.
pub fn dataset_loss(
    store: &ParamStore,
    examples: &[NmtExample],
    eos_id: usize,
    config: &NmtConfig,
) -> Result<f64, NmtError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let mut tape = Tape::inference();
        let losses = sequence_token_losses(&mut tape, store, ex, eos_id, config)?;
        for l in &losses {
            total += tape.value(*l).as_scalar()?;
        }
        count += losses.len();
    }
    if count == 0 {
        return Err(NmtError::Empty("dataset"));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone)]
pub struct NmtEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct NmtTrainLog {
    /// Batch loss at every optimizer step, in order.
    pub step_losses: Vec<f64>,
    /// Learning rate in effect at each step, aligned with `step_losses`.
    pub lr_trace: Vec<f64>,
    pub epochs: Vec<NmtEpochStats>,
    pub best_epoch: usize,
    pub num_train: usize,
    pub num_val: usize,
}

/// Train with Nesterov momentum, annealing the learning rate by the
/// configured factor whenever the best batch loss stops improving for the
/// patience window. Batches are buckets of near-equal target length.
/// Returns the parameters with the lowest validation loss.
pub fn train_nmt(
    examples: &[NmtExample],
    init: ParamStore,
    eos_id: usize,
    config: &NmtConfig,
) -> Result<(ParamStore, NmtTrainLog), NmtError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(NmtError::NoExamples);
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
    let val: Vec<NmtExample> = if val_idx.is_empty() {
        examples.to_vec()
    } else {
        val_idx.iter().map(|&i| examples[i].clone()).collect()
    };

    let mut buckets: Vec<usize> = train_idx.to_vec();
    buckets.sort_by_key(|&i| (examples[i].tgt.len(), i));
    let mut batches: Vec<Vec<usize>> = buckets
        .chunks(config.batch_size)
        .map(|c| c.to_vec())
        .collect();

    let mut params = init;
    let mut opt = NagOptimizer::new(config.lr, &params);
    let mut sched = LrSchedule::new(config.lr, config.anneal_factor, config.anneal_patience_steps);
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut log = NmtTrainLog {
        num_train: buckets.len(),
        num_val: val.len(),
        ..NmtTrainLog::default()
    };

    let mut step = 0u64;
    for epoch in 0..config.epochs {
        shuffle_batches(&mut batches, &mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in &batches {
            let batch: Vec<&NmtExample> = batch_idx.iter().map(|&i| &examples[i]).collect();
            opt.lookahead(&mut params)?;
            let mut tape = Tape::training(config.seed.wrapping_add(0x9e37_79b9).wrapping_add(step));
            let loss = batch_loss(&mut tape, &params, &batch, eos_id, config)?;
            let loss_value = tape.value(loss).as_scalar()?;
            let mut grads = tape.backward(loss, &params)?;
            log.step_losses.push(loss_value);
            log.lr_trace.push(opt.lr());
            opt.step(&mut params, &mut grads)?;
            opt.set_lr(sched.observe(loss_value));
            epoch_loss += loss_value;
            seen += 1;
            step += 1;
        }
        let train_loss = if seen > 0 { epoch_loss / seen as f64 } else { 0.0 };
        let val_loss = dataset_loss(&params, &val, eos_id, config)?;
        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            best_epoch = epoch;
        }
        log.epochs.push(NmtEpochStats {
            epoch,
            train_loss,
            val_loss,
            lr: opt.lr(),
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

fn shuffle_batches<R: Rng>(xs: &mut [Vec<usize>], rng: &mut R) {
    for i in (1..xs.len()).rev() {
        let j = rng.gen_range(0..=i);
        xs.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::check_gradients;
    use crate::textpipe::{Vocabulary, EOS_ID};

    fn tiny_config() -> NmtConfig {
        NmtConfig {
            hidden: 3,
            dropout: 0.0,
            ..NmtConfig::default()
        }
    }

    fn zeroed(mut store: ParamStore, names: &[&str]) -> ParamStore {
        for name in names {
            for v in store.get_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        store
    }

    fn scalar_lstm(
        store: &ParamStore,
        prefix: &str,
        x: &[f64],
        h: &[f64],
        c: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let wx = store.get(&format!("{prefix}.wx")).unwrap();
        let wh = store.get(&format!("{prefix}.wh")).unwrap();
        let b = store.get(&format!("{prefix}.b")).unwrap();
        let hidden = h.len();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut nh = vec![0.0; hidden];
        let mut nc = vec![0.0; hidden];
        for k in 0..hidden {
            let pre = |gate: usize| {
                let row = gate * hidden + k;
                let mut acc = b.data()[row];
                for (j, xj) in x.iter().enumerate() {
                    acc += wx.row(row)[j] * xj;
                }
                for (j, hj) in h.iter().enumerate() {
                    acc += wh.row(row)[j] * hj;
                }
                acc
            };
            let i = sig(pre(0));
            let f = sig(pre(1));
            let g = pre(2).tanh();
            let o = sig(pre(3));
            nc[k] = f * c[k] + i * g;
            nh[k] = o * nc[k].tanh();
        }
        (nh, nc)
    }

    #[test]
    fn single_token_encoder_matches_scalar_oracle() {
        let config = tiny_config();
        let store = build_params(&config, 5, 5);
        let mut tape = Tape::inference();
        let enc = encode_source(&mut tape, &store, &[2], &config).unwrap();
        assert_eq!(enc.len(), 1);

        let h = config.hidden;
        let x: Vec<f64> = store.get("src_embed").unwrap().row(2).to_vec();
        let zero = vec![0.0; h];
        let (f1, _) = scalar_lstm(&store, "enc1.fwd", &x, &zero, &zero);
        let (b1, _) = scalar_lstm(&store, "enc1.bwd", &x, &zero, &zero);
        let a1: Vec<f64> = f1.iter().chain(&b1).copied().collect();
        let (f2, _) = scalar_lstm(&store, "enc2.fwd", &a1, &zero, &zero);
        let (b2, _) = scalar_lstm(&store, "enc2.bwd", &a1, &zero, &zero);
        let want: Vec<f64> = f2.iter().chain(&b2).copied().collect();
        let got = tape.value(enc[0]).data();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let config = tiny_config();
        let store = build_params(&config, 5, 5);
        let names: Vec<String> = store.names().cloned().collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let store = zeroed(store, &refs);
        let mut tape = Tape::inference();
        let enc = encode_source(&mut tape, &store, &[1, 2, 3], &config).unwrap();
        for s in enc {
            assert!(tape.value(s).data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn palindrome_with_tied_directions_is_mirror_symmetric() {
        let config = tiny_config();
        let mut store = build_params(&config, 5, 5);
        for layer in ["enc1", "enc2"] {
            for part in ["wx", "wh", "b"] {
                let fwd = store.get(&format!("{layer}.fwd.{part}")).unwrap().clone();
                *store.get_mut(&format!("{layer}.bwd.{part}")).unwrap() = fwd;
            }
        }
        // make the layer-2 input weights blind to which half a feature
        // came from, so a half-swapped input yields the same update
        let h = config.hidden;
        for part in ["fwd", "bwd"] {
            let wx = store.get_mut(&format!("enc2.{part}.wx")).unwrap();
            for r in 0..4 * h {
                for j in 0..h {
                    let left = wx.row(r)[j];
                    wx.row_mut(r)[h + j] = left;
                }
            }
        }
        let mut tape = Tape::inference();
        let enc = encode_source(&mut tape, &store, &[2, 4, 2], &config).unwrap();
        let swap = |v: &[f64]| -> Vec<f64> {
            v[h..].iter().chain(&v[..h]).copied().collect()
        };
        for t in 0..enc.len() {
            let a = tape.value(enc[t]).data().to_vec();
            let b = swap(tape.value(enc[enc.len() - 1 - t]).data());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12, "position {t}");
            }
        }
    }

    #[test]
    fn empty_source_is_rejected() {
        let config = tiny_config();
        let store = build_params(&config, 5, 5);
        let mut tape = Tape::inference();
        assert!(matches!(
            encode_source(&mut tape, &store, &[], &config),
            Err(NmtError::Empty("source"))
        ));
    }

    #[test]
    fn attention_single_position_weight_is_one() {
        let config = tiny_config();
        let store = build_params(&config, 5, 5);
        let mut tape = Tape::inference();
        let enc = encode_source(&mut tape, &store, &[3], &config).unwrap();
        let query = tape.constant_vec(vec![0.3, -0.7, 1.1]);
        let (context, weights) = attention_context(&mut tape, &store, query, &enc).unwrap();
        assert_eq!(tape.value(weights).data(), &[1.0]);
        let val = tape.affine(&store, "attn.val", enc[0]).unwrap();
        assert_eq!(tape.value(context).data(), tape.value(val).data());
    }

    #[test]
    fn attention_orthogonal_query_is_uniform() {
        let config = tiny_config();
        let mut store = build_params(&config, 5, 5);
        for v in store.get_mut("attn.key.b").unwrap().data_mut() {
            *v = 0.0;
        }
        let mut tape = Tape::inference();
        let enc = encode_source(&mut tape, &store, &[1, 2, 3], &config).unwrap();
        let query = tape.constant_vec(vec![0.0; config.hidden]);
        let (_, weights) = attention_context(&mut tape, &store, query, &enc).unwrap();
        for w in tape.value(weights).data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_matches_loop_oracle() {
        let config = NmtConfig {
            hidden: 4,
            dropout: 0.0,
            seed: 31,
            ..NmtConfig::default()
        };
        let store = build_params(&config, 6, 6);
        let mut tape = Tape::inference();
        let enc = encode_source(&mut tape, &store, &[1, 4, 2, 5], &config).unwrap();
        let qv = vec![0.9, -0.4, 0.2, 1.3];
        let query = tape.constant_vec(qv.clone());
        let (context, weights) = attention_context(&mut tape, &store, query, &enc).unwrap();

        let kw = store.get("attn.key.w").unwrap();
        let kb = store.get("attn.key.b").unwrap();
        let vw = store.get("attn.val.w").unwrap();
        let vb = store.get("attn.val.b").unwrap();
        let h = config.hidden;
        let project = |w: &crate::numcore::Tensor, b: &crate::numcore::Tensor, s: &[f64]| {
            (0..h)
                .map(|r| {
                    b.data()[r]
                        + s.iter().enumerate().map(|(j, x)| w.row(r)[j] * x).sum::<f64>()
                })
                .collect::<Vec<f64>>()
        };
        let mut scores = Vec::new();
        let mut values = Vec::new();
        for &s in &enc {
            let sv = tape.value(s).data().to_vec();
            let key = project(kw, kb, &sv);
            values.push(project(vw, vb, &sv));
            let dot: f64 = qv.iter().zip(&key).map(|(a, b)| a * b).sum();
            scores.push(dot / (h as f64).sqrt());
        }
        let wts = crate::numcore::softmax_values(&scores);
        for (got, want) in tape.value(weights).data().iter().zip(&wts) {
            assert!((got - want).abs() < 1e-9);
        }
        for r in 0..h {
            let want: f64 = wts.iter().zip(&values).map(|(w, v)| w * v[r]).sum();
            let got = tape.value(context).data()[r];
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn decoder_distribution_sums_to_one() {
        let config = tiny_config();
        let store = build_params(&config, 6, 9);
        let mut tape = Tape::inference();
        let enc = encode_source(&mut tape, &store, &[2, 4], &config).unwrap();
        let mut state = init_decoder_state(&mut tape, &store, &enc, &config).unwrap();
        for prev in [EOS_ID, 5, 7] {
            let (probs, next) =
                decoder_step(&mut tape, &store, prev, state, &enc, &config).unwrap();
            let s: f64 = tape.value(probs).data().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(tape.value(probs).data().iter().all(|p| *p >= 0.0));
            state = next;
        }
    }

    #[test]
    fn zero_second_layer_reduces_to_first_layer_output() {
        let h = 3;
        let config = NmtConfig {
            hidden: h,
            dropout: 0.0,
            ..NmtConfig::default()
        };
        let store = build_params(&config, 5, h);
        let mut store = zeroed(
            store,
            &["dec2.wx", "dec2.wh", "dec2.b", "out.b"],
        );
        let w = store.get_mut("out.w").unwrap();
        for r in 0..h {
            for j in 0..h {
                w.row_mut(r)[j] = if r == j { 1.0 } else { 0.0 };
            }
        }
        let mut tape = Tape::inference();
        let enc = encode_source(&mut tape, &store, &[1, 2], &config).unwrap();
        let state = init_decoder_state(&mut tape, &store, &enc, &config).unwrap();
        let (logits, next) =
            decoder_step_logits(&mut tape, &store, EOS_ID, state, &enc, &config).unwrap();
        assert_eq!(tape.value(logits).data(), tape.value(next.l1.h).data());
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let config = NmtConfig {
            hidden: 3,
            dropout: 0.0,
            seed: 33,
            ..NmtConfig::default()
        };
        let mut store = build_params(&config, 5, 6);
        // move off the symmetric init: near-uniform output distributions
        // make some bias-gradient components cancel to ~1e-5, where
        // finite-difference truncation noise dominates the relative error
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let names: Vec<String> = store.names().cloned().collect();
        for name in &names {
            for v in store.get_mut(name).unwrap().data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        let examples = [
            NmtExample {
                src: vec![2, 3],
                tgt: vec![4, 5, 3],
            },
            NmtExample {
                src: vec![4],
                tgt: vec![3],
            },
        ];
        let refs: Vec<&NmtExample> = examples.iter().collect();
        let report = check_gradients(&mut store, 1e-4, |store, tape| {
            batch_loss(tape, store, &refs, EOS_ID, &config).map_err(|e| match e {
                NmtError::Num(n) => n,
                other => NumError::Contract {
                    context: other.to_string(),
                },
            })
        })
        .unwrap();
        assert!(report.passed(), "failing {:?}", report.failing());
    }

    #[test]
    fn evaluation_passes_are_identical() {
        let config = NmtConfig {
            hidden: 4,
            seed: 35,
            ..NmtConfig::default()
        };
        let store = build_params(&config, 6, 8);
        let ex = NmtExample {
            src: vec![2, 4, 3],
            tgt: vec![5, 6],
        };
        let run = || -> Vec<f64> {
            let mut tape = Tape::inference();
            let losses = sequence_token_losses(&mut tape, &store, &ex, EOS_ID, &config).unwrap();
            losses
                .iter()
                .map(|&l| tape.value(l).as_scalar().unwrap())
                .collect()
        };
        let a = run();
        let b = run();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn training_dropout_changes_the_loss() {
        let config = NmtConfig {
            hidden: 4,
            dropout: 0.4,
            seed: 36,
            ..NmtConfig::default()
        };
        let store = build_params(&config, 6, 8);
        let ex = NmtExample {
            src: vec![2, 4, 3],
            tgt: vec![5, 6],
        };
        let refs = [&ex];
        let mut eval_tape = Tape::inference();
        let clean = batch_loss(&mut eval_tape, &store, &refs, EOS_ID, &config).unwrap();
        let clean = eval_tape.value(clean).as_scalar().unwrap();
        let mut train_tape = Tape::training(1);
        let noisy = batch_loss(&mut train_tape, &store, &refs, EOS_ID, &config).unwrap();
        let noisy = train_tape.value(noisy).as_scalar().unwrap();
        assert_ne!(clean.to_bits(), noisy.to_bits());
    }

    #[test]
    fn baseline_and_planned_builds_share_shapes() {
        let config = NmtConfig::default();
        let a = build_params(&config, 40, 50);
        let b = build_params(
            &NmtConfig {
                seed: 99,
                ..config.clone()
            },
            40,
            50,
        );
        let an: Vec<&String> = a.names().collect();
        let bn: Vec<&String> = b.names().collect();
        assert_eq!(an, bn);
        for name in an {
            assert_eq!(
                a.get(name).unwrap().shape(),
                b.get(name).unwrap().shape(),
                "{name}"
            );
        }
    }

    fn toy_examples(count: usize, seed: u64) -> (Vec<NmtExample>, usize, usize) {
        let sents = crate::toygen::generate(count, 4, seed);
        let records = crate::toygen::to_records(&sents);
        let src_lines: Vec<Vec<String>> = records.iter().map(|r| r.source.clone()).collect();
        let tgt_lines: Vec<Vec<String>> = records.iter().map(|r| r.target.clone()).collect();
        let src_vocab = Vocabulary::build(&src_lines, 200, 0).unwrap();
        let tgt_vocab = Vocabulary::build(&tgt_lines, 200, 0).unwrap();
        let examples = records
            .iter()
            .map(|r| NmtExample {
                src: src_vocab.encode_seq(&r.source),
                tgt: tgt_vocab.encode_seq(&r.target),
            })
            .collect();
        (examples, src_vocab.len(), tgt_vocab.len())
    }

    #[test]
    fn toy_training_beats_uniform_by_half_a_nat() {
        let (examples, src_vocab, tgt_vocab) = toy_examples(160, 41);
        let config = NmtConfig {
            hidden: 24,
            epochs: 5,
            batch_size: 16,
            seed: 42,
            ..NmtConfig::default()
        };
        let init = build_params(&config, src_vocab, tgt_vocab);
        let (_, log) = train_nmt(&examples, init, EOS_ID, &config).unwrap();
        let uniform = (tgt_vocab as f64).ln();
        let last = log.epochs.last().unwrap();
        assert!(
            last.val_loss < uniform - 0.5,
            "val {} vs uniform {}",
            last.val_loss,
            uniform
        );
    }

    #[test]
    fn lr_trace_replays_from_loss_history() {
        let (examples, src_vocab, tgt_vocab) = toy_examples(40, 43);
        let config = NmtConfig {
            hidden: 8,
            epochs: 2,
            batch_size: 8,
            anneal_patience_steps: 3,
            seed: 44,
            ..NmtConfig::default()
        };
        let init = build_params(&config, src_vocab, tgt_vocab);
        let (_, log) = train_nmt(&examples, init, EOS_ID, &config).unwrap();
        for (k, &lr) in log.lr_trace.iter().enumerate() {
            let replayed = LrSchedule::replay(
                config.lr,
                config.anneal_factor,
                config.anneal_patience_steps,
                &log.step_losses[..k],
            );
            assert_eq!(lr.to_bits(), replayed.to_bits(), "step {k}");
        }
    }

    #[test]
    fn same_seed_gives_identical_step_losses() {
        let (examples, src_vocab, tgt_vocab) = toy_examples(48, 45);
        let config = NmtConfig {
            hidden: 8,
            epochs: 2,
            batch_size: 8,
            seed: 46,
            ..NmtConfig::default()
        };
        let a = train_nmt(
            &examples,
            build_params(&config, src_vocab, tgt_vocab),
            EOS_ID,
            &config,
        )
        .unwrap()
        .1;
        let b = train_nmt(
            &examples,
            build_params(&config, src_vocab, tgt_vocab),
            EOS_ID,
            &config,
        )
        .unwrap()
        .1;
        let steps = a.step_losses.len().min(100);
        assert!(steps > 0);
        for k in 0..steps {
            assert_eq!(
                a.step_losses[k].to_bits(),
                b.step_losses[k].to_bits(),
                "step {k}"
            );
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let config = tiny_config();
        let init = build_params(&config, 5, 5);
        assert!(matches!(
            train_nmt(&[], init, EOS_ID, &config),
            Err(NmtError::NoExamples)
        ));
    }
}
