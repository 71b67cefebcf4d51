//! Beam-search decoding with optional forced code prefixes, plus the
//! stripping step that removes planner tokens from finished translations.

use thiserror::Error;

use crate::codes::parse_code_token;
use crate::nmt::{
    decoder_step_logits, encode_source, init_decoder_state, DecState, NmtConfig, NmtError,
};
use crate::numcore::{argmax, ParamStore, Tape};
use crate::textpipe::{CODE_BASE_ID, EOC_TOKEN, EOS_ID};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("beam size must be at least 1")]
    ZeroBeam,
    #[error("forced token id {id} outside target vocabulary of {vocab}")]
    BadForcedToken { id: usize, vocab: usize },
    #[error(transparent)]
    Nmt(#[from] NmtError),
}

/// One decoding hypothesis. `state` indexes the tape the search ran on and
/// is only meaningful while that search is alive; the token and score
/// fields stand on their own.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    /// Every emitted token id, including the final end-of-sequence token
    /// when the hypothesis finished by emitting it.
    pub tokens: Vec<usize>,
    /// Sum of the log-probabilities of the emitted tokens.
    pub logprob: f64,
    pub state: DecState,
    pub finished: bool,
}

impl Hypothesis {
    /// Length-normalized score used for ranking.
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            self.logprob
        } else {
            self.logprob / self.tokens.len() as f64
        }
    }

    /// Emitted tokens without the trailing end-of-sequence marker.
    pub fn translation_ids(&self) -> &[usize] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == EOS_ID => rest,
            _ => &self.tokens,
        }
    }
}

fn log_softmax_values(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| x - lse).collect()
}

fn target_vocab_size(store: &ParamStore) -> usize {
    store
        .get("out.b")
        .map(|b| b.data().len())
        .unwrap_or(0)
}

pub fn effective_max_len(config: &NmtConfig, src_len: usize) -> usize {
    config.max_len.unwrap_or(2 * src_len + 10).max(1)
}

/// Length-normalized beam search. All live hypotheses advance in lockstep;
/// a hypothesis finishes when it emits end-of-sequence or reaches the
/// length cap, and finished hypotheses are held aside while the search
/// continues until no live hypothesis can still beat the best finished
/// score even with free tokens up to the cap. When `forced_prefix` is
/// given, those tokens are emitted verbatim first, with their model
/// probabilities still accumulated into the hypothesis score.
pub fn beam_search(
    store: &ParamStore,
    src_ids: &[usize],
    config: &NmtConfig,
    beam_size: usize,
    forced_prefix: Option<&[usize]>,
) -> Result<Vec<Hypothesis>, DecodeError> {
    if beam_size == 0 {
        return Err(DecodeError::ZeroBeam);
    }
    let vocab = target_vocab_size(store);
    let prefix = forced_prefix.unwrap_or(&[]);
    for &id in prefix {
        if id >= vocab {
            return Err(DecodeError::BadForcedToken { id, vocab });
        }
    }
    let cap = effective_max_len(config, src_ids.len()).max(prefix.len());

    let mut tape = Tape::inference();
    let enc = encode_source(&mut tape, store, src_ids, config)?;
    let init = init_decoder_state(&mut tape, store, &enc, config)?;
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        logprob: 0.0,
        state: init,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..cap {
        let mut pool: Vec<Hypothesis> = Vec::new();
        for hyp in &live {
            let prev = hyp.tokens.last().copied().unwrap_or(EOS_ID);
            let (logits, next) =
                decoder_step_logits(&mut tape, store, prev, hyp.state, &enc, config)?;
            let lps = log_softmax_values(tape.value(logits).data());
            let choices: Vec<usize> = if step < prefix.len() {
                vec![prefix[step]]
            } else {
                let mut ids: Vec<usize> = (0..vocab).collect();
                ids.sort_by(|&a, &b| lps[b].total_cmp(&lps[a]).then(a.cmp(&b)));
                ids.truncate(beam_size);
                ids
            };
            for t in choices {
                let mut tokens = hyp.tokens.clone();
                tokens.push(t);
                pool.push(Hypothesis {
                    tokens,
                    logprob: hyp.logprob + lps[t],
                    state: next,
                    finished: false,
                });
            }
        }
        pool.sort_by(|a, b| b.score().total_cmp(&a.score()));
        pool.truncate(beam_size);

        live = Vec::new();
        for mut hyp in pool {
            if hyp.tokens.last() == Some(&EOS_ID) || hyp.tokens.len() >= cap {
                hyp.finished = true;
                finished.push(hyp);
            } else {
                live.push(hyp);
            }
        }
        if live.is_empty() {
            break;
        }
        if let Some(best) = finished
            .iter()
            .map(|h| h.score())
            .max_by(f64::total_cmp)
        {
            live.retain(|h| h.logprob / cap as f64 > best);
            if live.is_empty() {
                break;
            }
        }
    }

    finished.sort_by(|a, b| b.score().total_cmp(&a.score()));
    finished.truncate(beam_size);
    Ok(finished)
}

/// Argmax decoding, one token at a time until end-of-sequence or the
/// length cap. With a forced prefix, those tokens are emitted first.
pub fn greedy_decode(
    store: &ParamStore,
    src_ids: &[usize],
    config: &NmtConfig,
    forced_prefix: Option<&[usize]>,
) -> Result<Vec<usize>, DecodeError> {
    let vocab = target_vocab_size(store);
    let prefix = forced_prefix.unwrap_or(&[]);
    for &id in prefix {
        if id >= vocab {
            return Err(DecodeError::BadForcedToken { id, vocab });
        }
    }
    let cap = effective_max_len(config, src_ids.len()).max(prefix.len());

    let mut tape = Tape::inference();
    let enc = encode_source(&mut tape, store, src_ids, config)?;
    let mut state = init_decoder_state(&mut tape, store, &enc, config)?;
    let mut tokens = Vec::new();
    for step in 0..cap {
        let prev = tokens.last().copied().unwrap_or(EOS_ID);
        let (logits, next) = decoder_step_logits(&mut tape, store, prev, state, &enc, config)?;
        let t = if step < prefix.len() {
            prefix[step]
        } else {
            argmax(tape.value(logits).data())
        };
        tokens.push(t);
        state = next;
        if t == EOS_ID && step >= prefix.len() {
            break;
        }
    }
    Ok(tokens)
}

/// Remove planner tokens from a decoded id sequence: everything up to and
/// including the first ⟨eoc⟩ goes, or failing that any leading code
/// tokens; stray planner tokens later in the sequence go too.
pub fn strip_codes(tokens: &[usize], num_codes: usize) -> Vec<usize> {
    let is_code = |t: usize| t >= CODE_BASE_ID && t < CODE_BASE_ID + num_codes;
    let eoc = crate::textpipe::EOC_ID;
    let rest: &[usize] = if let Some(pos) = tokens.iter().position(|&t| t == eoc) {
        &tokens[pos + 1..]
    } else {
        let lead = tokens.iter().take_while(|&&t| is_code(t)).count();
        &tokens[lead..]
    };
    rest.iter()
        .copied()
        .filter(|&t| t != eoc && !is_code(t))
        .collect()
}

/// Surface-form twin of [`strip_codes`] for token strings.
pub fn strip_code_surfaces<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let is_code = |s: &str| parse_code_token(s).is_some();
    let rest: &[S] = if let Some(pos) = tokens.iter().position(|t| t.as_ref() == EOC_TOKEN) {
        &tokens[pos + 1..]
    } else {
        let lead = tokens
            .iter()
            .take_while(|t| is_code(t.as_ref()))
            .count();
        &tokens[lead..]
    };
    rest.iter()
        .map(|t| t.as_ref())
        .filter(|s| *s != EOC_TOKEN && !is_code(s))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::CodeAssignment;
    use crate::nmt::build_params;
    use crate::textpipe::{augment_targets_with_codes, SentenceRecord, EOC_ID};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64, src_vocab: usize, tgt_vocab: usize) -> (ParamStore, NmtConfig) {
        let config = NmtConfig {
            hidden: 3,
            dropout: 0.0,
            seed,
            ..NmtConfig::default()
        };
        let mut store = build_params(&config, src_vocab, tgt_vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
        let names: Vec<String> = store.names().cloned().collect();
        for name in &names {
            for v in store.get_mut(name).unwrap().data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        (store, config)
    }

    fn rescore(
        store: &ParamStore,
        src: &[usize],
        tokens: &[usize],
        config: &NmtConfig,
    ) -> Vec<f64> {
        let mut tape = Tape::inference();
        let enc = encode_source(&mut tape, store, src, config).unwrap();
        let mut state = init_decoder_state(&mut tape, store, &enc, config).unwrap();
        let mut prev = EOS_ID;
        let mut lps = Vec::new();
        for &t in tokens {
            let (logits, next) =
                decoder_step_logits(&mut tape, store, prev, state, &enc, config).unwrap();
            lps.push(log_softmax_values(tape.value(logits).data())[t]);
            state = next;
            prev = t;
        }
        lps
    }

    #[test]
    fn beam_one_equals_greedy_on_random_models() {
        for seed in 0..25 {
            let (store, config) = random_model(100 + seed, 7, 9);
            let src = vec![2, 4, 6];
            let greedy = greedy_decode(&store, &src, &config, None).unwrap();
            let beam = beam_search(&store, &src, &config, 1, None).unwrap();
            assert_eq!(beam[0].tokens, greedy, "seed {seed}");
        }
    }

    #[test]
    fn beam_one_equals_greedy_under_forced_prefix() {
        for seed in 0..10 {
            let (store, config) = random_model(300 + seed, 7, 10);
            let src = vec![3, 5];
            let prefix = [5usize, 4, EOC_ID];
            let greedy = greedy_decode(&store, &src, &config, Some(&prefix)).unwrap();
            let beam = beam_search(&store, &src, &config, 1, Some(&prefix)).unwrap();
            assert_eq!(beam[0].tokens, greedy, "seed {seed}");
        }
    }

    #[test]
    fn beam_two_matches_exhaustive_enumeration() {
        // constant step distribution: every parameter zeroed except the
        // output bias, so the logits never depend on the input
        let config = NmtConfig {
            hidden: 3,
            dropout: 0.0,
            max_len: Some(3),
            ..NmtConfig::default()
        };
        let mut store = build_params(&config, 4, 6);
        let names: Vec<String> = store.names().cloned().collect();
        for name in &names {
            for v in store.get_mut(name).unwrap().data_mut() {
                *v = 0.0;
            }
        }
        let bias = store.get_mut("out.b").unwrap();
        let probs: [f64; 6] = [1e-22, 1e-22, 0.3, 0.5, 0.15, 0.05];
        for (i, p) in probs.iter().enumerate() {
            bias.data_mut()[i] = p.ln();
        }

        let got = beam_search(&store, &[1, 2], &config, 2, None).unwrap();
        let lps = log_softmax_values(
            &probs.iter().map(|p| p.ln()).collect::<Vec<f64>>(),
        );

        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut stack = vec![Vec::<usize>::new()];
        while let Some(seq) = stack.pop() {
            for t in 0..6 {
                let mut s = seq.clone();
                s.push(t);
                let done = t == EOS_ID || s.len() == 3;
                if done {
                    let lp: f64 = s.iter().map(|&t| lps[t]).sum();
                    let score = lp / s.len() as f64;
                    if best.as_ref().map_or(true, |(_, b)| score > *b) {
                        best = Some((s, score));
                    }
                } else {
                    stack.push(s);
                }
            }
        }
        let (best_tokens, best_score) = best.unwrap();
        assert_eq!(got[0].tokens, best_tokens);
        assert!((got[0].score() - best_score).abs() < 1e-12);
    }

    #[test]
    fn forced_prefix_is_emitted_verbatim() {
        let (store, config) = random_model(500, 7, 10);
        let src = vec![2, 3, 4];
        let first = [6usize, 4, EOC_ID];
        let second = [4usize, 6, EOC_ID];
        for prefix in [&first, &second] {
            let hyps = beam_search(&store, &src, &config, 3, Some(prefix)).unwrap();
            assert!(!hyps.is_empty());
            for h in &hyps {
                assert_eq!(&h.tokens[..3], prefix.as_slice());
            }
        }
    }

    #[test]
    fn hypothesis_logprob_matches_teacher_forced_rescore() {
        let (store, config) = random_model(600, 7, 9);
        let src = vec![5, 2];
        let prefix = [4usize, EOC_ID];
        for hyp in beam_search(&store, &src, &config, 3, Some(&prefix)).unwrap() {
            let lps = rescore(&store, &src, &hyp.tokens, &config);
            let total: f64 = lps.iter().sum();
            assert!((hyp.logprob - total).abs() < 1e-12);
            assert!(lps.iter().all(|lp| *lp <= 0.0));
        }
    }

    #[test]
    fn invalid_forced_token_is_rejected() {
        let (store, config) = random_model(700, 7, 9);
        let err = beam_search(&store, &[2], &config, 2, Some(&[42])).unwrap_err();
        assert!(matches!(
            err,
            DecodeError::BadForcedToken { id: 42, vocab: 9 }
        ));
    }

    #[test]
    fn zero_beam_is_rejected() {
        let (store, config) = random_model(800, 7, 9);
        assert!(matches!(
            beam_search(&store, &[2], &config, 0, None),
            Err(DecodeError::ZeroBeam)
        ));
    }

    #[test]
    fn best_score_is_monotone_in_beam_size() {
        for seed in 0..10 {
            let (store, config) = random_model(900 + seed, 6, 8);
            let src = vec![2, 4, 5];
            let mut prev = f64::NEG_INFINITY;
            for beam in [1usize, 2, 3, 4] {
                let hyps = beam_search(&store, &src, &config, beam, None).unwrap();
                let best = hyps[0].score();
                assert!(
                    best >= prev - 1e-12,
                    "seed {seed} beam {beam}: {best} < {prev}"
                );
                prev = best;
            }
        }
    }

    #[test]
    fn untrained_model_hits_the_length_cap() {
        let (mut store, config) = random_model(1000, 6, 8);
        store.get_mut("out.b").unwrap().data_mut()[EOS_ID] = -50.0;
        let src = vec![2, 3];
        let cap = 2 * src.len() + 10;
        let greedy = greedy_decode(&store, &src, &config, None).unwrap();
        assert_eq!(greedy.len(), cap);
        let hyps = beam_search(&store, &src, &config, 2, None).unwrap();
        assert!(hyps.iter().all(|h| h.tokens.len() <= cap));
        assert_eq!(hyps[0].tokens.len(), cap);
    }

    #[test]
    fn strip_removes_prefix_through_eoc() {
        // ids under a 4-code layout: ⟨c4⟩=7, ⟨c1⟩=4, ⟨eoc⟩=3
        let tokens = [7, 4, 3, 9, 10, 11, 12];
        assert_eq!(strip_codes(&tokens, 4), vec![9, 10, 11, 12]);
        let surfaces = ["⟨c4⟩", "⟨c1⟩", "⟨eoc⟩", "the", "process", "."];
        assert_eq!(
            strip_code_surfaces(&surfaces),
            vec!["the", "process", "."]
        );
    }

    #[test]
    fn strip_leaves_plain_sequences_alone() {
        let tokens = [9, 10, 11];
        assert_eq!(strip_codes(&tokens, 4), vec![9, 10, 11]);
        assert_eq!(
            strip_code_surfaces(&["no", "codes", "here"]),
            vec!["no", "codes", "here"]
        );
    }

    #[test]
    fn strip_drops_leading_codes_without_eoc() {
        let tokens = [4, 5, 9, 10];
        assert_eq!(strip_codes(&tokens, 4), vec![9, 10]);
        assert_eq!(
            strip_code_surfaces(&["⟨c2⟩", "hello", "world"]),
            vec!["hello", "world"]
        );
    }

    #[test]
    fn strip_scrubs_stray_planner_tokens() {
        let tokens = [7, 3, 9, 5, 10, 3];
        assert_eq!(strip_codes(&tokens, 4), vec![9, 10]);
        assert_eq!(
            strip_code_surfaces(&["⟨eoc⟩", "a", "⟨c3⟩", "b", "⟨eoc⟩"]),
            vec!["a", "b"]
        );
    }

    #[test]
    fn strip_augment_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1100);
        let words = ["alpha", "beta", "gamma", "delta", "epsilon", "."];
        for _ in 0..1000 {
            let len = rng.gen_range(1..8);
            let target: Vec<String> = (0..len)
                .map(|_| words[rng.gen_range(0..words.len())].to_string())
                .collect();
            let n = rng.gen_range(1..4);
            let code = CodeAssignment((0..n).map(|_| rng.gen_range(0..4)).collect());
            let record = SentenceRecord {
                source: vec!["s".into()],
                target: target.clone(),
                target_tags: None,
                codes: None,
            };
            let augmented = augment_targets_with_codes(&[record], &[code]).unwrap();
            let stripped = strip_code_surfaces(&augmented[0].target);
            assert_eq!(stripped, target);
        }
    }
}
