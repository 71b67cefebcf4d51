//! Corpus BLEU, the two planner accuracy metrics, and the assigned-code
//! histogram.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::codemodel::{
    extract_codes_example, greedy_reconstruct, prepare_example, CodeConfig, CodeModelError,
};
use crate::codes::CodeAssignment;
use crate::decode::{greedy_decode, DecodeError};
use crate::nmt::NmtConfig;
use crate::numcore::ParamStore;
use crate::textpipe::{SentenceRecord, Vocabulary, CODE_BASE_ID};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("hypothesis and reference corpora differ: {hyps} vs {refs} lines")]
    LineCountMismatch { hyps: usize, refs: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("target vocabulary of {vocab} has no room for {num_codes} code tokens")]
    MissingCodeTokens { vocab: usize, num_codes: usize },
    #[error(transparent)]
    Code(#[from] CodeModelError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Corpus-level BLEU-4 with clipped n-gram counts, geometric mean of the
/// four precisions, and the brevity penalty. No smoothing: a zero
/// higher-order precision zeroes the score.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// Percent score in [0, 100].
    pub bleu: f64,
    /// Unigram through 4-gram modified precisions, as fractions.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    /// Hypothesis length over reference length.
    pub ratio: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.bleu,
            self.precisions[0] * 100.0,
            self.precisions[1] * 100.0,
            self.precisions[2] * 100.0,
            self.precisions[3] * 100.0,
            self.brevity_penalty,
            self.ratio,
            self.hyp_len,
            self.ref_len
        )
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn corpus_bleu(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
) -> Result<BleuReport, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::LineCountMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, rf) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += rf.len();
        for n in 1..=4 {
            let hc = ngram_counts(hyp, n);
            let rc = ngram_counts(rf, n);
            for (gram, count) in &hc {
                total[n - 1] += count;
                matched[n - 1] += (*count).min(rc.get(gram).copied().unwrap_or(0));
            }
        }
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        if total[n] > 0 {
            precisions[n] = matched[n] as f64 / total[n] as f64;
        }
    }
    let brevity_penalty = if hyp_len >= ref_len || hyp_len == 0 {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if precisions.iter().all(|p| *p > 0.0) {
        let mean_log: f64 = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        100.0 * brevity_penalty * mean_log.exp()
    } else {
        0.0
    };
    let ratio = if ref_len > 0 {
        hyp_len as f64 / ref_len as f64
    } else {
        0.0
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        ratio,
        hyp_len,
        ref_len,
    })
}

/// Exact-match accuracy over prediction/gold pairs, with a token-level
/// rate alongside for diagnosis. The token rate divides matching aligned
/// positions by the longer sequence's length.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub sequence: f64,
    pub token: f64,
    pub scored: usize,
}

pub fn score_exact<'a, I>(pairs: I) -> AccuracyReport
where
    I: IntoIterator<Item = (&'a [usize], &'a [usize])>,
{
    let mut scored = 0usize;
    let mut seq_hits = 0usize;
    let mut tok_hits = 0usize;
    let mut tok_total = 0usize;
    for (pred, gold) in pairs {
        scored += 1;
        if pred == gold {
            seq_hits += 1;
        }
        tok_hits += pred.iter().zip(gold).filter(|(p, g)| p == g).count();
        tok_total += pred.len().max(gold.len());
    }
    AccuracyReport {
        sequence: if scored > 0 {
            seq_hits as f64 / scored as f64
        } else {
            0.0
        },
        token: if tok_total > 0 {
            tok_hits as f64 / tok_total as f64
        } else {
            0.0
        },
        scored,
    }
}

/// Fraction of tagged records whose simplified tag sequence is rebuilt
/// exactly by greedy decoding from the source and the extracted code.
pub fn structure_reconstruction_accuracy(
    store: &ParamStore,
    records: &[SentenceRecord],
    src_vocab: &Vocabulary,
    config: &CodeConfig,
) -> Result<AccuracyReport, EvalError> {
    let mut preds: Vec<Vec<usize>> = Vec::new();
    let mut golds: Vec<Vec<usize>> = Vec::new();
    for record in records {
        let Some(example) = prepare_example(record, src_vocab) else {
            continue;
        };
        let codes = extract_codes_example(store, &example.tag_ids, config)?;
        let cap = 2 * example.tag_ids.len() + 4;
        let pred = greedy_reconstruct(store, &example.src_ids, &codes, config, cap)?;
        preds.push(pred);
        golds.push(example.tag_ids);
    }
    Ok(score_exact(
        preds.iter().map(|p| p.as_slice()).zip(golds.iter().map(|g| g.as_slice())),
    ))
}

/// Fraction of sentences whose assigned code the translation model
/// predicts exactly when greedily decoding the first N tokens.
pub fn code_prediction_accuracy(
    store: &ParamStore,
    pairs: &[(Vec<usize>, CodeAssignment)],
    num_codes: usize,
    config: &NmtConfig,
) -> Result<AccuracyReport, EvalError> {
    let vocab = store
        .get("out.b")
        .map(|b| b.data().len())
        .unwrap_or(0);
    if num_codes == 0 || vocab < CODE_BASE_ID + num_codes {
        return Err(EvalError::MissingCodeTokens { vocab, num_codes });
    }
    let mut preds: Vec<Vec<usize>> = Vec::new();
    let mut golds: Vec<Vec<usize>> = Vec::new();
    for (src, code) in pairs {
        let decoded = greedy_decode(store, src, config, None)?;
        let n = code.0.len();
        let pred: Vec<usize> = decoded.iter().copied().take(n).collect();
        let gold: Vec<usize> = code.0.iter().map(|&c| CODE_BASE_ID + c).collect();
        preds.push(pred);
        golds.push(gold);
    }
    Ok(score_exact(
        preds.iter().map(|p| p.as_slice()).zip(golds.iter().map(|g| g.as_slice())),
    ))
}

/// One histogram bin per possible code tuple, zero-count tuples included.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBin {
    pub code: CodeAssignment,
    pub count: usize,
    pub fraction: f64,
}

/// Histogram of assigned codes over all K^N tuples, sorted by descending
/// count with lexicographic tuple order breaking ties.
pub fn code_distribution(assignments: &[CodeAssignment], n: usize, k: usize) -> Vec<CodeBin> {
    let mut counts: HashMap<&[usize], usize> = HashMap::new();
    for a in assignments {
        *counts.entry(a.0.as_slice()).or_insert(0) += 1;
    }
    let total = assignments.len();
    let mut tuples: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..n {
        tuples = tuples
            .into_iter()
            .flat_map(|t| {
                (0..k).map(move |c| {
                    let mut u = t.clone();
                    u.push(c);
                    u
                })
            })
            .collect();
    }
    let mut bins: Vec<CodeBin> = tuples
        .into_iter()
        .map(|t| {
            let count = counts.get(t.as_slice()).copied().unwrap_or(0);
            CodeBin {
                fraction: if total > 0 {
                    count as f64 / total as f64
                } else {
                    0.0
                },
                count,
                code: CodeAssignment(t),
            }
        })
        .collect();
    bins.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.code.0.cmp(&b.code.0)));
    bins
}

pub fn histogram_csv(bins: &[CodeBin]) -> String {
    let mut out = String::from("code,count,fraction\n");
    for bin in bins {
        out.push_str(&format!(
            "{},{},{:.6}\n",
            bin.code.surface(),
            bin.count,
            bin.fraction
        ));
    }
    out
}
