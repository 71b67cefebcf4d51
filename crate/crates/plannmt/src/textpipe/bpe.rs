use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::vocab::is_reserved_surface;
use super::TextError;

/// Internal end-of-word symbol appended during learning.
const END_MARKER: &str = "</w>";
/// Continuation marker suffixed to non-final subword units in output.
const CONT_MARKER: &str = "@@";

/// Learned byte-pair-encoding merges, in rank order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
}

fn word_symbols(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(|c| c.to_string()).collect();
    syms.push(END_MARKER.to_string());
    syms
}

fn merge_pair(syms: &[String], a: &str, b: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(syms[i].clone());
            i += 1;
        }
    }
    out
}

impl BpeModel {
    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Greedy most-frequent-pair merges over a word-frequency table; ties
    /// break to the lexicographically smallest pair. Stops early when no
    /// pair is left.
    pub fn learn(word_counts: &BTreeMap<String, u64>, num_merges: usize) -> Result<Self, TextError> {
        if word_counts.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let mut table: Vec<(Vec<String>, u64)> = word_counts
            .iter()
            .map(|(w, &n)| (word_symbols(w), n))
            .collect();
        let mut merges = Vec::new();
        for _ in 0..num_merges {
            let mut pair_counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
            for (syms, n) in &table {
                for w in syms.windows(2) {
                    *pair_counts.entry((&w[0], &w[1])).or_insert(0) += n;
                }
            }
            // BTreeMap iterates in pair order; keeping the first maximum
            // makes ties break to the lexicographically smallest pair
            let mut best: Option<((&str, &str), u64)> = None;
            for (p, &n) in &pair_counts {
                if best.map_or(true, |(_, bn)| n > bn) {
                    best = Some((*p, n));
                }
            }
            let Some(((a, b), _)) = best else { break };
            let (a, b) = (a.to_string(), b.to_string());
            for (syms, _) in table.iter_mut() {
                *syms = merge_pair(syms, &a, &b);
            }
            merges.push((a, b));
        }
        Ok(BpeModel { merges })
    }

    /// Learn from pre-tokenized corpus lines, skipping reserved tokens.
    pub fn learn_from_lines<S: AsRef<str>>(
        lines: &[Vec<S>],
        num_merges: usize,
    ) -> Result<Self, TextError> {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for line in lines {
            for tok in line {
                let t = tok.as_ref();
                if !is_reserved_surface(t) {
                    *counts.entry(t.to_string()).or_insert(0) += 1;
                }
            }
        }
        BpeModel::learn(&counts, num_merges)
    }

    /// Split one word into subword units. Reserved tokens pass through
    /// unsplit; unknown characters become singleton symbols.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        if word.is_empty() {
            return Vec::new();
        }
        if is_reserved_surface(word) {
            return vec![word.to_string()];
        }
        let mut syms = word_symbols(word);
        for (a, b) in &self.merges {
            if syms.len() < 2 {
                break;
            }
            syms = merge_pair(&syms, a, b);
        }
        if syms.last().map(String::as_str) == Some(END_MARKER) {
            syms.pop();
        } else if let Some(last) = syms.last_mut() {
            if let Some(stripped) = last.strip_suffix(END_MARKER) {
                *last = stripped.to_string();
            }
        }
        let n = syms.len();
        syms.iter()
            .enumerate()
            .map(|(i, s)| {
                if i + 1 < n {
                    format!("{s}{CONT_MARKER}")
                } else {
                    s.clone()
                }
            })
            .collect()
    }

    pub fn apply_line<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        tokens
            .iter()
            .flat_map(|t| self.apply_word(t.as_ref()))
            .collect()
    }

    /// Header `BPE v1 <num_merges>`, then one `a b` pair per line.
    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let mut out = format!("BPE v1 {}\n", self.merges.len());
        for (a, b) in &self.merges {
            out.push_str(&format!("{a} {b}\n"));
        }
        fs::write(path, out).map_err(|e| TextError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        let text = fs::read_to_string(path).map_err(|e| TextError::io(path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("");
        let declared: usize = match header.strip_prefix("BPE v1 ") {
            Some(n) => n.parse().map_err(|_| TextError::BadFormat {
                path: path.display().to_string(),
                detail: format!("bad merge count in header '{header}'"),
            })?,
            None => {
                return Err(TextError::BadFormat {
                    path: path.display().to_string(),
                    detail: format!("bad header '{header}'"),
                })
            }
        };
        let mut merges = Vec::with_capacity(declared);
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()));
                }
                _ => {
                    return Err(TextError::BadFormat {
                        path: path.display().to_string(),
                        detail: format!("bad merge pair at line {}", i + 2),
                    })
                }
            }
        }
        if merges.len() != declared {
            return Err(TextError::BadFormat {
                path: path.display().to_string(),
                detail: format!("header declares {declared} merges, found {}", merges.len()),
            });
        }
        Ok(BpeModel { merges })
    }
}

/// Undo the continuation markers: glue `x@@` onto the following unit.
pub fn join_bpe<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut out = Vec::new();
    let mut buf = String::new();
    for t in tokens {
        let t = t.as_ref();
        match t.strip_suffix(CONT_MARKER) {
            Some(head) => buf.push_str(head),
            None => {
                buf.push_str(t);
                out.push(std::mem::take(&mut buf));
            }
        }
    }
    if !buf.is_empty() {
        out.push(buf);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn counts(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(w, n)| (w.to_string(), *n)).collect()
    }

    #[test]
    fn zero_merges_splits_to_characters() {
        let model = BpeModel::learn(&counts(&[("low", 1)]), 0).unwrap();
        assert_eq!(model.apply_word("low"), vec!["l@@", "o@@", "w"]);
        assert_eq!(model.apply_word("a"), vec!["a"]);
    }

    #[test]
    fn first_merge_matches_pair_count_oracle() {
        let table = counts(&[("low", 5), ("lower", 2)]);
        // oracle: count adjacent pairs over char+end-marker segmentations
        let mut oracle: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (word, n) in &table {
            let syms = word_symbols(word);
            for w in syms.windows(2) {
                *oracle.entry((w[0].clone(), w[1].clone())).or_insert(0) += n;
            }
        }
        let best = oracle
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(p, _)| p.clone())
            .unwrap();

        let model = BpeModel::learn(&table, 1).unwrap();
        assert_eq!(model.merges()[0], best);
        assert_eq!(best, ("l".to_string(), "o".to_string()));
    }

    #[test]
    fn relearning_is_deterministic() {
        let table = counts(&[("lower", 3), ("lowest", 2), ("newer", 4), ("wider", 1)]);
        let a = BpeModel::learn(&table, 20).unwrap();
        let b = BpeModel::learn(&table, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn covered_word_round_trips_to_single_token() {
        let table = counts(&[("low", 10)]);
        // "low" + end marker has 3 pairs; 3 merges fuse it completely
        let model = BpeModel::learn(&table, 3).unwrap();
        assert_eq!(model.apply_word("low"), vec!["low"]);
    }

    #[test]
    fn reserved_tokens_pass_through() {
        let model = BpeModel::learn(&counts(&[("low", 1)]), 2).unwrap();
        assert_eq!(model.apply_word("⟨eoc⟩"), vec!["⟨eoc⟩"]);
        assert_eq!(model.apply_word("⟨c1⟩"), vec!["⟨c1⟩"]);
    }

    #[test]
    fn apply_join_round_trip_on_random_lines() {
        let vocab = ["low", "lower", "newest", "wide", "the", "a", "cat", "unseen"];
        let mut table = BTreeMap::new();
        for w in &vocab[..5] {
            table.insert(w.to_string(), 3u64);
        }
        let model = BpeModel::learn(&table, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for _ in 0..100 {
            let len = rng.gen_range(1..12);
            let line: Vec<String> = (0..len)
                .map(|_| vocab[rng.gen_range(0..vocab.len())].to_string())
                .collect();
            let split = model.apply_line(&line);
            assert_eq!(join_bpe(&split), line);
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bpe.model");
        let table = counts(&[("lower", 3), ("newer", 4)]);
        // only 7 distinct merges exist before both words are fully fused
        let model = BpeModel::learn(&table, 8).unwrap();
        assert_eq!(model.merges().len(), 7);
        model.save(&path).unwrap();
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("BPE v1 7\n"), "{header}");
        assert_eq!(BpeModel::load(&path).unwrap(), model);

        std::fs::write(&path, "BPE v2 1\nx y\n").unwrap();
        assert!(matches!(
            BpeModel::load(&path),
            Err(TextError::BadFormat { .. })
        ));
    }
}
