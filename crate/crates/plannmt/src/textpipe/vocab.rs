use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::codes::code_surface;

use super::TextError;

pub const PAD_TOKEN: &str = "\u{27e8}pad\u{27e9}";
pub const UNK_TOKEN: &str = "\u{27e8}unk\u{27e9}";
pub const EOS_TOKEN: &str = "\u{27e8}eos\u{27e9}";
pub const EOC_TOKEN: &str = "\u{27e8}eoc\u{27e9}";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EOS_ID: usize = 2;
/// Target vocabularies only; sources carry just pad/unk/eos.
pub const EOC_ID: usize = 3;
pub const CODE_BASE_ID: usize = 4;

/// Reserved tokens are bracketed with U+27E8/U+27E9; real corpus tokens never
/// collide as long as they avoid that bracket pair.
pub fn is_reserved_surface(token: &str) -> bool {
    token.starts_with('\u{27e8}') && token.ends_with('\u{27e9}')
}

/// Token/id bijection with a fixed reserved prefix.
///
/// Layout: pad, unk, eos, then for target vocabularies ⟨eoc⟩ followed by the
/// K code tokens ⟨c1⟩..⟨cK⟩, then content tokens by descending frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    num_codes: usize,
}

impl Vocabulary {
    /// Empty vocabulary holding only the reserved prefix. `num_codes` = 0
    /// gives the source layout (no ⟨eoc⟩, no code tokens).
    pub fn with_reserved(num_codes: usize) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            num_codes,
        };
        v.push(PAD_TOKEN);
        v.push(UNK_TOKEN);
        v.push(EOS_TOKEN);
        if num_codes > 0 {
            v.push(EOC_TOKEN);
            for c in 0..num_codes {
                let s = code_surface(c);
                v.push(&s);
            }
        }
        v
    }

    fn push(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn num_reserved(&self) -> usize {
        if self.num_codes > 0 {
            CODE_BASE_ID + self.num_codes
        } else {
            3
        }
    }

    pub fn num_codes(&self) -> usize {
        self.num_codes
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Build from token counts: reserved prefix, then content tokens by
    /// descending frequency (ties lexicographic) up to `cap` total entries.
    pub fn from_counts(
        counts: &HashMap<String, u64>,
        cap: usize,
        num_codes: usize,
    ) -> Result<Self, TextError> {
        let mut v = Vocabulary::with_reserved(num_codes);
        if cap <= v.num_reserved() {
            return Err(TextError::VocabCapTooSmall {
                cap,
                reserved: v.num_reserved(),
            });
        }
        let mut ranked: Vec<(&String, &u64)> = counts
            .iter()
            .filter(|(t, _)| !is_reserved_surface(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        for (tok, _) in ranked {
            if v.len() >= cap {
                break;
            }
            v.push(tok);
        }
        Ok(v)
    }

    /// Count tokens over lines of pre-split tokens, then build.
    pub fn build<S: AsRef<str>>(
        lines: &[Vec<S>],
        cap: usize,
        num_codes: usize,
    ) -> Result<Self, TextError> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for line in lines {
            for tok in line {
                *counts.entry(tok.as_ref().to_string()).or_insert(0) += 1;
            }
        }
        Vocabulary::from_counts(&counts, cap, num_codes)
    }

    pub fn encode(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn encode_seq<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.encode(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn decode_seq(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn is_reserved(&self, id: usize) -> bool {
        id < self.num_reserved()
    }

    /// 0-based code value for a code-token id, if it is one.
    pub fn code_of_id(&self, id: usize) -> Option<usize> {
        if self.num_codes > 0 && (CODE_BASE_ID..CODE_BASE_ID + self.num_codes).contains(&id) {
            Some(id - CODE_BASE_ID)
        } else {
            None
        }
    }

    /// Token id for a 0-based code value.
    pub fn id_of_code(&self, code: usize) -> Option<usize> {
        if code < self.num_codes {
            Some(CODE_BASE_ID + code)
        } else {
            None
        }
    }

    /// FNV-1a over the token list; checkpoints store this to detect loading a
    /// model against the wrong vocabulary.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in &self.tokens {
            for b in t.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            h ^= b'\n' as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// One token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<(), TextError> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| TextError::io(path, e))
    }

    /// Load a vocabulary file, inferring the code count from the reserved
    /// prefix.
    pub fn load(path: &Path) -> Result<Self, TextError> {
        let text = fs::read_to_string(path).map_err(|e| TextError::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(String::from).collect();
        if tokens.len() < 3
            || tokens[PAD_ID] != PAD_TOKEN
            || tokens[UNK_ID] != UNK_TOKEN
            || tokens[EOS_ID] != EOS_TOKEN
        {
            return Err(TextError::BadFormat {
                path: path.display().to_string(),
                detail: "missing reserved token prefix".into(),
            });
        }
        let mut num_codes = 0;
        if tokens.len() > EOC_ID && tokens[EOC_ID] == EOC_TOKEN {
            while tokens.len() > CODE_BASE_ID + num_codes
                && tokens[CODE_BASE_ID + num_codes] == code_surface(num_codes)
            {
                num_codes += 1;
            }
        }
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(TextError::BadFormat {
                    path: path.display().to_string(),
                    detail: format!("duplicate token '{t}' at line {}", i + 1),
                });
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            num_codes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_counts() -> HashMap<String, u64> {
        let mut c = HashMap::new();
        for (t, n) in [("the", 10u64), ("cat", 5), ("dog", 5), ("ran", 2)] {
            c.insert(t.to_string(), n);
        }
        c
    }

    #[test]
    fn reserved_layout_target() {
        let v = Vocabulary::with_reserved(4);
        assert_eq!(v.token(PAD_ID), PAD_TOKEN);
        assert_eq!(v.token(UNK_ID), UNK_TOKEN);
        assert_eq!(v.token(EOS_ID), EOS_TOKEN);
        assert_eq!(v.token(EOC_ID), EOC_TOKEN);
        assert_eq!(v.token(CODE_BASE_ID), "⟨c1⟩");
        assert_eq!(v.token(CODE_BASE_ID + 3), "⟨c4⟩");
        assert_eq!(v.num_reserved(), 8);
        assert_eq!(v.code_of_id(CODE_BASE_ID + 2), Some(2));
        assert_eq!(v.id_of_code(2), Some(CODE_BASE_ID + 2));
        assert_eq!(v.code_of_id(2), None);
    }

    #[test]
    fn reserved_layout_source_has_no_codes() {
        let v = Vocabulary::with_reserved(0);
        assert_eq!(v.num_reserved(), 3);
        assert_eq!(v.len(), 3);
        assert_eq!(v.code_of_id(3), None);
    }

    #[test]
    fn frequency_then_lexicographic() {
        let v = Vocabulary::from_counts(&toy_counts(), 10, 0).unwrap();
        assert_eq!(v.token(3), "the");
        assert_eq!(v.token(4), "cat");
        assert_eq!(v.token(5), "dog");
        assert_eq!(v.token(6), "ran");
    }

    #[test]
    fn cap_truncates_and_oov_maps_to_unk() {
        let v = Vocabulary::from_counts(&toy_counts(), 5, 0).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.encode("ran"), UNK_ID);
        assert_eq!(v.encode("the"), 3);
        assert!(Vocabulary::from_counts(&toy_counts(), 3, 0).is_err());
    }

    #[test]
    fn encode_decode_identity_in_vocab() {
        let v = Vocabulary::from_counts(&toy_counts(), 10, 2).unwrap();
        for id in 0..v.len() {
            assert_eq!(v.encode(v.token(id)), id);
        }
    }

    #[test]
    fn save_load_round_trip_infers_codes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::from_counts(&toy_counts(), 12, 3).unwrap();
        v.save(&path).unwrap();
        let w = Vocabulary::load(&path).unwrap();
        assert_eq!(v, w);
        assert_eq!(w.num_codes(), 3);

        let src = Vocabulary::from_counts(&toy_counts(), 8, 0).unwrap();
        src.save(&path).unwrap();
        let w = Vocabulary::load(&path).unwrap();
        assert_eq!(w.num_codes(), 0);
    }

    #[test]
    fn content_hash_tracks_token_list() {
        let a = Vocabulary::from_counts(&toy_counts(), 10, 2).unwrap();
        let b = Vocabulary::from_counts(&toy_counts(), 10, 2).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = Vocabulary::from_counts(&toy_counts(), 9, 2).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }
}
