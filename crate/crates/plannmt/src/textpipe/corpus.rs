use std::fs;
use std::path::Path;

use crate::codes::CodeAssignment;

use super::vocab::EOC_TOKEN;
use super::TextError;

/// One parallel sentence: source tokens, target tokens, optionally the POS
/// tags of the pre-BPE target words and an assigned planner code.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub target_tags: Option<Vec<String>>,
    pub codes: Option<CodeAssignment>,
}

fn read_lines(path: &Path) -> Result<Vec<String>, TextError> {
    let text = fs::read_to_string(path).map_err(|e| TextError::io(path, e))?;
    Ok(text.lines().map(String::from).collect())
}

fn tokens(line: &str) -> Vec<String> {
    line.split_whitespace().map(String::from).collect()
}

/// Load a `.src`/`.tgt` pair plus an optional `.tgt.pos` tag file. Tag lines
/// must align 1:1 with the target words of their line.
pub fn load_parallel_corpus(
    src_path: &Path,
    tgt_path: &Path,
    tag_path: Option<&Path>,
) -> Result<Vec<SentenceRecord>, TextError> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(TextError::LineCountMismatch {
            path: tgt_path.display().to_string(),
            expected: src.len(),
            actual: tgt.len(),
        });
    }
    let tags = match tag_path {
        Some(p) => {
            let t = read_lines(p)?;
            if t.len() != tgt.len() {
                return Err(TextError::LineCountMismatch {
                    path: p.display().to_string(),
                    expected: tgt.len(),
                    actual: t.len(),
                });
            }
            Some(t)
        }
        None => None,
    };

    let mut records = Vec::with_capacity(src.len());
    for i in 0..src.len() {
        let target = tokens(&tgt[i]);
        let target_tags = match &tags {
            Some(t) => {
                let tag_toks = tokens(&t[i]);
                if tag_toks.len() != target.len() {
                    return Err(TextError::TagAlignment {
                        line: i + 1,
                        words: target.len(),
                        tags: tag_toks.len(),
                    });
                }
                Some(tag_toks)
            }
            None => None,
        };
        records.push(SentenceRecord {
            source: tokens(&src[i]),
            target,
            target_tags,
            codes: None,
        });
    }
    Ok(records)
}

/// Prefix each target with its code tokens and ⟨eoc⟩:
/// codes (3, 0) turn "the process …" into "⟨c4⟩ ⟨c1⟩ ⟨eoc⟩ the process …".
pub fn augment_targets_with_codes(
    records: &[SentenceRecord],
    codes: &[CodeAssignment],
) -> Result<Vec<SentenceRecord>, TextError> {
    if records.len() != codes.len() {
        return Err(TextError::MissingCode {
            index: records.len().min(codes.len()),
        });
    }
    Ok(records
        .iter()
        .zip(codes)
        .map(|(r, c)| {
            let mut target = Vec::with_capacity(c.len() + 1 + r.target.len());
            for &code in &c.0 {
                target.push(crate::codes::code_surface(code));
            }
            target.push(EOC_TOKEN.to_string());
            target.extend(r.target.iter().cloned());
            SentenceRecord {
                source: r.source.clone(),
                target,
                target_tags: r.target_tags.clone(),
                codes: Some(c.clone()),
            }
        })
        .collect())
}
