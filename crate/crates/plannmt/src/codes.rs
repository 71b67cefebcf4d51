//! Planner-code assignments and their surface forms.
//!
//! A code assignment is a fixed-length tuple of N symbols from a K-ary
//! alphabet. On disk and in augmented targets codes appear 1-indexed as
//! ⟨c1⟩..⟨cK⟩; internally they are 0-indexed integers.

use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad code token '{token}'")]
    BadToken { token: String },
    #[error("code value {value} out of range for alphabet size {k}")]
    OutOfRange { value: usize, k: usize },
    #[error("line {line}: expected {expected} codes, found {actual}")]
    WrongLength {
        line: usize,
        expected: usize,
        actual: usize,
    },
}

/// The codes assigned to one target sentence, 0-indexed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodeAssignment(pub Vec<usize>);

impl CodeAssignment {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Surface rendering, e.g. codes (2, 0) → "⟨c3⟩ ⟨c1⟩".
    pub fn surface(&self) -> String {
        self.0
            .iter()
            .map(|&c| code_surface(c))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn validate(&self, n: usize, k: usize) -> Result<(), CodeError> {
        if self.0.len() != n {
            return Err(CodeError::WrongLength {
                line: 0,
                expected: n,
                actual: self.0.len(),
            });
        }
        for &c in &self.0 {
            if c >= k {
                return Err(CodeError::OutOfRange { value: c, k });
            }
        }
        Ok(())
    }
}

/// Surface form of one 0-indexed code value: 0 → "⟨c1⟩".
pub fn code_surface(code: usize) -> String {
    format!("\u{27e8}c{}\u{27e9}", code + 1)
}

/// Parse a surface code token back to its 0-indexed value.
pub fn parse_code_token(token: &str) -> Option<usize> {
    let body = token
        .strip_prefix('\u{27e8}')?
        .strip_suffix('\u{27e9}')?
        .strip_prefix('c')?;
    let idx: usize = body.parse().ok()?;
    if idx == 0 {
        return None;
    }
    Some(idx - 1)
}

/// Parse one code in either surface form ("⟨c2⟩") or 0-based numeric form
/// ("1"). Both Table-3 style strings and plain script-friendly integers work.
pub fn parse_code(token: &str) -> Result<usize, CodeError> {
    if let Some(c) = parse_code_token(token) {
        return Ok(c);
    }
    token.parse::<usize>().map_err(|_| CodeError::BadToken {
        token: token.to_string(),
    })
}

/// Parse a comma- or space-separated code list, e.g. "⟨c2⟩,⟨c1⟩" or "1 0".
pub fn parse_code_spec(spec: &str) -> Result<CodeAssignment, CodeError> {
    let parts: Vec<&str> = spec
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect();
    let mut codes = Vec::with_capacity(parts.len());
    for p in parts {
        codes.push(parse_code(p)?);
    }
    Ok(CodeAssignment(codes))
}

/// Write one surface line per assignment.
pub fn save_codes(path: &Path, assignments: &[CodeAssignment]) -> Result<(), CodeError> {
    let mut out = String::new();
    for a in assignments {
        out.push_str(&a.surface());
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| CodeError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Read a code file written by [`save_codes`]. When `expect_n` is given,
/// every line must carry exactly that many codes.
pub fn load_codes(path: &Path, expect_n: Option<usize>) -> Result<Vec<CodeAssignment>, CodeError> {
    let text = fs::read_to_string(path).map_err(|source| CodeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let a = parse_code_spec(line)?;
        if let Some(n) = expect_n {
            if a.len() != n {
                return Err(CodeError::WrongLength {
                    line: i + 1,
                    expected: n,
                    actual: a.len(),
                });
            }
        }
        out.push(a);
    }
    Ok(out)
}
