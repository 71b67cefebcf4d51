//! Coarse structural annotation of target sentences.
//!
//! A POS-tag sequence is reduced to the closed alphabet {N, V, PRP, ",", "."}
//! in two steps: map noun tags to N and verb tags to V while deleting
//! everything else, then collapse runs of equal consecutive symbols. The
//! result is the structure sequence the code model learns to compress.

/// The closed output alphabet, in canonical order.
pub const SIMPLIFIED_ALPHABET: [&str; 5] = ["N", "V", "PRP", ",", "."];

/// Step-1 mapping for a single tag. Prefix-matched, case-sensitive: NN, NNS,
/// NNP map to N; VB, VBD, VBZ map to V; PRP and PRP$ map to PRP; "," and "."
/// survive verbatim; anything else is dropped.
pub fn simplify_tag(tag: &str) -> Option<&'static str> {
    if tag.starts_with('N') {
        Some("N")
    } else if tag.starts_with('V') {
        Some("V")
    } else if tag.starts_with("PRP") {
        Some("PRP")
    } else if tag == "," {
        Some(",")
    } else if tag == "." {
        Some(".")
    } else {
        None
    }
}

/// Map tags to the closed alphabet, then collapse adjacent duplicates.
pub fn simplify_tags<S: AsRef<str>>(tags: &[S]) -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    for tag in tags {
        if let Some(sym) = simplify_tag(tag.as_ref()) {
            if out.last() != Some(&sym) {
                out.push(sym);
            }
        }
    }
    out
}

/// Space-separated convenience wrapper for the CLI filter mode.
pub fn simplify_tag_line(line: &str) -> String {
    let tags: Vec<&str> = line.split_whitespace().collect();
    simplify_tags(&tags).join(" ")
}
