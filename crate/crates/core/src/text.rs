//! Name normalization and string similarity.

/// Lower-cases and collapses runs of whitespace to a single space.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// `1 - levenshtein / max_len` over normalized strings, in `[0, 1]`.
///
/// Two empty strings are identical (similarity 1).
pub fn edit_similarity(a: &str, b: &str) -> f64 {
    strsim::normalized_levenshtein(&normalize_name(a), &normalize_name(b))
}
