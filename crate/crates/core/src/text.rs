//! Whitespace-and-punctuation token splitting shared by section location and
//! the text metrics.

/// Punctuation marks split off the edges of whitespace-delimited chunks.
pub const EDGE_PUNCTUATION: &[char] = &['.', ',', ':', ';', '(', ')', '/'];

/// Splits on whitespace, then peels leading and trailing punctuation marks
/// off each chunk into their own tokens. Interior punctuation ("1.5", "and/or")
/// stays attached. Case is preserved.
pub fn split_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while let Some(c) = rest.chars().next().filter(|c| EDGE_PUNCTUATION.contains(c)) {
            out.push(&rest[..c.len_utf8()]);
            rest = &rest[c.len_utf8()..];
        }
        let mut trailing = Vec::new();
        while let Some(c) = rest.chars().next_back().filter(|c| EDGE_PUNCTUATION.contains(c)) {
            let at = rest.len() - c.len_utf8();
            trailing.push(&rest[at..]);
            rest = &rest[..at];
        }
        if !rest.is_empty() {
            out.push(rest);
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_edges_only() {
        assert_eq!(split_tokens("PA and lateral (views):"), ["PA", "and", "lateral", "(", "views", ")", ":"]);
        assert_eq!(split_tokens("1.5 cm and/or."), ["1.5", "cm", "and/or", "."]);
        assert_eq!(split_tokens("..."), [".", ".", "."]);
        assert!(split_tokens("  \n ").is_empty());
    }
}
