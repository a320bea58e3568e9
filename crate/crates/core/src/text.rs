//! Small text helpers shared across modules.

use std::collections::BTreeSet;

/// Lowercased alphanumeric tokens; everything else is a separator.
pub fn tokens_lower(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whitespace tokens, original case.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// A set of (possibly multi-word) terms matched on token boundaries,
/// case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermSet {
    terms: BTreeSet<String>,
}

impl TermSet {
    pub fn new<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let terms = terms
            .into_iter()
            .map(|t| t.as_ref().trim().to_lowercase())
            .filter(|t| !tokens_lower(t).is_empty())
            .collect();
        Self { terms }
    }

    /// Parse the plain-text term list format: one term per line, `#` starts
    /// a comment, blank lines ignored.
    pub fn parse_list(text: &str) -> Self {
        Self::new(text.lines().filter_map(|line| {
            let line = match line.find('#') {
                Some(i) => &line[..i],
                None => line,
            };
            let line = line.trim();
            (!line.is_empty()).then_some(line)
        }))
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }

    /// Terms occurring in any of `texts`, sorted and deduplicated.
    pub fn matches(&self, texts: &[&str]) -> Vec<String> {
        let streams: Vec<Vec<String>> = texts.iter().map(|t| tokens_lower(t)).collect();
        self.terms
            .iter()
            .filter(|term| {
                let needle = tokens_lower(term);
                streams.iter().any(|hay| contains_run(hay, &needle))
            })
            .cloned()
            .collect()
    }
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && hay.len() >= needle.len()
        && hay.windows(needle.len()).any(|w| w == needle)
}

/// Number of chars in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Substring by char offsets `[start, end)`.
pub fn char_slice(s: &str, start: usize, end: usize) -> &str {
    let mut idx = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let b_start = idx.nth(start).unwrap_or(s.len());
    let b_end = if end > start {
        idx.nth(end - start - 1).unwrap_or(s.len())
    } else {
        b_start
    };
    &s[b_start..b_end]
}

/// Split after `.`, `!` or `?` followed by whitespace or end of text (the
/// terminator stays with its sentence), and on newlines. Pieces are trimmed;
/// empty ones are dropped.
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(pos, c)) in chars.iter().enumerate() {
        let next_is_break = chars.get(i + 1).is_none_or(|(_, n)| n.is_whitespace());
        let end = pos + c.len_utf8();
        if matches!(c, '.' | '!' | '?') && next_is_break {
            out.push(&text[start..end]);
            start = end;
        } else if c == '\n' {
            out.push(&text[start..pos]);
            start = end;
        }
    }
    out.push(&text[start..]);
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentence_split_keeps_terminators() {
        assert_eq!(
            sentences("Rel. 17 is out. Is it?\nv1.2 ships!  "),
            ["Rel.", "17 is out.", "Is it?", "v1.2 ships!"]
        );
        assert!(sentences(" \n ").is_empty());
    }

    #[test]
    fn term_matching_respects_token_boundaries() {
        let set = TermSet::new(["mimo", "rel 17"]);
        assert_eq!(set.matches(&["MIMO-OFDM systems"]), vec!["mimo"]);
        assert!(set.matches(&["mimosa plants"]).is_empty());
        assert_eq!(set.matches(&["the Rel-17 standard"]), vec!["rel 17"]);
    }

    #[test]
    fn term_list_parsing_skips_comments() {
        let set = TermSet::parse_list("# header\n3gpp\n\n  MIMO  # inline\n");
        assert_eq!(set.iter().collect::<Vec<_>>(), vec!["3gpp", "mimo"]);
    }

    #[test]
    fn char_slice_handles_multibyte() {
        let s = "aé漢b";
        assert_eq!(char_slice(s, 1, 3), "é漢");
        assert_eq!(char_slice(s, 3, 4), "b");
        assert_eq!(char_slice(s, 4, 4), "");
    }
}
