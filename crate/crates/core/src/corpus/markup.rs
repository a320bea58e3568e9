//! Markup stripping for raw document bodies.

use std::sync::LazyLock;

use regex::Regex;

static COMMENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<!--.*?(-->|$)").unwrap());
static SCRIPT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<script\b.*?(</script\s*>|$)").unwrap());
static STYLE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<style\b.*?(</style\s*>|$)").unwrap());
static BLOCK_TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)</?(p|div|br|li|ul|ol|h[1-6]|tr|table|section|article|blockquote|pre|hr|dd|dt|dl)\b[^<>]*>",
    )
    .unwrap()
});
static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"</?[A-Za-z!?][^<>]*>").unwrap());
static URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:https?|ftp|file)://\S*|\bwww\.\S+|\bmailto:\S+").unwrap()
});
static ENTITY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"&(#[0-9]{1,7}|#[xX][0-9a-fA-F]{1,6}|[a-zA-Z]{2,8});").unwrap());

/// Remove HTML tags, hyperlinks and `{{template}}` content, keeping visible
/// text in order. Whitespace runs become one space, or one newline when the
/// run contains a line break.
pub fn strip_markup(body: &str) -> String {
    let mut current = body.to_owned();
    // Each pass only ever shortens the text or leaves it unchanged.
    for _ in 0..64 {
        let next = strip_pass(&current);
        if next == current {
            break;
        }
        current = next;
    }
    normalize_whitespace(&current)
}

fn strip_pass(s: &str) -> String {
    let s = COMMENT.replace_all(s, " ");
    let s = SCRIPT.replace_all(&s, " ");
    let s = STYLE.replace_all(&s, " ");
    let s = remove_templates(&s);
    let s = BLOCK_TAG.replace_all(&s, "\n");
    let s = TAG.replace_all(&s, "");
    let s = URL.replace_all(&s, "");
    let s = ENTITY.replace_all(&s, |caps: &regex::Captures<'_>| decode_entity(&caps[1]));
    s.chars().filter(|c| *c != '<' && *c != '>').collect()
}

fn decode_entity(name: &str) -> String {
    let decoded = match name {
        "amp" => Some('&'),
        "quot" => Some('"'),
        "apos" => Some('\''),
        "nbsp" | "lt" | "gt" => Some(' '),
        "ndash" => Some('-'),
        "mdash" => Some('-'),
        _ if name.starts_with("#x") || name.starts_with("#X") => {
            u32::from_str_radix(&name[2..], 16).ok().and_then(char::from_u32)
        }
        _ if name.starts_with('#') => name[1..].parse().ok().and_then(char::from_u32),
        _ => None,
    };
    match decoded {
        Some('<' | '>') => " ".to_owned(),
        Some(c) => c.to_string(),
        None => format!("&{name};"),
    }
}

/// Drops balanced `{{ ... }}` regions (nested allowed) and any stray `{{`/`}}`.
fn remove_templates(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut removed = vec![false; bytes.len()];
    let mut open: Vec<usize> = Vec::new();
    let mut i = 0;
    while i + 1 < bytes.len() {
        if bytes[i] == b'{' && bytes[i + 1] == b'{' {
            open.push(i);
            i += 2;
        } else if bytes[i] == b'}' && bytes[i + 1] == b'}' {
            match open.pop() {
                Some(start) => removed[start..i + 2].iter_mut().for_each(|r| *r = true),
                None => {
                    removed[i] = true;
                    removed[i + 1] = true;
                }
            }
            i += 2;
        } else {
            i += 1;
        }
    }
    for start in open {
        removed[start] = true;
        removed[start + 1] = true;
    }
    if !removed.iter().any(|r| *r) {
        return s.to_owned();
    }
    // Braces are ASCII, so removed ranges always fall on char boundaries.
    let kept: Vec<u8> = bytes
        .iter()
        .zip(&removed)
        .filter(|(_, r)| !**r)
        .map(|(b, _)| *b)
        .collect();
    String::from_utf8(kept).expect("ascii-only removals keep utf-8 valid")
}

fn normalize_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut run: Option<bool> = None; // Some(has_newline) while inside a run
    for c in s.chars() {
        if c.is_whitespace() {
            let nl = c == '\n' || c == '\r';
            run = Some(run.unwrap_or(false) || nl);
        } else {
            if let Some(nl) = run.take() {
                if !out.is_empty() {
                    out.push(if nl { '\n' } else { ' ' });
                }
            }
            out.push(c);
        }
    }
    out
}
