use super::parse_number;

/// Lowercases, splits on whitespace and breaks punctuation into standalone
/// tokens. A whitespace chunk that parses as a number stays whole, so `-1`
/// and `3.5` are single tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chunk = chunk.to_lowercase();
        if parse_number(&chunk).is_some() {
            out.push(chunk);
            continue;
        }
        let mut cur = String::new();
        for ch in chunk.chars() {
            if ch.is_ascii_punctuation() {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Surface form of a record value as it appears among text tokens; used
/// both for the value embedding and for copy matching.
pub fn normalize_value(value: &str) -> String {
    value.trim().to_lowercase()
}
