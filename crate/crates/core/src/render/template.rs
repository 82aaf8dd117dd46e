//! `{name}` placeholder templates with a fixed vocabulary.
//!
//! A placeholder is `{` + identifier + `}`. Other brace usage is literal text.

pub const VOCABULARY: [&str; 4] = ["input", "candidates", "constraints", "entity"];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn pieces(template: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    let mut literal_start = 0;
    let mut offset = 0;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_ident(&after[..close]) => {
                let abs_open = offset + open;
                if abs_open > literal_start {
                    out.push(Piece::Text(&template[literal_start..abs_open]));
                }
                out.push(Piece::Slot(&after[..close]));
                let consumed = open + 1 + close + 1;
                offset += consumed;
                literal_start = offset;
                rest = &rest[consumed..];
            }
            _ => {
                offset += open + 1;
                rest = &rest[open + 1..];
            }
        }
    }
    if literal_start < template.len() {
        out.push(Piece::Text(&template[literal_start..]));
    }
    out
}

/// Placeholder names in order of appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    pieces(template)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Slot(name) => Some(name.to_string()),
            Piece::Text(_) => None,
        })
        .collect()
}

/// Substitutes every placeholder in one pass. Returns the first name with no
/// binding as the error.
pub fn fill<F>(template: &str, bind: F) -> Result<String, String>
where
    F: Fn(&str) -> Option<String>,
{
    let mut out = String::with_capacity(template.len());
    for piece in pieces(template) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => out.push_str(&bind(name).ok_or_else(|| name.to_string())?),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_only_identifier_slots() {
        assert_eq!(placeholders("Classify {input} now"), vec!["input"]);
        assert_eq!(placeholders("json {\"a\": 1} and { } and {entity}"), vec!["entity"]);
        assert!(placeholders("no slots").is_empty());
    }

    #[test]
    fn fill_substitutes_once() {
        let out = fill("A {input} B {input}", |n| (n == "input").then(|| "{input}".to_string())).unwrap();
        assert_eq!(out, "A {input} B {input}");
        assert_eq!(fill("Classify {inptu}", |_| None), Err("inptu".to_string()));
        assert_eq!(fill("{x", |_| None).unwrap(), "{x");
    }
}
