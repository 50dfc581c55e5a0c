use std::fmt;

/// Minimal S-expression tree for solver output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SExpr {
    Atom(String),
    List(Vec<SExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at offset {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

impl SExpr {
    pub fn atom(&self) -> Option<&str> {
        match self {
            SExpr::Atom(a) => Some(a),
            SExpr::List(_) => None,
        }
    }

    pub fn list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::List(items) => Some(items),
            SExpr::Atom(_) => None,
        }
    }
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Atom(a) => f.write_str(a),
            SExpr::List(items) => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Parses every top-level expression in `text`.
pub fn parse_all(text: &str) -> Result<Vec<SExpr>, ParseError> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    let mut out = Vec::new();
    loop {
        skip_ws(bytes, &mut pos);
        if pos >= bytes.len() {
            return Ok(out);
        }
        out.push(parse_one(text, &mut pos)?);
    }
}

fn skip_ws(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() {
        match bytes[*pos] {
            b' ' | b'\t' | b'\r' | b'\n' => *pos += 1,
            b';' => {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
}

fn parse_one(text: &str, pos: &mut usize) -> Result<SExpr, ParseError> {
    let bytes = text.as_bytes();
    let err = |offset: usize, message: &str| ParseError { offset, message: message.to_string() };
    skip_ws(bytes, pos);
    let start = *pos;
    match bytes.get(*pos) {
        None => Err(err(start, "unexpected end of input")),
        Some(b')') => Err(err(start, "unbalanced `)`")),
        Some(b'(') => {
            *pos += 1;
            let mut items = Vec::new();
            loop {
                skip_ws(bytes, pos);
                match bytes.get(*pos) {
                    None => return Err(err(start, "unclosed `(`")),
                    Some(b')') => {
                        *pos += 1;
                        return Ok(SExpr::List(items));
                    }
                    Some(_) => items.push(parse_one(text, pos)?),
                }
            }
        }
        Some(b'|') => {
            let end = text[start + 1..].find('|').ok_or_else(|| err(start, "unclosed `|`"))?;
            *pos = start + end + 2;
            Ok(SExpr::Atom(text[start + 1..start + 1 + end].to_string()))
        }
        Some(b'"') => {
            let mut i = start + 1;
            loop {
                match bytes.get(i) {
                    None => return Err(err(start, "unclosed string")),
                    Some(b'"') if bytes.get(i + 1) == Some(&b'"') => i += 2,
                    Some(b'"') => break,
                    Some(_) => i += 1,
                }
            }
            *pos = i + 1;
            Ok(SExpr::Atom(text[start..=i].to_string()))
        }
        Some(_) => {
            while *pos < bytes.len() && !matches!(bytes[*pos], b' ' | b'\t' | b'\r' | b'\n' | b'(' | b')' | b';') {
                *pos += 1;
            }
            Ok(SExpr::Atom(text[start..*pos].to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_lists_and_quoted_symbols() {
        let parsed = parse_all("(a (b |c d|) \"x\"\"y\") ; tail\n e").unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].to_string(), "(a (b c d) \"x\"\"y\")");
        assert_eq!(parsed[1], SExpr::Atom("e".into()));
    }

    #[test]
    fn errors_carry_offsets() {
        assert_eq!(parse_all("(a b").unwrap_err().offset, 0);
        assert_eq!(parse_all("  )").unwrap_err().offset, 2);
    }
}
