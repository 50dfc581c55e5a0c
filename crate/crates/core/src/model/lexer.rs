//! Tokenizer shared by the Turtle subset and the query language.

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    /// `<...>`
    IriRef(String),
    /// `prefix:local`; the prefix may be empty.
    PName(String, String),
    /// `?name`
    Var(String),
    /// Quoted string contents, unescaped.
    Str(String),
    /// Unquoted numeric literal.
    Number(String),
    /// Bare word: keywords, `a`, `true`, `false`, `@prefix`.
    Word(String),
    /// `^^`
    DoubleCaret,
    Punct(char),
    /// Comparison operator.
    Op(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

pub fn syntax(line: usize, column: usize, message: impl Into<String>) -> ModelError {
    ModelError::Syntax { line, column, message: message.into() }
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

pub fn tokenize(text: &str) -> Result<Vec<Spanned>, ModelError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let push = |out: &mut Vec<Spanned>, tok: Tok| {
            out.push(Spanned { tok, line: start_line, column: start_col })
        };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '<' => {
                let mut j = i + 1;
                while j < chars.len() && !chars[j].is_whitespace() && !"<>\"".contains(chars[j]) {
                    j += 1;
                }
                if j < chars.len() && chars[j] == '>' && j > i + 1 && chars[i + 1] != '=' {
                    let iri: String = chars[i + 1..j].iter().collect();
                    push(&mut out, Tok::IriRef(iri));
                    advance(j + 1 - i, &mut i, &mut col);
                } else if chars.get(i + 1) == Some(&'=') {
                    push(&mut out, Tok::Op("<="));
                    advance(2, &mut i, &mut col);
                } else {
                    push(&mut out, Tok::Op("<"));
                    advance(1, &mut i, &mut col);
                }
            }
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    push(&mut out, Tok::Op(">="));
                    advance(2, &mut i, &mut col);
                } else {
                    push(&mut out, Tok::Op(">"));
                    advance(1, &mut i, &mut col);
                }
            }
            '=' => {
                push(&mut out, Tok::Op("="));
                advance(1, &mut i, &mut col);
            }
            '!' if chars.get(i + 1) == Some(&'=') => {
                push(&mut out, Tok::Op("!="));
                advance(2, &mut i, &mut col);
            }
            '^' if chars.get(i + 1) == Some(&'^') => {
                push(&mut out, Tok::DoubleCaret);
                advance(2, &mut i, &mut col);
            }
            '"' => {
                let mut value = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None | Some('\n') => {
                            return Err(syntax(start_line, start_col, "unterminated string"))
                        }
                        Some('"') => break,
                        Some('\\') => {
                            let escaped = match chars.get(j + 1) {
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('r') => '\r',
                                Some('"') => '"',
                                Some('\\') => '\\',
                                _ => return Err(syntax(line, col + (j - i), "bad escape")),
                            };
                            value.push(escaped);
                            j += 2;
                        }
                        Some(&ch) => {
                            value.push(ch);
                            j += 1;
                        }
                    }
                }
                push(&mut out, Tok::Str(value));
                advance(j + 1 - i, &mut i, &mut col);
            }
            '?' | '$' => {
                let mut j = i + 1;
                while j < chars.len() && is_name_char(chars[j]) {
                    j += 1;
                }
                if j == i + 1 {
                    return Err(syntax(start_line, start_col, "empty variable name"));
                }
                push(&mut out, Tok::Var(chars[i + 1..j].iter().collect()));
                advance(j - i, &mut i, &mut col);
            }
            '.' | ';' | ',' | '{' | '}' | '(' | ')' | '*' => {
                // a dot followed by a digit starts a number such as `.5`
                if c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    let (tok, n) = number(&chars, i);
                    push(&mut out, tok);
                    advance(n, &mut i, &mut col);
                } else {
                    push(&mut out, Tok::Punct(c));
                    advance(1, &mut i, &mut col);
                }
            }
            c if c.is_ascii_digit() || ((c == '-' || c == '+') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '.')) => {
                let (tok, n) = number(&chars, i);
                push(&mut out, tok);
                advance(n, &mut i, &mut col);
            }
            c if is_name_char(c) || c == '@' || c == ':' => {
                let mut j = i + 1;
                while j < chars.len() && (is_name_char(chars[j]) || chars[j] == ':' || chars[j] == '.') {
                    j += 1;
                }
                // a trailing dot terminates the statement rather than the name
                while j > i + 1 && chars[j - 1] == '.' {
                    j -= 1;
                }
                let word: String = chars[i..j].iter().collect();
                let tok = match word.split_once(':') {
                    Some((prefix, local)) if !word.starts_with('@') => {
                        Tok::PName(prefix.to_string(), local.to_string())
                    }
                    _ => Tok::Word(word),
                };
                push(&mut out, tok);
                advance(j - i, &mut i, &mut col);
            }
            other => return Err(syntax(line, col, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

fn number(chars: &[char], start: usize) -> (Tok, usize) {
    let mut j = start;
    if chars[j] == '-' || chars[j] == '+' {
        j += 1;
    }
    let mut seen_dot = false;
    while j < chars.len() {
        let c = chars[j];
        if c.is_ascii_digit() {
            j += 1;
        } else if c == '.' && !seen_dot && chars.get(j + 1).is_some_and(|d| d.is_ascii_digit()) {
            seen_dot = true;
            j += 1;
        } else {
            break;
        }
    }
    (Tok::Number(chars[start..j].iter().collect()), j - start)
}
