//! Turtle subset reader and writer.
//!
//! Supported: `@prefix`/`PREFIX` declarations, `<iri>` and `prefix:local`
//! terms, `a`, predicate lists (`;`) and object lists (`,`), quoted strings
//! with `^^` datatypes (`xsd:decimal`, `xsd:integer`, `xsd:boolean`,
//! `xsd:string`, `cap:rational`), bare numbers, `true`/`false`, and `#`
//! comments. Blank nodes, collections and language tags are not supported.
//! Triples whose predicate is outside the `cap:` projection vocabulary are
//! dropped and reported as warnings.

use std::collections::BTreeMap;

use super::lexer::{syntax, tokenize, Spanned, Tok};
use super::rdf::{self, Term, Triple, CAP_NS, RDF_NS, XSD_NS};
use super::{CapabilityModel, Datatype, Iri, Literal, ModelError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurtleModel {
    pub model: CapabilityModel,
    pub warnings: Vec<String>,
}

/// Prefix table with the three vocabulary prefixes predeclared.
#[derive(Debug, Clone)]
pub struct Prefixes(BTreeMap<String, String>);

impl Default for Prefixes {
    fn default() -> Self {
        Prefixes(BTreeMap::from([
            ("cap".to_string(), CAP_NS.to_string()),
            ("rdf".to_string(), RDF_NS.to_string()),
            ("xsd".to_string(), XSD_NS.to_string()),
        ]))
    }
}

impl Prefixes {
    pub fn declare(&mut self, prefix: &str, namespace: &str) {
        self.0.insert(prefix.to_string(), namespace.to_string());
    }

    pub fn expand(&self, prefix: &str, local: &str, at: &Spanned) -> Result<Iri, ModelError> {
        let ns = self
            .0
            .get(prefix)
            .ok_or_else(|| syntax(at.line, at.column, format!("undeclared prefix `{prefix}:`")))?;
        Iri::new(format!("{ns}{local}")).map_err(|e| syntax(at.line, at.column, e.to_string()))
    }
}

/// Cursor over a token stream.
pub struct Cursor {
    toks: Vec<Spanned>,
    pos: usize,
    end: (usize, usize),
}

impl Cursor {
    pub fn new(text: &str) -> Result<Self, ModelError> {
        let toks = tokenize(text)?;
        let lines = text.lines().count().max(1);
        let last = text.lines().last().map(|l| l.chars().count() + 1).unwrap_or(1);
        Ok(Cursor { toks, pos: 0, end: (lines, last) })
    }

    pub fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    pub fn next(&mut self) -> Result<Spanned, ModelError> {
        let t = self.toks.get(self.pos).cloned().ok_or_else(|| self.eof_error())?;
        self.pos += 1;
        Ok(t)
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub fn eof_error(&self) -> ModelError {
        syntax(self.end.0, self.end.1, "unexpected end of input")
    }

    pub fn error(&self, message: impl Into<String>) -> ModelError {
        match self.peek() {
            Some(t) => syntax(t.line, t.column, message),
            None => self.eof_error(),
        }
    }

    pub fn eat_punct(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Spanned { tok: Tok::Punct(p), .. }) if *p == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn expect_punct(&mut self, c: char) -> Result<(), ModelError> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected `{c}`")))
        }
    }

    pub fn eat_word(&mut self, word: &str) -> bool {
        if matches!(self.peek(), Some(Spanned { tok: Tok::Word(w), .. }) if w.eq_ignore_ascii_case(word)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    /// Parses `prefix: <iri>` after a prefix keyword.
    pub fn prefix_decl(&mut self, prefixes: &mut Prefixes) -> Result<(), ModelError> {
        let name = self.next()?;
        let prefix = match &name.tok {
            Tok::PName(p, local) if local.is_empty() => p.clone(),
            _ => return Err(syntax(name.line, name.column, "expected `prefix:`")),
        };
        let ns = self.next()?;
        match ns.tok {
            Tok::IriRef(iri) => prefixes.declare(&prefix, &iri),
            _ => return Err(syntax(ns.line, ns.column, "expected `<namespace>`")),
        }
        Ok(())
    }

    pub fn iri(&mut self, prefixes: &Prefixes) -> Result<Iri, ModelError> {
        let t = self.next()?;
        iri_of(&t, prefixes)?.ok_or_else(|| syntax(t.line, t.column, "expected an IRI"))
    }

    /// IRI, literal, or `a` (as `rdf:type`, only when `allow_a`).
    pub fn term(&mut self, prefixes: &Prefixes) -> Result<Term, ModelError> {
        let t = self.next()?;
        if let Some(iri) = iri_of(&t, prefixes)? {
            return Ok(Term::Iri(iri));
        }
        let lit = match &t.tok {
            Tok::Str(s) => {
                if matches!(self.peek(), Some(Spanned { tok: Tok::DoubleCaret, .. })) {
                    self.pos += 1;
                    let dt = self.iri(prefixes)?;
                    typed_literal(s, &dt).map_err(|e| syntax(t.line, t.column, e))?
                } else {
                    Literal::String(s.clone())
                }
            }
            Tok::Number(n) => {
                let dt = if n.contains('.') { Datatype::Real } else { Datatype::Integer };
                Literal::parse_as(dt, n).map_err(|e| syntax(t.line, t.column, e))?
            }
            Tok::Word(w) if w == "true" => Literal::Boolean(true),
            Tok::Word(w) if w == "false" => Literal::Boolean(false),
            _ => return Err(syntax(t.line, t.column, format!("unexpected token {:?}", t.tok))),
        };
        Ok(Term::Literal(lit))
    }
}

fn iri_of(t: &Spanned, prefixes: &Prefixes) -> Result<Option<Iri>, ModelError> {
    match &t.tok {
        Tok::IriRef(s) => Iri::new(s.clone())
            .map(Some)
            .map_err(|e| syntax(t.line, t.column, e.to_string())),
        Tok::PName(p, l) => prefixes.expand(p, l, t).map(Some),
        Tok::Word(w) if w == "a" => Ok(Some(rdf::rdf_type())),
        _ => Ok(None),
    }
}

fn typed_literal(lexical: &str, datatype: &Iri) -> Result<Literal, String> {
    let dt = datatype.as_str();
    let kind = if dt == format!("{XSD_NS}decimal") || dt == format!("{XSD_NS}double") || dt == format!("{CAP_NS}rational") {
        Datatype::Real
    } else if dt == format!("{XSD_NS}integer") {
        Datatype::Integer
    } else if dt == format!("{XSD_NS}boolean") {
        Datatype::Boolean
    } else if dt == format!("{XSD_NS}string") {
        Datatype::String
    } else {
        return Err(format!("unsupported datatype <{dt}>"));
    };
    Literal::parse_as(kind, lexical)
}

/// Parses Turtle text into triples, reporting unknown predicates separately.
pub fn parse_triples(text: &str) -> Result<(Vec<(Triple, usize)>, Prefixes), ModelError> {
    let mut cur = Cursor::new(text)?;
    let mut prefixes = Prefixes::default();
    let mut out = Vec::new();
    while !cur.at_end() {
        if cur.eat_word("@prefix") {
            cur.prefix_decl(&mut prefixes)?;
            cur.expect_punct('.')?;
            continue;
        }
        if cur.eat_word("PREFIX") {
            cur.prefix_decl(&mut prefixes)?;
            continue;
        }
        let line = cur.peek().map(|t| t.line).unwrap_or(0);
        let subject = cur.iri(&prefixes)?;
        loop {
            let predicate = cur.iri(&prefixes)?;
            loop {
                let object = cur.term(&prefixes)?;
                out.push((Triple::new(subject.clone(), predicate.clone(), object), line));
                if !cur.eat_punct(',') {
                    break;
                }
            }
            if cur.eat_punct(';') {
                if cur.eat_punct('.') {
                    break;
                }
                continue;
            }
            cur.expect_punct('.')?;
            break;
        }
    }
    Ok((out, prefixes))
}

pub fn parse_turtle_model(text: &str) -> Result<TurtleModel, ModelError> {
    let (triples, _) = parse_triples(text)?;
    let known = rdf::known_predicates();
    let mut warnings = Vec::new();
    let mut kept = Vec::new();
    for (t, line) in triples {
        if known.contains(&t.predicate) {
            kept.push(t);
        } else {
            warnings.push(format!("line {line}: unknown predicate <{}> ignored", t.predicate));
        }
    }
    let model = rdf::triples_to_model(&kept).map_err(|e| ModelError::Validation(e.to_string()))?;
    Ok(TurtleModel { model, warnings })
}

/// Turtle token for a literal.
pub fn literal_token(l: &Literal) -> String {
    match l {
        Literal::Real(d) => match d.to_decimal_string() {
            Some(s) => format!("\"{s}\"^^xsd:decimal"),
            None => format!("\"{d}\"^^cap:rational"),
        },
        Literal::Integer(d) => format!("\"{d}\"^^xsd:integer"),
        Literal::Boolean(b) => b.to_string(),
        Literal::String(s) => quote(s),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn compact(iri: &Iri) -> String {
    let s = iri.as_str();
    if s == format!("{RDF_NS}type") {
        return "a".into();
    }
    if let Some(local) = s.strip_prefix(CAP_NS) {
        if !local.is_empty() && local.chars().all(|c| c.is_ascii_alphanumeric()) {
            return format!("cap:{local}");
        }
    }
    format!("<{s}>")
}

/// Writes triples grouped by subject, in first-appearance order.
pub fn write_turtle(triples: &[Triple]) -> String {
    let mut out = String::new();
    out.push_str(&format!("@prefix cap: <{CAP_NS}> .\n"));
    out.push_str(&format!("@prefix rdf: <{RDF_NS}> .\n"));
    out.push_str(&format!("@prefix xsd: <{XSD_NS}> .\n"));
    let mut order: Vec<&Iri> = Vec::new();
    let mut groups: BTreeMap<&Iri, Vec<&Triple>> = BTreeMap::new();
    for t in triples {
        groups.entry(&t.subject).or_insert_with(|| {
            order.push(&t.subject);
            Vec::new()
        });
        groups.get_mut(&t.subject).unwrap().push(t);
    }
    for subject in order {
        out.push('\n');
        out.push_str(&format!("<{subject}>"));
        let group = &groups[subject];
        for (i, t) in group.iter().enumerate() {
            let object = match &t.object {
                Term::Iri(iri) => {
                    let c = compact(iri);
                    if c == "a" { format!("<{iri}>") } else { c }
                }
                Term::Literal(l) => literal_token(l),
            };
            let sep = if i + 1 == group.len() { " ." } else { " ;" };
            out.push_str(&format!("\n    {} {}{}", compact(&t.predicate), object, sep));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_prefixed_statements() {
        let text = r#"
            @prefix mps: <urn:mps:> .
            # a resource
            mps:Conveyor a cap:Resource ; cap:name "Conveyor" .
        "#;
        let m = parse_turtle_model(text).unwrap();
        assert_eq!(m.model.resources.len(), 1);
        assert_eq!(m.model.resources[0].name, "Conveyor");
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn unknown_predicates_become_warnings() {
        let text = r#"<urn:mps:Conveyor> a cap:Resource ; cap:name "Conveyor" ; <urn:other:color> "red" ."#;
        let m = parse_turtle_model(text).unwrap();
        assert_eq!(m.warnings.len(), 1);
        assert!(m.warnings[0].contains("urn:other:color"));
    }

    #[test]
    fn syntax_errors_have_positions() {
        let err = parse_turtle_model("<urn:a> cap:name \"x\"\n<urn:b>").unwrap_err();
        assert!(matches!(err, ModelError::Syntax { line: 2, .. }), "{err:?}");
        let err = parse_turtle_model("undeclared:x a cap:Resource .").unwrap_err();
        assert!(err.to_string().contains("undeclared prefix"));
    }

    #[test]
    fn literal_tokens_round_trip() {
        for lit in [
            Literal::real("2.5"),
            Literal::Real("1/3".parse().unwrap()),
            Literal::integer(-7),
            Literal::Boolean(false),
            Literal::String("say \"hi\"\n".into()),
        ] {
            let text = format!("<urn:s> <urn:p> {} .", literal_token(&lit));
            let (triples, _) = parse_triples(&text).unwrap();
            assert_eq!(triples[0].0.object, Term::Literal(lit));
        }
    }
}
