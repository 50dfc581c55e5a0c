//! Restricted SPARQL-shaped query and update language.
//!
//! ```text
//! request   := prefix* (select | ask | insert | delete)
//! prefix    := "PREFIX" pname ":" "<" iri ">"
//! select    := "SELECT" "DISTINCT"? ("*" | var+) "WHERE" group
//! ask       := "ASK" "WHERE"? group
//! insert    := "INSERT" "DATA" "{" triples "}"
//! delete    := "DELETE" "DATA" "{" triples "}"
//! group     := "{" (pattern | filter)* "}"
//! pattern   := term term term ("." | ";" | ",")     -- Turtle-style lists
//! filter    := "FILTER" "(" term op term ")"         -- op: < <= > >= = !=
//! term      := var | <iri> | pname | "a" | literal
//! ```
//!
//! Keywords are case-insensitive. `cap:`, `rdf:` and `xsd:` are predeclared.
//! Update blocks may only contain concrete triples.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::lexer::{Spanned, Tok};
use crate::model::rdf::{Term, Triple};
use crate::model::turtle::{literal_token, Cursor, Prefixes};
use crate::model::{CmpOp, Iri, Literal, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Select,
    Ask,
    Insert,
    Delete,
}

impl QueryKind {
    pub fn is_update(self) -> bool {
        matches!(self, QueryKind::Insert | QueryKind::Delete)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermPattern {
    Var(String),
    Term(Term),
}

impl fmt::Display for TermPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TermPattern::Var(v) => write!(f, "?{v}"),
            TermPattern::Term(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriplePattern {
    pub subject: TermPattern,
    pub predicate: TermPattern,
    pub object: TermPattern,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    pub lhs: TermPattern,
    pub op: CmpOp,
    pub rhs: TermPattern,
}

/// A parsed request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryForm {
    pub kind: QueryKind,
    /// Projected variables; empty means `*`.
    pub variables: Vec<String>,
    pub distinct: bool,
    pub patterns: Vec<TriplePattern>,
    pub filters: Vec<Filter>,
    /// Concrete triples carried by INSERT DATA / DELETE DATA.
    pub data: Vec<Triple>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("malformed query: {0}")]
    Malformed(String),
    #[error("expected a {expected} request, got {found:?}")]
    WrongKind { expected: &'static str, found: QueryKind },
}

impl From<ModelError> for QueryError {
    fn from(e: ModelError) -> Self {
        QueryError::Malformed(e.to_string())
    }
}

impl QueryForm {
    pub fn insert(data: Vec<Triple>) -> Self {
        QueryForm::data(QueryKind::Insert, data)
    }

    pub fn delete(data: Vec<Triple>) -> Self {
        QueryForm::data(QueryKind::Delete, data)
    }

    fn data(kind: QueryKind, data: Vec<Triple>) -> Self {
        QueryForm { kind, variables: vec![], distinct: false, patterns: vec![], filters: vec![], data }
    }

    /// Parses and checks well-formedness.
    pub fn parse(text: &str) -> Result<QueryForm, QueryError> {
        let mut cur = Cursor::new(text)?;
        let mut prefixes = Prefixes::default();
        while cur.eat_word("PREFIX") {
            cur.prefix_decl(&mut prefixes)?;
        }
        let form = if cur.eat_word("SELECT") {
            let distinct = cur.eat_word("DISTINCT");
            let mut variables = Vec::new();
            if !cur.eat_punct('*') {
                while let Some(Spanned { tok: Tok::Var(v), .. }) = cur.peek() {
                    variables.push(v.clone());
                    cur.next()?;
                }
                if variables.is_empty() {
                    return Err(QueryError::Malformed("SELECT needs at least one variable or `*`".into()));
                }
            }
            if !cur.eat_word("WHERE") {
                return Err(cur.error("expected WHERE").into());
            }
            let (patterns, filters) = group(&mut cur, &prefixes)?;
            QueryForm { kind: QueryKind::Select, variables, distinct, patterns, filters, data: vec![] }
        } else if cur.eat_word("ASK") {
            cur.eat_word("WHERE");
            let (patterns, filters) = group(&mut cur, &prefixes)?;
            QueryForm { kind: QueryKind::Ask, variables: vec![], distinct: false, patterns, filters, data: vec![] }
        } else if let Some(kind) = update_keyword(&mut cur) {
            if !cur.eat_word("DATA") {
                return Err(cur.error("only INSERT DATA / DELETE DATA updates are supported").into());
            }
            let (patterns, filters) = group(&mut cur, &prefixes)?;
            if !filters.is_empty() {
                return Err(QueryError::Malformed("FILTER is not allowed in update data".into()));
            }
            let mut data = Vec::new();
            for p in patterns {
                data.push(concrete(&p)?);
            }
            if data.is_empty() {
                return Err(QueryError::Malformed("update carries no triples".into()));
            }
            QueryForm::data(kind, data)
        } else {
            return Err(cur.error("expected SELECT, ASK, INSERT DATA or DELETE DATA").into());
        };
        if !cur.at_end() {
            return Err(cur.error("trailing input after request").into());
        }
        if form.patterns.is_empty() && !form.kind.is_update() {
            return Err(QueryError::Malformed("empty graph pattern".into()));
        }
        Ok(form)
    }

    /// Canonical text form; parses back to an equal form.
    pub fn to_text(&self) -> String {
        let pattern_block = |out: &mut String| {
            out.push_str(" {");
            for p in &self.patterns {
                out.push_str(&format!(" {} {} {} .", p.subject, p.predicate, p.object));
            }
            for f in &self.filters {
                out.push_str(&format!(" FILTER({} {} {})", f.lhs, f.op.symbol(), f.rhs));
            }
            out.push_str(" }");
        };
        let mut out = String::new();
        match self.kind {
            QueryKind::Select => {
                out.push_str("SELECT");
                if self.distinct {
                    out.push_str(" DISTINCT");
                }
                if self.variables.is_empty() {
                    out.push_str(" *");
                }
                for v in &self.variables {
                    out.push_str(&format!(" ?{v}"));
                }
                out.push_str(" WHERE");
                pattern_block(&mut out);
            }
            QueryKind::Ask => {
                out.push_str("ASK WHERE");
                pattern_block(&mut out);
            }
            QueryKind::Insert | QueryKind::Delete => {
                out.push_str(if self.kind == QueryKind::Insert { "INSERT DATA {" } else { "DELETE DATA {" });
                for t in &self.data {
                    out.push_str(&format!(" <{}> <{}> {} .", t.subject, t.predicate, term_text(&t.object)));
                }
                out.push_str(" }");
            }
        }
        out
    }

    /// Variables bound by the patterns, in first-appearance order.
    pub fn pattern_variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.patterns {
            for t in [&p.subject, &p.predicate, &p.object] {
                if let TermPattern::Var(v) = t {
                    if !out.contains(v) {
                        out.push(v.clone());
                    }
                }
            }
        }
        out
    }
}

fn update_keyword(cur: &mut Cursor) -> Option<QueryKind> {
    if cur.eat_word("INSERT") {
        Some(QueryKind::Insert)
    } else if cur.eat_word("DELETE") {
        Some(QueryKind::Delete)
    } else {
        None
    }
}

fn term_text(t: &Term) -> String {
    match t {
        Term::Iri(i) => format!("<{i}>"),
        Term::Literal(l) => literal_token(l),
    }
}

fn concrete(p: &TriplePattern) -> Result<Triple, QueryError> {
    let iri = |t: &TermPattern| match t {
        TermPattern::Term(Term::Iri(i)) => Ok(i.clone()),
        other => Err(QueryError::Malformed(format!("update data needs a concrete IRI, got {other}"))),
    };
    let object = match &p.object {
        TermPattern::Term(t) => t.clone(),
        TermPattern::Var(v) => {
            return Err(QueryError::Malformed(format!("update data cannot contain ?{v}")))
        }
    };
    Ok(Triple::new(iri(&p.subject)?, iri(&p.predicate)?, object))
}

fn pattern_term(cur: &mut Cursor, prefixes: &Prefixes) -> Result<TermPattern, QueryError> {
    if let Some(Spanned { tok: Tok::Var(v), .. }) = cur.peek() {
        let v = v.clone();
        cur.next()?;
        return Ok(TermPattern::Var(v));
    }
    Ok(TermPattern::Term(cur.term(prefixes)?))
}

fn is_close(cur: &Cursor) -> bool {
    matches!(cur.peek(), Some(Spanned { tok: Tok::Punct('}'), .. }))
}

fn group(
    cur: &mut Cursor,
    prefixes: &Prefixes,
) -> Result<(Vec<TriplePattern>, Vec<Filter>), QueryError> {
    cur.expect_punct('{')?;
    let mut patterns = Vec::new();
    let mut filters = Vec::new();
    loop {
        if cur.eat_punct('}') {
            break;
        }
        if cur.eat_word("FILTER") {
            cur.expect_punct('(')?;
            let lhs = pattern_term(cur, prefixes)?;
            let op = match cur.next()?.tok {
                Tok::Op(o) => match o {
                    "<" => CmpOp::Lt,
                    "<=" => CmpOp::Le,
                    ">" => CmpOp::Gt,
                    ">=" => CmpOp::Ge,
                    "=" => CmpOp::Eq,
                    _ => CmpOp::Ne,
                },
                other => return Err(QueryError::Malformed(format!("expected comparison, got {other:?}"))),
            };
            let rhs = pattern_term(cur, prefixes)?;
            cur.expect_punct(')')?;
            cur.eat_punct('.');
            filters.push(Filter { lhs, op, rhs });
            continue;
        }
        let subject = pattern_term(cur, prefixes)?;
        loop {
            let predicate = pattern_term(cur, prefixes)?;
            loop {
                let object = pattern_term(cur, prefixes)?;
                patterns.push(TriplePattern {
                    subject: subject.clone(),
                    predicate: predicate.clone(),
                    object,
                });
                if !cur.eat_punct(',') {
                    break;
                }
            }
            if cur.eat_punct(';') {
                if is_close(cur) || cur.eat_punct('.') {
                    break;
                }
                continue;
            }
            if !cur.eat_punct('.') && !is_close(cur) {
                return Err(cur.error("expected `.`, `;`, `,` or `}`").into());
            }
            break;
        }
    }
    Ok((patterns, filters))
}

/// Result of a read request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryResult {
    Table { variables: Vec<String>, rows: Vec<Vec<Option<Term>>> },
    Boolean(bool),
}

impl QueryResult {
    pub fn rows(&self) -> &[Vec<Option<Term>>] {
        match self {
            QueryResult::Table { rows, .. } => rows,
            QueryResult::Boolean(_) => &[],
        }
    }

    /// Rows as `variable -> value` maps, skipping unbound cells.
    pub fn records(&self) -> Vec<BTreeMap<String, Term>> {
        match self {
            QueryResult::Table { variables, rows } => rows
                .iter()
                .map(|row| {
                    variables
                        .iter()
                        .zip(row)
                        .filter_map(|(v, t)| t.clone().map(|t| (v.clone(), t)))
                        .collect()
                })
                .collect(),
            QueryResult::Boolean(_) => vec![],
        }
    }
}

type Binding = BTreeMap<String, Term>;

fn match_term(pattern: &TermPattern, value: &Term, binding: &mut Binding) -> bool {
    match pattern {
        TermPattern::Term(t) => t == value,
        TermPattern::Var(v) => match binding.get(v) {
            Some(bound) => bound == value,
            None => {
                binding.insert(v.clone(), value.clone());
                true
            }
        },
    }
}

fn resolve<'a>(t: &'a TermPattern, binding: &'a Binding) -> Option<&'a Term> {
    match t {
        TermPattern::Term(t) => Some(t),
        TermPattern::Var(v) => binding.get(v),
    }
}

fn filter_holds(f: &Filter, binding: &Binding) -> bool {
    let (Some(l), Some(r)) = (resolve(&f.lhs, binding), resolve(&f.rhs, binding)) else {
        return false;
    };
    let ordering = match (l, r) {
        (Term::Literal(a), Term::Literal(b)) => match (a.as_number(), b.as_number()) {
            (Some(x), Some(y)) => x.cmp(y),
            (None, None) => match (a, b) {
                (Literal::String(x), Literal::String(y)) => x.cmp(y),
                (Literal::Boolean(x), Literal::Boolean(y)) if !f.op.is_ordering() => x.cmp(y),
                _ => return false,
            },
            _ => return false,
        },
        (Term::Iri(a), Term::Iri(b)) if !f.op.is_ordering() => a.cmp(b),
        _ => return false,
    };
    f.op.holds(ordering)
}

/// Evaluates a SELECT or ASK over a triple set. Rows are sorted by their
/// bound terms.
pub fn evaluate(form: &QueryForm, triples: &BTreeSet<Triple>) -> Result<QueryResult, QueryError> {
    if form.kind.is_update() {
        return Err(QueryError::WrongKind { expected: "SELECT or ASK", found: form.kind });
    }
    let mut bindings: Vec<Binding> = vec![Binding::new()];
    for pattern in &form.patterns {
        let mut next = Vec::new();
        for binding in &bindings {
            for t in triples {
                let mut b = binding.clone();
                if match_term(&pattern.subject, &Term::Iri(t.subject.clone()), &mut b)
                    && match_term(&pattern.predicate, &Term::Iri(t.predicate.clone()), &mut b)
                    && match_term(&pattern.object, &t.object, &mut b)
                {
                    next.push(b);
                }
            }
        }
        bindings = next;
        if bindings.is_empty() {
            break;
        }
    }
    bindings.retain(|b| form.filters.iter().all(|f| filter_holds(f, b)));
    if form.kind == QueryKind::Ask {
        return Ok(QueryResult::Boolean(!bindings.is_empty()));
    }
    let variables =
        if form.variables.is_empty() { form.pattern_variables() } else { form.variables.clone() };
    let mut rows: Vec<Vec<Option<Term>>> = bindings
        .iter()
        .map(|b| variables.iter().map(|v| b.get(v).cloned()).collect())
        .collect();
    rows.sort();
    if form.distinct {
        rows.dedup();
    }
    Ok(QueryResult::Table { variables, rows })
}

/// Parses text that must be an `INSERT DATA` or `DELETE DATA` request.
pub fn parse_update(text: &str) -> Result<QueryForm, QueryError> {
    let form = QueryForm::parse(text)?;
    if !form.kind.is_update() {
        return Err(QueryError::WrongKind { expected: "INSERT DATA or DELETE DATA", found: form.kind });
    }
    Ok(form)
}

pub fn iri_term(s: &str) -> Term {
    Term::Iri(Iri::new(s).expect("valid IRI"))
}
