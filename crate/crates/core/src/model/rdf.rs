//! Triple projection of a [`CapabilityModel`].
//!
//! Projection rules (`cap:` is `urn:capaplan:`):
//!
//! | entity | triples |
//! |---|---|
//! | resource `r` | `r rdf:type cap:Resource`, `r cap:name "…"` |
//! | capability `c` | `c rdf:type cap:ProvidedCapability` or `cap:RequiredCapability`, `c cap:description "…"`, `c cap:providedBy r` (provided only) |
//! | property `p` of `c` | `c cap:hasInput p` or `c cap:hasOutput p`, `p cap:name`, `p cap:datatype`, `p cap:subject`, `p cap:position` (index in its list), `p cap:value` (constants only), `p cap:unit` (when set) |
//! | constraint `k` (ordinal `i`) | `c cap:hasConstraint k`, `k cap:ordinal i`, `k cap:expression e` with `k = <c>/constraint/<i>` and `e = <k>/e` |
//! | expression node `n` | `n cap:op "<op>"`; literal nodes add `n cap:literal v`; property nodes add `n cap:ref p`; every child `m` of `n` adds `n cap:arg m` and `m cap:argIndex j`, with `m = <n>.<j>` |
//!
//! `op` is one of `literal prop neg add sub mul le lt ge gt eq ne and or not`.
//! Properties without a `cap:value` triple are unbound variables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{
    CapabilityKind, CmpOp, Capability, CapabilityModel, ConstraintExpr, Datatype, Decimal, Iri,
    Literal, PropertyDecl, PropertyValue, Resource, Role, Subject,
};

pub const CAP_NS: &str = "urn:capaplan:";
pub const RDF_NS: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
pub const XSD_NS: &str = "http://www.w3.org/2001/XMLSchema#";

pub fn cap(local: &str) -> Iri {
    Iri::new(format!("{CAP_NS}{local}")).expect("vocabulary IRI")
}

pub fn rdf_type() -> Iri {
    Iri::new(format!("{RDF_NS}type")).expect("vocabulary IRI")
}

/// Predicates belonging to the projection vocabulary.
pub fn known_predicates() -> BTreeSet<Iri> {
    let mut set: BTreeSet<Iri> = [
        "name",
        "description",
        "providedBy",
        "hasInput",
        "hasOutput",
        "datatype",
        "subject",
        "position",
        "value",
        "unit",
        "hasConstraint",
        "ordinal",
        "expression",
        "op",
        "literal",
        "ref",
        "arg",
        "argIndex",
    ]
    .into_iter()
    .map(cap)
    .collect();
    set.insert(rdf_type());
    set
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Iri(Iri),
    Literal(Literal),
}

impl Term {
    pub fn as_iri(&self) -> Option<&Iri> {
        match self {
            Term::Iri(i) => Some(i),
            Term::Literal(_) => None,
        }
    }

    pub fn as_literal(&self) -> Option<&Literal> {
        match self {
            Term::Literal(l) => Some(l),
            Term::Iri(_) => None,
        }
    }

    pub fn string(s: impl Into<String>) -> Term {
        Term::Literal(Literal::String(s.into()))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri(i) => write!(f, "<{i}>"),
            Term::Literal(l) => f.write_str(&super::turtle::literal_token(l)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: Iri,
    pub predicate: Iri,
    pub object: Term,
}

impl Triple {
    pub fn new(subject: Iri, predicate: Iri, object: Term) -> Self {
        Triple { subject, predicate, object }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}> <{}> {} .", self.subject, self.predicate, self.object)
    }
}

fn int(value: usize) -> Term {
    Term::Literal(Literal::Integer(Decimal::from_integer(value as i64)))
}

fn node_iri(base: &str) -> Iri {
    Iri::new(base.to_string()).expect("derived IRI")
}

fn expr_op(expr: &ConstraintExpr) -> &'static str {
    match expr {
        ConstraintExpr::Cmp(c) => c.op.as_str(),
        other => other.kind(),
    }
}

fn project_expr(node: &Iri, expr: &ConstraintExpr, out: &mut Vec<Triple>) {
    out.push(Triple::new(node.clone(), cap("op"), Term::string(expr_op(expr))));
    match expr {
        ConstraintExpr::Literal(l) => {
            out.push(Triple::new(node.clone(), cap("literal"), Term::Literal(l.clone())))
        }
        ConstraintExpr::Prop(p) => {
            out.push(Triple::new(node.clone(), cap("ref"), Term::Iri(p.clone())))
        }
        _ => {}
    }
    for (j, child) in expr.children().into_iter().enumerate() {
        let child_iri = node_iri(&format!("{node}.{j}"));
        out.push(Triple::new(node.clone(), cap("arg"), Term::Iri(child_iri.clone())));
        out.push(Triple::new(child_iri.clone(), cap("argIndex"), int(j)));
        project_expr(&child_iri, child, out);
    }
}

fn project_property(c: &Capability, p: &PropertyDecl, position: usize, out: &mut Vec<Triple>) {
    let link = if p.role == Role::Input { "hasInput" } else { "hasOutput" };
    out.push(Triple::new(c.iri.clone(), cap(link), Term::Iri(p.iri.clone())));
    out.push(Triple::new(p.iri.clone(), cap("name"), Term::string(&p.name)));
    out.push(Triple::new(p.iri.clone(), cap("datatype"), Term::string(p.datatype.as_str())));
    let subject = match p.subject {
        Subject::Product => "product",
        Subject::Information => "information",
    };
    out.push(Triple::new(p.iri.clone(), cap("subject"), Term::string(subject)));
    out.push(Triple::new(p.iri.clone(), cap("position"), int(position)));
    if let PropertyValue::Constant(v) = &p.value {
        out.push(Triple::new(p.iri.clone(), cap("value"), Term::Literal(v.clone())));
    }
    if let Some(unit) = &p.unit {
        out.push(Triple::new(p.iri.clone(), cap("unit"), Term::string(unit)));
    }
}

/// IRI of the node holding constraint `ordinal` of `capability`.
pub fn constraint_node(capability: &Iri, ordinal: usize) -> Iri {
    node_iri(&format!("{capability}/constraint/{ordinal}"))
}

/// Projects a model onto triples, in model order.
pub fn model_to_triples(model: &CapabilityModel) -> Vec<Triple> {
    let mut out = Vec::new();
    for r in &model.resources {
        out.push(Triple::new(r.iri.clone(), rdf_type(), Term::Iri(cap("Resource"))));
        out.push(Triple::new(r.iri.clone(), cap("name"), Term::string(&r.name)));
    }
    for c in &model.capabilities {
        let class = match c.kind {
            CapabilityKind::Provided => "ProvidedCapability",
            CapabilityKind::Required => "RequiredCapability",
        };
        out.push(Triple::new(c.iri.clone(), rdf_type(), Term::Iri(cap(class))));
        out.push(Triple::new(c.iri.clone(), cap("description"), Term::string(&c.description)));
        if let Some(r) = &c.resource {
            out.push(Triple::new(c.iri.clone(), cap("providedBy"), Term::Iri(r.clone())));
        }
        for (i, p) in c.inputs.iter().enumerate() {
            project_property(c, p, i, &mut out);
        }
        for (i, p) in c.outputs.iter().enumerate() {
            project_property(c, p, i, &mut out);
        }
        for (i, expr) in c.constraints.iter().enumerate() {
            let k = constraint_node(&c.iri, i);
            let root = node_iri(&format!("{k}/e"));
            out.push(Triple::new(c.iri.clone(), cap("hasConstraint"), Term::Iri(k.clone())));
            out.push(Triple::new(k.clone(), cap("ordinal"), int(i)));
            out.push(Triple::new(k.clone(), cap("expression"), Term::Iri(root.clone())));
            project_expr(&root, expr, &mut out);
        }
    }
    out
}

/// Failure to read a model back from triples.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IntegrityError {
    #[error("`{subject}` is missing `{predicate}`")]
    Missing { subject: Iri, predicate: String },
    #[error("`{subject}` has conflicting values for `{predicate}`")]
    Conflicting { subject: Iri, predicate: String },
    #[error("`{subject}`: {detail}")]
    Malformed { subject: Iri, detail: String },
    #[error("{count} triple(s) are not part of any model entity, first: {first}")]
    Orphaned { count: usize, first: String },
    #[error("materialized model is invalid: {0}")]
    Invalid(String),
}

struct Reader<'a> {
    by_subject: BTreeMap<&'a Iri, Vec<&'a Triple>>,
    consumed: BTreeSet<&'a Triple>,
}

impl<'a> Reader<'a> {
    fn new(triples: &'a [Triple]) -> Self {
        let mut by_subject: BTreeMap<&Iri, Vec<&Triple>> = BTreeMap::new();
        for t in triples {
            by_subject.entry(&t.subject).or_default().push(t);
        }
        Reader { by_subject, consumed: BTreeSet::new() }
    }

    fn all(&mut self, subject: &Iri, predicate: &str) -> Vec<&'a Term> {
        let pred = cap(predicate);
        self.all_pred(subject, &pred)
    }

    fn all_pred(&mut self, subject: &Iri, pred: &Iri) -> Vec<&'a Term> {
        let Some(list) = self.by_subject.get(subject) else { return vec![] };
        let mut out = Vec::new();
        for t in list {
            if &t.predicate == pred {
                self.consumed.insert(*t);
                out.push(&t.object);
            }
        }
        out
    }

    fn opt(&mut self, subject: &Iri, predicate: &str) -> Result<Option<&'a Term>, IntegrityError> {
        let values = self.all(subject, predicate);
        match values.len() {
            0 => Ok(None),
            1 => Ok(Some(values[0])),
            _ => Err(IntegrityError::Conflicting {
                subject: subject.clone(),
                predicate: predicate.to_string(),
            }),
        }
    }

    fn one(&mut self, subject: &Iri, predicate: &str) -> Result<&'a Term, IntegrityError> {
        self.opt(subject, predicate)?.ok_or_else(|| IntegrityError::Missing {
            subject: subject.clone(),
            predicate: predicate.to_string(),
        })
    }

    fn string(&mut self, subject: &Iri, predicate: &str) -> Result<String, IntegrityError> {
        match self.one(subject, predicate)? {
            Term::Literal(Literal::String(s)) => Ok(s.clone()),
            other => Err(malformed(subject, format!("`{predicate}` must be a string, got {other}"))),
        }
    }

    fn index(&mut self, subject: &Iri, predicate: &str) -> Result<usize, IntegrityError> {
        match self.one(subject, predicate)? {
            Term::Literal(Literal::Integer(d)) if d.is_integer() => d
                .to_string()
                .parse()
                .map_err(|_| malformed(subject, format!("`{predicate}` out of range"))),
            other => {
                Err(malformed(subject, format!("`{predicate}` must be an integer, got {other}")))
            }
        }
    }

    fn iri(&mut self, subject: &Iri, predicate: &str) -> Result<Iri, IntegrityError> {
        match self.one(subject, predicate)? {
            Term::Iri(i) => Ok(i.clone()),
            other => Err(malformed(subject, format!("`{predicate}` must be an IRI, got {other}"))),
        }
    }

    fn types(&mut self, subject: &Iri) -> Vec<Iri> {
        let pred = rdf_type();
        self.all_pred(subject, &pred).into_iter().filter_map(|t| t.as_iri().cloned()).collect()
    }
}

fn malformed(subject: &Iri, detail: String) -> IntegrityError {
    IntegrityError::Malformed { subject: subject.clone(), detail }
}

fn read_property(
    r: &mut Reader<'_>,
    iri: &Iri,
    role: Role,
) -> Result<(usize, PropertyDecl), IntegrityError> {
    let name = r.string(iri, "name")?;
    let datatype: Datatype = r.string(iri, "datatype")?.parse().map_err(|e| malformed(iri, e))?;
    let subject = match r.string(iri, "subject")?.as_str() {
        "product" => Subject::Product,
        "information" => Subject::Information,
        other => return Err(malformed(iri, format!("unknown subject `{other}`"))),
    };
    let position = r.index(iri, "position")?;
    let value = match r.opt(iri, "value")? {
        None => PropertyValue::Variable,
        Some(Term::Literal(l)) => PropertyValue::Constant(l.clone()),
        Some(other) => return Err(malformed(iri, format!("value must be a literal, got {other}"))),
    };
    let unit = match r.opt(iri, "unit")? {
        None => None,
        Some(Term::Literal(Literal::String(s))) => Some(s.clone()),
        Some(other) => return Err(malformed(iri, format!("unit must be a string, got {other}"))),
    };
    Ok((position, PropertyDecl { iri: iri.clone(), name, datatype, role, subject, value, unit }))
}

fn read_expr(r: &mut Reader<'_>, node: &Iri, depth: usize) -> Result<ConstraintExpr, IntegrityError> {
    if depth > 256 {
        return Err(malformed(node, "expression nesting too deep".into()));
    }
    let op = r.string(node, "op")?;
    let mut args: Vec<(usize, ConstraintExpr)> = Vec::new();
    for child in r.all(node, "arg") {
        let child = child
            .as_iri()
            .ok_or_else(|| malformed(node, "expression argument must be an IRI".into()))?
            .clone();
        let index = r.index(&child, "argIndex")?;
        args.push((index, read_expr(r, &child, depth + 1)?));
    }
    args.sort_by_key(|(i, _)| *i);
    if args.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
        return Err(malformed(node, "expression arguments are not numbered 0..n".into()));
    }
    let mut args: Vec<ConstraintExpr> = args.into_iter().map(|(_, e)| e).collect();
    let arity = |n: usize, args: &Vec<ConstraintExpr>| {
        if args.len() == n {
            Ok(())
        } else {
            Err(malformed(node, format!("`{op}` expects {n} argument(s), found {}", args.len())))
        }
    };
    let expr = match op.as_str() {
        "literal" => {
            arity(0, &args)?;
            match r.one(node, "literal")? {
                Term::Literal(l) => ConstraintExpr::Literal(l.clone()),
                other => return Err(malformed(node, format!("literal node holds {other}"))),
            }
        }
        "prop" => {
            arity(0, &args)?;
            ConstraintExpr::Prop(r.iri(node, "ref")?)
        }
        "neg" | "not" => {
            arity(1, &args)?;
            let e = Box::new(args.remove(0));
            if op == "neg" {
                ConstraintExpr::Neg(e)
            } else {
                ConstraintExpr::Not(e)
            }
        }
        "add" | "sub" | "mul" => {
            arity(2, &args)?;
            let b = Box::new(args.pop().unwrap());
            let a = Box::new(args.pop().unwrap());
            match op.as_str() {
                "add" => ConstraintExpr::Add(a, b),
                "sub" => ConstraintExpr::Sub(a, b),
                _ => ConstraintExpr::Mul(a, b),
            }
        }
        "and" => ConstraintExpr::And(args),
        "or" => ConstraintExpr::Or(args),
        other => match CmpOp::parse(other) {
            Some(cmp) => {
                arity(2, &args)?;
                let b = args.pop().unwrap();
                let a = args.pop().unwrap();
                ConstraintExpr::cmp(cmp, a, b)
            }
            None => return Err(malformed(node, format!("unknown expression op `{other}`"))),
        },
    };
    Ok(expr)
}

fn ordered<T>(mut items: Vec<(usize, T)>, owner: &Iri, what: &str) -> Result<Vec<T>, IntegrityError> {
    items.sort_by_key(|(i, _)| *i);
    if items.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
        return Err(malformed(owner, format!("{what} positions are not numbered 0..n")));
    }
    Ok(items.into_iter().map(|(_, x)| x).collect())
}

/// Reads a model back from its projection. Every triple must belong to some
/// entity; leftovers are reported as [`IntegrityError::Orphaned`].
pub fn triples_to_model(triples: &[Triple]) -> Result<CapabilityModel, IntegrityError> {
    let mut r = Reader::new(triples);
    let subjects: Vec<&Iri> = r.by_subject.keys().copied().collect();
    let mut resources = Vec::new();
    let mut capabilities = Vec::new();
    for subject in subjects {
        let types = r.types(subject);
        if types.len() > 1 {
            return Err(IntegrityError::Conflicting {
                subject: subject.clone(),
                predicate: "rdf:type".into(),
            });
        }
        let Some(class) = types.first() else { continue };
        if *class == cap("Resource") {
            let name = r.string(subject, "name")?;
            resources.push(Resource { iri: subject.clone(), name });
            continue;
        }
        let kind = if *class == cap("ProvidedCapability") {
            CapabilityKind::Provided
        } else if *class == cap("RequiredCapability") {
            CapabilityKind::Required
        } else {
            return Err(malformed(subject, format!("unknown class `{class}`")));
        };
        let description = r.string(subject, "description")?;
        let resource = match r.opt(subject, "providedBy")? {
            None => None,
            Some(Term::Iri(i)) => Some(i.clone()),
            Some(other) => return Err(malformed(subject, format!("providedBy holds {other}"))),
        };
        let mut roles = Vec::new();
        for (link, role) in [("hasInput", Role::Input), ("hasOutput", Role::Output)] {
            let mut props = Vec::new();
            for p in r.all(subject, link) {
                let p = p.as_iri().ok_or_else(|| malformed(subject, format!("{link} holds a literal")))?;
                props.push(read_property(&mut r, p, role)?);
            }
            roles.push(ordered(props, subject, "property")?);
        }
        let outputs = roles.pop().unwrap();
        let inputs = roles.pop().unwrap();
        let mut constraints = Vec::new();
        for k in r.all(subject, "hasConstraint") {
            let k = k.as_iri().ok_or_else(|| malformed(subject, "hasConstraint holds a literal".into()))?;
            let ordinal = r.index(k, "ordinal")?;
            let root = r.iri(k, "expression")?;
            constraints.push((ordinal, read_expr(&mut r, &root, 0)?));
        }
        let constraints = ordered(constraints, subject, "constraint")?;
        capabilities.push(Capability {
            iri: subject.clone(),
            kind,
            description,
            resource,
            inputs,
            outputs,
            constraints,
        });
    }
    let leftovers: Vec<&Triple> = triples.iter().filter(|t| !r.consumed.contains(t)).collect();
    if let Some(first) = leftovers.first() {
        return Err(IntegrityError::Orphaned { count: leftovers.len(), first: first.to_string() });
    }
    let model = CapabilityModel { resources, capabilities };
    model.validate().map_err(|e| IntegrityError::Invalid(e.to_string()))?;
    Ok(model)
}

/// Sorts model lists into the canonical order used by triple reads
/// (resources and capabilities by IRI), for comparison up to list ordering.
pub fn canonical(model: &CapabilityModel) -> CapabilityModel {
    let mut m = model.clone();
    m.resources.sort();
    m.capabilities.sort_by(|a, b| a.iri.cmp(&b.iri));
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn one_capability_model() -> CapabilityModel {
        let depth = iri("urn:t:Drill/depth");
        CapabilityModel {
            resources: vec![Resource { iri: iri("urn:t:DrillingModule"), name: "DrillingModule".into() }],
            capabilities: vec![Capability {
                iri: iri("urn:t:Drill"),
                kind: CapabilityKind::Provided,
                description: "Drill".into(),
                resource: Some(iri("urn:t:DrillingModule")),
                inputs: vec![],
                outputs: vec![PropertyDecl {
                    iri: depth.clone(),
                    name: "depth".into(),
                    datatype: Datatype::Real,
                    role: Role::Output,
                    subject: Subject::Product,
                    value: PropertyValue::Variable,
                    unit: Some("mm".into()),
                }],
                constraints: vec![ConstraintExpr::range(&depth, Literal::real("5"), Literal::real("10"))],
            }],
        }
    }

    #[test]
    fn projection_size_matches_hand_count() {
        // resource: type + name = 2
        // capability: type + description + providedBy = 3
        // property: hasOutput + name + datatype + subject + position + unit = 6
        // constraint: hasConstraint + ordinal + expression = 3
        // expression `and(ge(prop, lit), le(prop, lit))`:
        //   7 nodes, each with one `op` triple = 7
        //   6 child edges, each `arg` + `argIndex` = 12
        //   2 prop nodes with `ref` + 2 literal nodes with `literal` = 4
        // total = 2 + 3 + 6 + 3 + 7 + 12 + 4 = 37
        assert_eq!(model_to_triples(&one_capability_model()).len(), 37);
    }

    #[test]
    fn read_inverts_projection() {
        let m = one_capability_model();
        let back = triples_to_model(&model_to_triples(&m)).unwrap();
        assert_eq!(canonical(&back), canonical(&m));
    }

    #[test]
    fn empty_model_has_no_triples() {
        assert!(model_to_triples(&CapabilityModel::default()).is_empty());
        assert_eq!(triples_to_model(&[]).unwrap(), CapabilityModel::default());
    }

    #[test]
    fn dangling_reference_is_surfaced() {
        let m = one_capability_model();
        let triples: Vec<Triple> = model_to_triples(&m)
            .into_iter()
            .filter(|t| t.subject != iri("urn:t:Drill/depth") && t.object != Term::Iri(iri("urn:t:Drill/depth")) || t.predicate == cap("ref"))
            .collect();
        let err = triples_to_model(&triples).unwrap_err();
        assert!(matches!(err, IntegrityError::Invalid(ref s) if s.contains("urn:t:Drill/depth")), "{err}");
    }

    #[test]
    fn stray_triples_are_reported() {
        let mut triples = model_to_triples(&one_capability_model());
        triples.push(Triple::new(iri("urn:t:x"), cap("name"), Term::string("x")));
        assert!(matches!(triples_to_model(&triples), Err(IntegrityError::Orphaned { count: 1, .. })));
    }
}
