//! Typed capability domain: resources, provided and required capabilities,
//! their properties, and constraint expressions.
//!
//! Two document formats are supported. The JSON form mirrors the types in
//! this module field for field. The Turtle subset is the triple projection
//! described in [`rdf`], written with the `cap:` vocabulary.
//!
//! Constraint ordinals: a capability's explicit constraints are numbered
//! `0..n` in list order. Every property bound to a constant contributes one
//! implicit equality constraint, numbered `n, n+1, ...` in declaration order
//! (inputs first, then outputs). Both the planner and the diagnosis layer
//! address constraints through these ordinals.

mod expr;
pub(crate) mod lexer;
mod literal;
pub mod rdf;
pub mod turtle;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use expr::{
    eval_constraint, number_literal, typecheck_constraint, CmpOp, Comparison, ConstraintExpr,
    EvalError, TypeError,
};
pub use literal::{Datatype, Decimal, Literal};

/// Absolute IRI identifying a model entity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Iri(String);

impl Iri {
    /// Accepts `scheme:rest` strings without whitespace or angle brackets.
    pub fn new(value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        let valid_scheme = value
            .split_once(':')
            .map(|(scheme, rest)| {
                !scheme.is_empty()
                    && !rest.is_empty()
                    && scheme.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
                    && scheme.chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c))
            })
            .unwrap_or(false);
        if !valid_scheme || value.chars().any(|c| c.is_whitespace() || "<>\"{}|\\^`".contains(c)) {
            return Err(ModelError::InvalidIri(value));
        }
        Ok(Iri(value))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Last path/fragment segment, used for display.
    pub fn local_name(&self) -> &str {
        self.0.rsplit(['#', '/', ':']).next().unwrap_or(&self.0)
    }
}

impl TryFrom<String> for Iri {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Iri::new(value)
    }
}

impl From<Iri> for String {
    fn from(iri: Iri) -> String {
        iri.0
    }
}

impl fmt::Display for Iri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subject {
    Product,
    Information,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropertyValue {
    Variable,
    Constant(Literal),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PropertyDecl {
    pub iri: Iri,
    pub name: String,
    pub datatype: Datatype,
    pub role: Role,
    pub subject: Subject,
    pub value: PropertyValue,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

impl PropertyDecl {
    pub fn constant(&self) -> Option<&Literal> {
        match &self.value {
            PropertyValue::Constant(l) => Some(l),
            PropertyValue::Variable => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CapabilityKind {
    Provided,
    Required,
}

/// Stable reference to one constraint of a capability.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConstraintId {
    pub capability: Iri,
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capability {
    pub iri: Iri,
    pub kind: CapabilityKind,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<Iri>,
    #[serde(default)]
    pub inputs: Vec<PropertyDecl>,
    #[serde(default)]
    pub outputs: Vec<PropertyDecl>,
    #[serde(default)]
    pub constraints: Vec<ConstraintExpr>,
}

impl Capability {
    pub fn properties(&self) -> impl Iterator<Item = &PropertyDecl> {
        self.inputs.iter().chain(self.outputs.iter())
    }

    pub fn property(&self, iri: &Iri) -> Option<&PropertyDecl> {
        self.properties().find(|p| &p.iri == iri)
    }

    pub fn scope(&self) -> BTreeMap<Iri, Datatype> {
        self.properties().map(|p| (p.iri.clone(), p.datatype)).collect()
    }

    /// Explicit constraints followed by the implicit equalities of
    /// constant-bound properties, with their ordinals.
    pub fn all_constraints(&self) -> Vec<(usize, ConstraintExpr)> {
        let mut out: Vec<(usize, ConstraintExpr)> =
            self.constraints.iter().cloned().enumerate().collect();
        let mut next = out.len();
        for prop in self.properties() {
            if let Some(value) = prop.constant() {
                out.push((
                    next,
                    ConstraintExpr::cmp(
                        CmpOp::Eq,
                        ConstraintExpr::prop(&prop.iri),
                        ConstraintExpr::lit(value.clone()),
                    ),
                ));
                next += 1;
            }
        }
        out
    }

    pub fn constraint(&self, ordinal: usize) -> Option<ConstraintExpr> {
        self.all_constraints().into_iter().find(|(o, _)| *o == ordinal).map(|(_, e)| e)
    }

    /// The property bound by an implicit constraint, if `ordinal` is one.
    pub fn implicit_property(&self, ordinal: usize) -> Option<&PropertyDecl> {
        let first = self.constraints.len();
        if ordinal < first {
            return None;
        }
        self.properties().filter(|p| p.constant().is_some()).nth(ordinal - first)
    }

    /// Renders constraint `ordinal` using property names.
    pub fn render_constraint(&self, ordinal: usize) -> Option<String> {
        let expr = self.constraint(ordinal)?;
        Some(expr.render(&|iri: &Iri| self.display_name(iri)))
    }

    /// `name` qualified with its role when the name is used for both roles.
    pub fn display_name(&self, iri: &Iri) -> String {
        match self.property(iri) {
            Some(p) => {
                let shared = self.properties().filter(|q| q.name == p.name).count() > 1;
                if shared {
                    let role = if p.role == Role::Input { "in" } else { "out" };
                    format!("{}.{}", role, p.name)
                } else {
                    p.name.clone()
                }
            }
            None => iri.local_name().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Resource {
    pub iri: Iri,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CapabilityModel {
    pub resources: Vec<Resource>,
    pub capabilities: Vec<Capability>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid IRI `{0}`")]
    InvalidIri(String),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid model: {0}")]
    Validation(String),
    #[error("constraint {ordinal} of `{capability}`: {error}")]
    Constraint { capability: Iri, ordinal: usize, error: TypeError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFormat {
    TurtleSubset,
    JsonForm,
}

impl CapabilityModel {
    pub fn capability(&self, iri: &Iri) -> Option<&Capability> {
        self.capabilities.iter().find(|c| &c.iri == iri)
    }

    pub fn resource(&self, iri: &Iri) -> Option<&Resource> {
        self.resources.iter().find(|r| &r.iri == iri)
    }

    pub fn provided(&self) -> impl Iterator<Item = &Capability> {
        self.capabilities.iter().filter(|c| c.kind == CapabilityKind::Provided)
    }

    pub fn required(&self) -> impl Iterator<Item = &Capability> {
        self.capabilities.iter().filter(|c| c.kind == CapabilityKind::Required)
    }

    /// Every IRI declared by the model.
    pub fn iris(&self) -> BTreeSet<&Iri> {
        let mut out = BTreeSet::new();
        out.extend(self.resources.iter().map(|r| &r.iri));
        for c in &self.capabilities {
            out.insert(&c.iri);
            out.extend(c.properties().map(|p| &p.iri));
        }
        out
    }

    /// Checks every model invariant; the first violation is reported.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Validation(msg));
        let mut seen = BTreeSet::new();
        let mut check_unique = |iri: &Iri| {
            if seen.insert(iri.clone()) {
                Ok(())
            } else {
                Err(ModelError::Validation(format!("duplicate IRI `{iri}`")))
            }
        };
        for r in &self.resources {
            check_unique(&r.iri)?;
        }
        for c in &self.capabilities {
            check_unique(&c.iri)?;
            for p in c.properties() {
                check_unique(&p.iri)?;
            }
        }
        for c in &self.capabilities {
            match (c.kind, &c.resource) {
                (CapabilityKind::Provided, None) => {
                    return bad(format!("provided capability `{}` has no resource", c.iri))
                }
                (CapabilityKind::Provided, Some(r)) if self.resource(r).is_none() => {
                    return bad(format!("capability `{}` references unknown resource `{r}`", c.iri))
                }
                (CapabilityKind::Required, Some(_)) => {
                    return bad(format!("required capability `{}` must not name a resource", c.iri))
                }
                _ => {}
            }
            for (list, role) in [(&c.inputs, Role::Input), (&c.outputs, Role::Output)] {
                let mut names = BTreeSet::new();
                for p in list.iter() {
                    if p.role != role {
                        return bad(format!("property `{}` listed with the wrong role", p.iri));
                    }
                    if !names.insert(p.name.as_str()) {
                        return bad(format!(
                            "duplicate {role:?} property name `{}` in `{}`",
                            p.name, c.iri
                        ));
                    }
                    if let Some(value) = p.constant() {
                        if value.datatype() != p.datatype || !value.is_well_formed() {
                            return bad(format!(
                                "constant {value} of `{}` does not match datatype {}",
                                p.iri, p.datatype
                            ));
                        }
                    }
                    if p.unit.is_some() && !p.datatype.is_numeric() {
                        return bad(format!("unit on non-numeric property `{}`", p.iri));
                    }
                }
            }
            let scope = c.scope();
            for (ordinal, expr) in c.constraints.iter().enumerate() {
                typecheck_constraint(expr, &scope).map_err(|error| ModelError::Constraint {
                    capability: c.iri.clone(),
                    ordinal,
                    error,
                })?;
            }
        }
        Ok(())
    }
}

/// Parses and validates a model document.
pub fn parse_model(text: &str, format: ModelFormat) -> Result<CapabilityModel, ModelError> {
    let model = match format {
        ModelFormat::JsonForm => serde_json::from_str::<CapabilityModel>(text).map_err(|e| {
            ModelError::Syntax { line: e.line(), column: e.column(), message: e.to_string() }
        })?,
        ModelFormat::TurtleSubset => turtle::parse_turtle_model(text)?.model,
    };
    model.validate()?;
    Ok(model)
}

/// Serializes a model; the output parses back to an equal model.
pub fn serialize_model(model: &CapabilityModel, format: ModelFormat) -> String {
    match format {
        ModelFormat::JsonForm => {
            let mut text = serde_json::to_string_pretty(model).expect("model serializes");
            text.push('\n');
            text
        }
        ModelFormat::TurtleSubset => turtle::write_turtle(&rdf::model_to_triples(model)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DRILL: &str = r#"{
      "resources": [{"iri": "urn:mps:DrillingModule", "name": "DrillingModule"}],
      "capabilities": [{
        "iri": "urn:mps:Drilling",
        "kind": "provided",
        "description": "Drill a hole",
        "resource": "urn:mps:DrillingModule",
        "inputs": [],
        "outputs": [{"iri": "urn:mps:Drilling/depth", "name": "depth", "datatype": "real",
                     "role": "output", "subject": "product", "value": "variable", "unit": "mm"}],
        "constraints": [{"and": [
          {"cmp": {"op": "ge", "lhs": {"prop": "urn:mps:Drilling/depth"}, "rhs": {"literal": {"real": "5"}}}},
          {"cmp": {"op": "le", "lhs": {"prop": "urn:mps:Drilling/depth"}, "rhs": {"literal": {"real": "10"}}}}
        ]}]
      }]
    }"#;

    #[test]
    fn parses_drilling_document() {
        let m = parse_model(DRILL, ModelFormat::JsonForm).unwrap();
        assert_eq!(m.provided().count(), 1);
        assert_eq!(m.capabilities[0].constraints.len(), 1);
    }

    #[test]
    fn empty_document_is_empty_model() {
        let m = parse_model(r#"{"resources":[],"capabilities":[]}"#, ModelFormat::JsonForm).unwrap();
        assert_eq!(m, CapabilityModel::default());
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"resources":[],"capabilities":[]}"#
        );
    }

    #[test]
    fn dangling_prop_ref_is_named() {
        let text = DRILL.replace(r#""lhs": {"prop": "urn:mps:Drilling/depth"}, "rhs": {"literal": {"real": "5"}}"#,
            r#""lhs": {"prop": "urn:mps:Drilling/missing"}, "rhs": {"literal": {"real": "5"}}"#);
        let err = parse_model(&text, ModelFormat::JsonForm).unwrap_err();
        assert!(err.to_string().contains("urn:mps:Drilling/missing"), "{err}");
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_model("{\"resources\": [,]}", ModelFormat::JsonForm).unwrap_err();
        assert!(matches!(err, ModelError::Syntax { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn provided_needs_resource() {
        let text = DRILL.replace(r#""resource": "urn:mps:DrillingModule","#, "");
        assert!(parse_model(&text, ModelFormat::JsonForm).is_err());
    }

    #[test]
    fn implicit_constraints_follow_explicit_ones() {
        let mut m = parse_model(DRILL, ModelFormat::JsonForm).unwrap();
        let cap = &mut m.capabilities[0];
        cap.outputs[0].value = PropertyValue::Constant(Literal::real("7"));
        let all = cap.all_constraints();
        assert_eq!(all.len(), 2);
        assert_eq!(all[1].0, 1);
        assert_eq!(cap.implicit_property(1).unwrap().name, "depth");
        assert_eq!(cap.render_constraint(1).unwrap(), "depth = 7");
        assert_eq!(cap.render_constraint(0).unwrap(), "depth >= 5 and depth <= 10");
    }

    #[test]
    fn iri_validation() {
        assert!(Iri::new("urn:x").is_ok());
        assert!(Iri::new("http://example.org/a#b").is_ok());
        assert!(Iri::new("").is_err());
        assert!(Iri::new("no-scheme").is_err());
        assert!(Iri::new("urn:has space").is_err());
        assert_eq!(Iri::new("http://e.org/x#depth").unwrap().local_name(), "depth");
    }
}
