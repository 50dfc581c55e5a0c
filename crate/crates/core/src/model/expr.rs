//! Constraint expression trees: type checking and evaluation.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use super::literal::{Datatype, Decimal, Literal};
use super::Iri;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmpOp {
    Le,
    Lt,
    Ge,
    Gt,
    Eq,
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Le, CmpOp::Lt, CmpOp::Ge, CmpOp::Gt, CmpOp::Eq, CmpOp::Ne];

    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Le => "le",
            CmpOp::Lt => "lt",
            CmpOp::Ge => "ge",
            CmpOp::Gt => "gt",
            CmpOp::Eq => "eq",
            CmpOp::Ne => "ne",
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Le => "<=",
            CmpOp::Lt => "<",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
        }
    }

    pub fn parse(s: &str) -> Option<CmpOp> {
        CmpOp::ALL.into_iter().find(|op| op.as_str() == s)
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    pub fn holds(self, ordering: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Le => ordering != Greater,
            CmpOp::Lt => ordering == Less,
            CmpOp::Ge => ordering != Less,
            CmpOp::Gt => ordering == Greater,
            CmpOp::Eq => ordering == Equal,
            CmpOp::Ne => ordering != Equal,
        }
    }
}

/// Comparison node payload.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Comparison {
    pub op: CmpOp,
    pub lhs: Box<ConstraintExpr>,
    pub rhs: Box<ConstraintExpr>,
}

/// A boolean/arithmetic constraint over the properties of one capability.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintExpr {
    Literal(Literal),
    Prop(Iri),
    Neg(Box<ConstraintExpr>),
    Add(Box<ConstraintExpr>, Box<ConstraintExpr>),
    Sub(Box<ConstraintExpr>, Box<ConstraintExpr>),
    Mul(Box<ConstraintExpr>, Box<ConstraintExpr>),
    Cmp(Comparison),
    And(Vec<ConstraintExpr>),
    Or(Vec<ConstraintExpr>),
    Not(Box<ConstraintExpr>),
}

impl ConstraintExpr {
    pub fn lit(literal: Literal) -> Self {
        ConstraintExpr::Literal(literal)
    }

    pub fn prop(iri: &Iri) -> Self {
        ConstraintExpr::Prop(iri.clone())
    }

    pub fn cmp(op: CmpOp, lhs: ConstraintExpr, rhs: ConstraintExpr) -> Self {
        ConstraintExpr::Cmp(Comparison { op, lhs: Box::new(lhs), rhs: Box::new(rhs) })
    }

    /// `low <= prop <= high`, both bounds inclusive.
    pub fn range(prop: &Iri, low: Literal, high: Literal) -> Self {
        ConstraintExpr::And(vec![
            ConstraintExpr::cmp(CmpOp::Ge, ConstraintExpr::prop(prop), ConstraintExpr::lit(low)),
            ConstraintExpr::cmp(CmpOp::Le, ConstraintExpr::prop(prop), ConstraintExpr::lit(high)),
        ])
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ConstraintExpr::Literal(_) => "literal",
            ConstraintExpr::Prop(_) => "prop",
            ConstraintExpr::Neg(_) => "neg",
            ConstraintExpr::Add(..) => "add",
            ConstraintExpr::Sub(..) => "sub",
            ConstraintExpr::Mul(..) => "mul",
            ConstraintExpr::Cmp(_) => "cmp",
            ConstraintExpr::And(_) => "and",
            ConstraintExpr::Or(_) => "or",
            ConstraintExpr::Not(_) => "not",
        }
    }

    /// Direct children in a fixed order.
    pub fn children(&self) -> Vec<&ConstraintExpr> {
        match self {
            ConstraintExpr::Literal(_) | ConstraintExpr::Prop(_) => vec![],
            ConstraintExpr::Neg(e) | ConstraintExpr::Not(e) => vec![e],
            ConstraintExpr::Add(a, b) | ConstraintExpr::Sub(a, b) | ConstraintExpr::Mul(a, b) => {
                vec![a, b]
            }
            ConstraintExpr::Cmp(c) => vec![&c.lhs, &c.rhs],
            ConstraintExpr::And(xs) | ConstraintExpr::Or(xs) => xs.iter().collect(),
        }
    }

    /// All property IRIs referenced anywhere in the tree.
    pub fn prop_refs(&self) -> Vec<&Iri> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut Vec<&'a Iri>) {
        if let ConstraintExpr::Prop(iri) = self {
            out.push(iri);
        }
        for child in self.children() {
            child.collect_refs(out);
        }
    }

    pub fn is_ground(&self) -> bool {
        self.prop_refs().is_empty()
    }

    /// Renders the expression with property names substituted for IRIs.
    pub fn render(&self, names: &dyn Fn(&Iri) -> String) -> String {
        match self {
            ConstraintExpr::Literal(l) => l.to_string(),
            ConstraintExpr::Prop(iri) => names(iri),
            ConstraintExpr::Neg(e) => format!("-{}", e.render(names)),
            ConstraintExpr::Add(a, b) => format!("({} + {})", a.render(names), b.render(names)),
            ConstraintExpr::Sub(a, b) => format!("({} - {})", a.render(names), b.render(names)),
            ConstraintExpr::Mul(a, b) => format!("({} * {})", a.render(names), b.render(names)),
            ConstraintExpr::Cmp(c) => {
                format!("{} {} {}", c.lhs.render(names), c.op.symbol(), c.rhs.render(names))
            }
            ConstraintExpr::And(xs) => join(xs, " and ", names),
            ConstraintExpr::Or(xs) => format!("({})", join(xs, " or ", names)),
            ConstraintExpr::Not(e) => format!("not ({})", e.render(names)),
        }
    }
}

fn join(xs: &[ConstraintExpr], sep: &str, names: &dyn Fn(&Iri) -> String) -> String {
    xs.iter().map(|x| x.render(names)).collect::<Vec<_>>().join(sep)
}

/// Why an expression failed to type-check. `node` is a path such as
/// `and[1].cmp.lhs` locating the offending node.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TypeError {
    #[error("dangling property reference `{iri}` at {node}")]
    Dangling { node: String, iri: Iri },
    #[error("type mismatch at {node}: {detail}")]
    Mismatch { node: String, detail: String },
    #[error("malformed literal at {node}: {detail}")]
    BadLiteral { node: String, detail: String },
}

/// Type-checks `expr` against `scope` (property IRI -> datatype). Passing
/// expressions are boolean-rooted with every reference resolved.
pub fn typecheck_constraint(
    expr: &ConstraintExpr,
    scope: &BTreeMap<Iri, Datatype>,
) -> Result<(), TypeError> {
    let root = infer(expr, scope, "")?;
    if root != Datatype::Boolean {
        return Err(TypeError::Mismatch {
            node: expr.kind().to_string(),
            detail: format!("constraint root must be boolean, found {root}"),
        });
    }
    Ok(())
}

fn path(parent: &str, segment: &str) -> String {
    if parent.is_empty() {
        segment.to_string()
    } else {
        format!("{parent}.{segment}")
    }
}

fn infer(
    expr: &ConstraintExpr,
    scope: &BTreeMap<Iri, Datatype>,
    at: &str,
) -> Result<Datatype, TypeError> {
    let here = path(at, expr.kind());
    let mismatch = |detail: String| TypeError::Mismatch { node: here.clone(), detail };
    match expr {
        ConstraintExpr::Literal(l) => {
            if !l.is_well_formed() {
                return Err(TypeError::BadLiteral { node: here, detail: format!("{l}") });
            }
            Ok(l.datatype())
        }
        ConstraintExpr::Prop(iri) => scope
            .get(iri)
            .copied()
            .ok_or_else(|| TypeError::Dangling { node: here.clone(), iri: iri.clone() }),
        ConstraintExpr::Neg(e) => {
            let t = infer(e, scope, &here)?;
            if !t.is_numeric() {
                return Err(mismatch(format!("negation of {t}")));
            }
            Ok(t)
        }
        ConstraintExpr::Add(a, b) | ConstraintExpr::Sub(a, b) | ConstraintExpr::Mul(a, b) => {
            let ta = infer(a, scope, &format!("{here}.lhs"))?;
            let tb = infer(b, scope, &format!("{here}.rhs"))?;
            if !ta.is_numeric() || !tb.is_numeric() {
                return Err(mismatch(format!("arithmetic over {ta} and {tb}")));
            }
            if ta != tb {
                return Err(mismatch(format!("mixed operands {ta} and {tb}")));
            }
            Ok(ta)
        }
        ConstraintExpr::Cmp(c) => {
            let node = format!("{here}[{}]", c.op.as_str());
            let ta = infer(&c.lhs, scope, &format!("{node}.lhs"))?;
            let tb = infer(&c.rhs, scope, &format!("{node}.rhs"))?;
            if ta != tb {
                return Err(TypeError::Mismatch {
                    node,
                    detail: format!("comparison between {ta} and {tb}"),
                });
            }
            if c.op.is_ordering() && !ta.is_numeric() {
                return Err(TypeError::Mismatch {
                    node,
                    detail: format!("ordering comparison over {ta}"),
                });
            }
            Ok(Datatype::Boolean)
        }
        ConstraintExpr::And(xs) | ConstraintExpr::Or(xs) => {
            if xs.is_empty() {
                return Err(mismatch("empty connective".into()));
            }
            for (i, x) in xs.iter().enumerate() {
                let t = infer(x, scope, &format!("{here}[{i}]"))?;
                if t != Datatype::Boolean {
                    return Err(mismatch(format!("operand {i} is {t}")));
                }
            }
            Ok(Datatype::Boolean)
        }
        ConstraintExpr::Not(e) => {
            let t = infer(e, scope, &here)?;
            if t != Datatype::Boolean {
                return Err(mismatch(format!("negation of {t}")));
            }
            Ok(Datatype::Boolean)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound property `{0}`")]
    Unbound(Iri),
    #[error("ill-typed expression: {0}")]
    IllTyped(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Num(BigRational, Datatype),
    Bool(bool),
    Str(String),
}

/// Evaluates a type-checked constraint under a complete binding.
pub fn eval_constraint(
    expr: &ConstraintExpr,
    binding: &BTreeMap<Iri, Literal>,
) -> Result<bool, EvalError> {
    match eval(expr, binding)? {
        Value::Bool(b) => Ok(b),
        _ => Err(EvalError::IllTyped("constraint root is not boolean".into())),
    }
}

fn num(v: Value) -> Result<(BigRational, Datatype), EvalError> {
    match v {
        Value::Num(n, t) => Ok((n, t)),
        other => Err(EvalError::IllTyped(format!("expected number, got {other:?}"))),
    }
}

fn boolean(v: Value) -> Result<bool, EvalError> {
    match v {
        Value::Bool(b) => Ok(b),
        other => Err(EvalError::IllTyped(format!("expected boolean, got {other:?}"))),
    }
}

fn literal_value(l: &Literal) -> Value {
    match l {
        Literal::Real(d) => Value::Num(d.0.clone(), Datatype::Real),
        Literal::Integer(d) => Value::Num(d.0.clone(), Datatype::Integer),
        Literal::Boolean(b) => Value::Bool(*b),
        Literal::String(s) => Value::Str(s.clone()),
    }
}

fn eval(expr: &ConstraintExpr, binding: &BTreeMap<Iri, Literal>) -> Result<Value, EvalError> {
    Ok(match expr {
        ConstraintExpr::Literal(l) => literal_value(l),
        ConstraintExpr::Prop(iri) => {
            literal_value(binding.get(iri).ok_or_else(|| EvalError::Unbound(iri.clone()))?)
        }
        ConstraintExpr::Neg(e) => {
            let (n, t) = num(eval(e, binding)?)?;
            Value::Num(-n, t)
        }
        ConstraintExpr::Add(a, b) | ConstraintExpr::Sub(a, b) | ConstraintExpr::Mul(a, b) => {
            let (x, t) = num(eval(a, binding)?)?;
            let (y, _) = num(eval(b, binding)?)?;
            let r = match expr {
                ConstraintExpr::Add(..) => x + y,
                ConstraintExpr::Sub(..) => x - y,
                _ => x * y,
            };
            Value::Num(r, t)
        }
        ConstraintExpr::Cmp(c) => {
            let l = eval(&c.lhs, binding)?;
            let r = eval(&c.rhs, binding)?;
            let ordering = match (&l, &r) {
                (Value::Num(x, _), Value::Num(y, _)) => x.cmp(y),
                (Value::Bool(x), Value::Bool(y)) if !c.op.is_ordering() => x.cmp(y),
                (Value::Str(x), Value::Str(y)) if !c.op.is_ordering() => x.cmp(y),
                _ => {
                    return Err(EvalError::IllTyped(format!(
                        "cannot compare {l:?} with {r:?} using {}",
                        c.op.as_str()
                    )))
                }
            };
            Value::Bool(c.op.holds(ordering))
        }
        ConstraintExpr::And(xs) => {
            let mut all = true;
            for x in xs {
                all &= boolean(eval(x, binding)?)?;
            }
            Value::Bool(all)
        }
        ConstraintExpr::Or(xs) => {
            let mut any = false;
            for x in xs {
                any |= boolean(eval(x, binding)?)?;
            }
            Value::Bool(any)
        }
        ConstraintExpr::Not(e) => Value::Bool(!boolean(eval(e, binding)?)?),
    })
}

/// Converts an evaluated numeric value back into a literal of `datatype`.
pub fn number_literal(datatype: Datatype, value: BigRational) -> Literal {
    match datatype {
        Datatype::Integer => Literal::Integer(Decimal(value)),
        _ => Literal::Real(Decimal(value)),
    }
}

impl fmt::Display for ConstraintExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&|iri: &Iri| iri.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn depth() -> Iri {
        Iri::new("urn:test:depth").unwrap()
    }

    fn station() -> Iri {
        Iri::new("urn:test:stationId").unwrap()
    }

    fn range() -> ConstraintExpr {
        ConstraintExpr::range(&depth(), Literal::real("5"), Literal::real("10"))
    }

    fn bind(iri: Iri, lit: Literal) -> BTreeMap<Iri, Literal> {
        BTreeMap::from([(iri, lit)])
    }

    #[test]
    fn range_typechecks_over_real_scope() {
        let scope = BTreeMap::from([(depth(), Datatype::Real)]);
        typecheck_constraint(&range(), &scope).unwrap();
    }

    #[test]
    fn add_with_boolean_is_a_mismatch_at_add() {
        let scope = BTreeMap::from([(depth(), Datatype::Real)]);
        let bad = ConstraintExpr::cmp(
            CmpOp::Ge,
            ConstraintExpr::Add(
                Box::new(ConstraintExpr::prop(&depth())),
                Box::new(ConstraintExpr::lit(Literal::Boolean(true))),
            ),
            ConstraintExpr::lit(Literal::real("1")),
        );
        match typecheck_constraint(&bad, &scope) {
            Err(TypeError::Mismatch { node, .. }) => assert!(node.ends_with("add"), "{node}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn station_equality_typechecks() {
        let scope = BTreeMap::from([(station(), Datatype::Integer)]);
        let eq = ConstraintExpr::cmp(
            CmpOp::Eq,
            ConstraintExpr::prop(&station()),
            ConstraintExpr::lit(Literal::integer(3)),
        );
        typecheck_constraint(&eq, &scope).unwrap();
    }

    #[test]
    fn dangling_reference_is_reported() {
        let err = typecheck_constraint(&range(), &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, TypeError::Dangling { ref iri, .. } if *iri == depth()));
    }

    #[test]
    fn non_boolean_root_rejected() {
        let scope = BTreeMap::from([(depth(), Datatype::Real)]);
        assert!(typecheck_constraint(&ConstraintExpr::prop(&depth()), &scope).is_err());
    }

    #[test]
    fn ordering_over_strings_rejected() {
        let s = Iri::new("urn:test:material").unwrap();
        let scope = BTreeMap::from([(s.clone(), Datatype::String)]);
        let e = ConstraintExpr::cmp(
            CmpOp::Lt,
            ConstraintExpr::prop(&s),
            ConstraintExpr::lit(Literal::String("a".into())),
        );
        assert!(typecheck_constraint(&e, &scope).is_err());
    }

    #[test]
    fn range_boundaries_are_inclusive() {
        assert!(!eval_constraint(&range(), &bind(depth(), Literal::real("2"))).unwrap());
        assert!(eval_constraint(&range(), &bind(depth(), Literal::real("5"))).unwrap());
        assert!(eval_constraint(&range(), &bind(depth(), Literal::real("10"))).unwrap());
        assert!(!eval_constraint(&range(), &bind(depth(), Literal::real("10.001"))).unwrap());
    }

    #[test]
    fn station_mismatch_is_false() {
        let eq = ConstraintExpr::cmp(
            CmpOp::Eq,
            ConstraintExpr::prop(&station()),
            ConstraintExpr::lit(Literal::integer(15)),
        );
        assert!(!eval_constraint(&eq, &bind(station(), Literal::integer(3))).unwrap());
    }

    #[test]
    fn unbound_reference_errors() {
        assert_eq!(
            eval_constraint(&range(), &BTreeMap::new()),
            Err(EvalError::Unbound(depth()))
        );
    }

    #[test]
    fn arithmetic_is_exact() {
        // 0.1 + 0.2 == 0.3 holds exactly
        let e = ConstraintExpr::cmp(
            CmpOp::Eq,
            ConstraintExpr::Add(
                Box::new(ConstraintExpr::lit(Literal::real("0.1"))),
                Box::new(ConstraintExpr::prop(&depth())),
            ),
            ConstraintExpr::lit(Literal::real("0.3")),
        );
        assert!(eval_constraint(&e, &bind(depth(), Literal::real("0.2"))).unwrap());
    }

    #[test]
    fn json_shape_is_tagged() {
        let json = serde_json::to_value(range()).unwrap();
        assert_eq!(json["and"][0]["cmp"]["op"], "ge");
        assert_eq!(json["and"][0]["cmp"]["lhs"]["prop"], "urn:test:depth");
        assert_eq!(json["and"][0]["cmp"]["rhs"]["literal"]["real"], "5");
    }
}
