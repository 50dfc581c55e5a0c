//! Bounded-horizon encoding.
//!
//! Steps are numbered from 0; step `k` moves the product from state `k` to
//! state `k + 1`, so a horizon `h` has states `0..=h`. At every step exactly
//! one provided capability is selected, or the step is a no-op. A selected
//! capability reads its product inputs from the pre-state and writes its
//! product outputs to the post-state; every other product property keeps
//! its value. Goal inputs constrain state 0, goal outputs state `h`.
//!
//! Variable names:
//!
//! ```text
//! st_<name-hash>_<k>             product property value in state k
//! sel_<cap-hash>_s<k>            capability selected at step k
//! noop_s<k>                      step k does nothing
//! p_<cap-hash>_<prop-hash>_s<k>  capability parameter at step k
//! gp_<prop-hash>                 goal information property
//! ```
//!
//! String values become constructors `str__<i>` of an enumeration sort
//! `Str`, with one extra constructor standing for any other string.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::label::{short_hash, EncodingIndex, LabelError, Origin};
use super::{PlanningError, PlanningProblem};
use crate::model::{Capability, CmpOp, ConstraintExpr, Datatype, Iri, Literal, Role, Subject};
use crate::solver::{smt_int, smt_real};

/// Decoded value of the extra string constructor.
pub const OTHER_STRING: &str = "<other>";
const OTHER_CTOR: &str = "str__other";

/// A constraint that diagnosis may switch off.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftGroup {
    Goal(usize),
    Capability(Iri, usize),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EncodeError {
    #[error("non-linear product in constraint {ordinal} of `{capability}`")]
    Nonlinear { capability: Iri, ordinal: usize },
    #[error("product property `{name}` is used with datatypes {first} and {second}")]
    InconsistentDatatype { name: String, first: Datatype, second: Datatype },
    #[error("constraint {ordinal} of `{capability}` refers to `{iri}` outside its scope")]
    Unbound { capability: Iri, ordinal: usize, iri: Iri },
    #[error(transparent)]
    Label(#[from] LabelError),
}

/// How to read variables back out of a model.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VarTable {
    pub horizon: usize,
    /// Provided capabilities in encoding order with their hashes.
    pub capabilities: Vec<(Iri, String)>,
    /// Per capability: variable properties with hash and datatype.
    pub params: BTreeMap<Iri, Vec<(Iri, String, Datatype)>>,
    pub states: BTreeMap<String, (String, Datatype)>,
    /// Goal properties and the variable each one is bound to.
    pub goal: Vec<(Iri, String, Datatype)>,
    pub strings: BTreeMap<String, String>,
}

impl VarTable {
    pub fn sel(&self, cap_hash: &str, step: usize) -> String {
        format!("sel_{cap_hash}_s{step}")
    }

    pub fn noop(&self, step: usize) -> String {
        format!("noop_s{step}")
    }

    pub fn param(&self, cap_hash: &str, prop_hash: &str, step: usize) -> String {
        format!("p_{cap_hash}_{prop_hash}_s{step}")
    }

    pub fn state(&self, name_hash: &str, k: usize) -> String {
        format!("st_{name_hash}_{k}")
    }
}

#[derive(Debug, Clone)]
pub struct Encoding {
    pub script: String,
    pub index: EncodingIndex,
    pub vars: VarTable,
    pub soft_groups: Vec<SoftGroup>,
}

impl Encoding {
    /// Labels emitted for a soft group, across all steps.
    pub fn group_of(&self, origin: &Origin) -> Option<SoftGroup> {
        match origin {
            Origin::GoalConstraint { ordinal } => Some(SoftGroup::Goal(*ordinal)),
            Origin::CapabilityConstraint { capability, ordinal, .. } => {
                Some(SoftGroup::Capability(capability.clone(), *ordinal))
            }
            _ => None,
        }
    }
}

/// Encodes `problem` at `horizon` with every constraint enabled.
pub fn encode(problem: &PlanningProblem, horizon: usize) -> Result<Encoding, PlanningError> {
    encode_with(problem, horizon, &|_| true)
}

/// Encodes `problem`, asserting only the soft groups accepted by `enabled`.
/// Structural and state-update assertions are always present.
pub fn encode_with(
    problem: &PlanningProblem,
    horizon: usize,
    enabled: &dyn Fn(&SoftGroup) -> bool,
) -> Result<Encoding, PlanningError> {
    problem.check()?;
    if horizon == 0 {
        return Err(PlanningError::InvalidProblem("horizon must be at least 1".into()));
    }
    let goal = problem.goal_capability()?;
    let provided: Vec<&Capability> = problem.domain.provided().collect();
    let mut index = EncodingIndex::default();
    let mut vars = VarTable { horizon, ..VarTable::default() };
    let mut prop_hashes: BTreeMap<String, Iri> = BTreeMap::new();
    let mut prop_hash = |iri: &Iri| -> Result<String, EncodeError> {
        let h = short_hash(iri.as_str());
        match prop_hashes.get(&h) {
            Some(other) if other != iri => {
                Err(LabelError::Collision(other.to_string(), iri.to_string()).into())
            }
            _ => {
                prop_hashes.insert(h.clone(), iri.clone());
                Ok(h)
            }
        }
    };

    // Product state: one variable per property name and state.
    let mut names: BTreeMap<String, Datatype> = BTreeMap::new();
    for cap in provided.iter().copied().chain(std::iter::once(goal)) {
        for p in cap.properties().filter(|p| p.subject == Subject::Product) {
            match names.get(&p.name) {
                Some(&d) if d != p.datatype => {
                    return Err(EncodeError::InconsistentDatatype {
                        name: p.name.clone(),
                        first: d,
                        second: p.datatype,
                    }
                    .into())
                }
                _ => {
                    names.insert(p.name.clone(), p.datatype);
                }
            }
        }
    }
    for (name, &dt) in &names {
        let h = index.add_property(name).map_err(EncodeError::from)?;
        vars.states.insert(name.clone(), (h, dt));
    }

    let strings = collect_strings(&provided, goal);
    let uses_strings = names.values().any(|d| *d == Datatype::String)
        || provided.iter().chain(std::iter::once(&goal)).any(|c| c.properties().any(|p| p.datatype == Datatype::String));
    let mut ctor_of: BTreeMap<String, String> = BTreeMap::new();
    for (i, s) in strings.iter().enumerate() {
        let ctor = format!("str__{i}");
        vars.strings.insert(ctor.clone(), s.clone());
        ctor_of.insert(s.clone(), ctor);
    }
    vars.strings.insert(OTHER_CTOR.into(), OTHER_STRING.into());

    for cap in &provided {
        let h = index.add_capability(&cap.iri).map_err(EncodeError::from)?;
        vars.capabilities.push((cap.iri.clone(), h));
        let mut ps = Vec::new();
        for p in cap.properties() {
            ps.push((p.iri.clone(), prop_hash(&p.iri)?, p.datatype));
        }
        vars.params.insert(cap.iri.clone(), ps);
    }

    let mut decls: BTreeMap<String, Datatype> = BTreeMap::new();
    for (h, dt) in vars.states.values() {
        for k in 0..=horizon {
            decls.insert(vars.state(h, k), *dt);
        }
    }
    for k in 0..horizon {
        decls.insert(vars.noop(k), Datatype::Boolean);
        for (iri, ch) in &vars.capabilities {
            decls.insert(vars.sel(ch, k), Datatype::Boolean);
            for (_, ph, dt) in &vars.params[iri] {
                decls.insert(vars.param(ch, ph, k), *dt);
            }
        }
    }
    for p in goal.properties() {
        let var = match p.subject {
            Subject::Product => {
                let (h, _) = &vars.states[&p.name];
                vars.state(h, if p.role == Role::Input { 0 } else { horizon })
            }
            Subject::Information => {
                let v = format!("gp_{}", prop_hash(&p.iri)?);
                decls.insert(v.clone(), p.datatype);
                v
            }
        };
        vars.goal.push((p.iri.clone(), var, p.datatype));
    }

    let mut out = String::new();
    out.push_str("(set-option :produce-unsat-cores true)\n(set-option :produce-models true)\n");
    if uses_strings {
        out.push_str("(declare-datatypes ((Str 0)) ((");
        for i in 0..strings.len() {
            let _ = write!(out, "(str__{i}) ");
        }
        let _ = writeln!(out, "({OTHER_CTOR}))))");
    }
    for (name, dt) in &decls {
        let _ = writeln!(out, "(declare-const {name} {})", sort(*dt));
    }

    let named = |out: &mut String, body: String, origin: Origin| {
        let _ = writeln!(out, "(assert (! {body} :named {}))", origin.label());
    };
    let mut soft_groups = Vec::new();
    let goal_constraints = goal.all_constraints();
    for (ordinal, _) in &goal_constraints {
        soft_groups.push(SoftGroup::Goal(*ordinal));
    }
    let mut cap_groups = Vec::new();
    for cap in &provided {
        for (ordinal, _) in cap.all_constraints() {
            cap_groups.push(SoftGroup::Capability(cap.iri.clone(), ordinal));
        }
    }
    cap_groups.sort();
    soft_groups.extend(cap_groups);

    for k in 0..horizon {
        // Structure: exactly one action, and inputs read the pre-state.
        let mut indicators: Vec<String> =
            vars.capabilities.iter().map(|(_, ch)| format!("(ite {} 1 0)", vars.sel(ch, k))).collect();
        indicators.push(format!("(ite {} 1 0)", vars.noop(k)));
        let mut parts = vec![format!("(= {} 1)", sum(&indicators))];
        for (cap, (_, ch)) in provided.iter().zip(&vars.capabilities) {
            let reads: Vec<String> = cap
                .inputs
                .iter()
                .filter(|p| p.subject == Subject::Product)
                .map(|p| {
                    let ph = param_hash(&vars, &cap.iri, &p.iri);
                    format!("(= {} {})", vars.param(ch, &ph, k), vars.state(&vars.states[&p.name].0, k))
                })
                .collect();
            if !reads.is_empty() {
                parts.push(format!("(=> {} {})", vars.sel(ch, k), conj(&reads)));
            }
        }
        named(&mut out, conj(&parts), Origin::Structural { step: k });

        for (cap, (_, ch)) in provided.iter().zip(&vars.capabilities) {
            for (ordinal, expr) in cap.all_constraints() {
                if !enabled(&SoftGroup::Capability(cap.iri.clone(), ordinal)) {
                    continue;
                }
                let bind = |iri: &Iri| {
                    cap.property(iri).map(|_| vars.param(ch, &param_hash(&vars, &cap.iri, iri), k))
                };
                let body = term(&expr, &bind, &ctor_of).map_err(|e| e.at(&cap.iri, ordinal))?;
                named(
                    &mut out,
                    format!("(=> {} {body})", vars.sel(ch, k)),
                    Origin::CapabilityConstraint { capability: cap.iri.clone(), ordinal, step: k },
                );
            }
        }

        for (name, (nh, _)) in &vars.states {
            let mut value = vars.state(nh, k);
            for (cap, (_, ch)) in provided.iter().zip(&vars.capabilities).rev() {
                if let Some(p) = cap.outputs.iter().find(|p| p.subject == Subject::Product && &p.name == name) {
                    let ph = param_hash(&vars, &cap.iri, &p.iri);
                    value = format!("(ite {} {} {value})", vars.sel(ch, k), vars.param(ch, &ph, k));
                }
            }
            named(
                &mut out,
                format!("(= {} {value})", vars.state(nh, k + 1)),
                Origin::Frame { property: name.clone(), step: k },
            );
        }
    }

    let goal_vars: BTreeMap<&Iri, &String> = vars.goal.iter().map(|(i, v, _)| (i, v)).collect();
    for (ordinal, expr) in &goal_constraints {
        if !enabled(&SoftGroup::Goal(*ordinal)) {
            continue;
        }
        let bind = |iri: &Iri| goal_vars.get(iri).map(|v| (*v).clone());
        let body = term(expr, &bind, &ctor_of).map_err(|e| e.at(&goal.iri, *ordinal))?;
        named(&mut out, body, Origin::GoalConstraint { ordinal: *ordinal });
    }
    out.push_str("(check-sat)\n");
    Ok(Encoding { script: out, index, vars, soft_groups })
}

fn param_hash(vars: &VarTable, cap: &Iri, prop: &Iri) -> String {
    vars.params[cap].iter().find(|(i, _, _)| i == prop).map(|(_, h, _)| h.clone()).expect("declared parameter")
}

fn collect_strings(provided: &[&Capability], goal: &Capability) -> BTreeSet<String> {
    fn walk(e: &ConstraintExpr, out: &mut BTreeSet<String>) {
        if let ConstraintExpr::Literal(Literal::String(s)) = e {
            out.insert(s.clone());
        }
        for c in e.children() {
            walk(c, out);
        }
    }
    let mut out = BTreeSet::new();
    for cap in provided.iter().copied().chain(std::iter::once(goal)) {
        for (_, e) in cap.all_constraints() {
            walk(&e, &mut out);
        }
    }
    out.remove(OTHER_STRING);
    out
}

fn sort(dt: Datatype) -> &'static str {
    match dt {
        Datatype::Real => "Real",
        Datatype::Integer => "Int",
        Datatype::Boolean => "Bool",
        Datatype::String => "Str",
    }
}

fn sum(terms: &[String]) -> String {
    if terms.len() == 1 {
        terms[0].clone()
    } else {
        format!("(+ {})", terms.join(" "))
    }
}

fn conj(parts: &[String]) -> String {
    match parts {
        [] => "true".into(),
        [one] => one.clone(),
        _ => format!("(and {})", parts.join(" ")),
    }
}

enum TermError {
    Nonlinear,
    Unbound(Iri),
}

impl TermError {
    fn at(self, capability: &Iri, ordinal: usize) -> PlanningError {
        let capability = capability.clone();
        match self {
            TermError::Nonlinear => EncodeError::Nonlinear { capability, ordinal },
            TermError::Unbound(iri) => EncodeError::Unbound { capability, ordinal, iri },
        }
        .into()
    }
}

pub(crate) fn literal_term(l: &Literal, ctor_of: &BTreeMap<String, String>) -> String {
    match l {
        Literal::Real(d) => smt_real(&d.0),
        Literal::Integer(d) => smt_int(&d.0),
        Literal::Boolean(b) => b.to_string(),
        Literal::String(s) => ctor_of.get(s).cloned().unwrap_or_else(|| OTHER_CTOR.into()),
    }
}

fn term(
    e: &ConstraintExpr,
    bind: &dyn Fn(&Iri) -> Option<String>,
    ctor_of: &BTreeMap<String, String>,
) -> Result<String, TermError> {
    let t = |x: &ConstraintExpr| term(x, bind, ctor_of);
    Ok(match e {
        ConstraintExpr::Literal(l) => literal_term(l, ctor_of),
        ConstraintExpr::Prop(iri) => bind(iri).ok_or_else(|| TermError::Unbound(iri.clone()))?,
        ConstraintExpr::Neg(x) => format!("(- {})", t(x)?),
        ConstraintExpr::Add(a, b) => format!("(+ {} {})", t(a)?, t(b)?),
        ConstraintExpr::Sub(a, b) => format!("(- {} {})", t(a)?, t(b)?),
        ConstraintExpr::Mul(a, b) => {
            if !a.is_ground() && !b.is_ground() {
                return Err(TermError::Nonlinear);
            }
            format!("(* {} {})", t(a)?, t(b)?)
        }
        ConstraintExpr::Cmp(c) => {
            let (l, r) = (t(&c.lhs)?, t(&c.rhs)?);
            match c.op {
                CmpOp::Ne => format!("(not (= {l} {r}))"),
                op => format!("({} {l} {r})", op.symbol()),
            }
        }
        ConstraintExpr::And(xs) => {
            let parts = xs.iter().map(t).collect::<Result<Vec<_>, _>>()?;
            conj(&parts)
        }
        ConstraintExpr::Or(xs) => {
            let parts = xs.iter().map(t).collect::<Result<Vec<_>, _>>()?;
            match parts.as_slice() {
                [] => "false".into(),
                [one] => one.clone(),
                _ => format!("(or {})", parts.join(" ")),
            }
        }
        ConstraintExpr::Not(x) => format!("(not {})", t(x)?),
    })
}
