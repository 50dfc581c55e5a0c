use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::mapper::CoreMapping;
use super::{react, AgentContext, AgentError, AgentResult, TraceEntry};
use crate::model::rdf::{cap, model_to_triples, Term, Triple};
use crate::model::{Capability, CapabilityModel, Datatype, Iri, Literal, PropertyDecl, Subject};
use crate::smt::Conflict;
use crate::store::{QueryForm, QueryKind};

/// One modification proposed by the analyzer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    SetValue { property: Iri, value: Literal },
    RemoveCapability { capability: Iri },
    Update { query: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedConflict {
    pub description: String,
    pub origins: Vec<String>,
    pub capabilities: Vec<Iri>,
}

/// Before/after of a constant changed by a proposal, for the approval view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueChange {
    pub property: Iri,
    pub name: String,
    pub capability: Iri,
    pub before: Option<Literal>,
    pub after: Literal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationProposal {
    pub conflicts: Vec<ProposedConflict>,
    pub edits: Vec<Edit>,
    /// The update requests the repair agent will run, in order.
    pub mutations: Vec<String>,
    pub rationale: String,
    pub resolvable: bool,
    pub modifies_provided: bool,
    pub diff: Vec<ValueChange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "situation", rename_all = "snake_case")]
pub enum AnalysisInput {
    /// The goal is infeasible; `conflict` is the diagnosed conflict and
    /// `mapping` its mapped origins.
    Unsat { goal: Iri, mapping: CoreMapping, conflict: Conflict },
    /// A runtime report affecting `affected`; `goal` is the request planned
    /// last in the session, if any.
    Failure { report: String, goal: Option<Iri>, affected: Vec<Iri> },
}

impl AnalysisInput {
    fn goal(&self) -> Option<&Iri> {
        match self {
            AnalysisInput::Unsat { goal, .. } => Some(goal),
            AnalysisInput::Failure { goal, .. } => goal.as_ref(),
        }
    }
}

fn task_text(model: &CapabilityModel, input: &AnalysisInput) -> String {
    let mut out = String::new();
    match input {
        AnalysisInput::Unsat { goal, mapping, .. } => {
            out.push_str("situation: infeasible\n");
            let desc = model.capability(goal).map(|c| c.description.as_str()).unwrap_or_default();
            let _ = writeln!(out, "goal: {goal} \"{desc}\"");
            for e in &mapping.entries {
                let _ = writeln!(out, "constraint {}#{}: {}", e.capability, e.ordinal, e.constraint);
                let _ = writeln!(out, "  labels: {}", e.labels.join(" "));
                for p in &e.parameters {
                    let value = p.value.as_ref().map(|v| v.lexical()).unwrap_or_else(|| "variable".into());
                    let unit = p.unit.as_deref().map(|u| format!(" {u}")).unwrap_or_default();
                    let _ = writeln!(out, "  parameter {} ({}, {:?}, {}) = {value}{unit}", p.iri, p.name, p.role, p.datatype);
                }
            }
        }
        AnalysisInput::Failure { report, goal, affected } => {
            out.push_str("situation: runtime change\n");
            let _ = writeln!(out, "report: {report}");
            let list: Vec<&str> = affected.iter().map(Iri::as_str).collect();
            let _ = writeln!(out, "affected: {}", list.join(" "));
            let _ = writeln!(out, "goal: {}", goal.as_ref().map(Iri::as_str).unwrap_or("none"));
        }
    }
    out
}

/// Output names of the goal that no provided capability can produce. A
/// goal with such a name cannot be satisfied by editing values.
fn unproducible_outputs(model: &CapabilityModel, goal: &Capability) -> Vec<String> {
    let produced: BTreeSet<&str> = model
        .provided()
        .flat_map(|c| c.outputs.iter())
        .filter(|p| p.subject == Subject::Product)
        .map(|p| p.name.as_str())
        .collect();
    goal.outputs
        .iter()
        .filter(|p| p.subject == Subject::Product && !produced.contains(p.name.as_str()))
        .map(|p| p.name.clone())
        .collect()
}

fn find_property<'m>(model: &'m CapabilityModel, iri: &Iri) -> Option<(&'m Capability, &'m PropertyDecl)> {
    model.capabilities.iter().find_map(|c| c.property(iri).map(|p| (c, p)))
}

fn coerce(value: &Literal, datatype: Datatype) -> Result<Literal, String> {
    match (value, datatype) {
        (v, dt) if v.datatype() == dt && v.is_well_formed() => Ok(v.clone()),
        (Literal::Integer(d), Datatype::Real) => Ok(Literal::Real(d.clone())),
        (Literal::Real(d), Datatype::Integer) if d.is_integer() => Ok(Literal::Integer(d.clone())),
        (v, dt) => Err(format!("value {v} does not fit datatype {dt}")),
    }
}

struct Compiled {
    forms: Vec<QueryForm>,
    diff: Vec<ValueChange>,
}

fn compile(model: &CapabilityModel, edits: &[Edit]) -> Result<Compiled, String> {
    let mut forms = Vec::new();
    let mut diff = Vec::new();
    for (i, edit) in edits.iter().enumerate() {
        match edit {
            Edit::SetValue { property, value } => {
                let (c, p) = find_property(model, property)
                    .ok_or_else(|| format!("edit {i}: property `{property}` does not exist in the knowledge graph"))?;
                let value = coerce(value, p.datatype).map_err(|e| format!("edit {i}: {e}"))?;
                let before = p.constant().cloned();
                if before.as_ref() == Some(&value) {
                    return Err(format!("edit {i}: `{property}` already has value {value}"));
                }
                if let Some(old) = &before {
                    forms.push(QueryForm::delete(vec![Triple::new(property.clone(), cap("value"), Term::Literal(old.clone()))]));
                }
                forms.push(QueryForm::insert(vec![Triple::new(property.clone(), cap("value"), Term::Literal(value.clone()))]));
                diff.push(ValueChange {
                    property: property.clone(),
                    name: c.display_name(property),
                    capability: c.iri.clone(),
                    before,
                    after: value,
                });
            }
            Edit::RemoveCapability { capability } => {
                let c = model
                    .capability(capability)
                    .ok_or_else(|| format!("edit {i}: capability `{capability}` does not exist in the knowledge graph"))?;
                let alone = CapabilityModel { resources: vec![], capabilities: vec![c.clone()] };
                forms.push(QueryForm::delete(model_to_triples(&alone)));
            }
            Edit::Update { query } => {
                let form = QueryForm::parse(query).map_err(|e| format!("edit {i}: {e}"))?;
                if !form.kind.is_update() {
                    return Err(format!("edit {i}: only INSERT DATA and DELETE DATA requests are allowed"));
                }
                forms.push(form);
            }
        }
    }
    Ok(Compiled { forms, diff })
}

/// Subjects that belong to provided capabilities: the capability, its
/// properties and its constraint nodes.
fn touches_provided(model: &CapabilityModel, forms: &[QueryForm]) -> bool {
    let provided: Vec<&Capability> = model.provided().collect();
    let owned = |s: &Iri| {
        provided.iter().any(|c| {
            &c.iri == s
                || c.property(s).is_some()
                || s.as_str().starts_with(&format!("{}/constraint/", c.iri))
        })
    };
    forms.iter().flat_map(|f| f.data.iter()).any(|t| owned(&t.subject))
}

/// Name pairs of `goal` whose input and output constants differ. Such a
/// goal asks for a change of that value; a repair must keep it a change.
fn changing_names(goal: &Capability) -> BTreeMap<String, (Iri, Iri)> {
    let mut out = BTreeMap::new();
    for i in goal.inputs.iter() {
        for o in goal.outputs.iter().filter(|o| o.name == i.name) {
            if let (Some(a), Some(b)) = (i.constant(), o.constant()) {
                if a != b {
                    out.insert(i.name.clone(), (i.iri.clone(), o.iri.clone()));
                }
            }
        }
    }
    out
}

fn evaluate(
    ctx: &AgentContext,
    model: &CapabilityModel,
    input: &AnalysisInput,
    unproducible: &[String],
    payload: &Value,
) -> Result<AdaptationProposal, String> {
    let edits: Vec<Edit> = serde_json::from_value(payload["edits"].clone()).map_err(|e| format!("edits: {e}"))?;
    let conflicts: Vec<ProposedConflict> =
        serde_json::from_value(payload["conflicts"].clone()).map_err(|e| format!("conflicts: {e}"))?;
    let resolvable = payload["resolvable"].as_bool().unwrap_or(false);
    let modifies_provided = payload["modifies_provided"].as_bool().unwrap_or(false);
    let rationale = payload["rationale"].as_str().unwrap_or_default().to_string();

    let compiled = compile(model, &edits)?;

    // grounding
    let known_labels: Option<BTreeSet<&String>> = match input {
        AnalysisInput::Unsat { conflict, .. } => Some(conflict.labels.iter().collect()),
        AnalysisInput::Failure { .. } => None,
    };
    for (i, c) in conflicts.iter().enumerate() {
        for iri in &c.capabilities {
            if model.capability(iri).is_none() {
                return Err(format!("conflict {i} names `{iri}`, which is not a capability in the knowledge graph"));
            }
        }
        if let Some(known) = &known_labels {
            if let Some(bad) = c.origins.iter().find(|o| !known.contains(o)) {
                return Err(format!("conflict {i} cites `{bad}`, which is not part of the diagnosed conflict"));
            }
        }
    }

    if !unproducible.is_empty() && resolvable {
        return Err(format!(
            "no provided capability produces {}; the request cannot be made feasible by edits",
            unproducible.join(", ")
        ));
    }
    if resolvable && compiled.forms.is_empty() {
        return Err("a resolvable proposal must contain at least one edit".into());
    }
    if !resolvable && !compiled.forms.is_empty() {
        return Err("an unresolvable proposal must not contain edits".into());
    }
    if touches_provided(model, &compiled.forms) && !modifies_provided {
        return Err("the edits change a provided capability but modifies_provided is false".into());
    }

    // soundness: the edited graph must still be a valid model
    let edited = if compiled.forms.is_empty() {
        model.clone()
    } else {
        let fork = ctx.store.fork();
        fork.apply_unchecked_on_fork(&compiled.forms).map_err(|e| format!("edits do not apply: {e}"))?;
        let m = fork.materialize().map_err(|e| format!("edited graph is not a valid model: {e}"))?;
        m.validate().map_err(|e| format!("edited graph is not a valid model: {e}"))?;
        m
    };

    // intent guard
    if let Some(goal) = input.goal().and_then(|g| model.capability(g)) {
        if let Some(after) = edited.capability(&goal.iri) {
            for (name, (i, o)) in changing_names(goal) {
                let (Some((_, pi)), Some((_, po))) = (find_property(&edited, &i), find_property(&edited, &o)) else {
                    continue;
                };
                if after.property(&i).is_some() && pi.constant().is_some() && pi.constant() == po.constant() {
                    return Err(format!(
                        "the request asks to change {name}, but after the edits its target equals its source"
                    ));
                }
            }
        }
    }

    Ok(AdaptationProposal {
        conflicts,
        edits,
        mutations: compiled.forms.iter().map(QueryForm::to_text).collect(),
        rationale,
        resolvable,
        modifies_provided,
        diff: compiled.diff,
    })
}

/// Asks the analyzer for an adaptation and checks it. A rejected proposal
/// is regenerated once with the reason; a second rejection is an error.
pub fn analyze_and_propose(
    ctx: &AgentContext,
    input: &AnalysisInput,
) -> Result<(AdaptationProposal, AgentResult), AgentError> {
    let model = ctx.store.materialize()?;
    let unproducible = match input {
        AnalysisInput::Unsat { goal, .. } => {
            model.capability(goal).map(|g| unproducible_outputs(&model, g)).unwrap_or_default()
        }
        AnalysisInput::Failure { .. } => Vec::new(),
    };
    let mut task = task_text(&model, input);
    if !unproducible.is_empty() {
        let _ = writeln!(task, "no provided capability produces: {}", unproducible.join(", "));
    }
    let check = |payload: &Value, _: &[TraceEntry]| evaluate(ctx, &model, input, &unproducible, payload).map(|_| ());
    let mut result = react(ctx, "analyzer", task.trim_end(), false, &check)?;
    let proposal = evaluate(ctx, &model, input, &unproducible, &result.payload)
        .map_err(|reason| AgentError::Rejected { agent: "analyzer".into(), reason })?;
    result.payload = serde_json::to_value(&proposal).expect("proposal serializes");
    Ok((proposal, result))
}

/// Runs an approved proposal's mutations as one change set.
pub fn apply_repair(
    ctx: &AgentContext,
    proposal: &AdaptationProposal,
    approval: &str,
) -> Result<AgentResult, AgentError> {
    let forms = proposal
        .mutations
        .iter()
        .map(|m| QueryForm::parse(m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| AgentError::Rejected { agent: "repair".into(), reason: e.to_string() })?;
    let records = ctx.store.apply_change_set(&forms, approval)?;
    let trace = forms
        .iter()
        .zip(&records)
        .map(|(f, r)| TraceEntry {
            tool: if f.kind == QueryKind::Insert { "insert".into() } else { "delete".into() },
            arguments: json!({ "query": f.to_text() }),
            result: json!({ "sequence": r.sequence }),
        })
        .collect();
    let payload = json!({
        "change_records": records.iter().map(|r| r.sequence).collect::<Vec<_>>(),
        "replan": true,
    });
    Ok(AgentResult { agent: "repair".into(), payload, trace, rejections: Vec::new() })
}
