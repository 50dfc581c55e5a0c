use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{react, run_query, AgentContext, AgentError, AgentResult, TraceEntry};
use crate::model::rdf::{cap, rdf_type, Term, Triple};
use crate::model::{CapabilityKind, Datatype, Iri, Literal, Role, Subject};
use crate::smt::{EncodingIndex, Origin};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterInfo {
    pub iri: Iri,
    pub name: String,
    pub role: Role,
    pub datatype: Datatype,
    pub value: Option<Literal>,
    pub unit: Option<String>,
}

/// One constraint named by the core, with the capability it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappedOrigin {
    pub labels: Vec<String>,
    pub kind: CapabilityKind,
    pub capability: Iri,
    pub ordinal: usize,
    pub description: String,
    pub resource: Option<String>,
    pub constraint: String,
    pub parameters: Vec<ParameterInfo>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreMapping {
    pub entries: Vec<MappedOrigin>,
    /// State-update and step-structure labels; they carry no capability.
    pub structural: Vec<String>,
    pub unmappable: Vec<String>,
}

fn lookup(ctx: &AgentContext, trace: &mut Vec<TraceEntry>, query: String) -> Vec<Vec<Option<String>>> {
    let entry = run_query(ctx.store, "select", &query);
    let rows = entry.result["rows"]
        .as_array()
        .map(|rows| {
            rows.iter()
                .map(|r| r.as_array().into_iter().flatten().map(|v| v.as_str().map(str::to_string)).collect())
                .collect()
        })
        .unwrap_or_default();
    trace.push(entry);
    rows
}

/// Maps core labels to capability descriptions and parameter structures.
/// The mapping is deterministic; every lookup goes through `select`.
pub fn map_core(ctx: &AgentContext, goal: &Iri, labels: &[String]) -> Result<(CoreMapping, AgentResult), AgentError> {
    let model = ctx.store.materialize()?;
    let mut index = EncodingIndex::default();
    for c in &model.capabilities {
        let _ = index.add_capability(&c.iri);
        for p in c.properties().filter(|p| p.subject == Subject::Product) {
            let _ = index.add_property(&p.name);
        }
    }
    let mut trace = Vec::new();
    let mut mapping = CoreMapping::default();
    let mut groups: BTreeMap<(Iri, usize), Vec<String>> = BTreeMap::new();
    for label in labels {
        match index.parse(label) {
            Ok(Origin::GoalConstraint { ordinal }) => groups.entry((goal.clone(), ordinal)).or_default().push(label.clone()),
            Ok(Origin::CapabilityConstraint { capability, ordinal, .. }) => {
                groups.entry((capability, ordinal)).or_default().push(label.clone())
            }
            Ok(_) => mapping.structural.push(label.clone()),
            Err(_) => mapping.unmappable.push(label.clone()),
        }
    }
    for ((iri, ordinal), labels) in groups {
        let Some(capability) = model.capability(&iri) else {
            mapping.unmappable.extend(labels);
            continue;
        };
        let Some(constraint) = capability.render_constraint(ordinal) else {
            mapping.unmappable.extend(labels);
            continue;
        };
        let description = lookup(ctx, &mut trace, format!("SELECT ?d WHERE {{ <{iri}> cap:description ?d . }}"));
        let params = lookup(
            ctx,
            &mut trace,
            format!("SELECT ?p ?n WHERE {{ <{iri}> ?rel ?p . ?p cap:name ?n . ?p cap:datatype ?t . }}"),
        );
        if description.is_empty() || params.len() != capability.properties().count() {
            mapping.unmappable.extend(labels);
            continue;
        }
        let _ = lookup(ctx, &mut trace, format!("SELECT ?p ?v WHERE {{ <{iri}> ?rel ?p . ?p cap:value ?v . }}"));
        let resource = capability.resource.as_ref().and_then(|r| model.resource(r)).map(|r| r.name.clone());
        mapping.entries.push(MappedOrigin {
            labels,
            kind: capability.kind,
            capability: iri.clone(),
            ordinal,
            description: capability.description.clone(),
            resource,
            constraint,
            parameters: capability
                .properties()
                .map(|p| ParameterInfo {
                    iri: p.iri.clone(),
                    name: capability.display_name(&p.iri),
                    role: p.role,
                    datatype: p.datatype,
                    value: p.constant().cloned(),
                    unit: p.unit.clone(),
                })
                .collect(),
        });
    }
    let payload = serde_json::to_value(&mapping).expect("mapping serializes");
    Ok((mapping, AgentResult { agent: "mapper".into(), payload, trace, rejections: Vec::new() }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureMapping {
    pub affected: Vec<Iri>,
    pub explanation: String,
}

/// Identifies the provided capabilities a runtime report affects.
pub fn map_failure(ctx: &AgentContext, report: &str) -> Result<(FailureMapping, AgentResult), AgentError> {
    let check = |payload: &Value, _: &[TraceEntry]| -> Result<(), String> {
        for a in payload["affected"].as_array().into_iter().flatten() {
            let text = a.as_str().unwrap_or_default();
            let iri = Iri::new(text).map_err(|e| e.to_string())?;
            let typed = Triple::new(iri, rdf_type(), Term::Iri(cap("ProvidedCapability")));
            if !ctx.store.contains(&typed) {
                return Err(format!("`{text}` is not a provided capability in the knowledge graph"));
            }
        }
        Ok(())
    };
    let task = format!("Runtime report: {report}");
    let result = react(ctx, "mapper", &task, true, &check)?;
    let mapping: FailureMapping = serde_json::from_value(json!({
        "affected": result.payload["affected"],
        "explanation": result.payload["explanation"],
    }))
    .map_err(|e| AgentError::Rejected { agent: "mapper".into(), reason: e.to_string() })?;
    Ok((mapping, result))
}
