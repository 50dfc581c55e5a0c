use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{react, AgentContext, AgentError, AgentResult, TraceEntry};
use crate::model::{Capability, CapabilityModel, Iri, Literal};
use crate::smt::{solve, Conflict, Plan, PlanningProblem, PlanningResult, UnsatDiagnosis};
use crate::solver::SolverHandle;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerOutput {
    pub result: PlanningResult,
    pub summary: String,
    pub explanation: String,
}

/// Solves for `goal` against the current store, then explains the outcome.
/// The language model only contributes the opening sentence; every value
/// in the explanation is copied from the planning result.
pub fn plan_and_explain(ctx: &AgentContext, goal: &Iri) -> Result<(PlannerOutput, AgentResult), AgentError> {
    let model = ctx.store.materialize()?;
    let problem = PlanningProblem::new(model.clone(), goal.clone()).with_max_horizon(ctx.max_horizon);
    let mut solver = SolverHandle::new(ctx.solver.clone()).map_err(crate::smt::PlanningError::from)?;
    let result = solve(&problem, &mut solver)?;
    let solve_entry = TraceEntry {
        tool: "solve".into(),
        arguments: json!({ "goal": goal, "max_horizon": ctx.max_horizon }),
        result: serde_json::to_value(&result).expect("result serializes"),
    };
    let goal_cap = problem.goal_capability()?;
    let outcome = match &result {
        PlanningResult::Sat(plan) => format!("outcome: sat\nsteps: {}", plan.steps.len()),
        PlanningResult::Unsat(d) => format!("outcome: unsat\nconflicts: {}", d.conflicts.len()),
    };
    let task = format!("goal: {goal}\nrequest: {}\n{outcome}", goal_cap.description);
    let no_digits = |payload: &Value, _: &[TraceEntry]| -> Result<(), String> {
        let s = payload["summary"].as_str().unwrap_or_default();
        if s.chars().any(|c| c.is_ascii_digit()) {
            Err("the summary must not contain numbers; values are listed separately".into())
        } else {
            Ok(())
        }
    };
    let mut agent_result = react(ctx, "planner", &task, false, &no_digits)?;
    let summary = agent_result.payload["summary"].as_str().unwrap_or_default().to_string();
    let body = match &result {
        PlanningResult::Sat(plan) => describe_plan(&model, goal_cap, plan),
        PlanningResult::Unsat(d) => describe_unsat(&model, goal_cap, d),
    };
    let explanation = format!("{summary}\n{body}");
    let output = PlannerOutput { result, summary, explanation };
    agent_result.trace.insert(0, solve_entry);
    agent_result.payload = serde_json::to_value(&output).expect("output serializes");
    Ok((output, agent_result))
}

fn value_text(lit: &Literal, unit: Option<&String>) -> String {
    match unit {
        Some(u) => format!("{} {u}", lit.lexical()),
        None => lit.to_string(),
    }
}

fn resource_name(model: &CapabilityModel, cap: &Capability) -> String {
    cap.resource
        .as_ref()
        .and_then(|r| model.resource(r))
        .map(|r| r.name.clone())
        .unwrap_or_else(|| cap.iri.local_name().to_string())
}

pub fn describe_plan(model: &CapabilityModel, goal: &Capability, plan: &Plan) -> String {
    if plan.goal_already_satisfied {
        return format!("The goal \"{}\" is already satisfied; no steps are needed.", goal.description);
    }
    let mut out = format!("Plan for \"{}\" ({} step(s)):", goal.description, plan.steps.len());
    for (n, step) in plan.steps.iter().enumerate() {
        let Some(cap) = model.capability(&step.capability) else { continue };
        let values: Vec<String> = cap
            .properties()
            .filter_map(|p| {
                let v = step.assignments.get(&p.iri)?;
                Some(format!("{} = {}", cap.display_name(&p.iri), value_text(v, p.unit.as_ref())))
            })
            .collect();
        let _ = write!(out, "\n{}. {} [{}]: {}", n + 1, cap.description, resource_name(model, cap), values.join(", "));
    }
    out
}

fn conflict_lines(model: &CapabilityModel, goal: &Capability, conflict: &Conflict) -> Vec<String> {
    let mut lines = Vec::new();
    for o in &conflict.goal_constraints {
        if let Some(text) = goal.render_constraint(*o) {
            lines.push(format!("required by the request: {text}"));
        }
    }
    for id in &conflict.capability_constraints {
        if let Some(cap) = model.capability(&id.capability) {
            if let Some(text) = cap.render_constraint(id.ordinal) {
                lines.push(format!("provided by {} ({}): {text}", resource_name(model, cap), cap.description));
            }
        }
    }
    lines
}

pub fn describe_unsat(model: &CapabilityModel, goal: &Capability, d: &UnsatDiagnosis) -> String {
    let mut out = format!(
        "No plan for \"{}\" exists within {} steps. {} independent conflict(s):",
        goal.description,
        d.horizon_tried,
        d.conflicts.len()
    );
    for (i, c) in d.conflicts.iter().enumerate() {
        let _ = write!(out, "\nConflict {}:", i + 1);
        for line in conflict_lines(model, goal, c) {
            let _ = write!(out, "\n  - {line}");
        }
    }
    out
}
