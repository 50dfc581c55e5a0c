//! Exhaustive reference planner and plan replay, both built only on
//! `eval_constraint`. Used to cross-check the solver-based planner.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Plan, PlanningError, PlanningProblem, OTHER_STRING};
use crate::model::{eval_constraint, Capability, ConstraintExpr, Datatype, Iri, Literal, PropertyDecl, Role, Subject};

const MAX_CAPABILITIES: usize = 5;
const MAX_HORIZON: usize = 3;

/// Candidate values per property name. Booleans and strings default to
/// their full finite domain; numeric properties must be listed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub values: BTreeMap<String, Vec<Literal>>,
}

impl ValueGrid {
    pub fn set(mut self, name: &str, values: Vec<Literal>) -> Self {
        self.values.insert(name.to_string(), values);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub initial_state: BTreeMap<String, Literal>,
    pub steps: Vec<(Iri, BTreeMap<Iri, Literal>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleVerdict {
    Sat(Witness),
    Unsat,
}

impl OracleVerdict {
    pub fn is_sat(&self) -> bool {
        matches!(self, OracleVerdict::Sat(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("instance exceeds enumeration bounds: {0}")]
    TooLarge(String),
    #[error("no value grid for property `{0}`")]
    MissingGrid(String),
    #[error(transparent)]
    Problem(#[from] PlanningError),
}

type State = BTreeMap<String, Literal>;

struct Oracle<'a> {
    grid: &'a ValueGrid,
    strings: Vec<Literal>,
}

impl Oracle<'_> {
    fn candidates(&self, p: &PropertyDecl) -> Result<Vec<Literal>, OracleError> {
        if let Some(c) = p.constant() {
            return Ok(vec![c.clone()]);
        }
        if let Some(v) = self.grid.values.get(&p.name) {
            return Ok(v.clone());
        }
        match p.datatype {
            Datatype::Boolean => Ok(vec![Literal::Boolean(false), Literal::Boolean(true)]),
            Datatype::String => Ok(self.strings.clone()),
            _ => Err(OracleError::MissingGrid(p.name.clone())),
        }
    }

    fn name_candidates(&self, name: &str, dt: Datatype) -> Result<Vec<Literal>, OracleError> {
        if let Some(v) = self.grid.values.get(name) {
            return Ok(v.clone());
        }
        match dt {
            Datatype::Boolean => Ok(vec![Literal::Boolean(false), Literal::Boolean(true)]),
            Datatype::String => Ok(self.strings.clone()),
            _ => Err(OracleError::MissingGrid(name.to_string())),
        }
    }
}

fn satisfies(cap: &Capability, binding: &BTreeMap<Iri, Literal>) -> bool {
    cap.all_constraints().iter().all(|(_, e)| eval_constraint(e, binding).unwrap_or(false))
}

/// All assignments to `free` combined with `fixed`.
fn product(
    fixed: &BTreeMap<Iri, Literal>,
    free: &[(Iri, Vec<Literal>)],
) -> Vec<BTreeMap<Iri, Literal>> {
    let mut out = vec![fixed.clone()];
    for (iri, values) in free {
        let mut next = Vec::with_capacity(out.len() * values.len());
        for partial in &out {
            for v in values {
                let mut b = partial.clone();
                b.insert(iri.clone(), v.clone());
                next.push(b);
            }
        }
        out = next;
    }
    out
}

/// Searches capability sequences up to the horizon over the value grid.
pub fn oracle_solve(problem: &PlanningProblem, grid: &ValueGrid) -> Result<OracleVerdict, OracleError> {
    problem.check()?;
    let goal = problem.goal_capability()?;
    let provided: Vec<&Capability> = problem.domain.provided().collect();
    if provided.len() > MAX_CAPABILITIES {
        return Err(OracleError::TooLarge(format!("{} capabilities", provided.len())));
    }
    if problem.max_horizon > MAX_HORIZON {
        return Err(OracleError::TooLarge(format!("horizon {}", problem.max_horizon)));
    }
    let mut strings: BTreeSet<Literal> = BTreeSet::new();
    for cap in provided.iter().copied().chain(std::iter::once(goal)) {
        for (_, e) in cap.all_constraints() {
            collect_strings(&e, &mut strings);
        }
    }
    strings.insert(Literal::String(OTHER_STRING.into()));
    let oracle = Oracle { grid, strings: strings.into_iter().collect() };

    let mut names: BTreeMap<String, Datatype> = BTreeMap::new();
    for cap in provided.iter().copied().chain(std::iter::once(goal)) {
        for p in cap.properties().filter(|p| p.subject == Subject::Product) {
            names.insert(p.name.clone(), p.datatype);
        }
    }
    let mut initial_states: Vec<State> = vec![State::new()];
    for (name, dt) in &names {
        let values = oracle.name_candidates(name, *dt)?;
        initial_states = initial_states
            .into_iter()
            .flat_map(|s| {
                values.iter().map(move |v| {
                    let mut s = s.clone();
                    s.insert(name.clone(), v.clone());
                    s
                })
            })
            .collect();
    }

    let goal_free: Vec<(Iri, Vec<Literal>)> = goal
        .properties()
        .filter(|p| p.subject == Subject::Information)
        .map(|p| Ok((p.iri.clone(), oracle.candidates(p)?)))
        .collect::<Result<_, OracleError>>()?;
    let goal_holds = |s0: &State, s: &State| -> bool {
        let mut fixed = BTreeMap::new();
        for p in goal.properties().filter(|p| p.subject == Subject::Product) {
            let source = if p.role == Role::Input { s0 } else { s };
            fixed.insert(p.iri.clone(), source[&p.name].clone());
        }
        product(&fixed, &goal_free).iter().any(|b| satisfies(goal, b))
    };

    // Successors of a state per capability, memoized.
    let mut successors: BTreeMap<State, Vec<(usize, BTreeMap<Iri, Literal>, State)>> = BTreeMap::new();
    let mut expand = |s: &State| -> Result<Vec<(usize, BTreeMap<Iri, Literal>, State)>, OracleError> {
        if let Some(v) = successors.get(s) {
            return Ok(v.clone());
        }
        let mut out = Vec::new();
        for (ci, cap) in provided.iter().enumerate() {
            let mut fixed = BTreeMap::new();
            let mut free = Vec::new();
            for p in cap.properties() {
                if p.role == Role::Input && p.subject == Subject::Product {
                    fixed.insert(p.iri.clone(), s[&p.name].clone());
                } else {
                    free.push((p.iri.clone(), oracle.candidates(p)?));
                }
            }
            for b in product(&fixed, &free) {
                if !satisfies(cap, &b) {
                    continue;
                }
                let mut next = s.clone();
                for p in cap.outputs.iter().filter(|p| p.subject == Subject::Product) {
                    next.insert(p.name.clone(), b[&p.iri].clone());
                }
                out.push((ci, b, next));
            }
        }
        successors.insert(s.clone(), out.clone());
        Ok(out)
    };

    for s0 in &initial_states {
        // Breadth-first over states; the first hit is a shortest witness.
        let mut frontier: Vec<(State, Vec<(Iri, BTreeMap<Iri, Literal>)>)> = vec![(s0.clone(), Vec::new())];
        let mut seen: BTreeSet<State> = BTreeSet::from([s0.clone()]);
        for depth in 0..=problem.max_horizon {
            for (s, path) in &frontier {
                if goal_holds(s0, s) {
                    return Ok(OracleVerdict::Sat(Witness { initial_state: s0.clone(), steps: path.clone() }));
                }
            }
            if depth == problem.max_horizon {
                break;
            }
            let mut next_frontier = Vec::new();
            for (s, path) in &frontier {
                for (ci, b, next) in expand(s)? {
                    if seen.insert(next.clone()) {
                        let mut p = path.clone();
                        p.push((provided[ci].iri.clone(), b));
                        next_frontier.push((next, p));
                    }
                }
            }
            frontier = next_frontier;
        }
    }
    Ok(OracleVerdict::Unsat)
}

fn collect_strings(e: &ConstraintExpr, out: &mut BTreeSet<Literal>) {
    if let ConstraintExpr::Literal(l @ Literal::String(_)) = e {
        out.insert(l.clone());
    }
    for c in e.children() {
        collect_strings(c, out);
    }
}

/// Re-executes `plan` from its initial state and checks every step and
/// the goal with `eval_constraint`.
pub fn replay(problem: &PlanningProblem, plan: &Plan) -> Result<(), String> {
    let goal = problem.goal_capability().map_err(|e| e.to_string())?;
    if plan.steps.len() > plan.horizon {
        return Err("plan longer than its horizon".into());
    }
    let mut state = plan.initial_state.clone();
    let mut last = None;
    for step in &plan.steps {
        if last.is_some_and(|l| step.index <= l) {
            return Err(format!("step {} out of order", step.index));
        }
        last = Some(step.index);
        let cap = problem
            .domain
            .capability(&step.capability)
            .filter(|c| c.kind == crate::model::CapabilityKind::Provided)
            .ok_or_else(|| format!("step {} uses unknown capability {}", step.index, step.capability))?;
        for p in cap.properties() {
            let v = step.assignments.get(&p.iri).ok_or_else(|| format!("step {} lacks {}", step.index, p.iri))?;
            if p.role == Role::Input && p.subject == Subject::Product && state.get(&p.name) != Some(v) {
                return Err(format!("step {}: input {} does not match the current state", step.index, p.name));
            }
        }
        for (ordinal, e) in cap.all_constraints() {
            if !eval_constraint(&e, &step.assignments).map_err(|e| e.to_string())? {
                return Err(format!("step {}: constraint {ordinal} of {} violated", step.index, cap.iri));
            }
        }
        for p in cap.outputs.iter().filter(|p| p.subject == Subject::Product) {
            state.insert(p.name.clone(), step.assignments[&p.iri].clone());
        }
    }
    if state != plan.final_state {
        return Err("replayed final state differs from the reported one".into());
    }
    let mut binding = BTreeMap::new();
    for p in goal.properties() {
        let v = match p.subject {
            Subject::Product if p.role == Role::Input => plan.initial_state.get(&p.name),
            Subject::Product => state.get(&p.name),
            Subject::Information => plan.goal_bindings.get(&p.iri),
        };
        binding.insert(p.iri.clone(), v.ok_or_else(|| format!("no value for goal property {}", p.name))?.clone());
    }
    for (ordinal, e) in goal.all_constraints() {
        if !eval_constraint(&e, &binding).map_err(|e| e.to_string())? {
            return Err(format!("goal constraint {ordinal} violated"));
        }
    }
    Ok(())
}
