//! Planning as satisfiability over a bounded horizon, with conflict
//! diagnosis when no plan exists.
//!
//! [`solve`] deepens the horizon from 1 up to the problem's maximum. When
//! every horizon is unsatisfiable, [`diagnose`] works at the maximum horizon:
//! starting from all goal and capability constraints it removes constraints
//! one at a time (goal constraints first, by ordinal, then capability
//! constraints sorted by IRI and ordinal) and keeps a removal whenever the
//! rest stays unsatisfiable. The survivors form one conflict. Its
//! constraints are then switched off and the search repeats until the
//! remainder is satisfiable, so independent causes of infeasibility are all
//! reported. Each conflict is subset-minimal with respect to constraint
//! groups; the first one is the primary conflict.

mod encode;
pub mod label;
mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use encode::{encode, encode_with, EncodeError, Encoding, SoftGroup, VarTable, OTHER_STRING};
pub use label::{EncodingIndex, LabelError, Origin};
pub use oracle::{oracle_solve, replay, OracleError, OracleVerdict, ValueGrid, Witness};

use crate::model::{Capability, CapabilityKind, CapabilityModel, ConstraintId, Datatype, Decimal, Iri, Literal};
use crate::solver::{parse_core, parse_model, SolverError, SolverHandle, SolverVerdict};

pub const DEFAULT_MAX_HORIZON: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanningProblem {
    pub goal: Iri,
    pub domain: CapabilityModel,
    pub max_horizon: usize,
}

impl PlanningProblem {
    pub fn new(domain: CapabilityModel, goal: Iri) -> Self {
        PlanningProblem { goal, domain, max_horizon: DEFAULT_MAX_HORIZON }
    }

    pub fn with_max_horizon(mut self, h: usize) -> Self {
        self.max_horizon = h;
        self
    }

    pub fn goal_capability(&self) -> Result<&Capability, PlanningError> {
        let cap = self
            .domain
            .capability(&self.goal)
            .ok_or_else(|| PlanningError::InvalidProblem(format!("goal `{}` is not in the model", self.goal)))?;
        if cap.kind != CapabilityKind::Required {
            return Err(PlanningError::InvalidProblem(format!("goal `{}` is not a required capability", self.goal)));
        }
        Ok(cap)
    }

    pub fn check(&self) -> Result<(), PlanningError> {
        if self.max_horizon == 0 {
            return Err(PlanningError::InvalidProblem("max_horizon must be positive".into()));
        }
        self.domain.validate().map_err(|e| PlanningError::InvalidProblem(e.to_string()))?;
        self.goal_capability().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    /// Step number within the horizon; no-op steps are omitted.
    pub index: usize,
    pub capability: Iri,
    pub assignments: BTreeMap<Iri, Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub horizon: usize,
    pub steps: Vec<PlanStep>,
    pub initial_state: BTreeMap<String, Literal>,
    pub final_state: BTreeMap<String, Literal>,
    /// Values of the goal's properties in the solution.
    pub goal_bindings: BTreeMap<Iri, Literal>,
    pub goal_already_satisfied: bool,
}

/// One independent cause of infeasibility.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub labels: BTreeSet<String>,
    pub goal_constraints: BTreeSet<usize>,
    pub capability_constraints: BTreeSet<ConstraintId>,
}

impl Conflict {
    pub fn capabilities(&self) -> BTreeSet<&Iri> {
        self.capability_constraints.iter().map(|c| &c.capability).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnsatDiagnosis {
    pub core: BTreeSet<String>,
    pub origins: BTreeMap<String, Origin>,
    pub conflicts: Vec<Conflict>,
    pub horizon_tried: usize,
}

impl UnsatDiagnosis {
    pub fn primary(&self) -> &Conflict {
        &self.conflicts[0]
    }

    /// Constraint origins grouped by capability; goal origins under the
    /// goal IRI.
    pub fn by_capability(&self, goal: &Iri) -> BTreeMap<Iri, BTreeSet<usize>> {
        let mut out: BTreeMap<Iri, BTreeSet<usize>> = BTreeMap::new();
        for o in self.origins.values() {
            match o {
                Origin::CapabilityConstraint { capability, ordinal, .. } => {
                    out.entry(capability.clone()).or_default().insert(*ordinal);
                }
                Origin::GoalConstraint { ordinal } => {
                    out.entry(goal.clone()).or_default().insert(*ordinal);
                }
                _ => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "result")]
pub enum PlanningResult {
    Sat(Plan),
    Unsat(UnsatDiagnosis),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanningError {
    #[error("invalid planning problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("solver timed out at horizon {horizon}")]
    Timeout { horizon: usize },
    #[error("solver returned unknown at horizon {horizon}")]
    Unknown { horizon: usize },
    #[error("solver protocol error: {0}")]
    Protocol(String),
    #[error("internal planner error: {0}")]
    Internal(String),
}

enum Check {
    Sat(String),
    Unsat(String),
}

fn check(solver: &mut SolverHandle, encoding: &Encoding, horizon: usize) -> Result<Check, PlanningError> {
    match solver.run(&encoding.script)? {
        SolverVerdict::Sat(m) => Ok(Check::Sat(m)),
        SolverVerdict::Unsat(c) => Ok(Check::Unsat(c)),
        SolverVerdict::Unknown => Err(PlanningError::Unknown { horizon }),
        SolverVerdict::Timeout => Err(PlanningError::Timeout { horizon }),
        SolverVerdict::ProtocolError(d) => Err(PlanningError::Protocol(d)),
    }
}

/// Iterative deepening from horizon 1 to `problem.max_horizon`.
pub fn solve(problem: &PlanningProblem, solver: &mut SolverHandle) -> Result<PlanningResult, PlanningError> {
    problem.check()?;
    for h in 1..=problem.max_horizon {
        let enc = encode(problem, h)?;
        if let Check::Sat(model) = check(solver, &enc, h)? {
            let values = parse_model(&model).map_err(|e| PlanningError::Protocol(e.to_string()))?;
            return Ok(PlanningResult::Sat(decode(&values, &enc)?));
        }
    }
    Ok(PlanningResult::Unsat(diagnose(problem, solver)?))
}

/// Enumerates conflicts at the maximum horizon.
pub fn diagnose(problem: &PlanningProblem, solver: &mut SolverHandle) -> Result<UnsatDiagnosis, PlanningError> {
    let horizon = problem.max_horizon;
    let full = encode(problem, horizon)?;
    let order = full.soft_groups.clone();
    let run = |solver: &mut SolverHandle, active: &BTreeSet<SoftGroup>| -> Result<(Encoding, Check), PlanningError> {
        let enc = encode_with(problem, horizon, &|g| active.contains(g))?;
        let verdict = check(solver, &enc, horizon)?;
        Ok((enc, verdict))
    };

    let mut active: BTreeSet<SoftGroup> = order.iter().cloned().collect();
    let mut conflicts = Vec::new();
    loop {
        let (_, verdict) = run(solver, &active)?;
        if let Check::Sat(_) = verdict {
            if conflicts.is_empty() {
                return Err(PlanningError::Internal("diagnosis found the problem satisfiable".into()));
            }
            break;
        }
        let mut kept = active.clone();
        for g in &order {
            if !kept.contains(g) {
                continue;
            }
            kept.remove(g);
            if let (_, Check::Sat(_)) = run(solver, &kept)? {
                kept.insert(g.clone());
            }
        }
        let (enc, verdict) = run(solver, &kept)?;
        let Check::Unsat(core_text) = verdict else {
            return Err(PlanningError::Internal("minimized conflict became satisfiable".into()));
        };
        let labels = parse_core(&core_text).map_err(|e| PlanningError::Protocol(e.to_string()))?;
        map_core(&labels, &enc.index)?;
        let mut conflict = Conflict {
            labels,
            goal_constraints: BTreeSet::new(),
            capability_constraints: BTreeSet::new(),
        };
        for g in &kept {
            match g {
                SoftGroup::Goal(o) => {
                    conflict.goal_constraints.insert(*o);
                }
                SoftGroup::Capability(iri, o) => {
                    conflict.capability_constraints.insert(ConstraintId { capability: iri.clone(), ordinal: *o });
                }
            }
            active.remove(g);
        }
        conflicts.push(conflict);
    }
    let core: BTreeSet<String> = conflicts.iter().flat_map(|c| c.labels.iter().cloned()).collect();
    let origins = map_core(&core, &full.index)?;
    Ok(UnsatDiagnosis { core, origins, conflicts, horizon_tried: horizon })
}

/// Resolves every label of a core to its origin.
pub fn map_core(core: &BTreeSet<String>, index: &EncodingIndex) -> Result<BTreeMap<String, Origin>, PlanningError> {
    if core.is_empty() {
        return Err(PlanningError::Internal("empty unsat core".into()));
    }
    core.iter()
        .map(|l| index.parse(l).map(|o| (l.clone(), o)).map_err(|e| PlanningError::Internal(e.to_string())))
        .collect()
}

fn default_value(dt: Datatype) -> Literal {
    match dt {
        Datatype::Real => Literal::Real(Decimal::from_integer(0)),
        Datatype::Integer => Literal::Integer(Decimal::from_integer(0)),
        Datatype::Boolean => Literal::Boolean(false),
        Datatype::String => Literal::String(OTHER_STRING.into()),
    }
}

/// Reads a plan out of solver values for `encoding`. Variables the solver
/// left out of its model are unconstrained and take a default value.
pub fn decode(values: &BTreeMap<String, Literal>, encoding: &Encoding) -> Result<Plan, PlanningError> {
    let vars = &encoding.vars;
    let value = |var: &str, dt: Datatype| -> Result<Literal, PlanningError> {
        let Some(v) = values.get(var) else { return Ok(default_value(dt)) };
        match (dt, v) {
            (Datatype::String, Literal::String(ctor)) => vars
                .strings
                .get(ctor)
                .map(|s| Literal::String(s.clone()))
                .ok_or_else(|| PlanningError::Internal(format!("unknown string constructor `{ctor}`"))),
            (dt, v) if v.datatype() == dt => Ok(v.clone()),
            _ => Err(PlanningError::Internal(format!("`{var}` has a value of the wrong sort"))),
        }
    };
    let flag = |var: &str| -> Result<bool, PlanningError> {
        Ok(value(var, Datatype::Boolean)? == Literal::Boolean(true))
    };
    let mut steps = Vec::new();
    for k in 0..vars.horizon {
        let mut chosen = Vec::new();
        for (iri, ch) in &vars.capabilities {
            if flag(&vars.sel(ch, k))? {
                chosen.push((iri, ch));
            }
        }
        let noop = flag(&vars.noop(k))?;
        match (chosen.as_slice(), noop) {
            ([], true) => {}
            ([(iri, ch)], false) => {
                let mut assignments = BTreeMap::new();
                for (prop, ph, dt) in &vars.params[*iri] {
                    assignments.insert(prop.clone(), value(&vars.param(ch, ph, k), *dt)?);
                }
                steps.push(PlanStep { index: k, capability: (*iri).clone(), assignments });
            }
            _ => {
                return Err(PlanningError::Internal(format!("step {k} does not select exactly one action")));
            }
        }
    }
    let mut initial_state = BTreeMap::new();
    let mut final_state = BTreeMap::new();
    for (name, (h, dt)) in &vars.states {
        initial_state.insert(name.clone(), value(&vars.state(h, 0), *dt)?);
        final_state.insert(name.clone(), value(&vars.state(h, vars.horizon), *dt)?);
    }
    let mut goal_bindings = BTreeMap::new();
    for (iri, var, dt) in &vars.goal {
        goal_bindings.insert(iri.clone(), value(var, *dt)?);
    }
    let goal_already_satisfied = steps.is_empty();
    Ok(Plan { horizon: vars.horizon, steps, initial_state, final_state, goal_bindings, goal_already_satisfied })
}
