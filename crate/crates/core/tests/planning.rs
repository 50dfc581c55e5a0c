mod common;

use std::collections::BTreeSet;

use capaplan_core::model::{ConstraintId, Literal};
use capaplan_core::smt::{
    encode, oracle_solve, replay, solve, Origin, PlanningProblem, PlanningResult, ValueGrid,
};
use common::*;

fn problem(goal: &str) -> PlanningProblem {
    PlanningProblem::new(plant(), req(goal))
}

fn sat(goal: &str) -> capaplan_core::smt::Plan {
    match solve(&problem(goal), &mut solver()).unwrap() {
        PlanningResult::Sat(plan) => plan,
        other => panic!("expected a plan, got {other:?}"),
    }
}

fn unsat(p: &PlanningProblem) -> capaplan_core::smt::UnsatDiagnosis {
    match solve(p, &mut solver()).unwrap() {
        PlanningResult::Unsat(d) => d,
        other => panic!("expected unsat, got {other:?}"),
    }
}

fn cid(cap: &str, ordinal: usize) -> ConstraintId {
    ConstraintId { capability: iri(cap), ordinal }
}

fn grid() -> ValueGrid {
    let ints = |v: &[i64]| v.iter().map(|&i| Literal::integer(i)).collect();
    let reals = |v: &[&str]| v.iter().map(|s| Literal::real(s)).collect();
    ValueGrid::default()
        .set("stationId", ints(&[3, 7, 15]))
        .set("depth", reals(&["0", "2", "5", "6", "7", "8", "10"]))
}

#[test]
fn identity_problem_is_one_drilling_step() {
    let plan = sat("DrillAtSeven");
    assert_eq!(plan.steps.len(), 1);
    assert_eq!(plan.steps[0].capability, iri(DRILL));
    assert_eq!(plan.steps[0].assignments[&iri(&format!("{DRILL}/out/depth"))], Literal::real("8"));
    replay(&problem("DrillAtSeven"), &plan).unwrap();
}

#[test]
fn transport_then_drilling() {
    let plan = sat("DrillHole");
    let caps: Vec<_> = plan.steps.iter().map(|s| s.capability.clone()).collect();
    assert_eq!(caps, vec![iri(CONVEYOR), iri(DRILL)]);
    assert_eq!(plan.steps[0].assignments[&iri(&format!("{CONVEYOR}/in/stationId"))], Literal::integer(3));
    assert_eq!(plan.steps[1].assignments[&iri(&format!("{DRILL}/in/stationId"))], Literal::integer(7));
    assert_eq!(plan.horizon, 2);
    replay(&problem("DrillHole"), &plan).unwrap();
    let oracle = oracle_solve(&problem("DrillHole").with_max_horizon(3), &grid()).unwrap();
    assert!(oracle.is_sat());
}

#[test]
fn three_step_plan_supplies_before_transport() {
    let plan = sat("SuppliedHole");
    let caps: Vec<_> = plan.steps.iter().map(|s| s.capability.clone()).collect();
    assert_eq!(caps, vec![iri(SUPPLY), iri(CONVEYOR), iri(DRILL)]);
    replay(&problem("SuppliedHole"), &plan).unwrap();
}

#[test]
fn shallow_hole_yields_the_depth_conflict() {
    let d = unsat(&problem("ShallowHole"));
    assert_eq!(d.conflicts.len(), 1);
    let c = &d.conflicts[0];
    assert_eq!(c.goal_constraints, BTreeSet::from([1, 2]));
    assert_eq!(c.capability_constraints, BTreeSet::from([cid(DRILL, 0)]));
    assert_eq!(d.horizon_tried, 5);
    let oracle = oracle_solve(&problem("ShallowHole").with_max_horizon(3), &grid()).unwrap();
    assert!(!oracle.is_sat());
}

#[test]
fn two_independent_conflicts_in_one_diagnosis() {
    let d = unsat(&problem("ShallowFar"));
    assert_eq!(d.conflicts.len(), 2);
    assert_eq!(d.conflicts[0].goal_constraints, BTreeSet::from([1, 3]));
    assert_eq!(d.conflicts[0].capability_constraints, BTreeSet::from([cid(DRILL, 0)]));
    assert_eq!(d.conflicts[1].goal_constraints, BTreeSet::from([0, 2]));
    assert_eq!(d.conflicts[1].capability_constraints, BTreeSet::from([cid(CONVEYOR, 0)]));
    for (label, origin) in &d.origins {
        assert_eq!(&origin.label(), label);
    }
}

#[test]
fn empty_domain_blames_goal_constraints_only() {
    let mut model = plant();
    model.capabilities.retain(|c| c.kind == capaplan_core::model::CapabilityKind::Required);
    model.resources.clear();
    let d = unsat(&PlanningProblem::new(model, req("FarTransport")));
    let constraint_origins: Vec<_> = d.origins.values().filter(|o| o.is_constraint()).collect();
    assert!(!constraint_origins.is_empty());
    assert!(constraint_origins.iter().all(|o| matches!(o, Origin::GoalConstraint { .. })));
}

#[test]
fn results_are_byte_identical_across_runs() {
    let a = serde_json::to_string(&solve(&problem("ShallowFar"), &mut solver()).unwrap()).unwrap();
    let b = serde_json::to_string(&solve(&problem("ShallowFar"), &mut solver()).unwrap()).unwrap();
    assert_eq!(a, b);
    let a = serde_json::to_string(&solve(&problem("DrillHole"), &mut solver()).unwrap()).unwrap();
    let b = serde_json::to_string(&solve(&problem("DrillHole"), &mut solver()).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn every_core_member_is_relevant() {
    let p = problem("ShallowFar");
    let d = unsat(&p);
    for origin in d.origins.values() {
        let Origin::CapabilityConstraint { capability, ordinal, .. } = origin else { continue };
        let mut model = p.domain.clone();
        let cap = model.capabilities.iter_mut().find(|c| &c.iri == capability).unwrap();
        if *ordinal < cap.constraints.len() {
            cap.constraints.remove(*ordinal);
        } else {
            continue;
        }
        let relaxed = PlanningProblem::new(model, p.goal.clone());
        match solve(&relaxed, &mut solver()).unwrap() {
            PlanningResult::Sat(_) => {}
            PlanningResult::Unsat(d2) => assert_ne!(d2.core, d.core),
        }
    }
}

#[test]
fn script_names_every_assertion() {
    let enc = encode(&problem("DrillHole"), 2).unwrap();
    for line in enc.script.lines().filter(|l| l.starts_with("(assert")) {
        assert!(line.contains(":named "), "{line}");
    }
    assert!(enc.script.starts_with("(set-option :produce-unsat-cores true)"));
    assert!(enc.script.trim_end().ends_with("(check-sat)"));
    let decls: Vec<&str> = enc.script.lines().filter(|l| l.starts_with("(declare-const")).collect();
    let mut sorted = decls.clone();
    sorted.sort();
    assert_eq!(decls, sorted);
}

#[test]
fn goal_must_be_required() {
    assert!(solve(&PlanningProblem::new(plant(), iri(DRILL)), &mut solver()).is_err());
}
