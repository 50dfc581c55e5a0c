mod common;

use std::sync::Arc;

use capaplan_core::llm::{ScriptEntry, ScriptedProvider};
use capaplan_core::smt::PlanningResult;
use capaplan_core::store::{ChangeKind, GraphStore};
use capaplan_core::workflow::{
    from_jsonl, reconstruct, to_jsonl, Checkpoint, Engine, Input, Session, Status, Verdict, WorkflowConfig,
    WorkflowError,
};
use common::*;
use serde_json::json;

fn scripts(names: &[&str]) -> Vec<ScriptEntry> {
    let paths: Vec<_> = names.iter().map(|n| fixtures_dir().join("scripts").join(format!("{n}.json"))).collect();
    ScriptedProvider::from_files(&paths).unwrap().entries().to_vec()
}

fn engine_with(entries: Vec<ScriptEntry>, model: &str, config: WorkflowConfig) -> Engine {
    let store = GraphStore::load(&load_model(model));
    let mut config = config;
    config.solver = config.solver.with_env_override();
    Engine::new(store, Arc::new(ScriptedProvider::new(entries).unwrap()), config)
}

fn engine(names: &[&str]) -> Engine {
    engine_with(scripts(names), "plant.json", WorkflowConfig::default())
}

fn say(e: &Engine, s: &mut Session, text: &str) {
    e.step(s, Input::Message { text: text.into() }).unwrap();
}

fn decide(e: &Engine, s: &mut Session, verdict: Verdict, payload: Option<serde_json::Value>) {
    let id = s.state.pending_hitl.as_ref().expect("pending request").id.clone();
    e.step(s, Input::Decision { request_id: id, verdict, payload, actor: "tester".into() }).unwrap();
}

#[test]
fn sessions_start_fresh_with_distinct_ids() {
    let e = engine(&["common"]);
    let a = e.start_session();
    let b = e.start_session();
    assert_ne!(a.state.id, b.state.id);
    assert_eq!(a.state.status, Status::AwaitingUser);
    assert!(a.state.transcript.is_empty());
    assert!(e.store().materialize().unwrap().capability(&iri(DRILL)).is_some());
}

#[test]
fn knowledge_question_pauses_once_without_hitl() {
    let e = engine(&["common", "kq-07"]);
    let mut s = e.start_session();
    say(&e, &mut s, "Which resource provides transport?");
    assert_eq!(s.state.status, Status::AwaitingUser);
    assert!(s.state.decisions.is_empty());
    assert_eq!(s.state.path, ["router", "knowledge_retrieval"]);
    assert!(s.state.transcript.last().unwrap().text.contains("Conveyor"));
}

#[test]
fn planning_request_pauses_at_goal_confirmation_then_plans() {
    let e = engine(&["common", "sat-01"]);
    let mut s = e.start_session();
    say(&e, &mut s, "Drill a 7 mm deep hole into the workpiece at station 3.");
    assert_eq!(s.state.status, Status::AwaitingHitl);
    assert_eq!(s.state.pending_hitl.as_ref().unwrap().checkpoint, Checkpoint::ConfirmGoal);
    assert!(s.state.last_result.is_none(), "no solver call before confirmation");
    decide(&e, &mut s, Verdict::Approve, None);
    assert_eq!(s.state.status, Status::Done);
    assert_eq!(s.state.confirmed_goal, Some(req("DrillHole")));
    assert!(matches!(s.state.last_result, Some(PlanningResult::Sat(_))));
    assert_eq!(s.state.decisions.len(), 1);
}

#[test]
fn modified_goal_is_planned_instead() {
    let e = engine(&["common", "sat-01"]);
    let mut s = e.start_session();
    say(&e, &mut s, "Drill a 7 mm deep hole into the workpiece at station 3.");
    decide(&e, &mut s, Verdict::Modify, Some(json!({"goal": req("Transport")})));
    assert_eq!(s.state.confirmed_goal, Some(req("Transport")));
    let Some(PlanningResult::Sat(plan)) = &s.state.last_result else { panic!() };
    assert_eq!(plan.steps.len(), 1);
}

#[test]
fn denied_adaptation_leaves_store_untouched() {
    let e = engine(&["common", "ap-02"]);
    let before = e.store().triples();
    let mut s = e.start_session();
    say(&e, &mut s, "Please drill a 2 mm hole into the workpiece at station 3.");
    decide(&e, &mut s, Verdict::Approve, None);
    assert_eq!(s.state.pending_hitl.as_ref().unwrap().checkpoint, Checkpoint::ApproveAdaptation);
    decide(&e, &mut s, Verdict::Deny, None);
    assert_eq!(s.state.status, Status::AwaitingUser);
    assert_eq!(e.store().triples(), before);
    assert!(e.store().change_log().is_empty());
}

#[test]
fn stale_and_illegal_inputs_are_refused() {
    let e = engine(&["common", "sat-01"]);
    let mut s = e.start_session();
    let stale = Input::Decision { request_id: "nope".into(), verdict: Verdict::Approve, payload: None, actor: "u".into() };
    assert!(matches!(e.step(&mut s, stale.clone()), Err(WorkflowError::StaleDecision(_))));
    say(&e, &mut s, "Drill a 7 mm deep hole into the workpiece at station 3.");
    let err = e.step(&mut s, Input::Message { text: "again".into() }).unwrap_err();
    assert!(matches!(err, WorkflowError::IllegalEvent { status: Status::AwaitingHitl, .. }));
    assert!(matches!(e.step(&mut s, stale), Err(WorkflowError::StaleDecision(_))));
    let id = s.state.pending_hitl.as_ref().unwrap().id.clone();
    decide(&e, &mut s, Verdict::Approve, None);
    let again = Input::Decision { request_id: id, verdict: Verdict::Approve, payload: None, actor: "u".into() };
    assert!(matches!(e.step(&mut s, again), Err(WorkflowError::StaleDecision(_))));
}

#[test]
fn event_log_reconstructs_session() {
    let e = engine(&["common", "ap-01"]);
    let mut s = e.start_session();
    say(&e, &mut s, "Bring the workpiece from station 15 to station 7 and drill a 2 mm hole there.");
    decide(&e, &mut s, Verdict::Approve, None);
    decide(&e, &mut s, Verdict::Approve, None);
    assert_eq!(reconstruct(&s.events), s.state);
    let text = to_jsonl(&s.events);
    assert_eq!(text.lines().count(), s.events.len());
    assert_eq!(reconstruct(&from_jsonl(&text).unwrap()), s.state);
}

#[test]
fn iteration_limit_ends_unresolvable() {
    let config = WorkflowConfig { max_iterations: 1, ..WorkflowConfig::default() };
    let e = engine_with(scripts(&["common", "ap-01"]), "plant.json", config);
    let mut s = e.start_session();
    say(&e, &mut s, "Bring the workpiece from station 15 to station 7 and drill a 2 mm hole there.");
    decide(&e, &mut s, Verdict::Approve, None);
    decide(&e, &mut s, Verdict::Approve, None);
    assert_eq!(s.state.status, Status::Unresolvable);
    assert_eq!(s.state.iteration, 1);
}

#[test]
fn replanning_error_rolls_back_the_repair() {
    // no planner entry for a feasible outcome: the replan after the repair fails
    let entries: Vec<ScriptEntry> = scripts(&["common", "ap-02"])
        .into_iter()
        .filter(|e| !(e.agent == "planner" && e.contains == ["outcome: sat"]))
        .collect();
    let e = engine_with(entries, "plant.json", WorkflowConfig::default());
    let before = e.store().triples();
    let mut s = e.start_session();
    say(&e, &mut s, "Please drill a 2 mm hole into the workpiece at station 3.");
    decide(&e, &mut s, Verdict::Approve, None);
    decide(&e, &mut s, Verdict::Approve, None);
    assert_eq!(s.state.status, Status::AwaitingUser);
    assert_eq!(e.store().triples(), before);
    let log = e.store().change_log();
    assert!(matches!(log.last().unwrap().kind, ChangeKind::Rollback { .. }));
}

#[test]
fn runtime_failure_path_replans_with_shuttle() {
    let e = engine_with(scripts(&["common", "ap-04"]), "plant_redundant.json", WorkflowConfig::default());
    let mut s = e.start_session();
    say(&e, &mut s, "Bring the workpiece from station 3 to station 7.");
    decide(&e, &mut s, Verdict::Approve, None);
    say(&e, &mut s, "The conveyor is defective.");
    assert_eq!(s.state.pending_hitl.as_ref().unwrap().checkpoint, Checkpoint::ConfirmFailureUpdate);
    decide(&e, &mut s, Verdict::Approve, None);
    let Some(PlanningResult::Sat(plan)) = &s.state.last_result else { panic!() };
    assert_eq!(plan.steps[0].capability.as_str(), SHUTTLE);
    let record = &e.store().change_log()[0];
    assert_eq!(record.approval.as_deref(), Some(s.state.decisions[1].request_id.as_str()));
    assert!(s.state.decisions[1].timestamp < record.timestamp);
}
