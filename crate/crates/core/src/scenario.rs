//! Scenario harness: replays scripted sessions against a fixture model and
//! grades the outcome per category.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::Edit;
use crate::clock::LogicalClock;
use crate::llm::ScriptedProvider;
use crate::model::{parse_model, Iri, Literal, ModelFormat};
use crate::smt::PlanningResult;
use crate::store::GraphStore;
use crate::workflow::{to_jsonl, Engine, Event, Input, Session, Status, Verdict, WorkflowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    KQ,
    SAT,
    UNSAT,
    AP,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::KQ, Category::SAT, Category::UNSAT, Category::AP];

    fn default_repetitions(self) -> usize {
        match self {
            Category::KQ => 1,
            _ => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ScenarioTurn {
    Message { text: String },
    /// Decides the request pending at that point.
    Decision {
        verdict: Verdict,
        #[serde(default)]
        payload: Option<Value>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedStep {
    pub capability: Iri,
    #[serde(default)]
    pub assignments: BTreeMap<Iri, Literal>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedConflict {
    #[serde(default)]
    pub goal: Vec<usize>,
    /// `<capability iri>#<ordinal>`
    #[serde(default)]
    pub capabilities: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalOutcome {
    Sat,
    Unresolvable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "category")]
pub enum Expectation {
    KQ { facts: Vec<String> },
    SAT { steps: Vec<ExpectedStep> },
    UNSAT { conflicts: Vec<ExpectedConflict> },
    AP {
        iterations: usize,
        /// Edits applied, one list per approved proposal.
        repairs: Vec<Vec<Edit>>,
        #[serde(rename = "final")]
        outcome: FinalOutcome,
        #[serde(default)]
        path: Option<Vec<String>>,
    },
}

impl Expectation {
    pub fn category(&self) -> Category {
        match self {
            Expectation::KQ { .. } => Category::KQ,
            Expectation::SAT { .. } => Category::SAT,
            Expectation::UNSAT { .. } => Category::UNSAT,
            Expectation::AP { .. } => Category::AP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub title: String,
    /// Model document, relative to the spec file.
    pub fixture: PathBuf,
    /// Script documents, relative to the spec file.
    pub scripts: Vec<PathBuf>,
    pub turns: Vec<ScenarioTurn>,
    pub expect: Expectation,
    #[serde(default)]
    pub repetitions: Option<usize>,
    #[serde(default)]
    pub workflow: Option<WorkflowConfig>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Load { path: String, message: String },
    #[error("{0}: spec is invalid: {1}")]
    Invalid(String, String),
}

fn load_err(path: &Path, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Load { path: path.display().to_string(), message: e.to_string() }
}

/// A spec with its references resolved against the spec's directory.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub spec: ScenarioSpec,
    pub fixture: PathBuf,
    pub scripts: Vec<PathBuf>,
}

impl LoadedScenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| load_err(path, e))?;
        let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| load_err(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fixture = base.join(&spec.fixture);
        let scripts: Vec<PathBuf> = spec.scripts.iter().map(|s| base.join(s)).collect();
        for p in std::iter::once(&fixture).chain(scripts.iter()) {
            if !p.is_file() {
                return Err(load_err(p, "referenced file does not exist"));
            }
        }
        let empty = match &spec.expect {
            Expectation::KQ { facts } => facts.is_empty(),
            Expectation::SAT { steps } => steps.is_empty(),
            Expectation::UNSAT { conflicts } => conflicts.is_empty(),
            Expectation::AP { .. } => false,
        };
        if empty || spec.turns.is_empty() {
            return Err(ScenarioError::Invalid(spec.id.clone(), "turns and expectations must be non-empty".into()));
        }
        Ok(LoadedScenario { spec, fixture, scripts })
    }

    pub fn repetitions(&self) -> usize {
        self.spec.repetitions.unwrap_or(self.spec.expect.category().default_repetitions())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grade {
    Not,
    Partially,
    Fully,
}

/// Outcome of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub grade: Grade,
    pub notes: Vec<String>,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub id: String,
    pub category: Category,
    pub grade: Grade,
    /// AP cases are graded pass/fail; a pass is reported as `fully`.
    pub passed: bool,
    pub repetitions: usize,
    pub identical: bool,
    pub notes: Vec<String>,
}

/// Runs one scenario `repetitions` times, each on a fresh store, provider
/// and engine.
pub fn run_scenario(scenario: &LoadedScenario, repetitions: usize) -> Result<(CaseReport, Vec<Repetition>), ScenarioError> {
    let text = std::fs::read_to_string(&scenario.fixture).map_err(|e| load_err(&scenario.fixture, e))?;
    let model = parse_model(&text, ModelFormat::JsonForm).map_err(|e| load_err(&scenario.fixture, e))?;
    let mut config = scenario.spec.workflow.clone().unwrap_or_default();
    config.solver = config.solver.with_env_override();
    let mut reps = Vec::new();
    for _ in 0..repetitions.max(1) {
        let provider = ScriptedProvider::from_files(&scenario.scripts)
            .map_err(|e| load_err(scenario.scripts.first().map(PathBuf::as_path).unwrap_or(Path::new("")), e))?;
        let store = GraphStore::load_with_clock(&model, Arc::new(LogicalClock::default()));
        let engine = Engine::new(store, Arc::new(provider), config.clone());
        let mut session = engine.start_session();
        let mut notes = Vec::new();
        for turn in &scenario.spec.turns {
            let input = match turn {
                ScenarioTurn::Message { text } => Input::Message { text: text.clone() },
                ScenarioTurn::Decision { verdict, payload } => {
                    let Some(pending) = &session.state.pending_hitl else {
                        notes.push("a decision turn found no pending request".into());
                        break;
                    };
                    Input::Decision {
                        request_id: pending.id.clone(),
                        verdict: *verdict,
                        payload: payload.clone(),
                        actor: "scenario".into(),
                    }
                }
            };
            if let Err(e) = engine.step(&mut session, input) {
                notes.push(e.to_string());
                break;
            }
        }
        let mut grade_notes = grade(&scenario.spec.expect, &session);
        let grade = grade_notes.0;
        notes.append(&mut grade_notes.1);
        let transcript = to_jsonl(&session.events) + &engine.store().export_change_log();
        reps.push(Repetition { grade, notes, transcript });
    }
    let identical = reps.windows(2).all(|w| w[0].transcript == w[1].transcript);
    let mut grade = reps.iter().map(|r| r.grade).min().unwrap_or(Grade::Not);
    let mut notes: Vec<String> = reps.first().map(|r| r.notes.clone()).unwrap_or_default();
    if !identical {
        notes.push("repetitions produced different transcripts".into());
        grade = grade.min(Grade::Partially);
    }
    let category = scenario.spec.expect.category();
    if category == Category::KQ {
        // fact presence is automated; whether the answer reads well is not
        notes.push("understandability not assessed (out-of-band)".into());
    }
    if category == Category::AP && grade != Grade::Fully {
        grade = Grade::Not;
    }
    let report = CaseReport {
        id: scenario.spec.id.clone(),
        category,
        grade,
        passed: grade == Grade::Fully,
        repetitions: reps.len(),
        identical,
        notes,
    };
    Ok((report, reps))
}

fn error_notes(session: &Session) -> Vec<String> {
    session
        .state
        .transcript
        .iter()
        .filter(|t| t.speaker == crate::workflow::Speaker::Error)
        .map(|t| format!("error turn: {}", t.text))
        .collect()
}

fn planned(session: &Session) -> Vec<&PlanningResult> {
    session
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Planned { result, .. } => Some(result),
            _ => None,
        })
        .collect()
}

fn grade(expect: &Expectation, session: &Session) -> (Grade, Vec<String>) {
    let mut notes = error_notes(session);
    let g = match expect {
        Expectation::KQ { facts } => {
            let answer = session
                .events
                .iter()
                .rev()
                .find_map(|e| match e {
                    Event::SystemTurn { text } => Some(text.as_str()),
                    _ => None,
                })
                .unwrap_or_default();
            let missing: Vec<&String> = facts.iter().filter(|f| !answer.contains(f.as_str())).collect();
            for m in &missing {
                notes.push(format!("answer omits `{m}`"));
            }
            if missing.is_empty() {
                Grade::Fully
            } else if missing.len() < facts.len() {
                Grade::Partially
            } else {
                Grade::Not
            }
        }
        Expectation::SAT { steps } => match planned(session).last() {
            Some(PlanningResult::Sat(plan)) => {
                let caps: Vec<&Iri> = plan.steps.iter().map(|s| &s.capability).collect();
                let want: Vec<&Iri> = steps.iter().map(|s| &s.capability).collect();
                if caps != want {
                    notes.push(format!("step sequence {caps:?} differs from {want:?}"));
                    Grade::Not
                } else {
                    let mut ok = true;
                    for (got, want) in plan.steps.iter().zip(steps) {
                        for (p, v) in &want.assignments {
                            if got.assignments.get(p) != Some(v) {
                                notes.push(format!("step {} assigns {p} = {:?}, expected {v}", got.index, got.assignments.get(p)));
                                ok = false;
                            }
                        }
                    }
                    if ok {
                        Grade::Fully
                    } else {
                        Grade::Partially
                    }
                }
            }
            _ => {
                notes.push("no satisfiable planning result".into());
                Grade::Not
            }
        },
        Expectation::UNSAT { conflicts } => match planned(session).first() {
            Some(PlanningResult::Unsat(d)) => {
                let got: Vec<ExpectedConflict> = d
                    .conflicts
                    .iter()
                    .map(|c| ExpectedConflict {
                        goal: c.goal_constraints.iter().copied().collect(),
                        capabilities: c
                            .capability_constraints
                            .iter()
                            .map(|id| format!("{}#{}", id.capability, id.ordinal))
                            .collect(),
                    })
                    .collect();
                let norm = |v: &[ExpectedConflict]| {
                    let mut v: Vec<(Vec<usize>, Vec<String>)> = v
                        .iter()
                        .map(|c| {
                            let mut g = c.goal.clone();
                            g.sort();
                            let mut k = c.capabilities.clone();
                            k.sort();
                            (g, k)
                        })
                        .collect();
                    v.sort();
                    v
                };
                let (got, want) = (norm(&got), norm(conflicts));
                if got == want {
                    Grade::Fully
                } else {
                    notes.push(format!("conflicts {got:?} differ from {want:?}"));
                    if want.iter().any(|w| got.contains(w)) {
                        Grade::Partially
                    } else {
                        Grade::Not
                    }
                }
            }
            _ => {
                notes.push("first planning result is not infeasible".into());
                Grade::Not
            }
        },
        Expectation::AP { iterations, repairs, outcome, path } => {
            let mut ok = true;
            if session.state.iteration != *iterations {
                notes.push(format!("{} iterations, expected {iterations}", session.state.iteration));
                ok = false;
            }
            let applied = applied_repairs(session);
            if &applied != repairs {
                notes.push(format!("applied repairs {} differ from the expected ones", serde_json::to_string(&applied).unwrap_or_default()));
                ok = false;
            }
            let status_ok = match outcome {
                FinalOutcome::Sat => {
                    session.state.status == Status::Done
                        && matches!(planned(session).last(), Some(PlanningResult::Sat(_)))
                }
                FinalOutcome::Unresolvable => session.state.status == Status::Unresolvable,
            };
            if !status_ok {
                notes.push(format!("final status {:?}", session.state.status));
                ok = false;
            }
            if let Some(path) = path {
                if &session.state.path != path {
                    notes.push(format!("node path {:?}", session.state.path));
                    ok = false;
                }
            }
            if ok && notes.is_empty() {
                Grade::Fully
            } else {
                Grade::Not
            }
        }
    };
    (g, notes)
}

/// Edits of each proposal that was applied, in order.
pub fn applied_repairs(session: &Session) -> Vec<Vec<Edit>> {
    let mut last = None;
    let mut out = Vec::new();
    for e in &session.events {
        match e {
            Event::ProposalMade { proposal } => last = Some(proposal.edits.clone()),
            Event::HitlDecided { decision } if decision.verdict == Verdict::Modify => {
                if let Some(edits) = decision.payload.as_ref().and_then(|p| p.get("edits")) {
                    last = serde_json::from_value(edits.clone()).ok();
                }
            }
            Event::ChangeApplied { .. } => out.extend(last.take()),
            _ => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<CaseReport>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    /// Aggregate table with one row per category.
    pub fn table(&self) -> String {
        let mut out = String::from("Category  Cases  Reps  Fully  Partially  Not  Passed\n");
        for cat in Category::ALL {
            let rows: Vec<&CaseReport> = self.cases.iter().filter(|c| c.category == cat).collect();
            if rows.is_empty() {
                continue;
            }
            let count = |g: Grade| rows.iter().filter(|c| c.grade == g).count();
            let reps: usize = rows.iter().map(|c| c.repetitions).sum();
            let passed = rows.iter().filter(|c| c.passed).count();
            let (fully, partially) = if cat == Category::AP {
                ("-".to_string(), "-".to_string())
            } else {
                (count(Grade::Fully).to_string(), count(Grade::Partially).to_string())
            };
            let _ = writeln!(
                out,
                "{:<9} {:>5}  {:>4}  {:>5}  {:>9}  {:>3}  {:>3}/{}",
                format!("{cat:?}"),
                rows.len(),
                reps,
                fully,
                partially,
                count(Grade::Not),
                passed,
                rows.len()
            );
        }
        let total = self.cases.len();
        let passed = self.cases.iter().filter(|c| c.passed).count();
        let _ = writeln!(out, "Total     {total:>5}  passed {passed}/{total}");
        out
    }

    /// One line per case, then the table.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            let verdict = if c.category == Category::AP {
                if c.passed { "pass" } else { "fail" }.to_string()
            } else {
                format!("{:?}", c.grade).to_lowercase()
            };
            let _ = write!(out, "{:<8} {:<6} {:<10} reps={} identical={}", c.id, format!("{:?}", c.category), verdict, c.repetitions, c.identical);
            for n in &c.notes {
                let _ = write!(out, "\n         - {n}");
            }
            out.push('\n');
        }
        out.push('\n');
        out + &self.table()
    }
}

/// Scenario spec files of `dir`, sorted by name.
pub fn discover(dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| load_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Runs every spec in `dir`. `repetitions` overrides the per-spec count.
pub fn run_suite(dir: &Path, repetitions: Option<usize>) -> Result<SuiteReport, ScenarioError> {
    let mut cases = Vec::new();
    for path in discover(dir)? {
        let scenario = LoadedScenario::load(&path)?;
        let reps = repetitions.unwrap_or(scenario.repetitions());
        let (report, _) = run_scenario(&scenario, reps)?;
        cases.push(report);
    }
    Ok(SuiteReport { cases })
}
