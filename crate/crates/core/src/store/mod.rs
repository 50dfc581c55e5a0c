//! Embedded in-memory triple store over the capability model.
//!
//! Reads go through [`GraphStore::query`]; writes go through
//! [`GraphStore::apply_change_set`], which is the single place where the
//! human-approval requirement is enforced: every mutation must cite an
//! approved, not yet consumed decision registered in the store's
//! [`ApprovalRegistry`].

mod query;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use query::{
    evaluate, iri_term, parse_update, Filter, QueryError, QueryForm, QueryKind, QueryResult, TermPattern,
    TriplePattern,
};

use crate::clock::{Clock, LogicalClock};
use crate::model::rdf::{self, IntegrityError, Triple};
use crate::model::{parse_model, serialize_model, CapabilityModel, ModelError, ModelFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SnapshotId(pub u64);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ChangeKind {
    Mutation,
    Rollback { snapshot: SnapshotId },
}

/// One entry of the change log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeRecord {
    pub sequence: u64,
    pub kind: ChangeKind,
    pub inserted: Vec<Triple>,
    pub deleted: Vec<Triple>,
    /// Decision id that authorized the change; always set for mutations.
    pub approval: Option<String>,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApprovalState {
    Approved,
    Denied,
    Consumed,
}

/// Approval decisions known to the store.
#[derive(Debug, Default)]
pub struct ApprovalRegistry {
    decisions: Mutex<BTreeMap<String, ApprovalState>>,
}

impl ApprovalRegistry {
    /// Records an approval. Re-granting a known id is refused.
    pub fn grant(&self, decision: &str) -> Result<(), StoreError> {
        self.record(decision, ApprovalState::Approved)
    }

    pub fn deny(&self, decision: &str) -> Result<(), StoreError> {
        self.record(decision, ApprovalState::Denied)
    }

    fn record(&self, decision: &str, state: ApprovalState) -> Result<(), StoreError> {
        let mut map = self.decisions.lock();
        if map.contains_key(decision) {
            return Err(StoreError::Approval {
                decision: decision.to_string(),
                reason: "decision already recorded".into(),
            });
        }
        map.insert(decision.to_string(), state);
        Ok(())
    }

    pub fn state(&self, decision: &str) -> Option<ApprovalState> {
        self.decisions.lock().get(decision).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("mutation rejected, approval `{decision}`: {reason}")]
    Approval { decision: String, reason: String },
    #[error("mutation rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("unknown snapshot {0:?}")]
    UnknownSnapshot(SnapshotId),
    #[error("integrity error: {0}")]
    Integrity(#[from] IntegrityError),
    #[error("persistence: {0}")]
    Persistence(String),
}

#[derive(Debug, Default)]
struct Inner {
    triples: BTreeSet<Triple>,
    log: Vec<ChangeRecord>,
    snapshots: BTreeMap<SnapshotId, BTreeSet<Triple>>,
    next_snapshot: u64,
}

impl Inner {
    fn append(&mut self, kind: ChangeKind, inserted: Vec<Triple>, deleted: Vec<Triple>, approval: Option<String>, timestamp: u64) -> ChangeRecord {
        let record = ChangeRecord {
            sequence: self.log.len() as u64 + 1,
            kind,
            inserted,
            deleted,
            approval,
            timestamp,
        };
        self.log.push(record.clone());
        record
    }
}

/// Shared handle to the store; cheap to clone.
#[derive(Clone)]
pub struct GraphStore {
    inner: Arc<RwLock<Inner>>,
    approvals: Arc<ApprovalRegistry>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for GraphStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GraphStore").field("triples", &self.len()).finish()
    }
}

impl GraphStore {
    /// Loads the triple projection of `model`.
    pub fn load(model: &CapabilityModel) -> Self {
        GraphStore::load_with_clock(model, Arc::new(LogicalClock::default()))
    }

    pub fn load_with_clock(model: &CapabilityModel, clock: Arc<dyn Clock>) -> Self {
        let inner = Inner { triples: rdf::model_to_triples(model).into_iter().collect(), ..Inner::default() };
        GraphStore { inner: Arc::new(RwLock::new(inner)), approvals: Arc::default(), clock }
    }

    /// Opens a persisted model document (JSON form).
    pub fn open(path: &Path, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(path).map_err(|e| StoreError::Persistence(format!("{}: {e}", path.display())))?;
        let model = parse_model(&text, ModelFormat::JsonForm)
            .map_err(|e: ModelError| StoreError::Persistence(e.to_string()))?;
        Ok(GraphStore::load_with_clock(&model, clock))
    }

    /// Writes the materialized model to `path` as a JSON-form document.
    pub fn persist(&self, path: &Path) -> Result<(), StoreError> {
        let model = self.materialize()?;
        std::fs::write(path, serialize_model(&model, ModelFormat::JsonForm))
            .map_err(|e| StoreError::Persistence(format!("{}: {e}", path.display())))
    }

    /// Reads the store clock; decisions and change records share it.
    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn approvals(&self) -> &ApprovalRegistry {
        &self.approvals
    }

    pub fn len(&self) -> usize {
        self.inner.read().triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn triples(&self) -> BTreeSet<Triple> {
        self.inner.read().triples.clone()
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.inner.read().triples.contains(triple)
    }

    /// True when `iri` occurs as a subject or object.
    pub fn mentions(&self, iri: &crate::model::Iri) -> bool {
        self.inner.read().triples.iter().any(|t| {
            &t.subject == iri || matches!(&t.object, rdf::Term::Iri(o) if o == iri)
        })
    }

    pub fn query(&self, form: &QueryForm) -> Result<QueryResult, StoreError> {
        Ok(evaluate(form, &self.inner.read().triples)?)
    }

    pub fn query_text(&self, text: &str) -> Result<QueryResult, StoreError> {
        self.query(&QueryForm::parse(text)?)
    }

    pub fn materialize(&self) -> Result<CapabilityModel, StoreError> {
        let triples: Vec<Triple> = self.inner.read().triples.iter().cloned().collect();
        Ok(rdf::triples_to_model(&triples)?)
    }

    /// Applies a single update under `approval`.
    pub fn apply_mutation(&self, form: &QueryForm, approval: &str) -> Result<ChangeRecord, StoreError> {
        let mut records = self.apply_change_set(std::slice::from_ref(form), approval)?;
        Ok(records.remove(0))
    }

    /// Applies several updates as one atomic change set. Either all of
    /// them take effect and the approval is consumed, or none do.
    pub fn apply_change_set(&self, forms: &[QueryForm], approval: &str) -> Result<Vec<ChangeRecord>, StoreError> {
        if forms.is_empty() {
            return Err(StoreError::Rejected("empty change set".into()));
        }
        for f in forms {
            if !f.kind.is_update() {
                return Err(QueryError::WrongKind { expected: "INSERT DATA or DELETE DATA", found: f.kind }.into());
            }
        }
        let mut inner = self.inner.write();
        match self.approvals.state(approval) {
            Some(ApprovalState::Approved) => {}
            Some(ApprovalState::Denied) => {
                return Err(StoreError::Approval { decision: approval.into(), reason: "decision was a denial".into() })
            }
            Some(ApprovalState::Consumed) => {
                return Err(StoreError::Approval { decision: approval.into(), reason: "approval already consumed".into() })
            }
            None => {
                return Err(StoreError::Approval { decision: approval.into(), reason: "no such approved decision".into() })
            }
        }
        let mut working = inner.triples.clone();
        let mut changes = Vec::new();
        for f in forms {
            let mut inserted = Vec::new();
            let mut deleted = Vec::new();
            for t in &f.data {
                match f.kind {
                    QueryKind::Insert => {
                        if working.insert(t.clone()) {
                            inserted.push(t.clone());
                        }
                    }
                    _ => {
                        if !working.remove(t) {
                            return Err(StoreError::Rejected(format!("cannot delete absent triple {t}")));
                        }
                        deleted.push(t.clone());
                    }
                }
            }
            changes.push((inserted, deleted));
        }
        {
            let mut map = self.approvals.decisions.lock();
            map.insert(approval.to_string(), ApprovalState::Consumed);
        }
        inner.triples = working;
        let mut records = Vec::new();
        for (inserted, deleted) in changes {
            let ts = self.clock.now();
            records.push(inner.append(ChangeKind::Mutation, inserted, deleted, Some(approval.to_string()), ts));
        }
        Ok(records)
    }

    pub fn snapshot(&self) -> SnapshotId {
        let mut inner = self.inner.write();
        inner.next_snapshot += 1;
        let id = SnapshotId(inner.next_snapshot);
        let copy = inner.triples.clone();
        inner.snapshots.insert(id, copy);
        id
    }

    /// Restores the triple set captured by `id` and logs the difference.
    pub fn rollback(&self, id: SnapshotId) -> Result<ChangeRecord, StoreError> {
        let mut inner = self.inner.write();
        let target = inner.snapshots.get(&id).cloned().ok_or(StoreError::UnknownSnapshot(id))?;
        let inserted: Vec<Triple> = target.difference(&inner.triples).cloned().collect();
        let deleted: Vec<Triple> = inner.triples.difference(&target).cloned().collect();
        inner.triples = target;
        let ts = self.clock.now();
        Ok(inner.append(ChangeKind::Rollback { snapshot: id }, inserted, deleted, None, ts))
    }

    pub fn change_log(&self) -> Vec<ChangeRecord> {
        self.inner.read().log.clone()
    }

    /// Change log as line-delimited JSON, one record per line.
    pub fn export_change_log(&self) -> String {
        self.inner
            .read()
            .log
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    /// Independent copy with the same triples and no log, for dry runs.
    pub fn fork(&self) -> GraphStore {
        let inner = Inner { triples: self.triples(), ..Inner::default() };
        GraphStore { inner: Arc::new(RwLock::new(inner)), approvals: Arc::default(), clock: Arc::new(LogicalClock::default()) }
    }

    /// Applies updates to this store without approval bookkeeping. Only
    /// reachable on forks.
    pub fn apply_unchecked_on_fork(&self, forms: &[QueryForm]) -> Result<(), StoreError> {
        let grant = "dry-run";
        if self.approvals.state(grant).is_none() {
            self.approvals.grant(grant)?;
        } else {
            self.approvals.decisions.lock().insert(grant.to_string(), ApprovalState::Approved);
        }
        self.apply_change_set(forms, grant).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rdf::{cap, Term};
    use crate::model::{Capability, CapabilityKind, ConstraintExpr, Datatype, Iri, Literal, PropertyDecl, PropertyValue, Resource, Role, Subject};

    fn iri(s: &str) -> Iri {
        Iri::new(s).unwrap()
    }

    fn model() -> CapabilityModel {
        let depth = iri("urn:t:Drill/depth");
        CapabilityModel {
            resources: vec![Resource { iri: iri("urn:t:DrillingModule"), name: "DrillingModule".into() }],
            capabilities: vec![Capability {
                iri: iri("urn:t:Drill"),
                kind: CapabilityKind::Provided,
                description: "Drill".into(),
                resource: Some(iri("urn:t:DrillingModule")),
                inputs: vec![],
                outputs: vec![PropertyDecl {
                    iri: depth.clone(),
                    name: "depth".into(),
                    datatype: Datatype::Real,
                    role: Role::Output,
                    subject: Subject::Product,
                    value: PropertyValue::Constant(Literal::real("2")),
                    unit: Some("mm".into()),
                }],
                constraints: vec![ConstraintExpr::range(&depth, Literal::real("5"), Literal::real("10"))],
            }],
        }
    }

    fn depth_update(kind: &str, value: &str) -> QueryForm {
        QueryForm::parse(&format!("{kind} DATA {{ <urn:t:Drill/depth> cap:value \"{value}\"^^xsd:decimal }}")).unwrap()
    }

    #[test]
    fn mutation_without_approval_is_rejected() {
        let store = GraphStore::load(&model());
        let before = store.triples();
        let err = store.apply_mutation(&depth_update("DELETE", "2"), "nope").unwrap_err();
        assert!(matches!(err, StoreError::Approval { .. }));
        assert_eq!(store.triples(), before);
        assert!(store.change_log().is_empty());
    }

    #[test]
    fn approved_change_set_is_atomic_and_consumes_approval() {
        let store = GraphStore::load(&model());
        store.approvals().grant("A2").unwrap();
        let records = store
            .apply_change_set(&[depth_update("DELETE", "2"), depth_update("INSERT", "5")], "A2")
            .unwrap();
        assert_eq!(records.len(), 2);
        assert!(records.iter().all(|r| r.approval.as_deref() == Some("A2")));
        let m = store.materialize().unwrap();
        assert_eq!(m.capabilities[0].outputs[0].value, PropertyValue::Constant(Literal::real("5")));
        let again = store.apply_mutation(&depth_update("INSERT", "7"), "A2").unwrap_err();
        assert!(matches!(again, StoreError::Approval { ref reason, .. } if reason.contains("consumed")));
    }

    #[test]
    fn failed_change_set_leaves_store_untouched() {
        let store = GraphStore::load(&model());
        store.approvals().grant("A3").unwrap();
        let before = store.triples();
        let err = store
            .apply_change_set(&[depth_update("DELETE", "2"), depth_update("DELETE", "9")], "A3")
            .unwrap_err();
        assert!(matches!(err, StoreError::Rejected(_)));
        assert_eq!(store.triples(), before);
        assert_eq!(store.approvals().state("A3"), Some(ApprovalState::Approved));
    }

    #[test]
    fn denied_decision_cannot_mutate() {
        let store = GraphStore::load(&model());
        store.approvals().deny("D1").unwrap();
        assert!(store.apply_mutation(&depth_update("DELETE", "2"), "D1").is_err());
        assert!(store.approvals().grant("D1").is_err());
    }

    #[test]
    fn snapshot_rollback_restores_triples() {
        let store = GraphStore::load(&model());
        let original = store.materialize().unwrap();
        let snap = store.snapshot();
        store.approvals().grant("A1").unwrap();
        store.apply_change_set(&[depth_update("DELETE", "2"), depth_update("INSERT", "5")], "A1").unwrap();
        let record = store.rollback(snap).unwrap();
        assert_eq!(record.kind, ChangeKind::Rollback { snapshot: snap });
        assert_eq!(store.materialize().unwrap(), original);
        assert_eq!(store.change_log().len(), 3);
        assert!(matches!(store.rollback(SnapshotId(99)), Err(StoreError::UnknownSnapshot(_))));
    }

    #[test]
    fn two_mutations_roll_back_to_first_snapshot() {
        let store = GraphStore::load(&model());
        let first = store.snapshot();
        let before = store.triples();
        store.approvals().grant("A1").unwrap();
        store.apply_change_set(&[depth_update("DELETE", "2"), depth_update("INSERT", "5")], "A1").unwrap();
        let _second = store.snapshot();
        store.approvals().grant("A2").unwrap();
        store.apply_change_set(&[depth_update("DELETE", "5"), depth_update("INSERT", "6")], "A2").unwrap();
        store.rollback(first).unwrap();
        assert_eq!(store.triples(), before);
    }

    #[test]
    fn materialize_surfaces_dangling_triples() {
        let store = GraphStore::load(&model());
        store.approvals().grant("A1").unwrap();
        let name = Triple::new(iri("urn:t:Drill/depth"), cap("name"), Term::string("depth"));
        store.apply_mutation(&QueryForm::delete(vec![name]), "A1").unwrap();
        assert!(matches!(store.materialize(), Err(StoreError::Integrity(_))));
    }

    #[test]
    fn change_log_exports_one_line_per_record() {
        let store = GraphStore::load(&model());
        store.approvals().grant("A1").unwrap();
        store.apply_change_set(&[depth_update("DELETE", "2"), depth_update("INSERT", "5")], "A1").unwrap();
        let text = store.export_change_log();
        assert_eq!(text.lines().count(), 2);
        for line in text.lines() {
            let r: ChangeRecord = serde_json::from_str(line).unwrap();
            assert_eq!(r.approval.as_deref(), Some("A1"));
        }
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let store = GraphStore::load(&model());
        store.persist(&path).unwrap();
        let reopened = GraphStore::open(&path, Arc::new(LogicalClock::default())).unwrap();
        assert_eq!(reopened.triples(), store.triples());
    }
}
