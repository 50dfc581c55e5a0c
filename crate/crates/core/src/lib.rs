//! Capability-based planning assistance: a typed capability model, an
//! embedded triple store, a bounded-horizon SMT planner with UNSAT-core
//! diagnosis, and a routed multi-agent workflow with human approval
//! checkpoints.

pub mod model;
pub mod clock;
pub mod store;
pub mod solver;
pub mod smt;
pub mod llm;
pub mod agents;
pub mod workflow;
pub mod scenario;
