#![allow(dead_code)]

use std::path::PathBuf;

use capaplan_core::model::{parse_model, CapabilityModel, Iri, ModelFormat};
use capaplan_core::solver::{SolverConfig, SolverHandle};

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn load_model(name: &str) -> CapabilityModel {
    let path = fixtures_dir().join("models").join(name);
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_model(&text, ModelFormat::JsonForm).unwrap()
}

pub fn plant() -> CapabilityModel {
    load_model("plant.json")
}

pub fn iri(s: &str) -> Iri {
    Iri::new(s).unwrap()
}

pub fn req(name: &str) -> Iri {
    iri(&format!("urn:plant:req/{name}"))
}

pub const CONVEYOR: &str = "urn:plant:Conveyor/transport";
pub const DRILL: &str = "urn:plant:DrillingModule/drill";
pub const SUPPLY: &str = "urn:plant:Magazine/supply";
pub const SHUTTLE: &str = "urn:plant:Shuttle/transport";

pub fn solver() -> SolverHandle {
    SolverHandle::new(SolverConfig::default().with_env_override()).unwrap()
}
