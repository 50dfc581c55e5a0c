//! Assertion labels and their origins.
//!
//! ```text
//! c__<cap-hash>__<ordinal>__s<step>   capability constraint at a step
//! g__<ordinal>                        goal constraint
//! f__<name-hash>__s<step>             state update of one product property
//! x__s<step>                          step structure (one action per step)
//! ```
//!
//! Hashes are the first 8 hex digits of SHA-256 over the capability IRI or
//! the product property name. An [`EncodingIndex`] resolves them back.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::Iri;

pub fn short_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Origin {
    CapabilityConstraint { capability: Iri, ordinal: usize, step: usize },
    GoalConstraint { ordinal: usize },
    Frame { property: String, step: usize },
    Structural { step: usize },
}

impl Origin {
    pub fn label(&self) -> String {
        match self {
            Origin::CapabilityConstraint { capability, ordinal, step } => {
                format!("c__{}__{ordinal}__s{step}", short_hash(capability.as_str()))
            }
            Origin::GoalConstraint { ordinal } => format!("g__{ordinal}"),
            Origin::Frame { property, step } => format!("f__{}__s{step}", short_hash(property)),
            Origin::Structural { step } => format!("x__s{step}"),
        }
    }

    /// Constraint origins are the ones a repair can act on.
    pub fn is_constraint(&self) -> bool {
        matches!(self, Origin::CapabilityConstraint { .. } | Origin::GoalConstraint { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("unparseable label `{0}`")]
    Syntax(String),
    #[error("label `{label}` refers to unknown hash {hash}")]
    UnknownHash { label: String, hash: String },
    #[error("hash collision between `{0}` and `{1}`")]
    Collision(String, String),
}

/// Hash → source mapping for one encoding.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingIndex {
    capabilities: BTreeMap<String, Iri>,
    properties: BTreeMap<String, String>,
}

impl EncodingIndex {
    pub fn add_capability(&mut self, iri: &Iri) -> Result<String, LabelError> {
        let h = short_hash(iri.as_str());
        match self.capabilities.get(&h) {
            Some(existing) if existing != iri => {
                Err(LabelError::Collision(existing.to_string(), iri.to_string()))
            }
            _ => {
                self.capabilities.insert(h.clone(), iri.clone());
                Ok(h)
            }
        }
    }

    pub fn add_property(&mut self, name: &str) -> Result<String, LabelError> {
        let h = short_hash(name);
        match self.properties.get(&h) {
            Some(existing) if existing != name => Err(LabelError::Collision(existing.clone(), name.into())),
            _ => {
                self.properties.insert(h.clone(), name.to_string());
                Ok(h)
            }
        }
    }

    pub fn capability(&self, hash: &str) -> Option<&Iri> {
        self.capabilities.get(hash)
    }

    pub fn property(&self, hash: &str) -> Option<&str> {
        self.properties.get(hash).map(String::as_str)
    }

    pub fn parse(&self, label: &str) -> Result<Origin, LabelError> {
        let syntax = || LabelError::Syntax(label.to_string());
        let unknown = |hash: &str| LabelError::UnknownHash { label: label.into(), hash: hash.into() };
        let step = |s: &str| -> Result<usize, LabelError> {
            s.strip_prefix('s').and_then(number).ok_or_else(syntax)
        };
        let parts: Vec<&str> = label.split("__").collect();
        match parts.as_slice() {
            ["c", hash, ordinal, s] if is_hash(hash) => Ok(Origin::CapabilityConstraint {
                capability: self.capability(hash).cloned().ok_or_else(|| unknown(hash))?,
                ordinal: number(ordinal).ok_or_else(syntax)?,
                step: step(s)?,
            }),
            ["g", ordinal] => Ok(Origin::GoalConstraint { ordinal: number(ordinal).ok_or_else(syntax)? }),
            ["f", hash, s] if is_hash(hash) => Ok(Origin::Frame {
                property: self.property(hash).ok_or_else(|| unknown(hash))?.to_string(),
                step: step(s)?,
            }),
            ["x", s] => Ok(Origin::Structural { step: step(s)? }),
            _ => Err(syntax()),
        }
    }
}

fn is_hash(s: &str) -> bool {
    s.len() == 8 && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

/// Canonical decimal numbers only, so that parsing inverts printing.
fn number(s: &str) -> Option<usize> {
    if s.is_empty() || (s.len() > 1 && s.starts_with('0')) || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::CapabilityConstraint { capability, ordinal, step } => {
                write!(f, "constraint {ordinal} of {capability} at step {step}")
            }
            Origin::GoalConstraint { ordinal } => write!(f, "goal constraint {ordinal}"),
            Origin::Frame { property, step } => write!(f, "state update of {property} at step {step}"),
            Origin::Structural { step } => write!(f, "step structure at step {step}"),
        }
    }
}
