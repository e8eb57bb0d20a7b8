//! Vocabulary shared by the graph and the entity pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Functional category of a clinical entity or graph node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityType {
    /// Symptom.
    Sym,
    /// Disease.
    Dis,
    /// Drug.
    Dru,
    /// Body part.
    Bod,
    /// Examination item (labs, imaging findings).
    Ite,
    /// Medical equipment.
    Equ,
    /// Microorganism.
    Mic,
    /// Department.
    Dep,
    /// Procedure.
    Pro,
}

impl EntityType {
    pub const ALL: [EntityType; 9] = [
        EntityType::Sym,
        EntityType::Dis,
        EntityType::Dru,
        EntityType::Bod,
        EntityType::Ite,
        EntityType::Equ,
        EntityType::Mic,
        EntityType::Dep,
        EntityType::Pro,
    ];

    pub fn code(self) -> &'static str {
        match self {
            EntityType::Sym => "sym",
            EntityType::Dis => "dis",
            EntityType::Dru => "dru",
            EntityType::Bod => "bod",
            EntityType::Ite => "ite",
            EntityType::Equ => "equ",
            EntityType::Mic => "mic",
            EntityType::Dep => "dep",
            EntityType::Pro => "pro",
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown entity type code `{0}`")]
pub struct UnknownEntityType(pub String);

impl FromStr for EntityType {
    type Err = UnknownEntityType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let code = s.trim().to_ascii_lowercase();
        EntityType::ALL
            .into_iter()
            .find(|t| t.code() == code)
            .ok_or_else(|| UnknownEntityType(s.trim().to_string()))
    }
}

/// Semantic class of a relation label, used by the relation miner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationClass {
    /// Pathological subtype / staging edge: endpoints are mutually exclusive.
    SubtypeExclusive,
    /// Explicit differential-diagnosis edge.
    Differential,
    /// Disease to core clinical feature (symptom, imaging, biochemistry).
    Feature,
    #[default]
    Generic,
}

impl RelationClass {
    pub fn code(self) -> &'static str {
        match self {
            RelationClass::SubtypeExclusive => "subtype_exclusive",
            RelationClass::Differential => "differential",
            RelationClass::Feature => "feature",
            RelationClass::Generic => "generic",
        }
    }
}

impl FromStr for RelationClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "subtype_exclusive" => Ok(RelationClass::SubtypeExclusive),
            "differential" => Ok(RelationClass::Differential),
            "feature" => Ok(RelationClass::Feature),
            "generic" => Ok(RelationClass::Generic),
            other => Err(other.to_string()),
        }
    }
}
