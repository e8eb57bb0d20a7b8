//! Structured payloads carried in request context blocks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::Triple;
use crate::types::EntityType;

/// Evidence entity as shown to experts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub canonical: String,
    pub entity_type: EntityType,
    #[serde(default)]
    pub effective_weight: f64,
    #[serde(default)]
    pub abnormal: bool,
}

/// Shortest path from one evidence entity to a candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityPath {
    pub entity: String,
    pub hops: usize,
    pub triples: Vec<Triple>,
}

/// Structured knowledge context for one candidate: incident triples plus
/// shortest paths from the evidence entities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiseaseContext {
    pub direct: Vec<Triple>,
    pub paths: Vec<EntityPath>,
}

pub type GraphContext = BTreeMap<String, DiseaseContext>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictNote {
    pub pair: (String, String),
    pub confidence_gap: f64,
    /// Features that tell the two diagnoses apart.
    pub discriminating: Vec<String>,
}

/// Payload of the re-examination request sent back to the primary expert.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackPayload {
    pub round: usize,
    pub conflicts: Vec<ConflictNote>,
    pub instruction: String,
}
