//! Expert roles as a uniform request/response protocol.
//!
//! A backend turns an [`ExpertRequest`] into raw response text. The
//! [`ExpertGateway`] parses that text against the role schema, validates it
//! against the request, and re-asks once with a repair hint when a backend
//! returns something unusable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::text::normalize_name;
use crate::types::EntityType;

pub mod context;
pub mod http;
pub mod mock;
pub mod prompts;

pub use http::{HttpBackend, HttpSettings};
pub use mock::{MockBackend, RuleSet};

/// Context block labels. Prompt templates reference these as `{{label}}`.
pub mod labels {
    pub const SUMMARY: &str = "summary";
    pub const RECORD: &str = "record";
    pub const FEEDBACK: &str = "feedback";
    pub const BASE: &str = "s_base";
    pub const EXAM: &str = "s_exam";
    pub const ENTITIES: &str = "entities";
    pub const CANDIDATES: &str = "candidates";
    pub const ABNORMAL: &str = "abnormal";
    pub const GRAPH_CONTEXT: &str = "graph_context";
    pub const PATIENT: &str = "patient";
    pub const EXCLUSION_PATHS: &str = "exclusion_paths";
    pub const CONFUSION_EVIDENCE: &str = "confusion_evidence";
    pub const CONFIDENCE: &str = "confidence";
    pub const O_EXC: &str = "o_exc";
    pub const O_CONF: &str = "o_conf";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Primary,
    Laboratory,
    SingleDisease,
    Exclusion,
    Confusion,
    Adjustment,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Primary,
        Role::Laboratory,
        Role::SingleDisease,
        Role::Exclusion,
        Role::Confusion,
        Role::Adjustment,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Role::Primary => "primary",
            Role::Laboratory => "laboratory",
            Role::SingleDisease => "single_disease",
            Role::Exclusion => "exclusion",
            Role::Confusion => "confusion",
            Role::Adjustment => "adjustment",
        }
    }

    /// Schema identifier the response must satisfy.
    pub fn protocol(self) -> String {
        format!("{}/v1", self.code())
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.code() == s.trim())
            .ok_or_else(|| s.trim().to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub label: String,
    pub payload: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertRequest {
    pub role: Role,
    pub context_blocks: Vec<ContextBlock>,
    pub protocol: String,
}

impl ExpertRequest {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            context_blocks: Vec::new(),
            protocol: role.protocol(),
        }
    }

    pub fn block(mut self, label: &str, payload: impl Serialize) -> Self {
        self.context_blocks.push(ContextBlock {
            label: label.to_string(),
            payload: serde_json::to_value(payload).expect("context payload serializes"),
        });
        self
    }

    pub fn get(&self, label: &str) -> Option<&Value> {
        self.context_blocks
            .iter()
            .find(|b| b.label == label)
            .map(|b| &b.payload)
    }

    /// All block payloads flattened into one string, used for rule matching.
    pub fn rendered_text(&self) -> String {
        self.context_blocks
            .iter()
            .map(|b| match &b.payload {
                Value::String(s) => format!("{}: {}", b.label, s),
                other => format!("{}: {}", b.label, other),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Candidate disease names listed in the request, normalized.
    pub fn candidate_names(&self) -> Option<BTreeSet<String>> {
        let list = self.get(labels::CANDIDATES)?.as_array()?;
        Some(
            list.iter()
                .filter_map(Value::as_str)
                .map(normalize_name)
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<(), ExpertError> {
        if self.context_blocks.is_empty() {
            return Err(ExpertError::InvalidRequest("no context blocks".into()));
        }
        if self.protocol != self.role.protocol() {
            return Err(ExpertError::InvalidRequest(format!(
                "protocol `{}` does not match role {}",
                self.protocol, self.role
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosisEvidence {
    pub disease: String,
    #[serde(default)]
    pub evidence: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExclusionVerdict {
    Exclusive,
    Compatible,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfusionVerdict {
    Confusable,
    Distinguishable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExclusionFinding {
    pub pair: (String, String),
    pub verdict: ExclusionVerdict,
    #[serde(default)]
    pub rationale: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionFinding {
    pub pair: (String, String),
    pub verdict: ConfusionVerdict,
    #[serde(default)]
    pub discriminating: Vec<String>,
}

/// Role-tagged expert output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpertResponse {
    /// Diagnosis-evidence pairs.
    Primary { diagnoses: Vec<DiagnosisEvidence> },
    /// Raw (unnormalized) per-type weights and abnormal entity names.
    Laboratory {
        weights: BTreeMap<String, f64>,
        #[serde(default)]
        abnormal: Vec<String>,
    },
    /// Evidence consistency per candidate, in `[0, 1]`.
    SingleDisease { scores: BTreeMap<String, f64> },
    Exclusion { findings: Vec<ExclusionFinding> },
    Confusion { findings: Vec<ConfusionFinding> },
    /// Raw logical confidence per candidate; clamped downstream.
    Adjustment { scores: BTreeMap<String, f64> },
}

impl ExpertResponse {
    pub fn role(&self) -> Role {
        match self {
            ExpertResponse::Primary { .. } => Role::Primary,
            ExpertResponse::Laboratory { .. } => Role::Laboratory,
            ExpertResponse::SingleDisease { .. } => Role::SingleDisease,
            ExpertResponse::Exclusion { .. } => Role::Exclusion,
            ExpertResponse::Confusion { .. } => Role::Confusion,
            ExpertResponse::Adjustment { .. } => Role::Adjustment,
        }
    }

    /// Parses a role payload (the JSON object without the `role` tag).
    pub fn from_payload(role: Role, payload: Value) -> Result<Self, String> {
        let Value::Object(mut map) = payload else {
            return Err("payload must be a JSON object".into());
        };
        if let Some(tag) = map.get("role") {
            if tag.as_str() != Some(role.code()) {
                return Err(format!("payload role {tag} does not match {role}"));
            }
        }
        map.insert("role".into(), Value::String(role.code().into()));
        let parsed: ExpertResponse = serde_json::from_value(Value::Object(map)).map_err(|e| e.to_string())?;
        Ok(parsed.normalized())
    }

    /// Lower-cases and whitespace-collapses every disease name.
    fn normalized(self) -> Self {
        let pair = |(a, b): (String, String)| (normalize_name(&a), normalize_name(&b));
        let keys = |m: BTreeMap<String, f64>| m.into_iter().map(|(k, v)| (normalize_name(&k), v)).collect();
        match self {
            ExpertResponse::Primary { diagnoses } => ExpertResponse::Primary {
                diagnoses: diagnoses
                    .into_iter()
                    .map(|d| DiagnosisEvidence {
                        disease: normalize_name(&d.disease),
                        evidence: d.evidence,
                    })
                    .collect(),
            },
            ExpertResponse::Laboratory { weights, abnormal } => ExpertResponse::Laboratory {
                weights: weights.into_iter().map(|(k, v)| (k.trim().to_ascii_lowercase(), v)).collect(),
                abnormal: abnormal.iter().map(|a| normalize_name(a)).collect(),
            },
            ExpertResponse::SingleDisease { scores } => ExpertResponse::SingleDisease { scores: keys(scores) },
            ExpertResponse::Adjustment { scores } => ExpertResponse::Adjustment { scores: keys(scores) },
            ExpertResponse::Exclusion { findings } => ExpertResponse::Exclusion {
                findings: findings
                    .into_iter()
                    .map(|f| ExclusionFinding {
                        pair: pair(f.pair),
                        ..f
                    })
                    .collect(),
            },
            ExpertResponse::Confusion { findings } => ExpertResponse::Confusion {
                findings: findings
                    .into_iter()
                    .map(|f| ConfusionFinding {
                        pair: pair(f.pair),
                        ..f
                    })
                    .collect(),
            },
        }
    }

    /// Checks value ranges that hold regardless of the request.
    pub fn check_values(&self) -> Result<(), String> {
        match self {
            ExpertResponse::Primary { diagnoses } => {
                if let Some(d) = diagnoses.iter().find(|d| d.disease.is_empty()) {
                    return Err(format!("empty disease name with evidence {:?}", d.evidence));
                }
            }
            ExpertResponse::Laboratory { weights, .. } => {
                for (k, v) in weights {
                    k.parse::<EntityType>().map_err(|e| e.to_string())?;
                    if !(v.is_finite() && *v >= 0.0) {
                        return Err(format!("weight for `{k}` must be a nonnegative number, got {v}"));
                    }
                }
            }
            ExpertResponse::SingleDisease { scores } => {
                if let Some((d, v)) = scores.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                    return Err(format!("score out of [0,1]: {d} = {v}"));
                }
            }
            ExpertResponse::Adjustment { scores } => {
                if let Some((d, v)) = scores.iter().find(|(_, v)| !v.is_finite()) {
                    return Err(format!("non-finite adjustment score: {d} = {v}"));
                }
            }
            ExpertResponse::Exclusion { .. } | ExpertResponse::Confusion { .. } => {}
        }
        Ok(())
    }

    /// Diseases this response refers to.
    pub fn referenced_diseases(&self) -> BTreeSet<&str> {
        match self {
            ExpertResponse::Primary { .. } | ExpertResponse::Laboratory { .. } => BTreeSet::new(),
            ExpertResponse::SingleDisease { scores } | ExpertResponse::Adjustment { scores } => {
                scores.keys().map(String::as_str).collect()
            }
            ExpertResponse::Exclusion { findings } => findings
                .iter()
                .flat_map(|f| [f.pair.0.as_str(), f.pair.1.as_str()])
                .collect(),
            ExpertResponse::Confusion { findings } => findings
                .iter()
                .flat_map(|f| [f.pair.0.as_str(), f.pair.1.as_str()])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExpertError {
    #[error("transport failure: {message}")]
    Transport { message: String, retryable: bool },
    #[error("{role} response violates schema: {message}")]
    Schema { role: Role, message: String },
    #[error("invalid expert request: {0}")]
    InvalidRequest(String),
}

impl ExpertError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ExpertError::Transport { retryable: true, .. })
    }
}

/// Something that answers expert requests with raw text.
pub trait ExpertBackend: Send + Sync {
    fn name(&self) -> &str;

    /// `repair_hint` is set on the re-ask after an invalid first answer.
    fn complete(&self, request: &ExpertRequest, repair_hint: Option<&str>) -> Result<String, ExpertError>;
}

/// One validated request/response exchange with the raw texts received.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: ExpertRequest,
    pub raw_responses: Vec<String>,
    pub response: ExpertResponse,
}

/// Strips a surrounding markdown code fence, if any.
fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Parses and validates raw backend text for `request`.
pub fn parse_response(request: &ExpertRequest, raw: &str) -> Result<ExpertResponse, String> {
    let value: Value = serde_json::from_str(strip_fence(raw)).map_err(|e| format!("not valid JSON: {e}"))?;
    let response = ExpertResponse::from_payload(request.role, value)?;
    response.check_values()?;
    if let Some(candidates) = request.candidate_names() {
        if let Some(unknown) = response
            .referenced_diseases()
            .into_iter()
            .find(|d| !candidates.contains(*d))
        {
            return Err(format!("references `{unknown}` which is not a candidate"));
        }
    }
    Ok(response)
}

#[derive(Clone)]
pub struct ExpertGateway {
    backend: Arc<dyn ExpertBackend>,
    transport_retries: usize,
}

impl ExpertGateway {
    pub fn new(backend: Arc<dyn ExpertBackend>) -> Self {
        Self {
            backend,
            transport_retries: 2,
        }
    }

    pub fn with_transport_retries(mut self, retries: usize) -> Self {
        self.transport_retries = retries;
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    fn send(&self, request: &ExpertRequest, hint: Option<&str>) -> Result<String, ExpertError> {
        let mut attempt = 0;
        loop {
            match self.backend.complete(request, hint) {
                Err(e) if e.is_retryable() && attempt < self.transport_retries => {
                    log::warn!("{} call failed ({e}); retrying", request.role);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    /// Sends `request`, validating the answer; an invalid answer is re-asked
    /// exactly once before failing with [`ExpertError::Schema`].
    pub fn call(&self, request: &ExpertRequest) -> Result<Exchange, ExpertError> {
        request.validate()?;
        let first = self.send(request, None)?;
        let mut raw_responses = vec![first];
        let error = match parse_response(request, &raw_responses[0]) {
            Ok(response) => {
                return Ok(Exchange {
                    request: request.clone(),
                    raw_responses,
                    response,
                })
            }
            Err(e) => e,
        };
        log::warn!("{} response rejected ({error}); re-asking once", request.role);
        let hint = format!(
            "Your previous reply was rejected: {error}. Reply with a single JSON object matching the {} schema and nothing else.",
            request.protocol
        );
        let second = self.send(request, Some(&hint))?;
        raw_responses.push(second);
        match parse_response(request, &raw_responses[1]) {
            Ok(response) => Ok(Exchange {
                request: request.clone(),
                raw_responses,
                response,
            }),
            Err(message) => Err(ExpertError::Schema {
                role: request.role,
                message,
            }),
        }
    }
}

/// One-shot convenience around [`ExpertGateway::call`].
pub fn call_expert(backend: Arc<dyn ExpertBackend>, request: &ExpertRequest) -> Result<ExpertResponse, ExpertError> {
    ExpertGateway::new(backend).call(request).map(|x| x.response)
}
