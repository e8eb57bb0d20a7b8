//! Deterministic rule-driven expert backend.
//!
//! Rule file layout:
//!
//! ```text
//! # comment
//! [laboratory]
//! match: ct: hemorrhage => @reference {"weights": {"sym": 0.3, "ite": 0.55}, "abnormal_types": ["ite"]}
//! default => {"weights": {"sym": 1}, "abnormal": []}
//! ```
//!
//! Each `[role]` section holds ordered rules; the first rule whose substring
//! occurs (case-insensitively) in the rendered request context wins, and every
//! role needs a `default` rule. A payload is either a literal JSON object in
//! the role's response schema or a built-in behavior `@name [json params]`
//! computed from the request context.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use super::context::{DiseaseContext, EntityView, GraphContext};
use super::{
    labels, ConfusionFinding, ConfusionVerdict, ExclusionFinding, ExclusionVerdict, ExpertBackend, ExpertError,
    ExpertRequest, ExpertResponse, Role,
};
use crate::relations::RelationCandidate;
use crate::text::normalize_name;
use crate::types::EntityType;

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("reading rule file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: {reason}")]
    Payload { line: usize, reason: String },
    #[error("missing default rule for role {0}")]
    MissingDefault(Role),
}

#[derive(Clone, Debug, PartialEq)]
enum Behavior {
    Literal(Value),
    LabReference(LabParams),
    SingleReference,
    SingleConstant(f64),
    ExclusionReference(ExclusionVerdict),
    ConfusionReference(ConfusionVerdict),
    AdjustReference { confusion_factor: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabParams {
    weights: BTreeMap<String, f64>,
    #[serde(default)]
    abnormal_types: Vec<EntityType>,
    #[serde(default)]
    abnormal_terms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
struct Rule {
    pattern: Option<String>,
    behavior: Behavior,
}

/// Parsed and validated mock rules.
#[derive(Clone, Debug, PartialEq)]
pub struct RuleSet {
    rules: BTreeMap<Role, Vec<Rule>>,
}

fn params<T: for<'de> Deserialize<'de> + Default>(raw: Option<&str>) -> Result<T, String> {
    match raw {
        None => Ok(T::default()),
        Some(text) => serde_json::from_str(text).map_err(|e| format!("bad parameters: {e}")),
    }
}

fn unit(name: &str, v: f64) -> Result<f64, String> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("score out of [0,1]: {name} = {v}"))
    }
}

fn parse_behavior(role: Role, payload: &str) -> Result<Behavior, String> {
    let payload = payload.trim();
    let Some(directive) = payload.strip_prefix('@') else {
        let value: Value = serde_json::from_str(payload).map_err(|e| format!("payload is not JSON: {e}"))?;
        let parsed = ExpertResponse::from_payload(role, value.clone())?;
        parsed.check_values()?;
        return Ok(Behavior::Literal(value));
    };
    let (name, rest) = match directive.split_once(char::is_whitespace) {
        Some((n, r)) => (n, Some(r.trim()).filter(|r| !r.is_empty())),
        None => (directive, None),
    };
    #[derive(Deserialize, Default)]
    #[serde(deny_unknown_fields)]
    struct Value01 {
        value: f64,
    }
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Verdict<V> {
        verdict: V,
    }
    #[derive(Deserialize, Default)]
    #[serde(deny_unknown_fields)]
    struct Adjust {
        confusion_factor: Option<f64>,
    }
    match (role, name) {
        (Role::Laboratory, "reference") => {
            let p: LabParams = params(rest)?;
            let check = ExpertResponse::Laboratory {
                weights: p.weights.clone(),
                abnormal: Vec::new(),
            };
            check.check_values()?;
            if !p.weights.values().any(|w| *w > 0.0) {
                return Err("reference laboratory rule needs at least one positive weight".into());
            }
            Ok(Behavior::LabReference(p))
        }
        (Role::SingleDisease, "reference") => Ok(Behavior::SingleReference),
        (Role::SingleDisease, "constant") => {
            let p: Value01 = params(rest)?;
            Ok(Behavior::SingleConstant(unit("value", p.value)?))
        }
        (Role::Exclusion, "reference") => {
            let verdict = match rest {
                None => ExclusionVerdict::Exclusive,
                Some(r) => serde_json::from_str::<Verdict<ExclusionVerdict>>(r)
                    .map_err(|e| format!("bad parameters: {e}"))?
                    .verdict,
            };
            Ok(Behavior::ExclusionReference(verdict))
        }
        (Role::Confusion, "reference") => {
            let verdict = match rest {
                None => ConfusionVerdict::Confusable,
                Some(r) => serde_json::from_str::<Verdict<ConfusionVerdict>>(r)
                    .map_err(|e| format!("bad parameters: {e}"))?
                    .verdict,
            };
            Ok(Behavior::ConfusionReference(verdict))
        }
        (Role::Adjustment, "reference") => {
            let p: Adjust = params(rest)?;
            Ok(Behavior::AdjustReference {
                confusion_factor: unit("confusion_factor", p.confusion_factor.unwrap_or(0.8))?,
            })
        }
        (role, other) => Err(format!("unknown behavior `@{other}` for role {role}")),
    }
}

impl RuleSet {
    pub fn load(path: &Path) -> Result<Self, RuleError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let mut rules: BTreeMap<Role, Vec<Rule>> = BTreeMap::new();
        let mut current: Option<Role> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(section) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let role = section.parse::<Role>().map_err(|s| RuleError::Syntax {
                    line,
                    reason: format!("unknown role section `{s}`"),
                })?;
                rules.entry(role).or_default();
                current = Some(role);
                continue;
            }
            let role = current.ok_or_else(|| RuleError::Syntax {
                line,
                reason: "rule outside of a [role] section".into(),
            })?;
            let (pattern, payload) = if let Some(rest) = trimmed.strip_prefix("match:") {
                let (needle, payload) = rest.split_once("=>").ok_or_else(|| RuleError::Syntax {
                    line,
                    reason: "expected `match: <substring> => <payload>`".into(),
                })?;
                let needle = needle.trim();
                if needle.is_empty() {
                    return Err(RuleError::Syntax {
                        line,
                        reason: "empty match substring".into(),
                    });
                }
                (Some(needle.to_lowercase()), payload)
            } else if let Some(rest) = trimmed.strip_prefix("default") {
                let payload = rest.trim_start().strip_prefix("=>").ok_or_else(|| RuleError::Syntax {
                    line,
                    reason: "expected `default => <payload>`".into(),
                })?;
                (None, payload)
            } else {
                return Err(RuleError::Syntax {
                    line,
                    reason: format!("unrecognized rule `{trimmed}`"),
                });
            };
            let behavior = parse_behavior(role, payload).map_err(|reason| RuleError::Payload { line, reason })?;
            rules.entry(role).or_default().push(Rule { pattern, behavior });
        }
        for role in Role::ALL {
            let has_default = rules
                .get(&role)
                .is_some_and(|rs| rs.iter().any(|r| r.pattern.is_none()));
            if !has_default {
                return Err(RuleError::MissingDefault(role));
            }
        }
        Ok(Self { rules })
    }

    fn select(&self, request: &ExpertRequest) -> &Rule {
        let text = request.rendered_text().to_lowercase();
        let rules = &self.rules[&request.role];
        rules
            .iter()
            .find(|r| r.pattern.as_ref().is_some_and(|p| text.contains(p.as_str())))
            .or_else(|| rules.iter().find(|r| r.pattern.is_none()))
            .expect("validated rule set has a default for every role")
    }
}

/// Backend answering from a [`RuleSet`]; a pure function of the request.
pub struct MockBackend {
    rules: RuleSet,
}

impl MockBackend {
    pub fn new(rules: RuleSet) -> Self {
        Self { rules }
    }

    fn respond(&self, request: &ExpertRequest) -> Result<Value, String> {
        match &self.rules.select(request).behavior {
            Behavior::Literal(v) => Ok(v.clone()),
            Behavior::LabReference(p) => Ok(lab_reference(request, p)?),
            Behavior::SingleReference => single_reference(request),
            Behavior::SingleConstant(value) => {
                let names = request.candidate_names().unwrap_or_default();
                Ok(json!({ "scores": names.into_iter().map(|n| (n, *value)).collect::<BTreeMap<_, _>>() }))
            }
            Behavior::ExclusionReference(verdict) => exclusion_reference(request, *verdict),
            Behavior::ConfusionReference(verdict) => confusion_reference(request, *verdict),
            Behavior::AdjustReference { confusion_factor } => adjust_reference(request, *confusion_factor),
        }
    }
}

fn block<T: for<'de> Deserialize<'de> + Default>(request: &ExpertRequest, label: &str) -> Result<T, String> {
    match request.get(label) {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| format!("context block `{label}`: {e}")),
    }
}

fn lab_reference(request: &ExpertRequest, p: &LabParams) -> Result<Value, String> {
    let entities: Vec<EntityView> = block(request, labels::ENTITIES)?;
    let terms: Vec<String> = p.abnormal_terms.iter().map(|t| normalize_name(t)).collect();
    let abnormal: BTreeSet<String> = entities
        .iter()
        .filter(|e| p.abnormal_types.contains(&e.entity_type) || terms.iter().any(|t| e.canonical.contains(t.as_str())))
        .map(|e| e.canonical.clone())
        .collect();
    Ok(json!({ "weights": p.weights, "abnormal": abnormal }))
}

/// Weighted evidence share with each entity discounted by `1 / hops`.
fn single_reference(request: &ExpertRequest) -> Result<Value, String> {
    let names = request.candidate_names().unwrap_or_default();
    let entities: Vec<EntityView> = block(request, labels::ENTITIES)?;
    let context: GraphContext = block(request, labels::GRAPH_CONTEXT)?;
    let total: f64 = entities.iter().map(|e| e.effective_weight).sum();
    let mut scores = BTreeMap::new();
    for d in names {
        let ctx = context.get(&d).cloned().unwrap_or_else(DiseaseContext::default);
        let hops: BTreeMap<&str, usize> = ctx.paths.iter().map(|p| (p.entity.as_str(), p.hops)).collect();
        let mut num = 0.0;
        for e in &entities {
            if e.canonical == d {
                num += e.effective_weight;
            } else if let Some(&h) = hops.get(e.canonical.as_str()) {
                num += e.effective_weight / h.max(1) as f64;
            }
        }
        let score = if total > 0.0 { (num / total).clamp(0.0, 1.0) } else { 0.0 };
        scores.insert(d, score);
    }
    Ok(json!({ "scores": scores }))
}

fn exclusion_reference(request: &ExpertRequest, verdict: ExclusionVerdict) -> Result<Value, String> {
    let mined: Vec<RelationCandidate> = block(request, labels::EXCLUSION_PATHS)?;
    let findings: Vec<ExclusionFinding> = mined
        .into_iter()
        .map(|c| {
            let path = c
                .evidence_paths
                .first()
                .map(|p| {
                    p.triples
                        .iter()
                        .map(|t| format!("{} -[{}]- {}", t.head, t.relation, t.tail))
                        .collect::<Vec<_>>()
                        .join("; ")
                })
                .unwrap_or_default();
            ExclusionFinding {
                pair: c.pair,
                verdict,
                rationale: format!("subtype path: {path}"),
            }
        })
        .collect();
    Ok(json!({ "findings": findings }))
}

fn confusion_reference(request: &ExpertRequest, verdict: ConfusionVerdict) -> Result<Value, String> {
    let mined: Vec<RelationCandidate> = block(request, labels::CONFUSION_EVIDENCE)?;
    let findings: Vec<ConfusionFinding> = mined
        .into_iter()
        .map(|c| ConfusionFinding {
            pair: c.pair,
            verdict,
            discriminating: c.diff.into_iter().collect(),
        })
        .collect();
    Ok(json!({ "findings": findings }))
}

/// Confusable pairs are both scaled by `confusion_factor`; in each exclusive
/// pair the lower-confidence member (later name on ties) drops to 0.
fn adjust_reference(request: &ExpertRequest, confusion_factor: f64) -> Result<Value, String> {
    let confidence: BTreeMap<String, f64> = block(request, labels::CONFIDENCE)?;
    let o_exc: Vec<ExclusionFinding> = block(request, labels::O_EXC)?;
    let o_conf: Vec<ConfusionFinding> = block(request, labels::O_CONF)?;
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    for f in o_conf.iter().filter(|f| f.verdict == ConfusionVerdict::Confusable) {
        for d in [&f.pair.0, &f.pair.1] {
            *scores.entry(d.clone()).or_insert(1.0) *= confusion_factor;
        }
    }
    for f in o_exc.iter().filter(|f| f.verdict == ExclusionVerdict::Exclusive) {
        let (a, b) = (&f.pair.0, &f.pair.1);
        let ca = confidence.get(a).copied().unwrap_or(0.0);
        let cb = confidence.get(b).copied().unwrap_or(0.0);
        let a_stronger = ca > cb || (ca == cb && a <= b);
        let (strong, weak) = if a_stronger { (a, b) } else { (b, a) };
        scores.entry(strong.clone()).or_insert(1.0);
        scores.insert(weak.clone(), 0.0);
    }
    Ok(json!({ "scores": scores }))
}

impl ExpertBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, request: &ExpertRequest, _repair_hint: Option<&str>) -> Result<String, ExpertError> {
        let value = self.respond(request).map_err(|message| ExpertError::Schema {
            role: request.role,
            message,
        })?;
        Ok(value.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{context::EntityPath, ExpertGateway};
    use std::sync::Arc;

    const DEFAULTS: &str = r#"
[primary]
default => {"diagnoses": []}
[laboratory]
default => {"weights": {"sym": 1}, "abnormal": []}
[single_disease]
default => @reference
[exclusion]
default => @reference
[confusion]
default => @reference
[adjustment]
default => @reference
"#;

    fn gateway(text: &str) -> ExpertGateway {
        ExpertGateway::new(Arc::new(MockBackend::new(RuleSet::parse(text).unwrap())))
    }

    fn entity(name: &str, ty: EntityType, w: f64) -> EntityView {
        EntityView {
            canonical: name.into(),
            entity_type: ty,
            effective_weight: w,
            abnormal: false,
        }
    }

    #[test]
    fn defaults_only() {
        let g = gateway(DEFAULTS);
        let req = ExpertRequest::new(Role::Primary).block(labels::SUMMARY, "anything at all");
        let resp = g.call(&req).unwrap().response;
        assert_eq!(resp, ExpertResponse::Primary { diagnoses: vec![] });
    }

    #[test]
    fn first_matching_rule_wins() {
        let text = format!(
            "{DEFAULTS}\n[primary]\nmatch: vertigo => {{\"diagnoses\": [{{\"disease\": \"first\"}}]}}\nmatch: VERTIGO => {{\"diagnoses\": [{{\"disease\": \"second\"}}]}}\n"
        );
        let g = gateway(&text);
        let req = ExpertRequest::new(Role::Primary).block(labels::SUMMARY, "acute Vertigo");
        match g.call(&req).unwrap().response {
            ExpertResponse::Primary { diagnoses } => assert_eq!(diagnoses[0].disease, "first"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_time_validation() {
        let missing = DEFAULTS.replace("[adjustment]\ndefault => @reference\n", "");
        assert!(matches!(RuleSet::parse(&missing), Err(RuleError::MissingDefault(Role::Adjustment))));
        let bad = format!("{DEFAULTS}\n[single_disease]\nmatch: x => {{\"scores\": {{\"a\": 1.2}}}}\n");
        let err = RuleSet::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("score out of [0,1]"), "{err}");
        let bad = format!("{DEFAULTS}\n[single_disease]\nmatch: x => @constant {{\"value\": 1.5}}\n");
        assert!(RuleSet::parse(&bad).unwrap_err().to_string().contains("score out of [0,1]"));
        let bad = format!("{DEFAULTS}\n[triage]\ndefault => {{}}\n");
        assert!(matches!(RuleSet::parse(&bad), Err(RuleError::Syntax { .. })));
        let bad = format!("{DEFAULTS}\n[exclusion]\nmatch: x => @telepathy\n");
        assert!(RuleSet::parse(&bad).unwrap_err().to_string().contains("unknown behavior"));
        assert!(matches!(RuleSet::parse("default => {}"), Err(RuleError::Syntax { line: 1, .. })));
    }

    #[test]
    fn lab_reference_marks_imaging_abnormal() {
        let text = format!(
            "{DEFAULTS}\n[laboratory]\nmatch: ct: hemorrhage => @reference {{\"weights\": {{\"sym\": 0.45, \"ite\": 0.55}}, \"abnormal_types\": [\"ite\"]}}\n"
        );
        let g = gateway(&text);
        let req = ExpertRequest::new(Role::Laboratory)
            .block(labels::EXAM, "AUXILIARY EXAMINATION: CT: hemorrhage in the cerebellum")
            .block(
                labels::ENTITIES,
                vec![entity("ct hemorrhage", EntityType::Ite, 0.0), entity("nausea", EntityType::Sym, 0.0)],
            );
        match g.call(&req).unwrap().response {
            ExpertResponse::Laboratory { weights, abnormal } => {
                assert_eq!(abnormal, vec!["ct hemorrhage".to_string()]);
                assert_eq!(weights["ite"], 0.55);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn adjust_reference_eliminates_weaker_exclusive() {
        let g = gateway(DEFAULTS);
        let req = ExpertRequest::new(Role::Adjustment)
            .block(labels::CANDIDATES, ["d1", "d2", "h1"])
            .block(labels::CONFIDENCE, BTreeMap::from([("d1", 0.9), ("d2", 0.4), ("h1", 0.7)]))
            .block(
                labels::O_EXC,
                vec![ExclusionFinding {
                    pair: ("d1".into(), "d2".into()),
                    verdict: ExclusionVerdict::Exclusive,
                    rationale: String::new(),
                }],
            )
            .block(labels::O_CONF, Vec::<ConfusionFinding>::new());
        assert_eq!(
            g.call(&req).unwrap().response,
            ExpertResponse::Adjustment {
                scores: BTreeMap::from([("d1".into(), 1.0), ("d2".into(), 0.0)])
            }
        );
    }

    #[test]
    fn adjust_reference_attenuates_confusable_pairs() {
        let g = gateway(DEFAULTS);
        let req = ExpertRequest::new(Role::Adjustment)
            .block(labels::CANDIDATES, ["a", "b"])
            .block(labels::O_EXC, Vec::<ExclusionFinding>::new())
            .block(
                labels::O_CONF,
                vec![ConfusionFinding {
                    pair: ("a".into(), "b".into()),
                    verdict: ConfusionVerdict::Confusable,
                    discriminating: vec![],
                }],
            );
        match g.call(&req).unwrap().response {
            ExpertResponse::Adjustment { scores } => {
                assert!((scores["a"] - 0.8).abs() < 1e-15 && (scores["b"] - 0.8).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_reference_decays_with_hops() {
        let g = gateway(DEFAULTS);
        let mut ctx = GraphContext::new();
        ctx.insert(
            "d1".into(),
            DiseaseContext {
                direct: vec![],
                paths: vec![
                    EntityPath {
                        entity: "s1".into(),
                        hops: 1,
                        triples: vec![],
                    },
                    EntityPath {
                        entity: "l1".into(),
                        hops: 2,
                        triples: vec![],
                    },
                ],
            },
        );
        let req = ExpertRequest::new(Role::SingleDisease)
            .block(labels::CANDIDATES, ["d1", "d2"])
            .block(
                labels::ENTITIES,
                vec![
                    entity("s1", EntityType::Sym, 0.3),
                    entity("l1", EntityType::Sym, 0.2),
                    entity("u1", EntityType::Sym, 0.5),
                ],
            )
            .block(labels::GRAPH_CONTEXT, &ctx);
        match g.call(&req).unwrap().response {
            ExpertResponse::SingleDisease { scores } => {
                assert!((scores["d1"] - 0.4).abs() < 1e-12);
                assert_eq!(scores["d2"], 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mock_is_pure() {
        let backend = MockBackend::new(RuleSet::parse(DEFAULTS).unwrap());
        let req = ExpertRequest::new(Role::SingleDisease)
            .block(labels::CANDIDATES, ["x", "y"])
            .block(labels::ENTITIES, vec![entity("x", EntityType::Dis, 1.0)]);
        let a = backend.complete(&req, None).unwrap();
        let b = backend.complete(&req, Some("hint")).unwrap();
        assert_eq!(a, b);
    }
}
