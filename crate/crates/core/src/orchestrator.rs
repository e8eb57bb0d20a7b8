//! End-to-end case runner: expert calls, graph supplement, relation checks,
//! fusion and the feedback loop, with a full trace of every step.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adjudicator::{detect_conflicts, enforce_contract, relation_domain, ConflictSignal, LogicVerdict};
use crate::config::{Ablation, BackendKind, ConfigError, RunConfig};
use crate::entity::{
    align_entities, apply_abnormal_boost, normalize_type_weights, summarize, AlignmentTable, DictionaryTagger,
    EmrRecord, EntityError, EntityTagger, Mention, StdEntity, Summary, TypeWeights,
};
use crate::eval::{compute_hr_rr, compute_prf, EvalError, MetricsReport};
use crate::expert::context::{ConflictNote, DiseaseContext, EntityPath, EntityView, FeedbackPayload, GraphContext};
use crate::expert::{
    labels, ConfusionFinding, DiagnosisEvidence, Exchange, ExclusionFinding, ExpertBackend, ExpertError,
    ExpertGateway, ExpertRequest, ExpertResponse, HttpBackend, MockBackend, Role, RuleSet,
};
use crate::fusion::{icd_similarity, rank_topk, FusionError, IcdTable, Provenance, RankedDiagnosis};
use crate::graph::{load_graph, GraphError, KnowledgeGraph, NodeId};
use crate::relations::{build_feature_profile, mine_confusions, mine_exclusions, RelationCandidate};
use crate::supplement::{score_disease, select_supplements, Evidence, SupplementError, SupplementScore};
use crate::text::normalize_name;
use crate::types::EntityType;

/// Version of the line-delimited trace format.
pub const SCHEMA_VERSION: u32 = 1;

/// Direct triples listed per candidate in the evidence expert's context.
const MAX_DIRECT_TRIPLES: usize = 40;

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Entity(#[from] EntityError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Supplement(#[from] SupplementError),
    #[error("mock rules {path}: {source}")]
    Rules {
        path: PathBuf,
        source: crate::expert::mock::RuleError,
    },
    #[error("reading corpus {path}: {source}")]
    Corpus { path: PathBuf, source: std::io::Error },
    #[error("building worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("writing traces: {0}")]
    Output(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Ok,
    ExpertError,
    EmptyCandidates,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub disease: String,
    pub provenance: Provenance,
}

/// Outcome of one pass from the evidence expert through fusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based.
    pub index: usize,
    pub primary: Vec<DiagnosisEvidence>,
    pub candidates: Vec<Candidate>,
    pub f_evid: BTreeMap<String, f64>,
    pub exclusions: Vec<RelationCandidate>,
    pub confusions: Vec<RelationCandidate>,
    pub o_exc: Vec<ExclusionFinding>,
    pub o_conf: Vec<ConfusionFinding>,
    pub raw_logic: BTreeMap<String, f64>,
    pub logic: LogicVerdict<f64>,
    pub omega: BTreeMap<String, f64>,
    /// Every candidate scored, in candidate order, before ranking.
    pub scored: Vec<RankedDiagnosis<f64>>,
    /// Evidence score times logic score, used for conflict checks.
    pub confidences: BTreeMap<String, f64>,
    pub conflicts: Vec<ConflictSignal<f64>>,
    /// Re-examination request sent after this iteration, if any.
    pub feedback: Option<FeedbackPayload>,
}

/// Conflict settled by the iteration budget running out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcedResolution {
    pub pair: (String, String),
    pub retained: String,
    pub eliminated: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseTrace {
    pub schema_version: u32,
    pub kind: String,
    pub case_id: String,
    pub status: CaseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub backend: String,
    pub config: RunConfig,
    pub summary: Summary,
    pub entities: Vec<StdEntity<f64>>,
    pub raw_type_weights: BTreeMap<String, f64>,
    pub type_weights: Option<TypeWeights<f64>>,
    pub abnormal: Vec<String>,
    pub supplements: Vec<SupplementScore<f64>>,
    pub iterations: Vec<IterationRecord>,
    #[serde(rename = "final")]
    pub final_ranking: Vec<RankedDiagnosis<f64>>,
    pub forced: Vec<ForcedResolution>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exchanges: Vec<Exchange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<BTreeMap<String, f64>>,
}

impl CaseTrace {
    fn new(case_id: &str, backend: &str, config: &RunConfig, summary: Summary) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: "case".into(),
            case_id: case_id.to_string(),
            status: CaseStatus::Ok,
            error: None,
            backend: backend.to_string(),
            config: config.clone(),
            summary,
            entities: Vec::new(),
            raw_type_weights: BTreeMap::new(),
            type_weights: None,
            abnormal: Vec::new(),
            supplements: Vec::new(),
            iterations: Vec::new(),
            final_ranking: Vec::new(),
            forced: Vec::new(),
            exchanges: Vec::new(),
            timing_ms: None,
        }
    }

    /// Final diagnosis names in rank order.
    pub fn final_names(&self) -> Vec<&str> {
        self.final_ranking.iter().map(|r| r.disease.as_str()).collect()
    }

    pub fn supplement_names(&self) -> Vec<&str> {
        self.supplements.iter().map(|s| s.disease.as_str()).collect()
    }
}

/// Record that could not be parsed from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub schema_version: u32,
    pub kind: String,
    /// 1-based corpus line.
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub ok: usize,
    pub expert_error: usize,
    pub empty_candidates: usize,
    pub parse_failures: usize,
}

impl StatusCounts {
    pub fn fatal(&self) -> usize {
        self.expert_error + self.parse_failures
    }
}

/// Trailing line of a trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub schema_version: u32,
    pub kind: String,
    pub cases: usize,
    pub counts: StatusCounts,
    /// Present when every parsed record carries gold labels.
    pub metrics: Option<MetricsReport>,
}

/// One line of a trace file.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceLine {
    Case(Box<CaseTrace>),
    ParseFailure(ParseFailure),
    Summary(CorpusSummary),
}

impl TraceLine {
    pub fn to_json(&self) -> String {
        let r = match self {
            TraceLine::Case(t) => serde_json::to_string(t),
            TraceLine::ParseFailure(p) => serde_json::to_string(p),
            TraceLine::Summary(s) => serde_json::to_string(s),
        };
        r.expect("trace lines serialize")
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let version = value.get("schema_version").and_then(Value::as_u64);
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(format!("unsupported schema_version {version:?}"));
        }
        let kind = value.get("kind").and_then(Value::as_str).unwrap_or_default().to_string();
        let err = |e: serde_json::Error| e.to_string();
        match kind.as_str() {
            "case" => Ok(TraceLine::Case(Box::new(serde_json::from_value(value).map_err(err)?))),
            "parse_failure" => Ok(TraceLine::ParseFailure(serde_json::from_value(value).map_err(err)?)),
            "summary" => Ok(TraceLine::Summary(serde_json::from_value(value).map_err(err)?)),
            other => Err(format!("unknown trace line kind `{other}`")),
        }
    }
}

/// Reads the case traces from a trace file, skipping other line kinds.
pub fn read_traces(path: &Path) -> Result<Vec<CaseTrace>, OrchestratorError> {
    let text = fs::read_to_string(path).map_err(|source| OrchestratorError::Corpus {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match TraceLine::parse(line) {
            Ok(TraceLine::Case(t)) => out.push(*t),
            Ok(_) => {}
            Err(message) => {
                return Err(OrchestratorError::Corpus {
                    path: path.to_path_buf(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {message}", i + 1)),
                })
            }
        }
    }
    Ok(out)
}

/// Parses a line-delimited corpus; bad lines become [`ParseFailure`]s.
pub fn parse_corpus(text: &str) -> Vec<Result<EmrRecord, ParseFailure>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<EmrRecord>(line)
                .map_err(|e| e.to_string())
                .and_then(|r| r.validate().map(|_| r).map_err(|e| e.to_string()))
                .map_err(|message| ParseFailure {
                    schema_version: SCHEMA_VERSION,
                    kind: "parse_failure".into(),
                    line: i + 1,
                    message,
                })
        })
        .collect()
}

pub fn load_corpus(path: &Path) -> Result<Vec<Result<EmrRecord, ParseFailure>>, OrchestratorError> {
    let text = fs::read_to_string(path).map_err(|source| OrchestratorError::Corpus {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(parse_corpus(&text))
}

/// Builds the configured expert backend.
pub fn backend_from_config(config: &RunConfig) -> Result<Arc<dyn ExpertBackend>, OrchestratorError> {
    match config.run.backend {
        BackendKind::Mock => {
            let path = config.require("rules", &config.paths.rules)?;
            let rules = RuleSet::load(path).map_err(|source| OrchestratorError::Rules {
                path: path.to_path_buf(),
                source,
            })?;
            Ok(Arc::new(MockBackend::new(rules)))
        }
        BackendKind::Http => Ok(Arc::new(HttpBackend::new(config.http.clone()))),
    }
}

/// Patient record as shown to experts; gold labels are withheld.
#[derive(Serialize)]
struct RecordView<'a> {
    case_id: &'a str,
    cc: &'a str,
    hpi: &'a str,
    pmh: &'a str,
    pe: &'a str,
    ae: &'a str,
}

impl<'a> From<&'a EmrRecord> for RecordView<'a> {
    fn from(r: &'a EmrRecord) -> Self {
        Self {
            case_id: &r.case_id,
            cc: &r.cc,
            hpi: &r.hpi,
            pmh: &r.pmh,
            pe: &r.pe,
            ae: &r.ae,
        }
    }
}

struct Stopwatch {
    enabled: bool,
    last: Instant,
    laps: BTreeMap<String, f64>,
}

impl Stopwatch {
    fn new(enabled: bool) -> Self {
        Self {
            enabled,
            last: Instant::now(),
            laps: BTreeMap::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        if self.enabled {
            let now = Instant::now();
            *self.laps.entry(stage.to_string()).or_insert(0.0) += (now - self.last).as_secs_f64() * 1e3;
            self.last = now;
        }
    }

    fn finish(self) -> Option<BTreeMap<String, f64>> {
        self.enabled.then_some(self.laps)
    }
}

/// Loaded resources plus the expert gateway for one configuration.
pub struct Engine {
    config: RunConfig,
    graph: Arc<KnowledgeGraph>,
    table: Arc<AlignmentTable>,
    icd: Arc<IcdTable>,
    gateway: ExpertGateway,
}

enum Halt {
    Expert(ExpertError),
    Entity(EntityError),
}

impl From<ExpertError> for Halt {
    fn from(e: ExpertError) -> Self {
        Halt::Expert(e)
    }
}

impl Engine {
    pub fn new(
        config: RunConfig,
        graph: Arc<KnowledgeGraph>,
        table: Arc<AlignmentTable>,
        icd: Arc<IcdTable>,
        backend: Arc<dyn ExpertBackend>,
    ) -> Result<Self, OrchestratorError> {
        config.validate()?;
        if icd.is_empty() {
            return Err(FusionError::EmptyTable.into());
        }
        Ok(Self {
            config,
            graph,
            table,
            icd,
            gateway: ExpertGateway::new(backend),
        })
    }

    /// Loads graph, tables and backend named by `config`.
    pub fn from_config(config: RunConfig) -> Result<Self, OrchestratorError> {
        config.validate()?;
        let p = &config.paths;
        let graph_path = config.require("graph", &p.graph)?;
        let graph = load_graph(graph_path, config.require("relation_classes", &p.relation_classes)?)?;
        let table = AlignmentTable::load(config.require("alignment", &p.alignment)?)?;
        let icd = IcdTable::load(config.require("icd", &p.icd)?)?;
        let backend = backend_from_config(&config)?;
        Self::new(config, Arc::new(graph), Arc::new(table), Arc::new(icd), backend)
    }

    /// Same resources under a different configuration (e.g. an ablation).
    pub fn with_config(&self, config: RunConfig) -> Result<Self, OrchestratorError> {
        config.validate()?;
        Ok(Self {
            config,
            graph: self.graph.clone(),
            table: self.table.clone(),
            icd: self.icd.clone(),
            gateway: self.gateway.clone(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    fn disease_node(&self, name: &str) -> Option<NodeId> {
        self.graph
            .lookup(name, EntityType::Dis)
            .or_else(|| self.graph.resolve(name, EntityType::Dis))
    }

    /// Canonical disease name: the alignment table's term when it lists the
    /// name as a disease.
    fn canonical_disease(&self, name: &str) -> String {
        match self.table.get(name) {
            Some(row) if row.entity_type == EntityType::Dis => row.canonical.clone(),
            _ => normalize_name(name),
        }
    }

    fn canonical_primary(&self, diagnoses: Vec<DiagnosisEvidence>) -> Vec<DiagnosisEvidence> {
        let mut out: Vec<DiagnosisEvidence> = Vec::new();
        for d in diagnoses {
            let name = self.canonical_disease(&d.disease);
            if name.is_empty() {
                continue;
            }
            match out.iter_mut().find(|x| x.disease == name) {
                Some(existing) => {
                    for ev in d.evidence {
                        if !existing.evidence.contains(&ev) {
                            existing.evidence.push(ev);
                        }
                    }
                }
                None => out.push(DiagnosisEvidence {
                    disease: name,
                    evidence: d.evidence,
                }),
            }
        }
        out
    }

    fn call(&self, trace: &mut CaseTrace, request: ExpertRequest) -> Result<ExpertResponse, ExpertError> {
        let exchange = self.gateway.call(&request)?;
        let response = exchange.response.clone();
        if self.config.run.trace_io {
            trace.exchanges.push(exchange);
        }
        Ok(response)
    }

    fn evidence_mentions(&self, primary: &[DiagnosisEvidence]) -> Vec<Mention> {
        let tagger = DictionaryTagger::new(&self.table);
        let mut out = Vec::new();
        for ev in primary.iter().flat_map(|d| &d.evidence) {
            match self.table.get(ev) {
                Some(row) => out.push(Mention {
                    surface: ev.clone(),
                    entity_type: row.entity_type.code().to_string(),
                    field: None,
                    span: (0, ev.chars().count()),
                }),
                None => out.extend(tagger.tag_text(ev)),
            }
        }
        out
    }

    fn graph_context(&self, candidates: &[Candidate], evidence: &[Evidence<f64>]) -> Result<GraphContext, GraphError> {
        let mut ctx = GraphContext::new();
        for c in candidates {
            let mut dc = DiseaseContext::default();
            if let Some(node) = self.disease_node(&c.disease) {
                dc.direct = self.graph.direct_triples(node)?;
                dc.direct.truncate(MAX_DIRECT_TRIPLES);
                for e in evidence {
                    let Some(en) = e.node else { continue };
                    if let Some(p) = self.graph.shortest_path_triples(en, node, self.config.supplement.max_hops)? {
                        dc.paths.push(EntityPath {
                            entity: e.name.clone(),
                            hops: p.hops,
                            triples: p.triples,
                        });
                    }
                }
            }
            ctx.insert(c.disease.clone(), dc);
        }
        Ok(ctx)
    }

    /// Runs the full chain for one record. Expert failures end the case with
    /// status `expert_error` and keep the partial trace.
    pub fn run_case(&self, record: &EmrRecord) -> Result<CaseTrace, OrchestratorError> {
        let mut clock = Stopwatch::new(self.config.run.timing);
        let summary = summarize(record);
        let mut trace = CaseTrace::new(&record.case_id, self.gateway.backend_name(), &self.config, summary);
        clock.lap("summarize");
        let outcome = self.run_stages(record, &mut trace, &mut clock);
        match outcome {
            Ok(()) => {}
            Err(Halt::Expert(e)) => {
                log::error!("case {}: {e}", record.case_id);
                trace.status = CaseStatus::ExpertError;
                trace.error = Some(e.to_string());
                trace.final_ranking.clear();
            }
            Err(Halt::Entity(e)) => {
                log::error!("case {}: {e}", record.case_id);
                trace.status = CaseStatus::ExpertError;
                trace.error = Some(format!("laboratory expert: {e}"));
                trace.final_ranking.clear();
            }
        }
        trace.timing_ms = clock.finish();
        Ok(trace)
    }

    fn run_stages(&self, record: &EmrRecord, trace: &mut CaseTrace, clock: &mut Stopwatch) -> Result<(), Halt> {
        let cfg = &self.config;
        let summary = trace.summary.clone();

        // Primary diagnoses.
        let request = ExpertRequest::new(Role::Primary)
            .block(labels::SUMMARY, &summary.full)
            .block(labels::RECORD, RecordView::from(record));
        let mut primary = match self.call(trace, request)? {
            ExpertResponse::Primary { diagnoses } => self.canonical_primary(diagnoses),
            _ => unreachable!("gateway checks the response role"),
        };
        clock.lap("primary");

        // Evidence entities and weights.
        let mut mentions = DictionaryTagger::new(&self.table).tag_record(record);
        mentions.extend(self.evidence_mentions(&primary));
        let mut entities: Vec<StdEntity<f64>> = align_entities(&mentions, &self.table);
        let (weights, abnormal) = if cfg.ablation.no_lab {
            (TypeWeights::uniform(), BTreeSet::new())
        } else {
            let views: Vec<EntityView> = entities
                .iter()
                .map(|e| EntityView {
                    canonical: e.canonical.clone(),
                    entity_type: e.entity_type,
                    effective_weight: 0.0,
                    abnormal: false,
                })
                .collect();
            let request = ExpertRequest::new(Role::Laboratory)
                .block(labels::BASE, &summary.base)
                .block(labels::EXAM, &summary.exam)
                .block(labels::ENTITIES, views);
            let ExpertResponse::Laboratory { weights, abnormal } = self.call(trace, request)? else {
                unreachable!("gateway checks the response role")
            };
            trace.raw_type_weights = weights.clone();
            let raw: BTreeMap<EntityType, f64> = weights
                .iter()
                .filter_map(|(k, v)| k.parse::<EntityType>().ok().map(|t| (t, *v)))
                .collect();
            let normalized = normalize_type_weights(&raw).map_err(Halt::Entity)?;
            (normalized, abnormal.into_iter().collect())
        };
        apply_abnormal_boost(&mut entities, &weights, &abnormal, cfg.entity.boost);
        trace.type_weights = Some(weights);
        trace.abnormal = abnormal.into_iter().collect();
        trace.entities = entities.clone();
        clock.lap("weighting");

        // Graph supplement.
        let evidence: Vec<Evidence<f64>> = entities
            .iter()
            .map(|e| Evidence {
                name: e.canonical.clone(),
                node: self
                    .graph
                    .lookup(&e.canonical, e.entity_type)
                    .or_else(|| self.graph.resolve(&e.canonical, e.entity_type)),
                weight: e.effective_weight,
            })
            .collect();
        let params = cfg.supplement.params();
        if !cfg.ablation.no_mkg {
            let exclude: BTreeSet<NodeId> = primary.iter().filter_map(|d| self.disease_node(&d.disease)).collect();
            trace.supplements = select_supplements(&self.graph, &evidence, &exclude, cfg.supplement.k_sup, &params)
                .map_err(internal)?;
        }
        clock.lap("supplement");

        let evidence_total: f64 = evidence.iter().map(|e| e.weight).sum();
        let mut omega_cache: BTreeMap<String, f64> = BTreeMap::new();
        let mut feedback_round = 0;
        loop {
            let candidates = self.candidates(&primary, &trace.supplements);
            if candidates.is_empty() {
                trace.status = CaseStatus::EmptyCandidates;
                return Ok(());
            }
            let names: BTreeSet<String> = candidates.iter().map(|c| c.disease.clone()).collect();
            let name_list: Vec<&str> = candidates.iter().map(|c| c.disease.as_str()).collect();

            // Evidence consistency.
            let f_evid: BTreeMap<String, f64> = if cfg.ablation.no_sin {
                names.iter().map(|n| (n.clone(), 1.0)).collect()
            } else {
                let views: Vec<EntityView> = trace
                    .entities
                    .iter()
                    .map(|e| EntityView {
                        canonical: e.canonical.clone(),
                        entity_type: e.entity_type,
                        effective_weight: e.effective_weight,
                        abnormal: e.abnormal,
                    })
                    .collect();
                let request = ExpertRequest::new(Role::SingleDisease)
                    .block(labels::SUMMARY, &summary.full)
                    .block(labels::CANDIDATES, &name_list)
                    .block(labels::ABNORMAL, &trace.abnormal)
                    .block(labels::ENTITIES, views)
                    .block(labels::GRAPH_CONTEXT, self.graph_context(&candidates, &evidence).map_err(internal)?);
                let ExpertResponse::SingleDisease { scores } = self.call(trace, request)? else {
                    unreachable!("gateway checks the response role")
                };
                names
                    .iter()
                    .map(|n| {
                        let s = scores.get(n).copied().unwrap_or_else(|| {
                            log::warn!("no evidence score for `{n}`; using 0");
                            0.0
                        });
                        (n.clone(), s)
                    })
                    .collect()
            };
            clock.lap("single_disease");

            // Relations and logic scores.
            let nodes: BTreeSet<NodeId> = names.iter().filter_map(|n| self.disease_node(n)).collect();
            let (mut exclusions, mut confusions) = (Vec::new(), Vec::new());
            let (mut o_exc, mut o_conf) = (Vec::new(), Vec::new());
            let mut raw_logic = BTreeMap::new();
            if !cfg.ablation.no_rel {
                exclusions = mine_exclusions(&self.graph, &nodes).map_err(internal)?;
                confusions = mine_confusions(&self.graph, &nodes, cfg.supplement.max_hops).map_err(internal)?;
                exclusions.retain(|c| names.contains(&c.pair.0) && names.contains(&c.pair.1));
                confusions.retain(|c| names.contains(&c.pair.0) && names.contains(&c.pair.1));
                if !exclusions.is_empty() {
                    let request = ExpertRequest::new(Role::Exclusion)
                        .block(labels::PATIENT, &summary.full)
                        .block(labels::CANDIDATES, &name_list)
                        .block(labels::EXCLUSION_PATHS, &exclusions);
                    if let ExpertResponse::Exclusion { findings } = self.call(trace, request)? {
                        o_exc = findings;
                    }
                }
                if !confusions.is_empty() {
                    let request = ExpertRequest::new(Role::Confusion)
                        .block(labels::PATIENT, &summary.full)
                        .block(labels::CANDIDATES, &name_list)
                        .block(labels::CONFUSION_EVIDENCE, &confusions);
                    if let ExpertResponse::Confusion { findings } = self.call(trace, request)? {
                        o_conf = findings;
                    }
                }
                if !relation_domain(&o_exc, &o_conf).is_empty() {
                    let request = ExpertRequest::new(Role::Adjustment)
                        .block(labels::PATIENT, &summary.full)
                        .block(labels::CANDIDATES, &name_list)
                        .block(labels::CONFIDENCE, &f_evid)
                        .block(labels::O_EXC, &o_exc)
                        .block(labels::O_CONF, &o_conf);
                    if let ExpertResponse::Adjustment { scores } = self.call(trace, request)? {
                        raw_logic = scores;
                    }
                }
            }
            let logic = enforce_contract(&raw_logic, &o_exc, &o_conf, &names);
            clock.lap("relations");

            // Fusion.
            let mut scored = Vec::with_capacity(candidates.len());
            let mut omega = BTreeMap::new();
            let mut confidences = BTreeMap::new();
            for c in &candidates {
                let om = match omega_cache.get(&c.disease) {
                    Some(v) => *v,
                    None => {
                        let v = match self.disease_node(&c.disease) {
                            Some(n) if evidence_total > 0.0 => {
                                score_disease(&self.graph, n, &evidence, &params).map_err(internal)?.v
                            }
                            _ => 0.0,
                        };
                        omega_cache.insert(c.disease.clone(), v);
                        v
                    }
                };
                let fe = f_evid[&c.disease];
                let fl = logic.score(&c.disease);
                let s_icd = icd_similarity(&c.disease, &self.icd).map_err(internal)?;
                scored.push(
                    RankedDiagnosis::score(c.disease.clone(), c.provenance, fe, fl, om, s_icd, &cfg.fusion)
                        .map_err(internal)?,
                );
                omega.insert(c.disease.clone(), om);
                confidences.insert(c.disease.clone(), fe * fl);
            }
            let conflicts = if cfg.ablation.no_rel {
                Vec::new()
            } else {
                detect_conflicts(&confidences, &o_exc, cfg.feedback.delta)
            };
            clock.lap("fusion");

            let mut record_iter = IterationRecord {
                index: trace.iterations.len() + 1,
                primary: primary.clone(),
                candidates,
                f_evid,
                exclusions,
                confusions,
                o_exc,
                o_conf,
                raw_logic,
                logic,
                omega,
                scored,
                confidences,
                conflicts,
                feedback: None,
            };

            if record_iter.conflicts.is_empty() {
                trace.final_ranking = rank_topk(record_iter.scored.clone(), cfg.fusion.k);
                trace.iterations.push(record_iter);
                return Ok(());
            }
            if feedback_round >= cfg.feedback.max_iters {
                let (ranking, forced) = self.force_resolution(&record_iter)?;
                trace.final_ranking = rank_topk(ranking, cfg.fusion.k);
                trace.forced = forced;
                trace.iterations.push(record_iter);
                return Ok(());
            }

            // Feedback to the primary expert.
            feedback_round += 1;
            let payload = FeedbackPayload {
                round: feedback_round,
                conflicts: record_iter
                    .conflicts
                    .iter()
                    .map(|c| ConflictNote {
                        pair: c.pair.clone(),
                        confidence_gap: c.confidence_gap,
                        discriminating: self.discriminating(&c.pair, &record_iter.o_conf),
                    })
                    .collect(),
                instruction: "Re-examine the original record for evidence that separates each conflicting pair and \
                              revise the diagnoses."
                    .into(),
            };
            record_iter.feedback = Some(payload.clone());
            let conflicted: BTreeSet<String> = record_iter
                .conflicts
                .iter()
                .flat_map(|c| [c.pair.0.clone(), c.pair.1.clone()])
                .collect();
            trace.iterations.push(record_iter);
            let request = ExpertRequest::new(Role::Primary)
                .block(labels::SUMMARY, &summary.full)
                .block(labels::RECORD, RecordView::from(record))
                .block(labels::FEEDBACK, &payload);
            let revised = match self.call(trace, request)? {
                ExpertResponse::Primary { diagnoses } => self.canonical_primary(diagnoses),
                _ => unreachable!("gateway checks the response role"),
            };
            primary = merge_revision(primary, revised, &conflicted);
            clock.lap("feedback");
        }
    }

    fn candidates(&self, primary: &[DiagnosisEvidence], supplements: &[SupplementScore<f64>]) -> Vec<Candidate> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for d in primary {
            if seen.insert(d.disease.clone()) {
                out.push(Candidate {
                    disease: d.disease.clone(),
                    provenance: Provenance::Primary,
                });
            }
        }
        for s in supplements {
            if seen.insert(s.disease.clone()) {
                out.push(Candidate {
                    disease: s.disease.clone(),
                    provenance: Provenance::Supplement,
                });
            }
        }
        out
    }

    /// Discriminating features for a pair: the confusion expert's list when
    /// it judged the pair, otherwise the graph feature difference.
    fn discriminating(&self, pair: &(String, String), o_conf: &[ConfusionFinding]) -> Vec<String> {
        let same = |p: &(String, String)| (p.0 == pair.0 && p.1 == pair.1) || (p.0 == pair.1 && p.1 == pair.0);
        if let Some(f) = o_conf.iter().find(|f| same(&f.pair)) {
            return f.discriminating.clone();
        }
        let profile = |n: &str| {
            self.disease_node(n)
                .and_then(|id| build_feature_profile(&self.graph, id).ok())
                .map(|p| p.flattened())
                .unwrap_or_default()
        };
        let (a, b) = (profile(&pair.0), profile(&pair.1));
        a.symmetric_difference(&b).cloned().collect()
    }

    /// Zeroes the logic score of the weaker member of every remaining
    /// conflict and rescores.
    fn force_resolution(
        &self,
        iteration: &IterationRecord,
    ) -> Result<(Vec<RankedDiagnosis<f64>>, Vec<ForcedResolution>), Halt> {
        let mut eliminated = BTreeSet::new();
        let mut forced = Vec::new();
        for c in &iteration.conflicts {
            let (a, b) = &c.pair;
            let (ca, cb) = (iteration.confidences[a], iteration.confidences[b]);
            let a_stronger = ca > cb || (ca == cb && a <= b);
            let (strong, weak) = if a_stronger { (a, b) } else { (b, a) };
            log::warn!("iteration budget exhausted; keeping `{strong}` over `{weak}`");
            eliminated.insert(weak.clone());
            forced.push(ForcedResolution {
                pair: c.pair.clone(),
                retained: strong.clone(),
                eliminated: weak.clone(),
            });
        }
        let ranking = iteration
            .scored
            .iter()
            .map(|r| {
                if eliminated.contains(&r.disease) {
                    RankedDiagnosis::score(
                        r.disease.clone(),
                        r.provenance,
                        r.f_evid,
                        0.0,
                        r.omega,
                        r.s_icd,
                        &self.config.fusion,
                    )
                    .map_err(internal)
                } else {
                    Ok(r.clone())
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((ranking, forced))
    }

    /// Runs every record of a parsed corpus on a pool of
    /// `config.run.parallelism` workers; output keeps corpus order.
    pub fn run_records(&self, records: Vec<Result<EmrRecord, ParseFailure>>) -> Result<Vec<TraceLine>, OrchestratorError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.run.parallelism)
            .build()
            .map_err(|e| OrchestratorError::Pool(e.to_string()))?;
        pool.install(|| {
            records
                .into_par_iter()
                .map(|r| match r {
                    Ok(record) => self.run_case(&record).map(|t| TraceLine::Case(Box::new(t))),
                    Err(failure) => Ok(TraceLine::ParseFailure(failure)),
                })
                .collect()
        })
    }

    /// Runs a corpus file and returns all trace lines, ending with the
    /// summary line.
    pub fn run_corpus(&self, corpus: &Path) -> Result<Vec<TraceLine>, OrchestratorError> {
        let parsed = load_corpus(corpus)?;
        let gold: Vec<EmrRecord> = parsed.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
        let mut lines = self.run_records(parsed)?;
        lines.push(TraceLine::Summary(summarize_corpus(&lines, &gold, self.config.eval.fuzzy_threshold)?));
        Ok(lines)
    }
}

/// The full configuration followed by each single-component ablation.
pub fn ablation_settings() -> Vec<Ablation> {
    let off = Ablation::default();
    vec![
        off,
        Ablation { no_mkg: true, ..off },
        Ablation { no_lab: true, ..off },
        Ablation { no_sin: true, ..off },
        Ablation { no_rel: true, ..off },
    ]
}

impl Engine {
    /// Runs `corpus` once per entry of [`ablation_settings`] and returns the
    /// summary line of each run, labelled.
    pub fn run_ablation(&self, corpus: &Path) -> Result<Vec<(String, CorpusSummary)>, OrchestratorError> {
        ablation_settings()
            .into_iter()
            .map(|ablation| {
                let mut config = self.config.clone();
                config.ablation = ablation;
                let lines = self.with_config(config)?.run_corpus(corpus)?;
                match lines.into_iter().last() {
                    Some(TraceLine::Summary(s)) => Ok((ablation.label(), s)),
                    _ => unreachable!("run_corpus ends with a summary line"),
                }
            })
            .collect()
    }
}

fn internal<E: std::fmt::Display>(e: E) -> Halt {
    // Graph, fusion and supplement failures only arise from inconsistent
    // inputs; they end the case like an expert failure would.
    Halt::Expert(ExpertError::InvalidRequest(e.to_string()))
}

/// Revised diagnoses replace the evidence of conflicted diseases, add new
/// diseases, and drop conflicted diseases the revision left out. Other
/// diseases are kept as they were.
pub fn merge_revision(
    current: Vec<DiagnosisEvidence>,
    revised: Vec<DiagnosisEvidence>,
    conflicted: &BTreeSet<String>,
) -> Vec<DiagnosisEvidence> {
    let revised_names: BTreeSet<&str> = revised.iter().map(|d| d.disease.as_str()).collect();
    let mut out: Vec<DiagnosisEvidence> = current
        .into_iter()
        .filter(|d| !conflicted.contains(&d.disease) || revised_names.contains(d.disease.as_str()))
        .collect();
    for r in revised {
        match out.iter_mut().find(|d| d.disease == r.disease) {
            Some(existing) if conflicted.contains(&r.disease) => existing.evidence = r.evidence,
            Some(_) => {}
            None => out.push(r),
        }
    }
    out
}

/// Status counts plus metrics when every record carries gold labels.
pub fn summarize_corpus(
    lines: &[TraceLine],
    records: &[EmrRecord],
    threshold: f64,
) -> Result<CorpusSummary, OrchestratorError> {
    let mut counts = StatusCounts::default();
    let mut traces = Vec::new();
    for line in lines {
        match line {
            TraceLine::Case(t) => {
                match t.status {
                    CaseStatus::Ok => counts.ok += 1,
                    CaseStatus::ExpertError => counts.expert_error += 1,
                    CaseStatus::EmptyCandidates => counts.empty_candidates += 1,
                }
                traces.push(t.as_ref().clone());
            }
            TraceLine::ParseFailure(_) => counts.parse_failures += 1,
            TraceLine::Summary(_) => {}
        }
    }
    let metrics = if !records.is_empty() && records.iter().all(|r| r.gold_labels.is_some()) {
        let mut report = compute_prf(&traces, records, threshold)?;
        let (hr, rr) = compute_hr_rr(&traces, records, threshold)?;
        report.hr = Some(hr);
        report.rr = Some(rr);
        Some(report)
    } else {
        None
    };
    Ok(CorpusSummary {
        schema_version: SCHEMA_VERSION,
        kind: "summary".into(),
        cases: traces.len(),
        counts,
        metrics,
    })
}

/// Writes one JSON object per line.
pub fn write_trace_lines<W: Write>(mut out: W, lines: &[TraceLine]) -> std::io::Result<()> {
    for line in lines {
        writeln!(out, "{}", line.to_json())?;
    }
    out.flush()
}

/// Reads a trace file into raw lines, for byte comparisons.
pub fn read_lines(path: &Path) -> std::io::Result<Vec<String>> {
    BufReader::new(fs::File::open(path)?).lines().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dx(name: &str, ev: &[&str]) -> DiagnosisEvidence {
        DiagnosisEvidence {
            disease: name.into(),
            evidence: ev.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn revision_is_local_to_conflicts() {
        let current = vec![dx("a", &["x"]), dx("b", &["y"]), dx("c", &["z"])];
        let revised = vec![dx("a", &["x2"]), dx("c", &["ignored"]), dx("d", &["w"])];
        let conflicted = BTreeSet::from(["a".to_string(), "b".to_string()]);
        let merged = merge_revision(current, revised, &conflicted);
        assert_eq!(merged, vec![dx("a", &["x2"]), dx("c", &["z"]), dx("d", &["w"])]);
    }

    #[test]
    fn corpus_parse_failures_are_recorded() {
        let text = "{\"case_id\":\"a\",\"cc\":\"x\",\"hpi\":\"\",\"pmh\":\"\",\"pe\":\"\",\"ae\":\"\"}\n\
                    not json\n\
                    {\"case_id\":\"\",\"cc\":\"x\",\"hpi\":\"\",\"pmh\":\"\",\"pe\":\"\",\"ae\":\"\"}\n";
        let parsed = parse_corpus(text);
        assert_eq!(parsed.len(), 3);
        assert!(parsed[0].is_ok());
        assert_eq!(parsed[1].as_ref().unwrap_err().line, 2);
        assert_eq!(parsed[2].as_ref().unwrap_err().line, 3);
    }

    #[test]
    fn trace_line_kinds_roundtrip() {
        let f = TraceLine::ParseFailure(ParseFailure {
            schema_version: SCHEMA_VERSION,
            kind: "parse_failure".into(),
            line: 4,
            message: "bad".into(),
        });
        assert_eq!(TraceLine::parse(&f.to_json()).unwrap(), f);
        assert!(TraceLine::parse("{\"schema_version\": 99, \"kind\": \"case\"}").is_err());
    }
}
