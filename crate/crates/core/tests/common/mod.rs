#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;
use std::sync::Arc;

use kgdx_core::config::{parse_config, ConfigOverrides, RunConfig};
use kgdx_core::entity::{AlignmentRow, AlignmentTable, EmrRecord};
use kgdx_core::expert::{MockBackend, RuleSet};
use kgdx_core::fusion::IcdTable;
use kgdx_core::graph::graph_from_str;
use kgdx_core::orchestrator::{CaseTrace, Engine, TraceLine};
use kgdx_core::types::EntityType;

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden")
}

pub fn golden_config() -> RunConfig {
    parse_config(Some(&golden_dir().join("config.toml")), &ConfigOverrides::default()).expect("golden config")
}

pub fn golden_engine() -> Engine {
    Engine::from_config(golden_config()).expect("golden engine")
}

pub fn golden_corpus() -> PathBuf {
    golden_dir().join("corpus.jsonl")
}

pub fn case_traces(lines: &[TraceLine]) -> Vec<&CaseTrace> {
    lines
        .iter()
        .filter_map(|l| match l {
            TraceLine::Case(t) => Some(t.as_ref()),
            _ => None,
        })
        .collect()
}

pub fn serialize(lines: &[TraceLine]) -> String {
    lines.iter().map(|l| l.to_json() + "\n").collect()
}

/// Corpus of `n` generated cases, each with two diseases that share a parent
/// through `subtype_of` and are equally supported by the evidence.
///
/// With `resolving = false` the adjustment expert returns no scores, so the
/// pair keeps identical confidence and the conflict never clears. With
/// `resolving = true` the reference adjustment eliminates one member on the
/// first pass.
pub fn conflict_corpus(n: usize, resolving: bool) -> (Engine, Vec<EmrRecord>) {
    let mut kg = String::new();
    let mut rows = Vec::new();
    let mut icd = Vec::new();
    let mut primary = String::new();
    let mut records = Vec::new();
    for i in 0..n {
        let (a, b, group) = (format!("disorder {i:03}a"), format!("disorder {i:03}b"), format!("group {i:03}"));
        let (sign, finding) = (format!("sign {i:03}"), format!("finding {i:03}"));
        for d in [&a, &b] {
            kg.push_str(&format!("{d}\tsubtype_of\t{group}\tdis\tdis\n"));
            kg.push_str(&format!("{d}\thas_symptom\t{sign}\tdis\tsym\n"));
            kg.push_str(&format!("{d}\tconfirmed_by\t{finding}\tdis\tite\n"));
            icd.push((format!("X{i:03}"), d.clone()));
        }
        rows.push(AlignmentRow {
            alias: sign.clone(),
            canonical: sign.clone(),
            entity_type: EntityType::Sym,
        });
        rows.push(AlignmentRow {
            alias: finding.clone(),
            canonical: finding.clone(),
            entity_type: EntityType::Ite,
        });
        primary.push_str(&format!(
            "match: [m{i:03}] => {{\"diagnoses\": [{{\"disease\": \"{a}\", \"evidence\": [\"{sign}\"]}}, {{\"disease\": \"{b}\", \"evidence\": [\"{finding}\"]}}]}}\n"
        ));
        records.push(EmrRecord {
            case_id: format!("gen-{i:03}"),
            cc: format!("{sign} for two days [m{i:03}]"),
            hpi: "progressive".into(),
            pmh: "none".into(),
            pe: "unremarkable".into(),
            ae: finding.clone(),
            gold_labels: Some(vec![a.clone()]),
        });
    }
    let adjustment = if resolving { "@reference" } else { "{\"scores\": {}}" };
    let rules = format!(
        "[primary]\n{primary}default => {{\"diagnoses\": []}}\n\
         [laboratory]\ndefault => @reference {{\"weights\": {{\"sym\": 0.5, \"ite\": 0.5}}}}\n\
         [single_disease]\ndefault => @constant {{\"value\": 0.5}}\n\
         [exclusion]\ndefault => @reference\n\
         [confusion]\ndefault => @reference {{\"verdict\": \"distinguishable\"}}\n\
         [adjustment]\ndefault => {adjustment}\n"
    );
    let classes = "subtype_of\tsubtype_exclusive\nhas_symptom\tfeature\nconfirmed_by\tfeature\n";
    let graph = graph_from_str(&kg, classes).expect("generated graph");
    let backend = MockBackend::new(RuleSet::parse(&rules).expect("generated rules"));
    let mut config = RunConfig::default();
    config.supplement.k_sup = 0;
    let engine = Engine::new(
        config,
        Arc::new(graph),
        Arc::new(AlignmentTable::from_rows(rows)),
        Arc::new(IcdTable::from_rows(icd)),
        Arc::new(backend),
    )
    .expect("generated engine");
    (engine, records)
}
