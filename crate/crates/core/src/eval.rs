//! Fuzzy-matched precision/recall/F1 over final rankings, supplement hit
//! rates, and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::entity::EmrRecord;
use crate::orchestrator::CaseTrace;
use crate::text::edit_similarity;

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("no gold labels for case `{0}`")]
    MissingGold(String),
    #[error("fuzzy threshold {0} is outside (0, 1]")]
    Threshold(f64),
}

/// Greedy one-to-one matching by descending similarity; returns
/// `(predicted index, gold index, similarity)` for pairs at or above
/// `threshold`. Ties go to the lower predicted index, then lower gold index.
pub fn match_labels<P: AsRef<str>, G: AsRef<str>>(
    predicted: &[P],
    gold: &[G],
    threshold: f64,
) -> Vec<(usize, usize, f64)> {
    let mut pairs = Vec::new();
    for (i, p) in predicted.iter().enumerate() {
        for (j, g) in gold.iter().enumerate() {
            let s = edit_similarity(p.as_ref(), g.as_ref());
            if s >= threshold {
                pairs.push((i, j, s));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let (mut used_p, mut used_g) = (BTreeSet::new(), BTreeSet::new());
    let mut out = Vec::new();
    for (i, j, s) in pairs {
        if !used_p.contains(&i) && !used_g.contains(&j) {
            used_p.insert(i);
            used_g.insert(j);
            out.push((i, j, s));
        }
    }
    out.sort_by_key(|&(i, j, _)| (i, j));
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseCounts {
    pub case_id: String,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub per_case: Vec<CaseCounts>,
    pub hr: Option<f64>,
    pub rr: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Micro-averaged metrics over `(case_id, predicted, gold)` triples.
pub fn prf_from_lists<S: AsRef<str>>(cases: &[(String, Vec<S>, Vec<S>)], threshold: f64) -> Result<MetricsReport, EvalError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(EvalError::Threshold(threshold));
    }
    let per_case: Vec<CaseCounts> = cases
        .iter()
        .map(|(id, predicted, gold)| CaseCounts {
            case_id: id.clone(),
            matched: match_labels(predicted, gold, threshold).len(),
            predicted: predicted.len(),
            gold: gold.len(),
        })
        .collect();
    let matched: usize = per_case.iter().map(|c| c.matched).sum();
    let precision = ratio(matched, per_case.iter().map(|c| c.predicted).sum());
    let recall = ratio(matched, per_case.iter().map(|c| c.gold).sum());
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport {
        recall,
        precision,
        f1,
        per_case,
        hr: None,
        rr: None,
    })
}

fn gold_index(records: &[EmrRecord]) -> BTreeMap<&str, &[String]> {
    records
        .iter()
        .filter_map(|r| r.gold_labels.as_deref().map(|g| (r.case_id.as_str(), g)))
        .collect()
}

/// Metrics of the final rankings in `traces` against the corpus gold labels.
pub fn compute_prf(traces: &[CaseTrace], records: &[EmrRecord], threshold: f64) -> Result<MetricsReport, EvalError> {
    let gold = gold_index(records);
    let cases = traces
        .iter()
        .map(|t| {
            let g = gold
                .get(t.case_id.as_str())
                .ok_or_else(|| EvalError::MissingGold(t.case_id.clone()))?;
            Ok((
                t.case_id.clone(),
                t.final_names().into_iter().map(String::from).collect(),
                g.to_vec(),
            ))
        })
        .collect::<Result<Vec<(String, Vec<String>, Vec<String>)>, EvalError>>()?;
    prf_from_lists(&cases, threshold)
}

/// Supplement outcome for one case.
#[derive(Clone, Debug, PartialEq)]
pub struct SupplementOutcome<S> {
    pub supplements: Vec<S>,
    pub final_ranking: Vec<S>,
    pub gold: Vec<S>,
}

/// `HR` is the share of cases where some supplement matches a gold label;
/// `RR` is the share of all supplements that match gold and reach the final
/// ranking.
pub fn hr_rr_from_lists<S: AsRef<str>>(cases: &[SupplementOutcome<S>], threshold: f64) -> (f64, f64) {
    let mut hit_cases = 0;
    let mut total = 0;
    let mut retained_hits = 0;
    for c in cases {
        let matches_gold = |s: &S| c.gold.iter().any(|g| edit_similarity(s.as_ref(), g.as_ref()) >= threshold);
        if c.supplements.iter().any(matches_gold) {
            hit_cases += 1;
        }
        total += c.supplements.len();
        retained_hits += c
            .supplements
            .iter()
            .filter(|s| matches_gold(s) && c.final_ranking.iter().any(|f| f.as_ref() == s.as_ref()))
            .count();
    }
    (ratio(hit_cases, cases.len()), ratio(retained_hits, total))
}

pub fn compute_hr_rr(traces: &[CaseTrace], records: &[EmrRecord], threshold: f64) -> Result<(f64, f64), EvalError> {
    let gold = gold_index(records);
    let cases = traces
        .iter()
        .map(|t| {
            let g = gold
                .get(t.case_id.as_str())
                .ok_or_else(|| EvalError::MissingGold(t.case_id.clone()))?;
            Ok(SupplementOutcome {
                supplements: t.supplement_names().into_iter().map(String::from).collect(),
                final_ranking: t.final_names().into_iter().map(String::from).collect(),
                gold: g.to_vec(),
            })
        })
        .collect::<Result<Vec<SupplementOutcome<String>>, EvalError>>()?;
    Ok(hr_rr_from_lists(&cases, threshold))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Aligned text table of a report, values in percent.
pub fn render_table(report: &MetricsReport) -> String {
    let mut rows = vec![
        ("Recall", pct(report.recall)),
        ("Precision", pct(report.precision)),
        ("F1", pct(report.f1)),
    ];
    if let Some(hr) = report.hr {
        rows.push(("HR", pct(hr)));
    }
    if let Some(rr) = report.rr {
        rows.push(("RR", pct(rr)));
    }
    let mut out = format!("{:<10} {:>8}\n", "Metric", "Value(%)");
    for (name, value) in rows {
        let _ = writeln!(out, "{name:<10} {value:>8}");
    }
    let _ = writeln!(out, "{} cases", report.per_case.len());
    out
}

/// Side-by-side comparison of several configurations.
pub fn render_ablation(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("Setting".len());
    let mut out = format!("{:<width$} {:>8} {:>8} {:>8}\n", "Setting", "R(%)", "P(%)", "F1(%)");
    for (label, r) in rows {
        let _ = writeln!(
            out,
            "{label:<width$} {:>8} {:>8} {:>8}",
            pct(r.recall),
            pct(r.precision),
            pct(r.f1)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matching_examples() {
        let m = match_labels(&["a b c", "x"], &["x", "a b c"], 0.5);
        assert_eq!(m.len(), 2);
        assert!(match_labels(&["qqqq"], &["zzzz"], 0.5).is_empty());
        let m = match_labels(&["cerebral hemorrhage"], &["cerebral haemorrhage", "hypertension"], 0.5);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].1, 0);
    }

    #[test]
    fn greedy_is_one_to_one() {
        // "abcd" is the best match for both gold entries; it takes only one.
        let m = match_labels(&["abcd", "abxx"], &["abcd", "abce"], 0.5);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].0, m[0].1), (0, 0));
        assert_eq!((m[1].0, m[1].1), (1, 1));
    }

    #[test]
    fn prf_examples() {
        let cases = vec![(
            "c".to_string(),
            vec!["alpha", "beta", "zzzzzz"],
            vec!["alpha", "beta", "gamma", "delta"],
        )];
        let r = prf_from_lists(&cases, 0.5).unwrap();
        assert!((r.recall - 0.5).abs() < 1e-12);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 4.0 / 7.0).abs() < 1e-12);

        let perfect = vec![("c".to_string(), vec!["a"], vec!["a"])];
        let r = prf_from_lists(&perfect, 0.5).unwrap();
        assert_eq!((r.recall, r.precision, r.f1), (1.0, 1.0, 1.0));

        let none: Vec<(String, Vec<&str>, Vec<&str>)> = vec![("c".into(), vec![], vec!["a"])];
        let r = prf_from_lists(&none, 0.5).unwrap();
        assert_eq!((r.recall, r.precision, r.f1), (0.0, 0.0, 0.0));
        assert!(prf_from_lists(&none, 0.0).is_err());
    }

    #[test]
    fn hr_rr_examples() {
        let case = |s: &[&'static str], f: &[&'static str], g: &[&'static str]| SupplementOutcome {
            supplements: s.to_vec(),
            final_ranking: f.to_vec(),
            gold: g.to_vec(),
        };
        let cases = vec![
            case(&["hypertension"], &["hypertension"], &["hypertension grade 3"]),
            case(&["migraine"], &["stroke"], &["migraine"]),
            case(&["zzzz"], &[], &["anemia"]),
            case(&["qqqq"], &["qqqq"], &["gout"]),
        ];
        assert_eq!(hr_rr_from_lists(&cases, 0.5), (0.5, 0.25));
        let empty = vec![case(&[], &["a"], &["a"])];
        assert_eq!(hr_rr_from_lists(&empty, 0.5), (0.0, 0.0));
    }

    #[test]
    fn rendering() {
        let r = MetricsReport {
            recall: 0.5,
            precision: 2.0 / 3.0,
            f1: 4.0 / 7.0,
            per_case: vec![],
            hr: Some(0.25),
            rr: None,
        };
        let t = render_table(&r);
        assert!(t.contains("Precision     66.67"), "{t}");
        assert!(t.contains("F1            57.14"), "{t}");
        assert!(t.contains("HR            25.00"));
        let a = render_ablation(&[("full".into(), r.clone()), ("no-rel".into(), r)]);
        assert_eq!(a.lines().count(), 3);
    }
}
