//! Bounded logic scores and conflict detection over exclusion/confusion
//! findings.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::expert::{ConfusionFinding, ConfusionVerdict, ExclusionFinding, ExclusionVerdict};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct LogicVerdict<S> {
    pub scores: BTreeMap<String, S>,
    pub domain: BTreeSet<String>,
    /// Out-of-range raw inputs as `(disease, raw value)`.
    pub clamped: Vec<(String, S)>,
    /// In-domain diseases that had no raw score and defaulted to 1.
    pub defaulted: Vec<String>,
}

impl<S: Scalar> LogicVerdict<S> {
    pub fn score(&self, disease: &str) -> S {
        self.scores.get(disease).copied().unwrap_or_else(S::one)
    }
}

/// Diseases named by an exclusive or confusable finding.
pub fn relation_domain(o_exc: &[ExclusionFinding], o_conf: &[ConfusionFinding]) -> BTreeSet<String> {
    let exc = o_exc
        .iter()
        .filter(|f| f.verdict == ExclusionVerdict::Exclusive)
        .map(|f| &f.pair);
    let conf = o_conf
        .iter()
        .filter(|f| f.verdict == ConfusionVerdict::Confusable)
        .map(|f| &f.pair);
    exc.chain(conf)
        .flat_map(|(a, b)| [a.clone(), b.clone()])
        .collect()
}

/// In-domain diseases get their raw score clamped to `[0, 1]` (1 when
/// missing); everything else gets exactly 1.
pub fn enforce_contract<S: Scalar>(
    raw: &BTreeMap<String, S>,
    o_exc: &[ExclusionFinding],
    o_conf: &[ConfusionFinding],
    candidates: &BTreeSet<String>,
) -> LogicVerdict<S> {
    let domain: BTreeSet<String> = relation_domain(o_exc, o_conf)
        .into_iter()
        .filter(|d| candidates.contains(d))
        .collect();
    let mut verdict = LogicVerdict {
        scores: BTreeMap::new(),
        domain,
        clamped: Vec::new(),
        defaulted: Vec::new(),
    };
    for d in candidates {
        if !verdict.domain.contains(d) {
            verdict.scores.insert(d.clone(), S::one());
            continue;
        }
        let score = match raw.get(d) {
            None => {
                log::warn!("no logic score for in-domain candidate `{d}`; using 1");
                verdict.defaulted.push(d.clone());
                S::one()
            }
            Some(&v) if v.in_unit_interval() => v,
            Some(&v) => {
                log::warn!("logic score for `{d}` is {v}; clamping to [0, 1]");
                verdict.clamped.push((d.clone(), v));
                if v.is_nan() {
                    S::zero()
                } else {
                    v.max(S::zero()).min(S::one())
                }
            }
        };
        verdict.scores.insert(d.clone(), score);
    }
    for d in raw.keys().filter(|d| !candidates.contains(*d)) {
        log::warn!("ignoring logic score for non-candidate `{d}`");
    }
    verdict
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConflictKind {
    Exclusion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ConflictSignal<S> {
    /// Names in ascending order.
    pub pair: (String, String),
    pub kind: ConflictKind,
    pub confidence_gap: S,
}

/// Exclusive pairs whose confidences are both positive and closer than
/// `delta`. Output is sorted by pair and free of duplicates.
pub fn detect_conflicts<S: Scalar>(
    confidences: &BTreeMap<String, S>,
    o_exc: &[ExclusionFinding],
    delta: S,
) -> Vec<ConflictSignal<S>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for f in o_exc.iter().filter(|f| f.verdict == ExclusionVerdict::Exclusive) {
        let (a, b) = &f.pair;
        if a == b {
            continue;
        }
        let pair = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        let (Some(&ca), Some(&cb)) = (confidences.get(&pair.0), confidences.get(&pair.1)) else {
            continue;
        };
        if !(ca > S::zero() && cb > S::zero()) {
            continue;
        }
        let gap = (ca - cb).abs();
        if gap < delta && seen.insert(pair.clone()) {
            out.push(ConflictSignal {
                pair,
                kind: ConflictKind::Exclusion,
                confidence_gap: gap,
            });
        }
    }
    out.sort_by(|x, y| x.pair.cmp(&y.pair));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exc(a: &str, b: &str) -> ExclusionFinding {
        ExclusionFinding {
            pair: (a.into(), b.into()),
            verdict: ExclusionVerdict::Exclusive,
            rationale: String::new(),
        }
    }

    fn names(xs: &[&str]) -> BTreeSet<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn contract_examples() {
        let cands = names(&["d1", "d2", "h1"]);
        let v = enforce_contract(&BTreeMap::from([("d2".to_string(), 0.0)]), &[exc("d1", "d2")], &[], &cands);
        assert_eq!(v.scores["d1"], 1.0);
        assert_eq!(v.scores["d2"], 0.0);
        assert_eq!(v.scores["h1"], 1.0);
        assert_eq!(v.defaulted, ["d1"]);

        let v = enforce_contract(&BTreeMap::from([("h1".to_string(), 0.4)]), &[], &[], &cands);
        assert_eq!(v.scores["h1"], 1.0);
        assert!(v.domain.is_empty());

        let v = enforce_contract(&BTreeMap::from([("d2".to_string(), 1.7)]), &[exc("d1", "d2")], &[], &cands);
        assert_eq!(v.scores["d2"], 1.0);
        assert_eq!(v.clamped, [("d2".to_string(), 1.7)]);
    }

    #[test]
    fn compatible_and_distinguishable_stay_out_of_domain() {
        let mut f = exc("a", "b");
        f.verdict = ExclusionVerdict::Compatible;
        let c = ConfusionFinding {
            pair: ("a".into(), "c".into()),
            verdict: ConfusionVerdict::Distinguishable,
            discriminating: vec![],
        };
        let raw = BTreeMap::from([("a".to_string(), 0.2)]);
        let v = enforce_contract(&raw, &[f], &[c], &names(&["a", "b", "c"]));
        assert!(v.scores.values().all(|s| *s == 1.0));
    }

    #[test]
    fn conflict_examples() {
        let conf = BTreeMap::from([("d1".to_string(), 0.80), ("d2".to_string(), 0.78)]);
        let s = detect_conflicts(&conf, &[exc("d2", "d1")], 0.1);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].pair, ("d1".to_string(), "d2".to_string()));
        assert!((s[0].confidence_gap - 0.02_f64).abs() < 1e-12);

        let conf = BTreeMap::from([("d1".to_string(), 0.9), ("d2".to_string(), 0.0)]);
        assert!(detect_conflicts(&conf, &[exc("d1", "d2")], 0.1).is_empty());
        assert!(detect_conflicts(&conf, &[], 0.1).is_empty());
    }
}
