//! Graph-based supplementary candidates: association, connectivity,
//! coverage and the composite supplement score.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{GraphError, KnowledgeGraph, NodeId};
use crate::scalar::Scalar;
use crate::types::EntityType;

#[derive(Debug, thiserror::Error)]
pub enum SupplementError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("degenerate weights: evidence weights sum to zero")]
    DegenerateWeights,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SupplementParams<S> {
    /// Weight on connectivity strength V.
    pub alpha_v: S,
    /// Weight on coverage C; `alpha_v + alpha_c = 1`.
    pub alpha_c: S,
    pub epsilon: S,
    pub max_hops: usize,
}

impl<S: Scalar> Default for SupplementParams<S> {
    fn default() -> Self {
        Self {
            alpha_v: S::lit(0.6),
            alpha_c: S::lit(0.4),
            epsilon: S::lit(1e-8),
            max_hops: 3,
        }
    }
}

/// A weighted evidence entity, grounded to a graph node when one exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Evidence<S> {
    pub name: String,
    pub node: Option<NodeId>,
    pub weight: S,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SupplementScore<S> {
    pub disease: String,
    pub v: S,
    pub c: S,
    pub s: S,
    /// Evidence entities within the hop bound, with their distances.
    pub connected_entities: Vec<(String, usize)>,
}

/// 1 when `entity` lies within `max_hops` of `disease`, else 0.
pub fn association(
    graph: &KnowledgeGraph,
    entity: NodeId,
    disease: NodeId,
    max_hops: usize,
) -> Result<u8, GraphError> {
    Ok(graph.bounded_distance(entity, disease, max_hops)?.is_some() as u8)
}

fn hops_to<S>(
    graph: &KnowledgeGraph,
    disease: NodeId,
    evidence: &[Evidence<S>],
    max_hops: usize,
) -> Result<Vec<Option<usize>>, GraphError> {
    graph.node(disease)?;
    evidence
        .iter()
        .map(|e| match e.node {
            Some(n) => graph.bounded_distance(n, disease, max_hops),
            None => Ok(None),
        })
        .collect()
}

fn v_from_hops<S: Scalar>(evidence: &[Evidence<S>], hops: &[Option<usize>], epsilon: S) -> S {
    let mut num = S::zero();
    let mut den = S::zero();
    for (e, h) in evidence.iter().zip(hops) {
        if let Some(h) = *h {
            if h >= 1 {
                num = num + e.weight / (S::from_hops(h) + epsilon);
                den = den + e.weight;
            }
        }
    }
    if den > S::zero() {
        num / den
    } else {
        S::zero()
    }
}

fn c_from_hops<S: Scalar>(evidence: &[Evidence<S>], hops: &[Option<usize>]) -> Result<S, SupplementError> {
    let total: S = evidence.iter().map(|e| e.weight).sum();
    if !(total > S::zero()) {
        return Err(SupplementError::DegenerateWeights);
    }
    let covered: S = evidence
        .iter()
        .zip(hops)
        .filter(|(_, h)| h.is_some())
        .map(|(e, _)| e.weight)
        .sum();
    Ok(covered / total)
}

/// Weighted connectivity strength: mean of `1 / (dist + eps)` over evidence
/// at distance 1..=max_hops, weighted by effective weight. Zero when no
/// evidence is connected.
pub fn connectivity_strength<S: Scalar>(
    graph: &KnowledgeGraph,
    disease: NodeId,
    evidence: &[Evidence<S>],
    params: &SupplementParams<S>,
) -> Result<S, GraphError> {
    let hops = hops_to(graph, disease, evidence, params.max_hops)?;
    Ok(v_from_hops(evidence, &hops, params.epsilon))
}

/// Share of total evidence weight associated with `disease`.
pub fn coverage<S: Scalar>(
    graph: &KnowledgeGraph,
    disease: NodeId,
    evidence: &[Evidence<S>],
    params: &SupplementParams<S>,
) -> Result<S, SupplementError> {
    let hops = hops_to(graph, disease, evidence, params.max_hops)?;
    c_from_hops(evidence, &hops)
}

fn assemble<S: Scalar>(
    graph: &KnowledgeGraph,
    disease: NodeId,
    evidence: &[Evidence<S>],
    hops: &[Option<usize>],
    params: &SupplementParams<S>,
) -> Result<SupplementScore<S>, SupplementError> {
    let v = v_from_hops(evidence, hops, params.epsilon);
    let c = c_from_hops(evidence, hops)?;
    Ok(SupplementScore {
        disease: graph.name(disease).to_string(),
        v,
        c,
        s: params.alpha_v * v + params.alpha_c * c,
        connected_entities: evidence
            .iter()
            .zip(hops)
            .filter_map(|(e, h)| h.map(|h| (e.name.clone(), h)))
            .collect(),
    })
}

pub fn score_disease<S: Scalar>(
    graph: &KnowledgeGraph,
    disease: NodeId,
    evidence: &[Evidence<S>],
    params: &SupplementParams<S>,
) -> Result<SupplementScore<S>, SupplementError> {
    let hops = hops_to(graph, disease, evidence, params.max_hops)?;
    assemble(graph, disease, evidence, &hops, params)
}

/// Orders by score descending, then disease name ascending.
pub fn by_score_then_name<S: Scalar>(a: &SupplementScore<S>, b: &SupplementScore<S>) -> Ordering {
    b.s.partial_cmp(&a.s)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.disease.cmp(&b.disease))
}

/// Top-`k_sup` disease nodes by composite score among those associated with
/// at least one evidence entity, skipping `exclude`.
///
/// Returns nothing when the evidence carries no weight, since coverage is
/// undefined in that case.
pub fn select_supplements<S: Scalar>(
    graph: &KnowledgeGraph,
    evidence: &[Evidence<S>],
    exclude: &BTreeSet<NodeId>,
    k_sup: usize,
    params: &SupplementParams<S>,
) -> Result<Vec<SupplementScore<S>>, SupplementError> {
    let total: S = evidence.iter().map(|e| e.weight).sum();
    if k_sup == 0 || !(total > S::zero()) {
        return Ok(Vec::new());
    }
    let mut reach: BTreeMap<NodeId, Vec<Option<usize>>> = BTreeMap::new();
    for (i, e) in evidence.iter().enumerate() {
        let Some(node) = e.node else { continue };
        for (n, h) in graph.within_hops(node, params.max_hops)? {
            if graph.node_type(n) != EntityType::Dis || exclude.contains(&n) {
                continue;
            }
            let slot = reach.entry(n).or_insert_with(|| vec![None; evidence.len()]);
            slot[i] = Some(h);
        }
    }
    let mut scored = reach
        .iter()
        .map(|(&d, hops)| assemble(graph, d, evidence, hops, params))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(by_score_then_name);
    scored.truncate(k_sup);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::graph_from_str;

    const G1: &str = "\
D1\thas_symptom\tS1\tdis\tsym
D1\thas_symptom\tS2\tdis\tsym
D1\tconfirmed_by\tE1\tdis\tite
H1\tcauses\tD1\tdis\tdis
D1\ttype_exclusive\tD2\tdis\tdis
D2\thas_symptom\tS1\tdis\tsym
D2\thas_symptom\tS2\tdis\tsym
L1\tpresentation_of\tH1\tsym\tdis
U9\tpart_of\tU10\tbod\tbod
";

    fn g() -> KnowledgeGraph {
        graph_from_str(G1, "").unwrap()
    }

    fn ev(g: &KnowledgeGraph, name: &str, weight: f64) -> Evidence<f64> {
        Evidence {
            name: name.into(),
            node: g.node_ids().find(|&n| g.name(n) == name.to_lowercase()),
            weight,
        }
    }

    fn dis(g: &KnowledgeGraph, name: &str) -> NodeId {
        g.lookup(name, EntityType::Dis).unwrap()
    }

    #[test]
    fn association_examples() {
        let g = g();
        let s1 = g.lookup("S1", EntityType::Sym).unwrap();
        let l1 = g.lookup("L1", EntityType::Sym).unwrap();
        let u9 = g.lookup("U9", EntityType::Bod).unwrap();
        assert_eq!(association(&g, s1, dis(&g, "D1"), 3).unwrap(), 1);
        assert_eq!(association(&g, l1, dis(&g, "D1"), 3).unwrap(), 1);
        assert_eq!(association(&g, u9, dis(&g, "D1"), 3).unwrap(), 0);
    }

    #[test]
    fn connectivity_examples() {
        let g = g();
        let p = SupplementParams::default();
        let d1 = dis(&g, "D1");
        let v = connectivity_strength(&g, d1, &[ev(&g, "S1", 0.3), ev(&g, "L1", 0.2)], &p).unwrap();
        // frozen from exact rational evaluation of (0.3/(1+e) + 0.2/(2+e)) / 0.5
        assert!((v - 0.799_999_993).abs() < 1e-12, "{v}");
        let v = connectivity_strength(&g, d1, &[ev(&g, "S1", 0.7)], &p).unwrap();
        assert!((v - 1.0 / (1.0 + 1e-8)).abs() < 1e-15);
        let v = connectivity_strength(&g, d1, &[ev(&g, "U9", 0.7), ev(&g, "nowhere", 0.2)], &p).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn coverage_examples() {
        let g = g();
        let p = SupplementParams::default();
        let d1 = dis(&g, "D1");
        let c = coverage(&g, d1, &[ev(&g, "S1", 0.3), ev(&g, "L1", 0.2), ev(&g, "U9", 0.5)], &p).unwrap();
        assert!((c - 0.5).abs() < 1e-15);
        assert_eq!(coverage(&g, d1, &[ev(&g, "S1", 0.3), ev(&g, "E1", 0.2)], &p).unwrap(), 1.0);
        assert_eq!(coverage(&g, d1, &[ev(&g, "U9", 0.3)], &p).unwrap(), 0.0);
        assert!(matches!(
            coverage(&g, d1, &[ev(&g, "S1", 0.0)], &p),
            Err(SupplementError::DegenerateWeights)
        ));
    }

    #[test]
    fn disconnected_disease_scores_zero() {
        let g = g();
        let p = SupplementParams::default();
        let s = score_disease(&g, dis(&g, "D2"), &[ev(&g, "U9", 1.0)], &p).unwrap();
        assert_eq!((s.v, s.c, s.s), (0.0, 0.0, 0.0));
        assert!(s.connected_entities.is_empty());
    }

    #[test]
    fn select_examples() {
        let g = g();
        let p = SupplementParams::default();
        let evidence = [ev(&g, "S1", 0.3), ev(&g, "L1", 0.2)];
        let exclude = BTreeSet::from([dis(&g, "D1")]);
        // D2: S1@1, L1@3 -> V = (0.3 + 0.2/3)/0.5; H1: S1@2, L1@1 -> V = (0.15 + 0.2)/0.5.
        let top = select_supplements(&g, &evidence, &exclude, 1, &p).unwrap();
        assert_eq!(top.len(), 1);
        assert_eq!(top[0].disease, "d2");
        let all = select_supplements(&g, &evidence, &exclude, 10, &p).unwrap();
        assert_eq!(all.iter().map(|s| s.disease.as_str()).collect::<Vec<_>>(), ["d2", "h1"]);
        assert!(select_supplements(&g, &evidence, &exclude, 0, &p).unwrap().is_empty());
        let everything: BTreeSet<NodeId> = g.nodes_of_type(EntityType::Dis).collect();
        assert!(select_supplements(&g, &evidence, &everything, 3, &p).unwrap().is_empty());
    }

    #[test]
    fn f32_instantiation_agrees() {
        let g = g();
        let p32 = SupplementParams::<f32>::default();
        let e32 = [
            Evidence {
                name: "s1".into(),
                node: g.lookup("S1", EntityType::Sym),
                weight: 0.3f32,
            },
            Evidence {
                name: "l1".into(),
                node: g.lookup("L1", EntityType::Sym),
                weight: 0.2f32,
            },
        ];
        let v = connectivity_strength(&g, dis(&g, "D1"), &e32, &p32).unwrap();
        assert!((v - 0.8).abs() < 1e-6);
    }
}
