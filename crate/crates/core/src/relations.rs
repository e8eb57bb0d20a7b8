//! Inter-disease relation candidates mined from the graph: mutual exclusion
//! via subtype edges, confusion via differential edges or feature overlap.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{Edge, GraphError, KnowledgeGraph, NodeId, PathResult};
use crate::types::{EntityType, RelationClass};

/// Minimum number of shared core features for an overlap-based confusion.
pub const MIN_SHARED_FEATURES: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureProfile {
    pub disease: String,
    pub features: BTreeMap<EntityType, BTreeSet<String>>,
}

impl FeatureProfile {
    pub fn flattened(&self) -> BTreeSet<String> {
        self.features.values().flatten().cloned().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationKind {
    Exclusion,
    Confusion,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationCandidate {
    pub kind: RelationKind,
    /// Lexicographically ordered disease names.
    pub pair: (String, String),
    pub evidence_paths: Vec<PathResult>,
    /// Feature overlap, flattened across types.
    pub shared: BTreeSet<String>,
    /// Overlap retaining the type grouping.
    pub shared_by_type: BTreeMap<EntityType, BTreeSet<String>>,
    /// Symmetric difference of the two feature profiles.
    pub diff: BTreeSet<String>,
}

/// Collects 1-hop neighbors over feature-classed edges, grouped by node type.
pub fn build_feature_profile(graph: &KnowledgeGraph, disease: NodeId) -> Result<FeatureProfile, GraphError> {
    graph.node(disease)?;
    let mut features: BTreeMap<EntityType, BTreeSet<String>> = BTreeMap::new();
    for (neighbor, edge) in graph.incident(disease) {
        if graph.relation_class(edge) == RelationClass::Feature && neighbor != disease {
            features
                .entry(graph.node_type(neighbor))
                .or_default()
                .insert(graph.name(neighbor).to_string());
        }
    }
    Ok(FeatureProfile {
        disease: graph.name(disease).to_string(),
        features,
    })
}

/// Candidate nodes sorted by name, deduplicated; the order of the input
/// never influences output.
fn canonical_candidates(graph: &KnowledgeGraph, candidates: &BTreeSet<NodeId>) -> Vec<NodeId> {
    let mut nodes: Vec<NodeId> = candidates
        .iter()
        .copied()
        .filter(|&n| graph.node(n).is_ok())
        .collect();
    nodes.sort_by(|a, b| graph.name(*a).cmp(graph.name(*b)).then(a.cmp(b)));
    nodes
}

fn edges_between(graph: &KnowledgeGraph, a: NodeId, b: NodeId, class: RelationClass) -> Vec<PathResult> {
    let mut out: Vec<PathResult> = graph
        .incident(a)
        .filter(|(n, e)| *n == b && graph.relation_class(e) == class)
        .map(|(_, e)| PathResult {
            hops: 1,
            triples: vec![graph.triple(e)],
        })
        .collect();
    out.sort_by(|x, y| x.triples.cmp(&y.triples));
    out.dedup();
    out
}

fn overlap(pa: &FeatureProfile, pb: &FeatureProfile) -> (BTreeSet<String>, BTreeMap<EntityType, BTreeSet<String>>, BTreeSet<String>) {
    let fa = pa.flattened();
    let fb = pb.flattened();
    let shared: BTreeSet<String> = fa.intersection(&fb).cloned().collect();
    let diff: BTreeSet<String> = fa.symmetric_difference(&fb).cloned().collect();
    let mut by_type: BTreeMap<EntityType, BTreeSet<String>> = BTreeMap::new();
    for (ty, names) in &pa.features {
        if let Some(other) = pb.features.get(ty) {
            let common: BTreeSet<String> = names.intersection(other).cloned().collect();
            if !common.is_empty() {
                by_type.insert(*ty, common);
            }
        }
    }
    (shared, by_type, diff)
}

fn ordered_pair(graph: &KnowledgeGraph, a: NodeId, b: NodeId) -> (String, String) {
    let (x, y) = (graph.name(a).to_string(), graph.name(b).to_string());
    if x <= y {
        (x, y)
    } else {
        (y, x)
    }
}

/// Pairs linked by a subtype-exclusive edge, or children of a common parent
/// through two subtype-exclusive edges.
pub fn mine_exclusions(graph: &KnowledgeGraph, candidates: &BTreeSet<NodeId>) -> Result<Vec<RelationCandidate>, GraphError> {
    let nodes = canonical_candidates(graph, candidates);
    let mut out = Vec::new();
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            let mut paths = edges_between(graph, a, b, RelationClass::SubtypeExclusive);
            let mut parents_of_b: BTreeMap<NodeId, Vec<Edge>> = BTreeMap::new();
            for (n, e) in graph.incident(b) {
                if n != a && n != b && graph.relation_class(e) == RelationClass::SubtypeExclusive {
                    parents_of_b.entry(n).or_default().push(*e);
                }
            }
            let mut two_hop: Vec<PathResult> = Vec::new();
            for (parent, edge_a) in graph.incident(a) {
                if graph.relation_class(edge_a) != RelationClass::SubtypeExclusive {
                    continue;
                }
                for edge_b in parents_of_b.get(&parent).into_iter().flatten() {
                    two_hop.push(PathResult {
                        hops: 2,
                        triples: vec![graph.triple(edge_a), graph.triple(edge_b)],
                    });
                }
            }
            two_hop.sort_by(|x, y| x.triples.cmp(&y.triples));
            two_hop.dedup();
            paths.extend(two_hop);
            if paths.is_empty() {
                continue;
            }
            let (pa, pb) = (build_feature_profile(graph, a)?, build_feature_profile(graph, b)?);
            let (shared, shared_by_type, diff) = overlap(&pa, &pb);
            out.push(RelationCandidate {
                kind: RelationKind::Exclusion,
                pair: ordered_pair(graph, a, b),
                evidence_paths: paths,
                shared,
                shared_by_type,
                diff,
            });
        }
    }
    out.sort_by(|x, y| x.pair.cmp(&y.pair));
    out.dedup_by(|x, y| x.pair == y.pair);
    Ok(out)
}

/// Pairs with a differential edge or at least [`MIN_SHARED_FEATURES`]
/// shared core features.
pub fn mine_confusions(
    graph: &KnowledgeGraph,
    candidates: &BTreeSet<NodeId>,
    max_hops: usize,
) -> Result<Vec<RelationCandidate>, GraphError> {
    let nodes = canonical_candidates(graph, candidates);
    let profiles = nodes
        .iter()
        .map(|&n| build_feature_profile(graph, n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let (a, b) = (nodes[i], nodes[j]);
            let differential = edges_between(graph, a, b, RelationClass::Differential);
            let (shared, shared_by_type, diff) = overlap(&profiles[i], &profiles[j]);
            if differential.is_empty() && shared.len() < MIN_SHARED_FEATURES {
                continue;
            }
            let mut paths = differential;
            if let Some(p) = graph.shortest_path_triples(a, b, max_hops)? {
                if !paths.contains(&p) {
                    paths.push(p);
                }
            }
            out.push(RelationCandidate {
                kind: RelationKind::Confusion,
                pair: ordered_pair(graph, a, b),
                evidence_paths: paths,
                shared,
                shared_by_type,
                diff,
            });
        }
    }
    out.sort_by(|x, y| x.pair.cmp(&y.pair));
    out.dedup_by(|x, y| x.pair == y.pair);
    Ok(out)
}
