//! In-memory medical knowledge graph with bounded-hop queries.
//!
//! Nodes are identified by `(normalized name, type)`. Edges keep their
//! orientation for reporting but are traversed undirected by every distance
//! and path query.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::text::normalize_name;
use crate::types::{EntityType, RelationClass};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: unknown node type code `{code}`")]
    UnknownNodeType { line: usize, code: String },
    #[error("line {line}: unknown relation class `{class}`")]
    UnknownRelationClass { line: usize, class: String },
    #[error("unknown node id {0}")]
    UnknownNode(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub node_type: EntityType,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub head: NodeId,
    pub relation: u32,
    pub tail: NodeId,
}

/// A `(head, relation, tail)` fact rendered with node names.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathResult {
    pub hops: usize,
    pub triples: Vec<Triple>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub nodes_by_type: BTreeMap<String, usize>,
    pub edges_by_class: BTreeMap<String, usize>,
    pub relation_labels: usize,
    pub isolated_nodes: usize,
    pub max_degree: usize,
}

/// Incrementally assembles a [`KnowledgeGraph`].
#[derive(Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    index: HashMap<(String, EntityType), NodeId>,
    relations: Vec<String>,
    relation_index: HashMap<String, u32>,
    classes: HashMap<String, RelationClass>,
    edges: Vec<Edge>,
    edge_set: HashSet<Edge>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the existing node for `(name, node_type)` or creates it.
    pub fn add_node(&mut self, name: &str, node_type: EntityType) -> NodeId {
        let key = (normalize_name(name), node_type);
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            name: key.0.clone(),
            node_type,
        });
        self.index.insert(key, id);
        id
    }

    fn intern_relation(&mut self, label: &str) -> u32 {
        let label = label.trim();
        if let Some(&id) = self.relation_index.get(label) {
            return id;
        }
        let id = self.relations.len() as u32;
        self.relations.push(label.to_string());
        self.relation_index.insert(label.to_string(), id);
        id
    }

    /// Adds an edge; returns false when the identical triple already exists.
    pub fn add_edge(&mut self, head: NodeId, relation: &str, tail: NodeId) -> bool {
        let relation = self.intern_relation(relation);
        let edge = Edge {
            head,
            relation,
            tail,
        };
        if self.edge_set.insert(edge) {
            self.edges.push(edge);
            true
        } else {
            false
        }
    }

    pub fn add_triple(
        &mut self,
        head: &str,
        head_type: EntityType,
        relation: &str,
        tail: &str,
        tail_type: EntityType,
    ) -> bool {
        let h = self.add_node(head, head_type);
        let t = self.add_node(tail, tail_type);
        self.add_edge(h, relation, t)
    }

    pub fn set_relation_class(&mut self, label: &str, class: RelationClass) {
        self.classes.insert(label.trim().to_string(), class);
    }

    pub fn build(self) -> KnowledgeGraph {
        let mut adjacency: Vec<Vec<(NodeId, u32)>> = vec![Vec::new(); self.nodes.len()];
        for (idx, edge) in self.edges.iter().enumerate() {
            adjacency[edge.head.index()].push((edge.tail, idx as u32));
            if edge.head != edge.tail {
                adjacency[edge.tail.index()].push((edge.head, idx as u32));
            }
        }
        let mut by_name: HashMap<String, Vec<NodeId>> = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            by_name
                .entry(node.name.clone())
                .or_default()
                .push(NodeId(i as u32));
        }
        let relation_classes = self
            .relations
            .iter()
            .map(|label| self.classes.get(label).copied().unwrap_or_default())
            .collect();
        KnowledgeGraph {
            nodes: self.nodes,
            index: self.index,
            by_name,
            relations: self.relations,
            relation_classes,
            edges: self.edges,
            adjacency,
        }
    }
}

/// Immutable typed graph; all queries take `&self` and are thread-safe.
#[derive(Debug)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    index: HashMap<(String, EntityType), NodeId>,
    by_name: HashMap<String, Vec<NodeId>>,
    relations: Vec<String>,
    relation_classes: Vec<RelationClass>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(NodeId, u32)>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a graph from a triple TSV and a relation-class TSV.
pub fn load_graph(triple_file: &Path, relation_class_file: &Path) -> Result<KnowledgeGraph, GraphError> {
    let triples = File::open(triple_file).map_err(io_err(triple_file))?;
    let classes = File::open(relation_class_file).map_err(io_err(relation_class_file))?;
    let mut builder = GraphBuilder::new();
    read_relation_classes(&mut builder, BufReader::new(classes))?;
    read_triples(&mut builder, BufReader::new(triples))?;
    Ok(builder.build())
}

fn content_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), GraphError>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line_no = i + 1;
        match line {
            Err(e) => Some(Err(GraphError::Malformed {
                line: line_no,
                reason: e.to_string(),
            })),
            Ok(l) => {
                let trimmed = l.trim_end_matches(['\r', '\n']);
                if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                    None
                } else {
                    Some(Ok((line_no, trimmed.to_string())))
                }
            }
        }
    })
}

/// Parses `head\trelation\ttail\thead_type\ttail_type` lines into `builder`.
pub fn read_triples<R: BufRead>(builder: &mut GraphBuilder, reader: R) -> Result<(), GraphError> {
    for item in content_lines(reader) {
        let (line, text) = item?;
        let cols: Vec<&str> = text.split('\t').collect();
        if cols.len() != 5 {
            return Err(GraphError::Malformed {
                line,
                reason: format!("expected 5 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[..3].iter().any(|c| c.trim().is_empty()) {
            return Err(GraphError::Malformed {
                line,
                reason: "empty head, relation or tail".into(),
            });
        }
        let parse_type = |code: &str| {
            code.parse::<EntityType>()
                .map_err(|e| GraphError::UnknownNodeType { line, code: e.0 })
        };
        let head_type = parse_type(cols[3])?;
        let tail_type = parse_type(cols[4])?;
        builder.add_triple(cols[0], head_type, cols[1], cols[2], tail_type);
    }
    Ok(())
}

/// Parses `relation_label\tclass` lines into `builder`.
pub fn read_relation_classes<R: BufRead>(builder: &mut GraphBuilder, reader: R) -> Result<(), GraphError> {
    for item in content_lines(reader) {
        let (line, text) = item?;
        let cols: Vec<&str> = text.split('\t').collect();
        if cols.len() != 2 || cols[0].trim().is_empty() {
            return Err(GraphError::Malformed {
                line,
                reason: "expected `relation_label<TAB>class`".into(),
            });
        }
        let class = cols[1]
            .parse::<RelationClass>()
            .map_err(|class| GraphError::UnknownRelationClass { line, class })?;
        builder.set_relation_class(cols[0], class);
    }
    Ok(())
}

/// Convenience for tests and tools: build a graph from in-memory TSV text.
pub fn graph_from_str(triples: &str, relation_classes: &str) -> Result<KnowledgeGraph, GraphError> {
    let mut builder = GraphBuilder::new();
    read_relation_classes(&mut builder, relation_classes.as_bytes())?;
    read_triples(&mut builder, triples.as_bytes())?;
    Ok(builder.build())
}

impl KnowledgeGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, GraphError> {
        self.nodes.get(id.index()).ok_or(GraphError::UnknownNode(id.0))
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.nodes[id.index()].name
    }

    pub fn node_type(&self, id: NodeId) -> EntityType {
        self.nodes[id.index()].node_type
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len() as u32).map(NodeId)
    }

    pub fn nodes_of_type(&self, node_type: EntityType) -> impl Iterator<Item = NodeId> + '_ {
        self.node_ids().filter(move |&id| self.node_type(id) == node_type)
    }

    /// Exact lookup by `(name, type)`; the name is normalized first.
    pub fn lookup(&self, name: &str, node_type: EntityType) -> Option<NodeId> {
        self.index.get(&(normalize_name(name), node_type)).copied()
    }

    /// Lookup preferring `preferred` type, falling back to the first node
    /// (lowest id) carrying the same name under any type.
    pub fn resolve(&self, name: &str, preferred: EntityType) -> Option<NodeId> {
        let key = normalize_name(name);
        if let Some(&id) = self.index.get(&(key.clone(), preferred)) {
            return Some(id);
        }
        self.by_name.get(&key).and_then(|ids| ids.first().copied())
    }

    pub fn relation_label(&self, edge: &Edge) -> &str {
        &self.relations[edge.relation as usize]
    }

    pub fn relation_class(&self, edge: &Edge) -> RelationClass {
        self.relation_classes[edge.relation as usize]
    }

    pub fn class_of_label(&self, label: &str) -> RelationClass {
        self.relations
            .iter()
            .position(|l| l == label)
            .map(|i| self.relation_classes[i])
            .unwrap_or_default()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn triple(&self, edge: &Edge) -> Triple {
        Triple {
            head: self.name(edge.head).to_string(),
            relation: self.relation_label(edge).to_string(),
            tail: self.name(edge.tail).to_string(),
        }
    }

    /// `(neighbor, edge)` pairs for every edge touching `id`, in insertion order.
    pub fn incident(&self, id: NodeId) -> impl Iterator<Item = (NodeId, &Edge)> + '_ {
        self.adjacency[id.index()]
            .iter()
            .map(move |&(n, e)| (n, &self.edges[e as usize]))
    }

    fn check(&self, id: NodeId) -> Result<(), GraphError> {
        self.node(id).map(|_| ())
    }

    /// Shortest undirected hop count from `source` to `target` if it is at
    /// most `max_hops`.
    pub fn bounded_distance(
        &self,
        source: NodeId,
        target: NodeId,
        max_hops: usize,
    ) -> Result<Option<usize>, GraphError> {
        self.check(source)?;
        self.check(target)?;
        if source == target {
            return Ok(Some(0));
        }
        // Bidirectional: grow the smaller ball one full layer at a time. The
        // first layer that touches the other ball gives the exact distance.
        let mut seen = [HashSet::from([source]), HashSet::from([target])];
        let mut frontier = [vec![source], vec![target]];
        for depth in 1..=max_hops {
            let side = usize::from(frontier[1].len() < frontier[0].len());
            let [near, far] = if side == 0 { [0, 1] } else { [1, 0] };
            let mut next = Vec::new();
            for &u in &frontier[near] {
                for &(v, _) in &self.adjacency[u.index()] {
                    if seen[far].contains(&v) {
                        return Ok(Some(depth));
                    }
                    if seen[near].insert(v) {
                        next.push(v);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier[near] = next;
        }
        Ok(None)
    }

    /// All nodes within `max_hops` of `source` with their hop counts,
    /// including `source` itself at 0. Sorted by node id.
    pub fn within_hops(&self, source: NodeId, max_hops: usize) -> Result<Vec<(NodeId, usize)>, GraphError> {
        self.check(source)?;
        let dist = self.bfs(source, max_hops);
        let mut out: Vec<(NodeId, usize)> = dist.into_iter().collect();
        out.sort_unstable();
        Ok(out)
    }

    fn bfs(&self, source: NodeId, max_hops: usize) -> HashMap<NodeId, usize> {
        let mut dist = HashMap::from([(source, 0usize)]);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d == max_hops {
                continue;
            }
            for &(v, _) in &self.adjacency[u.index()] {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(v) {
                    slot.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// One shortest undirected path rendered as oriented triples.
    ///
    /// Among equal-length paths the lexicographically smallest sequence of
    /// `(relation label, next node name)` steps is returned.
    pub fn shortest_path_triples(
        &self,
        source: NodeId,
        target: NodeId,
        max_hops: usize,
    ) -> Result<Option<PathResult>, GraphError> {
        self.check(source)?;
        self.check(target)?;
        let to_target = self.bfs(target, max_hops);
        let Some(&hops) = to_target.get(&source) else {
            return Ok(None);
        };
        let mut triples = Vec::with_capacity(hops);
        let mut current = source;
        for remaining in (1..=hops).rev() {
            let step = self.adjacency[current.index()]
                .iter()
                .filter(|(v, _)| to_target.get(v) == Some(&(remaining - 1)))
                .min_by(|(va, ea), (vb, eb)| {
                    let ka = (
                        self.relation_label(&self.edges[*ea as usize]),
                        self.name(*va),
                        self.node_type(*va),
                        *va,
                        *ea,
                    );
                    let kb = (
                        self.relation_label(&self.edges[*eb as usize]),
                        self.name(*vb),
                        self.node_type(*vb),
                        *vb,
                        *eb,
                    );
                    ka.cmp(&kb)
                })
                .copied()
                .expect("bfs layer guarantees a predecessor step");
            triples.push(self.triple(&self.edges[step.1 as usize]));
            current = step.0;
        }
        Ok(Some(PathResult { hops, triples }))
    }

    /// Every triple with `id` as head or tail, sorted and deduplicated.
    pub fn direct_triples(&self, id: NodeId) -> Result<Vec<Triple>, GraphError> {
        self.check(id)?;
        let mut out: Vec<Triple> = self.incident(id).map(|(_, e)| self.triple(e)).collect();
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn stats(&self) -> GraphStats {
        let mut stats = GraphStats {
            nodes: self.nodes.len(),
            edges: self.edges.len(),
            relation_labels: self.relations.len(),
            ..Default::default()
        };
        for node in &self.nodes {
            *stats.nodes_by_type.entry(node.node_type.code().to_string()).or_default() += 1;
        }
        for edge in &self.edges {
            *stats
                .edges_by_class
                .entry(self.relation_class(edge).code().to_string())
                .or_default() += 1;
        }
        for adj in &self.adjacency {
            if adj.is_empty() {
                stats.isolated_nodes += 1;
            }
            stats.max_degree = stats.max_degree.max(adj.len());
        }
        stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // D1,D2,H1 diseases; S1,S2 symptoms; E1 imaging; L1 sign of H1.
    pub(crate) const G1: &str = "\
D1\thas_symptom\tS1\tdis\tsym
D1\thas_symptom\tS2\tdis\tsym
D1\tconfirmed_by\tE1\tdis\tite
H1\tcauses\tD1\tdis\tdis
D1\ttype_exclusive\tD2\tdis\tdis
D2\thas_symptom\tS1\tdis\tsym
D2\thas_symptom\tS2\tdis\tsym
L1\tpresentation_of\tH1\tsym\tdis
";
    pub(crate) const G1_CLASSES: &str = "\
has_symptom\tfeature
confirmed_by\tfeature
type_exclusive\tsubtype_exclusive
causes\tgeneric
";

    fn g1() -> KnowledgeGraph {
        graph_from_str(G1, G1_CLASSES).unwrap()
    }

    fn id(g: &KnowledgeGraph, name: &str) -> NodeId {
        g.resolve(name, EntityType::Dis).unwrap()
    }

    #[test]
    fn six_line_core_fixture_counts() {
        let six: String = G1.lines().take(6).map(|l| format!("{l}\n")).collect();
        let g = graph_from_str(&six, G1_CLASSES).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (6, 6));
    }

    #[test]
    fn empty_and_duplicate_files() {
        let g = graph_from_str("", "").unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (0, 0));
        let dup = "a\tr\tb\tsym\tdis\n# comment\na\tr\tb\tsym\tdis\n";
        let g = graph_from_str(dup, "").unwrap();
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let err = graph_from_str("a\tr\tb\tsym\tdis\nbroken line\n", "").unwrap_err();
        assert!(matches!(err, GraphError::Malformed { line: 2, .. }), "{err}");
        let err = graph_from_str("a\tr\tb\tsym\txyz\n", "").unwrap_err();
        match err {
            GraphError::UnknownNodeType { line, code } => {
                assert_eq!(line, 1);
                assert_eq!(code, "xyz");
            }
            other => panic!("unexpected {other}"),
        }
        assert!(matches!(
            graph_from_str("", "r\tnonsense\n").unwrap_err(),
            GraphError::UnknownRelationClass { line: 1, .. }
        ));
    }

    #[test]
    fn names_are_normalized_and_types_distinguish() {
        let g = graph_from_str("Cerebral  Hemorrhage\tr\tX\tdis\tsym\ncerebral hemorrhage\tr\tX\tsym\tsym\n", "")
            .unwrap();
        assert_eq!(g.node_count(), 3);
        assert!(g.lookup("CEREBRAL hemorrhage", EntityType::Dis).is_some());
        assert_ne!(
            g.lookup("cerebral hemorrhage", EntityType::Dis),
            g.lookup("cerebral hemorrhage", EntityType::Sym)
        );
    }

    #[test]
    fn distances_on_fixture() {
        let g = g1();
        let (s1, d1, l1) = (id(&g, "S1"), id(&g, "D1"), id(&g, "L1"));
        assert_eq!(g.bounded_distance(s1, d1, 3).unwrap(), Some(1));
        assert_eq!(g.bounded_distance(d1, d1, 3).unwrap(), Some(0));
        assert_eq!(g.bounded_distance(l1, d1, 3).unwrap(), Some(2));
        assert_eq!(g.bounded_distance(l1, id(&g, "D2"), 2).unwrap(), None);
        assert_eq!(g.bounded_distance(l1, id(&g, "D2"), 3).unwrap(), Some(3));
        assert!(matches!(
            g.bounded_distance(NodeId(99), d1, 3),
            Err(GraphError::UnknownNode(99))
        ));
    }

    #[test]
    fn isolated_node_is_unreachable() {
        let mut b = GraphBuilder::new();
        read_triples(&mut b, G1.as_bytes()).unwrap();
        let iso = b.add_node("lonely", EntityType::Dis);
        let g = b.build();
        let s1 = id(&g, "S1");
        assert_eq!(g.bounded_distance(s1, iso, 3).unwrap(), None);
        assert!(g.direct_triples(iso).unwrap().is_empty());
        assert!(g.shortest_path_triples(s1, iso, 3).unwrap().is_none());
    }

    #[test]
    fn shortest_paths_on_fixture() {
        let g = g1();
        let (h1, d1, l1) = (id(&g, "H1"), id(&g, "D1"), id(&g, "L1"));
        let p = g.shortest_path_triples(h1, d1, 3).unwrap().unwrap();
        assert_eq!(p.hops, 1);
        assert_eq!(
            p.triples,
            vec![Triple {
                head: "h1".into(),
                relation: "causes".into(),
                tail: "d1".into()
            }]
        );
        let p = g.shortest_path_triples(l1, d1, 3).unwrap().unwrap();
        assert_eq!(p.hops, 2);
        assert_eq!(p.triples[0].relation, "presentation_of");
        assert_eq!(p.triples[1].relation, "causes");
        assert!(g.shortest_path_triples(l1, d1, 0).unwrap().is_none());
        assert_eq!(g.shortest_path_triples(d1, d1, 0).unwrap().unwrap().hops, 0);
    }

    #[test]
    fn tie_break_prefers_smallest_relation_then_name() {
        // a reaches d via b (rel "z") or via c (rel "m"); "m" wins.
        let g = graph_from_str(
            "a\tz\tb\tsym\tsym\nb\tq\td\tsym\tdis\na\tm\tc\tsym\tsym\nc\tq\td\tsym\tdis\n",
            "",
        )
        .unwrap();
        let p = g
            .shortest_path_triples(g.resolve("a", EntityType::Sym).unwrap(), id(&g, "d"), 3)
            .unwrap()
            .unwrap();
        assert_eq!(p.triples[0].tail, "c");
        // same relation: smaller node name wins.
        let g = graph_from_str(
            "a\tr\ty\tsym\tsym\ny\tq\td\tsym\tdis\na\tr\tx\tsym\tsym\nx\tq\td\tsym\tdis\n",
            "",
        )
        .unwrap();
        let p = g
            .shortest_path_triples(g.resolve("a", EntityType::Sym).unwrap(), id(&g, "d"), 3)
            .unwrap()
            .unwrap();
        assert_eq!(p.triples[0].tail, "x");
    }

    #[test]
    fn direct_triples_on_fixture() {
        let g = g1();
        let d1 = g.direct_triples(id(&g, "D1")).unwrap();
        assert_eq!(d1.len(), 5);
        let rels: Vec<&str> = d1.iter().map(|t| t.relation.as_str()).collect();
        assert_eq!(rels.iter().filter(|r| **r == "has_symptom").count(), 2);
        assert!(rels.contains(&"confirmed_by") && rels.contains(&"causes") && rels.contains(&"type_exclusive"));
        // orientation preserved: H1 stays head of the causes edge.
        assert!(d1.iter().any(|t| t.head == "h1" && t.tail == "d1"));
        assert_eq!(g.direct_triples(id(&g, "S1")).unwrap().len(), 2);
    }

    #[test]
    fn unlisted_labels_default_to_generic() {
        let g = g1();
        assert_eq!(g.class_of_label("presentation_of"), RelationClass::Generic);
        assert_eq!(g.class_of_label("type_exclusive"), RelationClass::SubtypeExclusive);
    }

    #[test]
    fn within_hops_includes_source() {
        let g = g1();
        let d1 = id(&g, "D1");
        let near = g.within_hops(d1, 1).unwrap();
        assert!(near.contains(&(d1, 0)));
        assert_eq!(near.len(), 6);
    }

    #[test]
    fn stats_counts() {
        let s = g1().stats();
        assert_eq!(s.nodes, 7);
        assert_eq!(s.edges, 8);
        assert_eq!(s.nodes_by_type["dis"], 3);
        assert_eq!(s.edges_by_class["feature"], 5);
        assert_eq!(s.edges_by_class["generic"], 2);
    }
}
