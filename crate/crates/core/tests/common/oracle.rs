//! Brute-force reference computations, written without the library's graph
//! search or scoring code.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;

use kgdx_core::graph::{graph_from_str, KnowledgeGraph};
use kgdx_core::types::EntityType;

pub const TYPES: [EntityType; 3] = [EntityType::Dis, EntityType::Sym, EntityType::Ite];

#[derive(Clone, Debug)]
pub struct RandomGraph {
    pub names: Vec<String>,
    pub types: Vec<EntityType>,
    pub edges: Vec<(usize, usize)>,
}

impl RandomGraph {
    pub fn generate<R: Rng>(rng: &mut R, max_nodes: usize) -> Self {
        let n = rng.gen_range(2..=max_nodes);
        let density: f64 = rng.gen_range(0.0..0.25);
        let types: Vec<EntityType> = (0..n).map(|_| TYPES[rng.gen_range(0..TYPES.len())]).collect();
        let names = (0..n).map(|i| format!("n{i:02}")).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(density) {
                    edges.push(if rng.gen_bool(0.5) { (i, j) } else { (j, i) });
                }
            }
        }
        Self { names, types, edges }
    }

    pub fn tsv(&self) -> String {
        self.edges
            .iter()
            .map(|&(h, t)| {
                format!(
                    "{}\trel{}\t{}\t{}\t{}\n",
                    self.names[h],
                    (h + t) % 3,
                    self.names[t],
                    self.types[h],
                    self.types[t]
                )
            })
            .collect()
    }

    /// The graph as the library sees it, plus the library id of every node
    /// that appears in at least one edge.
    pub fn build(&self) -> (KnowledgeGraph, Vec<Option<kgdx_core::graph::NodeId>>) {
        let g = graph_from_str(&self.tsv(), "").expect("generated graph parses");
        let ids = (0..self.names.len())
            .map(|i| g.lookup(&self.names[i], self.types[i]))
            .collect();
        (g, ids)
    }

    fn neighbours(&self, u: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == u {
                    Some(b)
                } else if b == u {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Shortest hop count from `src` to every node, by enumerating every
    /// simple path of at most `max_hops` edges.
    pub fn path_distances(&self, src: usize, max_hops: usize) -> Vec<Option<usize>> {
        let adj: Vec<Vec<usize>> = (0..self.names.len()).map(|u| self.neighbours(u)).collect();
        let mut best = vec![None; self.names.len()];
        let mut path = vec![src];
        fn walk(adj: &[Vec<usize>], path: &mut Vec<usize>, best: &mut [Option<usize>], max_hops: usize) {
            let u = *path.last().unwrap();
            let len = path.len() - 1;
            if best[u].map_or(true, |b| len < b) {
                best[u] = Some(len);
            }
            if len == max_hops {
                return;
            }
            for &v in &adj[u] {
                if !path.contains(&v) {
                    path.push(v);
                    walk(adj, path, best, max_hops);
                    path.pop();
                }
            }
        }
        walk(&adj, &mut path, &mut best, max_hops);
        best
    }
}

pub fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().expect("representable")
}

/// Exact association indicators and scores for one disease.
#[derive(Clone, Debug)]
pub struct OracleScore {
    pub gamma: Vec<u8>,
    pub v: BigRational,
    pub c: BigRational,
    pub s: BigRational,
}

/// `hops[i]` is the distance of evidence item `i` to the disease (None when
/// unreachable within the bound or not in the graph).
pub fn oracle_score(
    weights: &[f64],
    hops: &[Option<usize>],
    max_hops: usize,
    epsilon: f64,
    alpha_v: f64,
    alpha_c: f64,
) -> Option<OracleScore> {
    let w: Vec<BigRational> = weights.iter().map(|&x| exact(x)).collect();
    let total: BigRational = w.iter().cloned().sum();
    if total.is_zero() {
        return None;
    }
    let gamma: Vec<u8> = hops.iter().map(|h| matches!(h, Some(d) if *d <= max_hops) as u8).collect();
    let mut v_num = BigRational::zero();
    let mut v_den = BigRational::zero();
    let mut covered = BigRational::zero();
    for i in 0..w.len() {
        if gamma[i] == 1 {
            covered += w[i].clone();
            let d = hops[i].unwrap();
            if d >= 1 {
                let dist = BigRational::from_integer(BigInt::from(d)) + exact(epsilon);
                v_num += w[i].clone() / dist;
                v_den += w[i].clone();
            }
        }
    }
    let v = if v_den.is_zero() { BigRational::zero() } else { v_num / v_den };
    let c = covered / total;
    let s = exact(alpha_v) * v.clone() + exact(alpha_c) * c.clone();
    Some(OracleScore { gamma, v, c, s })
}
