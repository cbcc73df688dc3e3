//! Exhaustive loop-free path enumeration used as a reference for `topk_paths`.

use coherence_core::kg::{EdgeDirection, KnowledgeGraph, NodeId};
use coherence_core::paths::{Path, PathEdge};
use rand::Rng;

pub struct Query<'a> {
    pub sources: &'a [NodeId],
    pub target: NodeId,
    pub k: usize,
    pub max_length: usize,
    pub directed: bool,
    pub max_degree: Option<usize>,
}

/// Adjacency rebuilt from the raw triples, independent of the graph's own index.
fn adjacency(g: &KnowledgeGraph, directed: bool) -> Vec<Vec<(NodeId, PathEdge)>> {
    let mut adj = vec![Vec::new(); g.node_count()];
    for &(s, p, o) in g.triples() {
        adj[s.0 as usize].push((o, PathEdge { relation: p, direction: EdgeDirection::Forward }));
        if !directed {
            adj[o.0 as usize].push((s, PathEdge { relation: p, direction: EdgeDirection::Backward }));
        }
    }
    adj
}

fn degrees(g: &KnowledgeGraph) -> Vec<usize> {
    let mut d = vec![0; g.node_count()];
    for &(s, _, o) in g.triples() {
        d[s.0 as usize] += 1;
        d[o.0 as usize] += 1;
    }
    d
}

/// All-pairs hop distances (Floyd-Warshall), ignoring the degree cap.
fn floyd_warshall(adj: &[Vec<(NodeId, PathEdge)>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for (i, row) in adj.iter().enumerate() {
        d[i][i] = 0;
        for (j, _) in row {
            d[i][j.0 as usize] = d[i][j.0 as usize].min(1);
        }
    }
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][m] + d[m][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// Every simple path with exactly `length` edges, collected level by level
/// until at least `k` are known, then sorted canonically and truncated.
pub fn topk(g: &KnowledgeGraph, q: &Query<'_>) -> Vec<Path> {
    let adj = adjacency(g, q.directed);
    let dist = floyd_warshall(&adj);
    let deg = degrees(g);
    let t = q.target.0 as usize;
    let mut sources: Vec<NodeId> = q.sources.to_vec();
    sources.sort();
    sources.dedup();
    let mut found: Vec<Path> = Vec::new();
    for length in 0..=q.max_length {
        for &s in &sources {
            let mut nodes = vec![s];
            let mut edges = Vec::new();
            walk(&adj, &dist, &deg, q, t, length, &mut nodes, &mut edges, &mut found);
        }
        if found.len() >= q.k {
            break;
        }
    }
    found.sort();
    found.truncate(q.k);
    found
}

#[allow(clippy::too_many_arguments)]
fn walk(
    adj: &[Vec<(NodeId, PathEdge)>],
    dist: &[Vec<usize>],
    deg: &[usize],
    q: &Query<'_>,
    t: usize,
    remaining: usize,
    nodes: &mut Vec<NodeId>,
    edges: &mut Vec<PathEdge>,
    found: &mut Vec<Path>,
) {
    let v = nodes.last().unwrap().0 as usize;
    if remaining == 0 {
        if v == t {
            found.push(Path { nodes: nodes.clone(), edges: edges.clone() });
        }
        return;
    }
    if v == t || dist[v][t] > remaining {
        return;
    }
    for &(u, e) in &adj[v] {
        if nodes.contains(&u) {
            continue;
        }
        let interior = u.0 as usize != t;
        if interior && q.max_degree.is_some_and(|cap| deg[u.0 as usize] > cap) {
            continue;
        }
        nodes.push(u);
        edges.push(e);
        walk(adj, dist, deg, q, t, remaining - 1, nodes, edges, found);
        nodes.pop();
        edges.pop();
    }
}

/// A random multigraph with `nodes` nodes, up to `edges` triples and three relations.
pub fn random_graph<R: Rng>(rng: &mut R, nodes: usize, edges: usize) -> KnowledgeGraph {
    let names: Vec<String> = (0..nodes).map(|i| format!("n{i}")).collect();
    let rels = ["p", "q", "r"];
    let triples: Vec<(String, String, String)> = (0..edges)
        .map(|_| {
            let s = rng.random_range(0..nodes);
            let o = rng.random_range(0..nodes);
            (names[s].clone(), rels[rng.random_range(0..3)].to_string(), names[o].clone())
        })
        .collect();
    KnowledgeGraph::from_triples(triples.iter().map(|(s, p, o)| (s.as_str(), p.as_str(), o.as_str())))
        .with_entities(&names)
}
