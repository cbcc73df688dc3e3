//! Top-k shortest loop-free paths and dialogue subgraph induction.
//!
//! A query connects a set of source entities to one target. Results are
//! ordered canonically by (length, node-id sequence, edge sequence) and the
//! first `k` are returned. The search runs in three phases:
//!
//! 1. bidirectional BFS from the source set and the target to find the
//!    shortest distance, failing fast when nothing lies within `max_length`;
//! 2. a bounded BFS from the target giving a lower bound on the remaining
//!    distance of every node, used to prune the enumeration;
//! 3. depth-first enumeration of node sequences, one length at a time, in
//!    ascending node-id order, expanding parallel edges per hop in
//!    (relation, direction) order.
//!
//! Each phase checks the per-query deadline and returns the paths found so
//! far when it expires.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path as FsPath;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EdgeDirection, KnowledgeGraph, Neighbor, NodeId, RelationId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathEdge {
    pub relation: RelationId,
    pub direction: EdgeDirection,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Path {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<PathEdge>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn target(&self) -> NodeId {
        *self.nodes.last().expect("paths have at least one node")
    }

    /// Interior nodes, excluding both endpoints.
    pub fn interior(&self) -> &[NodeId] {
        if self.nodes.len() <= 2 {
            &[]
        } else {
            &self.nodes[1..self.nodes.len() - 1]
        }
    }

    /// Checks every hop against the graph and that no node repeats.
    pub fn is_valid_in(&self, g: &KnowledgeGraph) -> bool {
        if self.nodes.len() != self.edges.len() + 1 {
            return false;
        }
        let mut seen = std::collections::HashSet::new();
        if !self.nodes.iter().all(|n| g.contains(*n) && seen.insert(*n)) {
            return false;
        }
        self.edges.iter().enumerate().all(|(i, e)| {
            let (a, b) = (self.nodes[i], self.nodes[i + 1]);
            let (s, o) = match e.direction {
                EdgeDirection::Forward => (a, b),
                EdgeDirection::Backward => (b, a),
            };
            g.out_edges(s)
                .iter()
                .any(|n| n.node == o && n.relation == e.relation)
        })
    }
}

impl Ord for Path {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.nodes.cmp(&other.nodes))
            .then_with(|| self.edges.cmp(&other.edges))
    }
}

impl PartialOrd for Path {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathQueryParams {
    pub k: usize,
    pub max_length: usize,
    /// `None` disables the deadline.
    #[serde(with = "timeout_ms")]
    pub timeout: Option<Duration>,
    /// Follow edges subject-to-object only.
    pub directed: bool,
    /// Nodes with a higher degree are never expanded as path interiors.
    pub max_degree: Option<usize>,
}

impl Default for PathQueryParams {
    fn default() -> Self {
        PathQueryParams {
            k: 5,
            max_length: 9,
            timeout: Some(Duration::from_millis(2000)),
            directed: false,
            max_degree: None,
        }
    }
}

mod timeout_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<Duration>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(d) => s.serialize_some(&(d.as_millis() as u64)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Duration>, D::Error> {
        Ok(Option::<u64>::deserialize(d)?.map(Duration::from_millis))
    }
}

impl PathQueryParams {
    pub fn unbounded(k: usize, max_length: usize) -> Self {
        PathQueryParams {
            k,
            max_length,
            timeout: None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        if self.max_length == 0 {
            return Err(Error::Parameter("max_length must be at least 1".into()));
        }
        if self.timeout == Some(Duration::ZERO) {
            return Err(Error::Parameter("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopK {
    pub paths: Vec<Path>,
    pub timed_out: bool,
}

struct Search<'g> {
    g: &'g KnowledgeGraph,
    params: &'g PathQueryParams,
    target: NodeId,
    deadline: Option<Instant>,
    ticks: u64,
    timed_out: bool,
    dist_to_target: HashMap<NodeId, usize>,
    out: Vec<Path>,
}

impl<'g> Search<'g> {
    fn forward(&self, v: NodeId) -> &'g [Neighbor] {
        if self.params.directed {
            self.g.out_edges(v)
        } else {
            self.g.undirected_edges(v)
        }
    }

    fn backward(&self, v: NodeId) -> &'g [Neighbor] {
        if self.params.directed {
            self.g.in_edges(v)
        } else {
            self.g.undirected_edges(v)
        }
    }

    fn interior_ok(&self, v: NodeId) -> bool {
        self.params
            .max_degree
            .is_none_or(|cap| self.g.degree(v) <= cap)
    }

    fn expired(&mut self) -> bool {
        if self.timed_out {
            return true;
        }
        self.ticks += 1;
        if self.ticks.is_multiple_of(256) {
            if let Some(deadline) = self.deadline {
                if Instant::now() >= deadline {
                    self.timed_out = true;
                }
            }
        }
        self.timed_out
    }

    /// Length of the shortest path from any source, or `None` if beyond `max_length`.
    fn shortest_distance(&mut self, sources: &[NodeId]) -> Option<usize> {
        if sources.contains(&self.target) {
            return Some(0);
        }
        let mut fwd: HashMap<NodeId, usize> = sources.iter().map(|&s| (s, 0)).collect();
        let mut bwd: HashMap<NodeId, usize> = HashMap::from([(self.target, 0)]);
        let mut f_frontier: Vec<NodeId> = sources.to_vec();
        let mut b_frontier: Vec<NodeId> = vec![self.target];
        let (mut f_depth, mut b_depth) = (0, 0);
        while !f_frontier.is_empty() && !b_frontier.is_empty() && f_depth + b_depth < self.params.max_length {
            let grow_forward = f_frontier.len() <= b_frontier.len();
            let mut best: Option<usize> = None;
            let mut next = Vec::new();
            let (frontier, depth) = if grow_forward {
                (&f_frontier, f_depth)
            } else {
                (&b_frontier, b_depth)
            };
            for &u in frontier {
                if self.expired() {
                    return None;
                }
                let is_endpoint = if grow_forward {
                    depth == 0
                } else {
                    u == self.target
                };
                if !is_endpoint && !self.interior_ok(u) {
                    continue;
                }
                let adj = if grow_forward { self.forward(u) } else { self.backward(u) };
                for n in adj {
                    let v = n.node;
                    let (own, other) = if grow_forward { (&mut fwd, &bwd) } else { (&mut bwd, &fwd) };
                    if own.contains_key(&v) {
                        continue;
                    }
                    own.insert(v, depth + 1);
                    if let Some(&d) = other.get(&v) {
                        let endpoint = if grow_forward { v == self.target } else { sources.contains(&v) };
                        if endpoint || self.interior_ok(v) {
                            let total = depth + 1 + d;
                            best = Some(best.map_or(total, |b: usize| b.min(total)));
                        }
                    }
                    next.push(v);
                }
            }
            if grow_forward {
                f_frontier = next;
                f_depth += 1;
            } else {
                b_frontier = next;
                b_depth += 1;
            }
            if let Some(b) = best {
                return (b <= self.params.max_length).then_some(b);
            }
        }
        None
    }

    fn bound_distances(&mut self) {
        let mut dist = HashMap::from([(self.target, 0usize)]);
        let mut frontier = vec![self.target];
        for depth in 0..self.params.max_length {
            let mut next = Vec::new();
            for &u in &frontier {
                if self.expired() {
                    return;
                }
                if u != self.target && !self.interior_ok(u) {
                    continue;
                }
                for n in self.backward(u) {
                    if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(n.node) {
                        e.insert(depth + 1);
                        next.push(n.node);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            frontier = next;
        }
        self.dist_to_target = dist;
    }

    fn within(&self, v: NodeId, remaining: usize) -> bool {
        self.dist_to_target.get(&v).is_some_and(|&d| d <= remaining)
    }

    /// Returns true once `k` paths are collected or the deadline has passed.
    fn dfs(&mut self, v: NodeId, remaining: usize, nodes: &mut Vec<NodeId>, hops: &mut Vec<&'g [Neighbor]>) -> bool {
        if self.expired() {
            return true;
        }
        if remaining == 0 {
            if v == self.target {
                self.emit(nodes, hops);
            }
            return self.out.len() >= self.params.k;
        }
        if v == self.target {
            return false;
        }
        let adj = self.forward(v);
        let mut i = 0;
        while i < adj.len() {
            let n = adj[i].node;
            let mut j = i + 1;
            while j < adj.len() && adj[j].node == n {
                j += 1;
            }
            let group = &adj[i..j];
            i = j;
            if nodes.contains(&n) || !self.within(n, remaining - 1) {
                continue;
            }
            if n != self.target && !self.interior_ok(n) {
                continue;
            }
            nodes.push(n);
            hops.push(group);
            let stop = self.dfs(n, remaining - 1, nodes, hops);
            nodes.pop();
            hops.pop();
            if stop {
                return true;
            }
        }
        false
    }

    /// Expands the parallel-edge alternatives of one node sequence in lexicographic order.
    fn emit(&mut self, nodes: &[NodeId], hops: &[&[Neighbor]]) {
        let mut choice = vec![0usize; hops.len()];
        loop {
            if self.out.len() >= self.params.k {
                return;
            }
            let edges = hops
                .iter()
                .zip(&choice)
                .map(|(h, &c)| PathEdge {
                    relation: h[c].relation,
                    direction: h[c].direction,
                })
                .collect();
            self.out.push(Path {
                nodes: nodes.to_vec(),
                edges,
            });
            // odometer increment, last hop fastest
            let mut pos = hops.len();
            loop {
                if pos == 0 {
                    return;
                }
                pos -= 1;
                choice[pos] += 1;
                if choice[pos] < hops[pos].len() {
                    break;
                }
                choice[pos] = 0;
            }
        }
    }
}

/// Up to `k` loop-free paths from any of `sources` to `target`, in canonical order.
pub fn topk_paths(
    g: &KnowledgeGraph,
    sources: &[NodeId],
    target: NodeId,
    params: &PathQueryParams,
) -> Result<TopK> {
    params.validate()?;
    if sources.is_empty() {
        return Err(Error::Parameter("at least one source is required".into()));
    }
    for &n in sources.iter().chain(std::iter::once(&target)) {
        if !g.contains(n) {
            return Err(Error::UnknownNode(n.to_string()));
        }
    }
    let mut sources = sources.to_vec();
    sources.sort();
    sources.dedup();

    let mut search = Search {
        g,
        params,
        target,
        deadline: params.timeout.map(|t| Instant::now() + t),
        ticks: 0,
        timed_out: false,
        dist_to_target: HashMap::new(),
        out: Vec::new(),
    };
    let Some(shortest) = search.shortest_distance(&sources) else {
        return Ok(TopK {
            paths: Vec::new(),
            timed_out: search.timed_out,
        });
    };
    search.bound_distances();
    let mut nodes = Vec::with_capacity(params.max_length + 1);
    let mut hops = Vec::with_capacity(params.max_length);
    'lengths: for length in shortest..=params.max_length {
        for &s in &sources {
            if !search.within(s, length) {
                continue;
            }
            nodes.clear();
            hops.clear();
            nodes.push(s);
            if search.dfs(s, length, &mut nodes, &mut hops) {
                break 'lengths;
            }
        }
    }
    Ok(TopK {
        paths: search.out,
        timed_out: search.timed_out,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedEdge {
    pub relation: String,
    pub direction: EdgeDirection,
}

/// A path with IRIs in place of interned ids, as written to `paths.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedPath {
    pub nodes: Vec<String>,
    pub edges: Vec<NamedEdge>,
}

impl NamedPath {
    pub fn from_path(g: &KnowledgeGraph, p: &Path) -> Self {
        NamedPath {
            nodes: p.nodes.iter().map(|&n| g.node_name(n).to_owned()).collect(),
            edges: p
                .edges
                .iter()
                .map(|e| NamedEdge {
                    relation: g.relation_name(e.relation).to_owned(),
                    direction: e.direction,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn interior(&self) -> &[String] {
        if self.nodes.len() <= 2 {
            &[]
        } else {
            &self.nodes[1..self.nodes.len() - 1]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPaths {
    pub source: String,
    pub target: String,
    pub timed_out: bool,
    pub paths: Vec<NamedPath>,
}

/// Paths between every mentioned entity and the entities mentioned before it.
///
/// jsonl schema (one object per line, fields in this order):
/// `{"dialogue_id", "entities", "skipped", "mentioned", "context", "pairs": [{"source", "target", "timed_out", "paths": [{"nodes", "edges": [{"relation", "direction"}]}]}]}`
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSubgraph {
    pub dialogue_id: String,
    /// Resolved entity sequence, in mention order.
    pub entities: Vec<String>,
    /// Mentions with no node in the graph.
    pub skipped: Vec<String>,
    pub mentioned: BTreeSet<String>,
    /// Interior path nodes that are never mentioned.
    pub context: BTreeSet<String>,
    /// One record per distinct (earlier entity, later entity) pair, in discovery order.
    pub pairs: Vec<PairPaths>,
}

impl DialogueSubgraph {
    pub fn pair(&self, source: &str, target: &str) -> Option<&PairPaths> {
        self.pairs
            .iter()
            .find(|p| p.source == source && p.target == target)
    }
}

/// For each entity `c_i`, queries paths from `{c_1 .. c_(i-1)}` to `c_i` and
/// files the results under each `(c_j, c_i)` pair. A pair keeps the result of
/// the first query in which it occurs.
pub fn induce_dialogue_subgraph(
    g: &KnowledgeGraph,
    entity_sequence: &[String],
    params: &PathQueryParams,
) -> Result<DialogueSubgraph> {
    params.validate()?;
    if entity_sequence.is_empty() {
        return Err(Error::Validation("entity sequence is empty".into()));
    }
    let mut sub = DialogueSubgraph::default();
    let mut resolved: Vec<NodeId> = Vec::new();
    for e in entity_sequence {
        match g.node(e) {
            Some(n) => {
                resolved.push(n);
                sub.entities.push(e.clone());
            }
            None => {
                warn!("entity `{e}` is not in the knowledge graph, skipped");
                sub.skipped.push(e.clone());
            }
        }
    }
    if resolved.is_empty() {
        return Err(Error::Validation(
            "no entity of the sequence resolves to a graph node".into(),
        ));
    }
    sub.mentioned = sub.entities.iter().cloned().collect();

    let mut index: BTreeMap<(NodeId, NodeId), usize> = BTreeMap::new();
    for i in 1..resolved.len() {
        let target = resolved[i];
        let mut sources: Vec<NodeId> = Vec::new();
        for &s in &resolved[..i] {
            if !sources.contains(&s) {
                sources.push(s);
            }
        }
        let fresh: Vec<NodeId> = sources
            .iter()
            .copied()
            .filter(|&s| !index.contains_key(&(s, target)))
            .collect();
        if fresh.is_empty() {
            continue;
        }
        let result = topk_paths(g, &sources, target, params)?;
        for s in fresh {
            let paths: Vec<NamedPath> = result
                .paths
                .iter()
                .filter(|p| p.source() == s)
                .map(|p| NamedPath::from_path(g, p))
                .collect();
            for p in &paths {
                for n in p.interior() {
                    if !sub.mentioned.contains(n) {
                        sub.context.insert(n.clone());
                    }
                }
            }
            index.insert((s, target), sub.pairs.len());
            sub.pairs.push(PairPaths {
                source: g.node_name(s).to_owned(),
                target: g.node_name(target).to_owned(),
                timed_out: result.timed_out,
                paths,
            });
        }
    }
    Ok(sub)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthHistogram {
    /// Shortest returned path length -> number of pairs.
    pub lengths: BTreeMap<usize, u64>,
    /// Pairs with no returned path.
    pub unreachable: u64,
}

impl LengthHistogram {
    pub fn total(&self) -> u64 {
        self.lengths.values().sum::<u64>() + self.unreachable
    }
}

pub fn path_length_histogram(subgraphs: &[DialogueSubgraph]) -> LengthHistogram {
    let mut h = LengthHistogram::default();
    for sub in subgraphs {
        for pair in &sub.pairs {
            match pair.paths.iter().map(NamedPath::len).min() {
                Some(len) => *h.lengths.entry(len).or_default() += 1,
                None => h.unreachable += 1,
            }
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    pub count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextReport {
    pub mentioned: Vec<LabelCount>,
    pub context: Vec<LabelCount>,
    pub relations: Vec<LabelCount>,
}

/// Most frequent mentioned entities, context entities and relations.
///
/// Mentioned entities count mention occurrences; context entities count the
/// returned paths they are interior to; relations count edge occurrences on
/// returned paths. Ties are broken by label.
pub fn context_frequency(subgraphs: &[DialogueSubgraph], top_n: usize) -> ContextReport {
    let mut mentioned: HashMap<&str, u64> = HashMap::new();
    let mut context: HashMap<&str, u64> = HashMap::new();
    let mut relations: HashMap<&str, u64> = HashMap::new();
    for sub in subgraphs {
        for e in &sub.entities {
            *mentioned.entry(e).or_default() += 1;
        }
        for pair in &sub.pairs {
            for p in &pair.paths {
                for n in p.interior() {
                    if sub.context.contains(n) {
                        *context.entry(n).or_default() += 1;
                    }
                }
                for e in &p.edges {
                    *relations.entry(&e.relation).or_default() += 1;
                }
            }
        }
    }
    ContextReport {
        mentioned: top(mentioned, top_n),
        context: top(context, top_n),
        relations: top(relations, top_n),
    }
}

fn top(counts: HashMap<&str, u64>, n: usize) -> Vec<LabelCount> {
    let mut v: Vec<(&str, u64)> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter()
        .take(n)
        .map(|(label, count)| LabelCount {
            label: label.to_owned(),
            count,
        })
        .collect()
}

pub fn write_subgraphs<W: Write>(subgraphs: &[DialogueSubgraph], mut w: W) -> std::io::Result<()> {
    for s in subgraphs {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_subgraphs(subgraphs: &[DialogueSubgraph], path: &FsPath) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_subgraphs(subgraphs, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_subgraphs(path: &FsPath) -> Result<Vec<DialogueSubgraph>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))?,
        );
    }
    Ok(out)
}
