//! In-memory directed labeled multigraph over IRIs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Orientation of a traversed edge relative to the stored triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeDirection {
    /// Subject to object.
    Forward,
    /// Object to subject.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
    Both,
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "out" => Ok(Direction::Out),
            "in" => Ok(Direction::In),
            "both" => Ok(Direction::Both),
            other => Err(Error::Parameter(format!("unknown direction `{other}`"))),
        }
    }
}

/// One incident edge seen from a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Neighbor {
    pub node: NodeId,
    pub relation: RelationId,
    pub direction: EdgeDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleFormat {
    NTriples,
    Tsv,
}

impl FromStr for TripleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nt" | "ntriples" | "n-triples" => Ok(TripleFormat::NTriples),
            "tsv" => Ok(TripleFormat::Tsv),
            other => Err(Error::Parameter(format!("unknown triple format `{other}`"))),
        }
    }
}

impl TripleFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => TripleFormat::Tsv,
            _ => TripleFormat::NTriples,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Interner {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    triples: Vec<(NodeId, RelationId, NodeId)>,
    /// Sorted by (node, relation).
    out_adj: Vec<Vec<Neighbor>>,
    in_adj: Vec<Vec<Neighbor>>,
    /// Both orientations merged, sorted by (node, relation, direction).
    undirected: Vec<Vec<Neighbor>>,
}

impl KnowledgeGraph {
    /// Builds a graph from `(subject, predicate, object)` names. Node ids follow
    /// first appearance; duplicate triples are dropped.
    pub fn from_triples<S: AsRef<str>>(triples: impl IntoIterator<Item = (S, S, S)>) -> Self {
        let mut g = KnowledgeGraph::default();
        let mut seen = HashSet::new();
        for (s, p, o) in triples {
            let s = NodeId(g.entities.intern(s.as_ref()));
            let p = RelationId(g.relations.intern(p.as_ref()));
            let o = NodeId(g.entities.intern(o.as_ref()));
            if seen.insert((s, p, o)) {
                g.triples.push((s, p, o));
            }
        }
        g.index();
        g
    }

    /// Adds isolated entities (useful for query endpoints absent from any triple).
    pub fn with_entities<S: AsRef<str>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        for n in names {
            self.entities.intern(n.as_ref());
        }
        self.index();
        self
    }

    fn index(&mut self) {
        let n = self.entities.names.len();
        self.out_adj = vec![Vec::new(); n];
        self.in_adj = vec![Vec::new(); n];
        for &(s, p, o) in &self.triples {
            self.out_adj[s.0 as usize].push(Neighbor {
                node: o,
                relation: p,
                direction: EdgeDirection::Forward,
            });
            self.in_adj[o.0 as usize].push(Neighbor {
                node: s,
                relation: p,
                direction: EdgeDirection::Backward,
            });
        }
        for list in self.out_adj.iter_mut().chain(self.in_adj.iter_mut()) {
            list.sort();
        }
        self.undirected = (0..n)
            .map(|v| {
                let mut all: Vec<Neighbor> = self.out_adj[v]
                    .iter()
                    .chain(self.in_adj[v].iter())
                    .copied()
                    .collect();
                all.sort();
                all
            })
            .collect();
    }

    pub fn node_count(&self) -> usize {
        self.entities.names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.names.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[(NodeId, RelationId, NodeId)] {
        &self.triples
    }

    pub fn node(&self, iri: &str) -> Option<NodeId> {
        self.entities.ids.get(iri).copied().map(NodeId)
    }

    pub fn relation(&self, iri: &str) -> Option<RelationId> {
        self.relations.ids.get(iri).copied().map(RelationId)
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        &self.entities.names[id.0 as usize]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations.names[id.0 as usize]
    }

    pub fn contains(&self, id: NodeId) -> bool {
        (id.0 as usize) < self.node_count()
    }

    pub fn degree(&self, id: NodeId) -> usize {
        self.out_adj[id.0 as usize].len() + self.in_adj[id.0 as usize].len()
    }

    /// Outgoing edges sorted by (node, relation).
    pub fn out_edges(&self, id: NodeId) -> &[Neighbor] {
        &self.out_adj[id.0 as usize]
    }

    /// Incoming edges sorted by (node, relation); `node` is the subject.
    pub fn in_edges(&self, id: NodeId) -> &[Neighbor] {
        &self.in_adj[id.0 as usize]
    }

    /// Incident edges in both orientations, sorted by (node, relation, direction).
    pub fn undirected_edges(&self, id: NodeId) -> &[Neighbor] {
        &self.undirected[id.0 as usize]
    }

    /// Neighbors in ascending (node, relation) order; `Both` lists outgoing then incoming.
    pub fn neighbors(&self, id: NodeId, direction: Direction) -> Result<Vec<Neighbor>> {
        if !self.contains(id) {
            return Err(Error::UnknownNode(id.to_string()));
        }
        let (out, inc) = (self.out_edges(id), self.in_edges(id));
        Ok(match direction {
            Direction::Out => out.to_vec(),
            Direction::In => inc.to_vec(),
            Direction::Both => out.iter().chain(inc).copied().collect(),
        })
    }

    /// Histogram `degree -> number of nodes`, counting incident edges in both directions.
    pub fn degree_stats(&self) -> BTreeMap<usize, usize> {
        let mut h = BTreeMap::new();
        for v in 0..self.node_count() {
            *h.entry(self.degree(NodeId(v as u32))).or_default() += 1;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Term<'a> {
    Iri(&'a str),
    Other,
}

/// Parses one N-Triples line. Returns `None` for blank lines and comments.
fn parse_ntriple(line: &str) -> std::result::Result<Option<[Term<'_>; 3]>, String> {
    let mut rest = line.trim();
    if rest.is_empty() || rest.starts_with('#') {
        return Ok(None);
    }
    let mut terms = Vec::with_capacity(3);
    for _ in 0..3 {
        rest = rest.trim_start();
        let (term, tail) = parse_term(rest)?;
        terms.push(term);
        rest = tail;
    }
    if rest.trim() != "." {
        return Err("expected `.` after object".into());
    }
    let [s, p, o]: [Term; 3] = terms.try_into().expect("three terms");
    if !matches!(p, Term::Iri(_)) {
        return Err("predicate must be an IRI".into());
    }
    Ok(Some([s, p, o]))
}

fn parse_term(s: &str) -> std::result::Result<(Term<'_>, &str), String> {
    if let Some(body) = s.strip_prefix('<') {
        let end = body.find('>').ok_or("unterminated IRI")?;
        return Ok((Term::Iri(&body[..end]), &body[end + 1..]));
    }
    if s.starts_with("_:") {
        let end = s.find(char::is_whitespace).unwrap_or(s.len());
        return Ok((Term::Other, &s[end..]));
    }
    if let Some(body) = s.strip_prefix('"') {
        let mut escaped = false;
        let mut close = None;
        for (i, c) in body.char_indices() {
            match c {
                '\\' if !escaped => escaped = true,
                '"' if !escaped => {
                    close = Some(i);
                    break;
                }
                _ => escaped = false,
            }
        }
        let close = close.ok_or("unterminated literal")?;
        let mut tail = &body[close + 1..];
        if let Some(t) = tail.strip_prefix("^^") {
            let (_, t) = parse_term(t)?;
            tail = t;
        } else if let Some(t) = tail.strip_prefix('@') {
            let end = t.find(char::is_whitespace).unwrap_or(t.len());
            tail = &t[end..];
        }
        return Ok((Term::Other, tail));
    }
    Err(format!(
        "unexpected term starting with `{}`",
        s.chars().next().unwrap_or(' ')
    ))
}

/// Loads IRI-to-IRI triples; literal and blank-node triples are dropped.
///
/// N-Triples IRIs are stored without angle brackets. TSV rows are
/// `subject<TAB>predicate<TAB>object`; objects starting with `"` count as literals.
pub fn load_triples(path: &Path, format: TripleFormat) -> Result<KnowledgeGraph> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<(String, String, String)> = Vec::new();
    let mut dropped = 0usize;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let loc = || format!("{}:{}", path.display(), i + 1);
        match format {
            TripleFormat::NTriples => match parse_ntriple(&line).map_err(|m| Error::parse(loc(), m))? {
                None => {}
                Some([Term::Iri(s), Term::Iri(p), Term::Iri(o)]) => {
                    rows.push((s.to_owned(), p.to_owned(), o.to_owned()))
                }
                Some(_) => dropped += 1,
            },
            TripleFormat::Tsv => {
                let line = line.trim_end_matches('\r');
                if line.trim().is_empty() || line.starts_with('#') {
                    continue;
                }
                let f: Vec<&str> = line.split('\t').collect();
                if f.len() != 3 || f.iter().any(|x| x.trim().is_empty()) {
                    return Err(Error::parse(loc(), "expected 3 non-empty tab-separated fields"));
                }
                if f[0].starts_with('"') || f[2].starts_with('"') || f[0].starts_with("_:") || f[2].starts_with("_:") {
                    dropped += 1;
                    continue;
                }
                rows.push((f[0].trim().to_owned(), f[1].trim().to_owned(), f[2].trim().to_owned()));
            }
        }
    }
    if dropped > 0 {
        log::info!("{}: dropped {dropped} literal or blank-node triples", path.display());
    }
    let g = KnowledgeGraph::from_triples(rows.iter().map(|(s, p, o)| (s.as_str(), p.as_str(), o.as_str())));
    if g.triple_count() == 0 {
        warn!("{}: no IRI triples loaded", path.display());
    } else {
        log::info!("{}: {} triples, {} entities", path.display(), g.triple_count(), g.node_count());
    }
    Ok(g)
}
