//! Entity linking: maps utterance words to knowledge-graph concepts.
//!
//! The default linker is a [`Gazetteer`] doing greedy leftmost-longest
//! matching over the token sequence. A [`RemoteAnnotator`] speaks a small
//! line-oriented protocol for recorded or external linkers: the utterance
//! text is POSTed as the request body and the response carries one
//! `start<TAB>end<TAB>iri` record per line (character offsets, end-exclusive).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Duration;

use log::warn;

use crate::corpus::{tokenize, tokenize_with_spans, Dialogue, Mention};
use crate::error::{Error, Result};

/// Anything that can produce mentions for one utterance text.
pub trait Annotator {
    fn mentions(&self, text: &str) -> Result<Vec<Mention>>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    entries: HashMap<String, String>,
    max_surface_tokens: usize,
}

impl Gazetteer {
    /// Builds from `(surface, entity)` pairs. Surfaces are normalized with the
    /// corpus tokenizer; the first occurrence of a surface wins.
    pub fn from_pairs<S, E>(pairs: impl IntoIterator<Item = (S, E)>) -> Self
    where
        S: AsRef<str>,
        E: Into<String>,
    {
        let mut g = Gazetteer::default();
        for (surface, entity) in pairs {
            g.insert(surface.as_ref(), entity.into());
        }
        g
    }

    /// Returns false when the surface is empty after normalization or already present.
    fn insert(&mut self, surface: &str, entity: String) -> bool {
        let tokens = tokenize(surface);
        if tokens.is_empty() {
            return false;
        }
        let key = tokens.join(" ");
        if self.entries.contains_key(&key) {
            return false;
        }
        self.max_surface_tokens = self.max_surface_tokens.max(tokens.len());
        self.entries.insert(key, entity);
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_surface_tokens(&self) -> usize {
        self.max_surface_tokens
    }

    /// Case-insensitive lookup of a surface string.
    pub fn get(&self, surface: &str) -> Option<&str> {
        self.entries
            .get(&tokenize(surface).join(" "))
            .map(String::as_str)
    }

    pub fn contains_key(&self, normalized: &str) -> bool {
        self.entries.contains_key(normalized)
    }
}

impl Annotator for Gazetteer {
    fn mentions(&self, text: &str) -> Result<Vec<Mention>> {
        let tokens = tokenize_with_spans(text);
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = self.max_surface_tokens.min(tokens.len() - i);
            let mut matched = 0;
            for len in (1..=longest).rev() {
                let key = tokens[i..i + len]
                    .iter()
                    .map(|t| t.text.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                if let Some(entity) = self.entries.get(&key) {
                    out.push(Mention {
                        start: tokens[i].start,
                        end: tokens[i + len - 1].end,
                        surface: key,
                        entity: entity.clone(),
                    });
                    matched = len;
                    break;
                }
            }
            i += matched.max(1);
        }
        Ok(out)
    }
}

/// Reads a `surface<TAB>entity_iri` file. Rows with an empty surface are skipped.
pub fn build_gazetteer(path: &Path) -> Result<Gazetteer> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut g = Gazetteer::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let Some((surface, entity)) = line.split_once('\t') else {
            return Err(Error::parse(
                format!("{}:{}", path.display(), i + 1),
                "expected `surface<TAB>entity_iri`",
            ));
        };
        let entity = entity.trim();
        if entity.is_empty() || entity.contains('\t') {
            return Err(Error::parse(
                format!("{}:{}", path.display(), i + 1),
                "expected exactly one non-empty entity column",
            ));
        }
        if tokenize(surface).is_empty() {
            warn!("{}:{}: empty surface, row skipped", path.display(), i + 1);
            continue;
        }
        g.insert(surface, entity.to_owned());
    }
    Ok(g)
}

/// Re-tokenizes every utterance and replaces its mentions with the annotator's output.
pub fn annotate_with(dialogue: &Dialogue, annotator: &dyn Annotator) -> Result<Dialogue> {
    let mut d = dialogue.clone();
    for u in &mut d.utterances {
        u.tokens = tokenize(&u.text);
        u.mentions = annotator.mentions(&u.text)?;
    }
    d.annotated = true;
    d.rebuild_sequences();
    Ok(d)
}

pub fn annotate(dialogue: &Dialogue, gazetteer: &Gazetteer) -> Dialogue {
    annotate_with(dialogue, gazetteer).expect("gazetteer annotation is infallible")
}

/// Client for an external linker exposing the line protocol described above.
pub struct RemoteAnnotator {
    url: String,
    agent: ureq::Agent,
}

impl RemoteAnnotator {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        RemoteAnnotator {
            url: url.into(),
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

impl Annotator for RemoteAnnotator {
    fn mentions(&self, text: &str) -> Result<Vec<Mention>> {
        let mut response = self
            .agent
            .post(&self.url)
            .header("Content-Type", "text/plain; charset=utf-8")
            .send(text)
            .map_err(|e| Error::Remote(format!("{}: {e}", self.url)))?;
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Remote(format!("{}: {e}", self.url)))?;
        parse_remote_mentions(text, &body)
    }
}

/// Parses `start<TAB>end<TAB>iri` records into sorted, non-overlapping mentions.
///
/// Overlaps are resolved leftmost-longest, matching the gazetteer.
pub fn parse_remote_mentions(text: &str, body: &str) -> Result<Vec<Mention>> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    for (i, line) in body.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |msg: &str| Error::parse(format!("remote response line {}", i + 1), msg);
        if fields.len() != 3 {
            return Err(bad("expected `start<TAB>end<TAB>iri`"));
        }
        let start: usize = fields[0].trim().parse().map_err(|_| bad("bad start offset"))?;
        let end: usize = fields[1].trim().parse().map_err(|_| bad("bad end offset"))?;
        if start >= end || end > chars.len() {
            return Err(bad("span outside the utterance text"));
        }
        spans.push((start, end, fields[2].trim().to_owned()));
    }
    spans.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let mut out: Vec<Mention> = Vec::new();
    let mut last_end = 0;
    for (start, end, entity) in spans {
        if start < last_end {
            continue;
        }
        let covered: String = chars[start..end].iter().collect();
        let surface = tokenize(&covered).join(" ");
        if surface.is_empty() {
            continue;
        }
        last_end = end;
        out.push(Mention {
            start,
            end,
            surface,
            entity,
        });
    }
    Ok(out)
}
