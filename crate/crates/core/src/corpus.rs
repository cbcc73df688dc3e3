//! Dialogue data model, corpus ingestion, filtering and vocabulary building.
//!
//! A [`Dialogue`] holds its participants, utterances (with word tokens and
//! entity mentions) and two flattened views derived from the mentions: the
//! entity sequence and the sequence of words that refer to those entities.
//!
//! Canonical jsonl schema, one dialogue per line, fields in this order:
//!
//! ```text
//! {"id": str, "participants": [str], "annotated": bool,
//!  "utterances": [{"speaker": str, "text": str, "tokens": [str],
//!                  "mentions": [{"start": int, "end": int, "surface": str, "entity": str}]}],
//!  "entity_sequence": [str], "word_sequence": [str]}
//! ```
//!
//! Mention offsets are character (not byte) offsets into `text`, end-exclusive.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which flattened view of a dialogue a sequence is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Words,
    Entities,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Words => "words",
            Unit::Entities => "entities",
        })
    }
}

impl FromStr for Unit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "words" | "word" => Ok(Unit::Words),
            "entities" | "entity" => Ok(Unit::Entities),
            other => Err(Error::Parameter(format!("unknown unit `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(CorpusFormat::Tsv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::Parameter(format!("unknown corpus format `{other}`"))),
        }
    }
}

/// A token with its character span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpannedToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercase, split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_spans(text).into_iter().map(|t| t.text).collect()
}

pub fn tokenize_with_spans(text: &str) -> Vec<SpannedToken> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let mut pos = 0;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if current.is_empty() {
                start = pos;
            }
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            out.push(SpannedToken {
                text: std::mem::take(&mut current),
                start,
                end: pos,
            });
        }
        pos += 1;
    }
    if !current.is_empty() {
        out.push(SpannedToken {
            text: current,
            start,
            end: pos,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    /// Character offset of the first character.
    pub start: usize,
    /// Character offset one past the last character.
    pub end: usize,
    /// Normalized surface form: the covered tokens joined by single spaces.
    pub surface: String,
    pub entity: String,
}

impl Mention {
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.surface.split(' ').filter(|w| !w.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: String,
    pub text: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub mentions: Vec<Mention>,
}

impl Utterance {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Utterance {
            speaker: speaker.into(),
            tokens: tokenize(&text),
            text,
            mentions: Vec::new(),
        }
    }

    /// The units this utterance contributes to a flattened sequence.
    pub fn units(&self, unit: Unit) -> Vec<&str> {
        match unit {
            Unit::Entities => self.mentions.iter().map(|m| m.entity.as_str()).collect(),
            Unit::Words => self.mentions.iter().flat_map(|m| m.words()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    /// Distinct speakers in order of first appearance.
    pub participants: Vec<String>,
    /// Set once mentions have been populated by an annotator (possibly with zero matches).
    #[serde(default)]
    pub annotated: bool,
    pub utterances: Vec<Utterance>,
    #[serde(default)]
    pub entity_sequence: Vec<String>,
    #[serde(default)]
    pub word_sequence: Vec<String>,
}

impl Dialogue {
    /// Build an unannotated dialogue from `(speaker, text)` turns.
    pub fn from_turns<S, T>(id: impl Into<String>, turns: impl IntoIterator<Item = (S, T)>) -> Self
    where
        S: Into<String>,
        T: Into<String>,
    {
        let utterances: Vec<Utterance> = turns
            .into_iter()
            .map(|(s, t)| Utterance::new(s, t))
            .collect();
        let mut participants: Vec<String> = Vec::new();
        for u in &utterances {
            if !participants.contains(&u.speaker) {
                participants.push(u.speaker.clone());
            }
        }
        Dialogue {
            id: id.into(),
            participants,
            annotated: false,
            utterances,
            entity_sequence: Vec::new(),
            word_sequence: Vec::new(),
        }
    }

    /// Recompute the flattened entity and word sequences from the mentions.
    pub fn rebuild_sequences(&mut self) {
        self.entity_sequence = self.flatten(Unit::Entities);
        self.word_sequence = self.flatten(Unit::Words);
    }

    fn flatten(&self, unit: Unit) -> Vec<String> {
        self.utterances
            .iter()
            .flat_map(|u| u.units(unit))
            .map(str::to_owned)
            .collect()
    }

    pub fn sequence(&self, unit: Unit) -> &[String] {
        match unit {
            Unit::Entities => &self.entity_sequence,
            Unit::Words => &self.word_sequence,
        }
    }

    /// The two participants with the most utterances; ties go to earlier first appearance.
    pub fn most_active_pair(&self) -> Option<(&str, &str)> {
        if self.participants.len() < 2 {
            return None;
        }
        let mut counts: Vec<(usize, usize)> = self
            .participants
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let n = self.utterances.iter().filter(|u| &u.speaker == p).count();
                (i, n)
            })
            .collect();
        counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        Some((
            self.participants[counts[0].0].as_str(),
            self.participants[counts[1].0].as_str(),
        ))
    }

    /// Number of entities each participant mentions before anyone else in the dialogue did.
    pub fn new_entities_by_participant(&self) -> HashMap<&str, usize> {
        let mut seen: HashSet<&str> = HashSet::new();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for u in &self.utterances {
            for m in &u.mentions {
                if seen.insert(m.entity.as_str()) {
                    *counts.entry(u.speaker.as_str()).or_default() += 1;
                }
            }
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |msg: String| Error::Validation(format!("dialogue `{}`: {msg}", self.id));
        if self.participants.len() < 2 {
            return Err(ctx(format!(
                "needs at least 2 participants, found {}",
                self.participants.len()
            )));
        }
        let distinct: HashSet<&String> = self.participants.iter().collect();
        if distinct.len() != self.participants.len() {
            return Err(ctx("duplicate participant".into()));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if !distinct.contains(&u.speaker) {
                return Err(ctx(format!(
                    "utterance {i}: speaker `{}` is not a participant",
                    u.speaker
                )));
            }
            let len = u.text.chars().count();
            let mut prev_end = 0;
            for m in &u.mentions {
                if m.start >= m.end || m.end > len {
                    return Err(ctx(format!(
                        "utterance {i}: mention span {}..{} outside text of length {len}",
                        m.start, m.end
                    )));
                }
                if m.start < prev_end {
                    return Err(ctx(format!(
                        "utterance {i}: mention spans overlap or are unsorted at {}",
                        m.start
                    )));
                }
                prev_end = m.end;
            }
        }
        if self.entity_sequence != self.flatten(Unit::Entities)
            || self.word_sequence != self.flatten(Unit::Words)
        {
            return Err(ctx("flattened sequences disagree with mentions".into()));
        }
        Ok(())
    }
}

/// Load dialogues from a file or a directory of files.
///
/// Directories are walked recursively; files are visited in lexicographic
/// path order. TSV files hold one dialogue each, rows are
/// `timestamp<TAB>from<TAB>to<TAB>text`. Jsonl files hold one dialogue per line.
pub fn load_dialogues(path: &Path, format: CorpusFormat) -> Result<Vec<Dialogue>> {
    let files = list_files(path, format)?;
    let per_file: Vec<Result<Vec<Dialogue>>> = files
        .par_iter()
        .map(|(file, id)| match format {
            CorpusFormat::Tsv => read_tsv_dialogue(file, id).map(|d| d.into_iter().collect()),
            CorpusFormat::Jsonl => read_jsonl(file),
        })
        .collect();
    let mut out = Vec::new();
    for r in per_file {
        out.extend(r?);
    }
    Ok(out)
}

fn list_files(path: &Path, format: CorpusFormat) -> Result<Vec<(PathBuf, String)>> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok(vec![(path.to_path_buf(), id)]);
    }
    let ext = match format {
        CorpusFormat::Tsv => "tsv",
        CorpusFormat::Jsonl => "jsonl",
    };
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let p = e.path().unwrap_or(path).to_path_buf();
            Error::io(p, e.into())
        })?;
        if !entry.file_type().is_file()
            || entry.path().extension().and_then(|e| e.to_str()) != Some(ext)
        {
            continue;
        }
        let rel = entry.path().strip_prefix(path).unwrap_or(entry.path());
        let id = rel
            .with_extension("")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        files.push((entry.path().to_path_buf(), id));
    }
    files.sort();
    Ok(files)
}

fn read_tsv_dialogue(path: &Path, id: &str) -> Result<Option<Dialogue>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut turns = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                format!("{}:{}", path.display(), i + 1),
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        turns.push((fields[1].to_owned(), fields[3].to_owned()));
    }
    if turns.is_empty() {
        return Ok(None);
    }
    let dialogue = Dialogue::from_turns(id, turns);
    dialogue.validate()?;
    Ok(Some(dialogue))
}

fn read_jsonl(path: &Path) -> Result<Vec<Dialogue>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(&line).map_err(|e| {
            Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string())
        })?;
        d.validate()?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(dialogues: &[Dialogue], mut w: W) -> std::io::Result<()> {
    for d in dialogues {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_jsonl(dialogues: &[Dialogue], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl(dialogues, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Keep dialogues whose two most-active participants each introduce at least
/// `min_new_entities` entities that nobody mentioned earlier in the dialogue.
pub fn filter_corpus(dialogues: &[Dialogue], min_new_entities: usize) -> Result<Vec<Dialogue>> {
    let mut kept = Vec::new();
    for d in dialogues {
        if !d.annotated {
            return Err(Error::Validation(format!(
                "dialogue `{}` has no entity annotations; run `annotate` first",
                d.id
            )));
        }
        let Some((a, b)) = d.most_active_pair() else {
            continue;
        };
        let counts = d.new_entities_by_participant();
        let n = |p: &str| counts.get(p).copied().unwrap_or(0);
        if n(a) >= min_new_entities && n(b) >= min_new_entities {
            kept.push(d.clone());
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub token: String,
    pub id: u32,
    pub frequency: u64,
}

/// Token vocabulary with dense ids `1..=V`; id 0 is reserved for padding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub unit: Unit,
    /// Sorted by id.
    pub entries: Vec<VocabEntry>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

pub const PAD_ID: u32 = 0;

impl Vocabulary {
    /// Ids follow descending frequency, ties broken by lexicographic token order.
    pub fn from_counts(unit: Unit, counts: HashMap<String, u64>) -> Self {
        let mut items: Vec<(String, u64)> = counts.into_iter().collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let entries = items
            .into_iter()
            .enumerate()
            .map(|(i, (token, frequency))| VocabEntry {
                token,
                id: i as u32 + 1,
                frequency,
            })
            .collect();
        let mut v = Vocabulary {
            unit,
            entries,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self
            .entries
            .iter()
            .map(|e| (e.token.clone(), e.id))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        if id == PAD_ID {
            return None;
        }
        self.entries.get(id as usize - 1).map(|e| e.token.as_str())
    }

    pub fn frequency(&self, id: u32) -> Option<u64> {
        if id == PAD_ID {
            return None;
        }
        self.entries.get(id as usize - 1).map(|e| e.frequency)
    }

    /// All non-pad ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    /// Tokens indexed by id, with an empty string at the pad slot.
    pub fn tokens_by_id(&self) -> Vec<&str> {
        std::iter::once("")
            .chain(self.entries.iter().map(|e| e.token.as_str()))
            .collect()
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<u32>> {
        tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref()).ok_or_else(|| {
                    Error::Validation(format!("token `{}` is not in the vocabulary", t.as_ref()))
                })
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().filter_map(|&id| self.token(id)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut v: Vocabulary = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        for (i, e) in v.entries.iter().enumerate() {
            if e.id as usize != i + 1 {
                return Err(Error::Validation(format!(
                    "{}: vocabulary ids must be dense and sorted, found id {} at position {}",
                    path.display(),
                    e.id,
                    i + 1
                )));
            }
        }
        v.reindex();
        Ok(v)
    }
}

pub fn build_vocabulary(dialogues: &[Dialogue], unit: Unit) -> Vocabulary {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for d in dialogues {
        for t in d.sequence(unit) {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    Vocabulary::from_counts(unit, counts)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogue_count: usize,
    pub distinct_entities: usize,
    pub distinct_words: usize,
    pub max_entities_per_dialogue: usize,
    pub max_words_per_dialogue: usize,
}

pub fn corpus_stats(dialogues: &[Dialogue]) -> CorpusStats {
    let mut entities: HashSet<&str> = HashSet::new();
    let mut words: HashSet<&str> = HashSet::new();
    let mut stats = CorpusStats {
        dialogue_count: dialogues.len(),
        ..Default::default()
    };
    for d in dialogues {
        entities.extend(d.entity_sequence.iter().map(String::as_str));
        words.extend(d.word_sequence.iter().map(String::as_str));
        stats.max_entities_per_dialogue = stats.max_entities_per_dialogue.max(d.entity_sequence.len());
        stats.max_words_per_dialogue = stats.max_words_per_dialogue.max(d.word_sequence.len());
    }
    stats.distinct_entities = entities.len();
    stats.distinct_words = words.len();
    stats
}

/// Entity mention counts over a corpus.
pub fn mention_counts(dialogues: &[Dialogue]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for d in dialogues {
        for e in &d.entity_sequence {
            *counts.entry(e.clone()).or_default() += 1;
        }
    }
    counts
}
