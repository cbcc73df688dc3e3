//! Seeded synthetic corpora with known topical structure.
//!
//! Entities fall into clusters; each cluster is a chain of entities around a
//! hub node. Dialogues walk along one chain, mentioning consecutive entities,
//! and at utterance boundaries may drift to a different cluster. Embeddings
//! place each cluster around a random centroid, with the chain position
//! rotating a small offset vector, so neighbours on the chain are closest.
//! The knowledge graph links every entity to its hub and to its chain
//! successor, and the hubs form a ring.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::annotator::{annotate, Gazetteer};
use crate::corpus::Dialogue;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const RESOURCE: &str = "http://example.org/resource/";
pub const ONTOLOGY: &str = "http://example.org/ontology/";

const STEMS: [&str; 32] = [
    "abra", "belo", "cora", "dumi", "elka", "fori", "gava", "hemu", "ilto", "jaso", "kebi", "lumo", "mira",
    "nodu", "opra", "pelu", "quen", "rasi", "soto", "tavi", "ulmo", "vexa", "wira", "xano", "yuli", "zeta",
    "brom", "clen", "drav", "frin", "grul", "hask",
];

const FILLERS: [&str; 16] = [
    "i", "think", "the", "is", "about", "what", "and", "maybe", "you", "use", "with", "so", "then", "try",
    "it", "also",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub dialogues: usize,
    pub clusters: usize,
    pub entities_per_cluster: usize,
    pub dim: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub min_mentions: usize,
    pub max_mentions: usize,
    /// Probability of switching cluster at an utterance boundary.
    pub drift: f64,
    /// Norm of the chain-position offset relative to the unit centroid.
    pub offset_radius: f64,
    /// Angle between consecutive chain positions, in radians.
    pub step_angle: f64,
    /// Standard deviation of per-coordinate noise on entity vectors.
    pub noise: f64,
    /// Extra noise on word vectors relative to their entity.
    pub word_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            dialogues: 2000,
            clusters: 20,
            entities_per_cluster: 15,
            dim: 16,
            min_utterances: 4,
            max_utterances: 8,
            min_mentions: 2,
            max_mentions: 3,
            drift: 0.3,
            offset_radius: 1.0,
            step_angle: std::f64::consts::PI / 12.0,
            noise: 0.05,
            word_noise: 0.02,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clusters < 2 || self.clusters > STEMS.len() {
            return Err(Error::Parameter(format!("clusters must be in 2..={}", STEMS.len())));
        }
        if self.entities_per_cluster < 2 || self.dim < 3 || self.dialogues == 0 {
            return Err(Error::Parameter("need at least 2 entities per cluster, 3 dimensions and 1 dialogue".into()));
        }
        if self.min_utterances < 2 || self.min_utterances > self.max_utterances {
            return Err(Error::Parameter("utterance range must satisfy 2 <= min <= max".into()));
        }
        if self.min_mentions == 0 || self.min_mentions > self.max_mentions {
            return Err(Error::Parameter("mention range must satisfy 1 <= min <= max".into()));
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return Err(Error::Parameter("drift must be a probability".into()));
        }
        Ok(())
    }
}

pub fn surface(cluster: usize, position: usize) -> String {
    format!("{}{position}", STEMS[cluster])
}

pub fn entity_iri(cluster: usize, position: usize) -> String {
    let stem = STEMS[cluster];
    let mut name = stem[..1].to_uppercase();
    name.push_str(&stem[1..]);
    format!("{RESOURCE}{name}_{position}")
}

pub fn hub_iri(cluster: usize) -> String {
    format!("{RESOURCE}Topic_{}", STEMS[cluster])
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: SyntheticConfig,
    /// Annotated dialogues.
    pub dialogues: Vec<Dialogue>,
    pub gazetteer: Gazetteer,
    pub triples: Vec<(String, String, String)>,
    pub entity_vectors: EmbeddingMatrix,
    pub word_vectors: EmbeddingMatrix,
    /// Cluster of each entity IRI, by (cluster, position) generation order.
    pub entities: Vec<(String, usize)>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v {
        *x /= n;
    }
}

fn orthogonalize(v: &mut [f64], against: &[f64]) {
    let d: f64 = v.iter().zip(against).map(|(a, b)| a * b).sum();
    for (x, a) in v.iter_mut().zip(against) {
        *x -= d * a;
    }
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

    let mut entity_vectors = EmbeddingMatrix::new(c.dim);
    let mut word_vectors = EmbeddingMatrix::new(c.dim);
    let mut entities = Vec::new();
    let mut gaz_pairs = Vec::new();
    for k in 0..c.clusters {
        let mut mu = gaussian(&mut rng, c.dim);
        normalize(&mut mu);
        let mut u = gaussian(&mut rng, c.dim);
        orthogonalize(&mut u, &mu);
        normalize(&mut u);
        let mut v = gaussian(&mut rng, c.dim);
        orthogonalize(&mut v, &mu);
        orthogonalize(&mut v, &u);
        normalize(&mut v);
        for j in 0..c.entities_per_cluster {
            let theta = j as f64 * c.step_angle;
            let noise = gaussian(&mut rng, c.dim);
            let e: Vec<f64> = (0..c.dim)
                .map(|i| mu[i] + c.offset_radius * (theta.cos() * u[i] + theta.sin() * v[i]) + c.noise * noise[i])
                .collect();
            let wn = gaussian(&mut rng, c.dim);
            let w: Vec<f64> = e.iter().zip(&wn).map(|(x, n)| x + c.word_noise * n).collect();
            let iri = entity_iri(k, j);
            entity_vectors.push(&iri, &e)?;
            word_vectors.push(&surface(k, j), &w)?;
            gaz_pairs.push((surface(k, j), iri.clone()));
            entities.push((iri, k));
        }
    }
    for f in FILLERS {
        word_vectors.push(f, &gaussian(&mut rng, c.dim))?;
    }
    let gazetteer = Gazetteer::from_pairs(gaz_pairs);

    let mut triples = Vec::new();
    let linked = format!("{ONTOLOGY}linkedTo");
    let next = format!("{ONTOLOGY}next");
    let related = format!("{ONTOLOGY}relatedTo");
    for k in 0..c.clusters {
        for j in 0..c.entities_per_cluster {
            triples.push((entity_iri(k, j), linked.clone(), hub_iri(k)));
            if j + 1 < c.entities_per_cluster {
                triples.push((entity_iri(k, j), next.clone(), entity_iri(k, j + 1)));
            }
        }
        triples.push((hub_iri(k), related.clone(), hub_iri((k + 1) % c.clusters)));
    }

    let dialogues = (0..c.dialogues)
        .map(|i| {
            let mut drng = ChaCha8Rng::seed_from_u64(c.seed);
            drng.set_stream(i as u64 + 1);
            generate_dialogue(c, i, &mut drng, &gazetteer)
        })
        .collect();

    Ok(SyntheticCorpus {
        config: c.clone(),
        dialogues,
        gazetteer,
        triples,
        entity_vectors,
        word_vectors,
        entities,
    })
}

fn generate_dialogue(c: &SyntheticConfig, index: usize, rng: &mut ChaCha8Rng, gazetteer: &Gazetteer) -> Dialogue {
    let n = rng.random_range(c.min_utterances..=c.max_utterances);
    let mut cluster = rng.random_range(0..c.clusters);
    let mut pos = rng.random_range(0..c.entities_per_cluster) as isize;
    let mut dir: isize = if rng.random_bool(0.5) { 1 } else { -1 };
    let last = c.entities_per_cluster as isize - 1;
    let mut turns = Vec::with_capacity(n);
    for u in 0..n {
        if u > 0 && rng.random_bool(c.drift) {
            let shift = rng.random_range(1..c.clusters);
            cluster = (cluster + shift) % c.clusters;
            pos = rng.random_range(0..c.entities_per_cluster) as isize;
            dir = if rng.random_bool(0.5) { 1 } else { -1 };
        }
        let mentions = rng.random_range(c.min_mentions..=c.max_mentions);
        let mut words: Vec<String> = Vec::new();
        for _ in 0..mentions {
            for _ in 0..rng.random_range(1..=2) {
                words.push(FILLERS.choose(rng).expect("non-empty").to_string());
            }
            words.push(surface(cluster, pos as usize));
            if pos + dir < 0 || pos + dir > last {
                dir = -dir;
            }
            pos += dir;
        }
        words.push(FILLERS.choose(rng).expect("non-empty").to_string());
        let speaker = if u % 2 == 0 { "alice" } else { "bob" };
        turns.push((speaker.to_string(), words.join(" ")));
    }
    let raw = Dialogue::from_turns(format!("dialogue_{index:05}"), turns);
    annotate(&raw, gazetteer)
}

impl SyntheticCorpus {
    pub fn cluster_of(&self, iri: &str) -> Option<usize> {
        let stride = self.config.entities_per_cluster;
        self.entity_vectors
            .row_of(iri)
            .map(|row| (row - 1) / stride)
    }

    /// Writes raw TSV dialogues under `corpus/`, plus `gazetteer.tsv`,
    /// `kg.nt`, `words.txt` and `entities.txt`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        let corpus = dir.join("corpus");
        fs::create_dir_all(&corpus).map_err(|e| Error::io(&corpus, e))?;
        for d in &self.dialogues {
            let path = corpus.join(format!("{}.tsv", d.id));
            let mut text = String::new();
            for (t, u) in d.utterances.iter().enumerate() {
                let other = d.participants.iter().find(|p| **p != u.speaker).cloned().unwrap_or_default();
                text.push_str(&format!("2024-01-01T00:{:02}:00\t{}\t{}\t{}\n", t % 60, u.speaker, other, u.text));
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        let write = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))
        };
        let mut gaz: Vec<(String, String)> = (0..self.config.clusters)
            .flat_map(|k| (0..self.config.entities_per_cluster).map(move |j| (surface(k, j), entity_iri(k, j))))
            .collect();
        gaz.sort();
        write(
            "gazetteer.tsv",
            gaz.iter().map(|(s, e)| format!("{s}\t{e}\n")).collect(),
        )?;
        write(
            "kg.nt",
            self.triples
                .iter()
                .map(|(s, p, o)| format!("<{s}> <{p}> <{o}> .\n"))
                .collect(),
        )?;
        self.word_vectors.save_text(&dir.join("words.txt"))?;
        self.entity_vectors.save_text(&dir.join("entities.txt"))?;
        Ok(())
    }
}
