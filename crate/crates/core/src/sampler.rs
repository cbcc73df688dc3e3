//! Adversarial negative samples and train/validation/test datasets.
//!
//! Every negative is derived from one positive dialogue. Randomness comes
//! from a ChaCha8 generator seeded with the dataset seed; each example draws
//! from its own stream, keyed by split and position, so results do not
//! depend on thread count or scheduling.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, Unit, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    RUf,
    VoD,
    SqD,
    VSp,
    HSp,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::RUf,
        Strategy::VoD,
        Strategy::SqD,
        Strategy::VSp,
        Strategy::HSp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::RUf => "RUf",
            Strategy::VoD => "VoD",
            Strategy::SqD => "SqD",
            Strategy::VSp => "VSp",
            Strategy::HSp => "HSp",
        }
    }

    /// Whether negatives splice a second dialogue in.
    pub fn needs_partner(self) -> bool {
        matches!(self, Strategy::VSp | Strategy::HSp)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown strategy `{s}` (expected ruf, vod, sqd, vsp or hsp)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Coherent,
    Adversarial,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Coherent => 1.0,
            Label::Adversarial => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sequence: Vec<u32>,
    pub label: Label,
    /// `None` exactly for coherent samples; serialized as `"none"`.
    #[serde(with = "strategy_tag")]
    pub strategy: Option<Strategy>,
    /// Ids of the dialogues the sequence was built from.
    pub provenance: Vec<String>,
}

mod strategy_tag {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    use super::Strategy;

    pub fn serialize<S: Serializer>(v: &Option<Strategy>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(v.map_or("none", Strategy::as_str))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Strategy>, D::Error> {
        let s = String::deserialize(d)?;
        if s == "none" {
            return Ok(None);
        }
        s.parse().map(Some).map_err(D::Error::custom)
    }
}

impl LabeledSample {
    pub fn positive(sequence: Vec<u32>, id: &str) -> Self {
        LabeledSample {
            sequence,
            label: Label::Coherent,
            strategy: None,
            provenance: vec![id.to_owned()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sequence.is_empty() {
            return Err(Error::Validation("sample sequence is empty".into()));
        }
        if (self.label == Label::Coherent) != self.strategy.is_none() {
            return Err(Error::Validation(
                "coherent samples and only coherent samples carry strategy none".into(),
            ));
        }
        let expected = if self.strategy.is_some_and(Strategy::needs_partner) { 2 } else { 1 };
        if self.provenance.len() != expected {
            return Err(Error::Validation(format!(
                "expected {expected} provenance ids, found {}",
                self.provenance.len()
            )));
        }
        Ok(())
    }
}

/// Uniform draws over the non-pad vocabulary ids, one per position of `positive`.
pub fn sample_ruf<R: Rng + ?Sized>(positive: &[u32], vocab: &Vocabulary, rng: &mut R) -> Result<Vec<u32>> {
    if vocab.is_empty() {
        return Err(Error::Validation("vocabulary is empty".into()));
    }
    let v = vocab.len() as u32;
    Ok(positive.iter().map(|_| rng.random_range(1..=v)).collect())
}

/// Unigram distribution of a vocabulary.
#[derive(Debug, Clone)]
pub struct UnigramDistribution {
    weights: WeightedIndex<u64>,
}

impl UnigramDistribution {
    pub fn new(vocab: &Vocabulary) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Validation("vocabulary is empty".into()));
        }
        let weights = WeightedIndex::new(vocab.entries.iter().map(|e| e.frequency))
            .map_err(|e| Error::Validation(format!("vocabulary frequencies: {e}")))?;
        Ok(UnigramDistribution { weights })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.weights.sample(rng) as u32 + 1
    }
}

/// Draws from the corpus unigram distribution, one per position of `positive`.
pub fn sample_vod<R: Rng + ?Sized>(positive: &[u32], dist: &UnigramDistribution, rng: &mut R) -> Vec<u32> {
    positive.iter().map(|_| dist.draw(rng)).collect()
}

pub const SQD_MAX_TRIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permuted {
    pub sequence: Vec<u32>,
    /// The output equals the input because every draw within the cap did.
    pub unchanged: bool,
}

/// A uniformly random reordering that differs from the input when possible.
pub fn sample_sqd<R: Rng + ?Sized>(positive: &[u32], rng: &mut R) -> Permuted {
    let mut out = positive.to_vec();
    if positive.len() < 2 {
        return Permuted {
            sequence: out,
            unchanged: true,
        };
    }
    for _ in 0..SQD_MAX_TRIES {
        out.shuffle(rng);
        if out != positive {
            return Permuted {
                sequence: out,
                unchanged: false,
            };
        }
    }
    Permuted {
        sequence: out,
        unchanged: true,
    }
}

/// Replaces the second participant's turns of `a` with the second
/// participant's turns of `b`, in order. Turns of `a` left over once `b` runs
/// out are dropped.
pub fn sample_vsp(a: &Dialogue, b: &Dialogue, unit: Unit) -> Result<Vec<String>> {
    if a.participants.len() < 2 {
        return Err(Error::Validation(format!("dialogue `{}` has fewer than two participants", a.id)));
    }
    if b.participants.len() < 2 {
        return Err(Error::Validation(format!("dialogue `{}` has fewer than two participants", b.id)));
    }
    let a2 = &a.participants[1];
    let b2 = &b.participants[1];
    let mut donors = b.utterances.iter().filter(|u| &u.speaker == b2).peekable();
    if donors.peek().is_none() {
        return Err(Error::Validation(format!(
            "dialogue `{}` has no utterances by its second participant",
            b.id
        )));
    }
    let mut out = Vec::new();
    for u in &a.utterances {
        if &u.speaker != a2 {
            out.extend(u.units(unit).into_iter().map(str::to_owned));
        } else if let Some(d) = donors.next() {
            out.extend(d.units(unit).into_iter().map(str::to_owned));
        }
    }
    Ok(out)
}

/// The first ⌈n_a/2⌉ utterances of `a` followed by the last ⌊n_b/2⌋ of `b`.
pub fn sample_hsp(a: &Dialogue, b: &Dialogue, unit: Unit) -> Result<Vec<String>> {
    for d in [a, b] {
        if d.utterances.len() < 2 {
            return Err(Error::Validation(format!("dialogue `{}` has fewer than two utterances", d.id)));
        }
    }
    let head = a.utterances.len().div_ceil(2);
    let tail = b.utterances.len() / 2;
    Ok(a.utterances[..head]
        .iter()
        .chain(&b.utterances[b.utterances.len() - tail..])
        .flat_map(|u| u.units(unit))
        .map(str::to_owned)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSpec {
    Fractions { train: f64, valid: f64, test: f64 },
    Counts { train: usize, valid: usize, test: usize },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions {
            train: 0.7,
            valid: 0.1,
            test: 0.2,
        }
    }
}

impl SplitSpec {
    /// Number of positives per split for a pool of `n`.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        let sizes = match *self {
            SplitSpec::Fractions { train, valid, test } => {
                if [train, valid, test].iter().any(|f| !(0.0..=1.0).contains(f)) || (train + valid + test - 1.0).abs() > 1e-9 {
                    return Err(Error::Parameter(format!(
                        "split fractions must be in [0, 1] and sum to 1, got {train}/{valid}/{test}"
                    )));
                }
                let v = (n as f64 * valid).round() as usize;
                let t = (n as f64 * test).round() as usize;
                if v + t > n {
                    return Err(Error::Validation(format!("{n} positives cannot be split {train}/{valid}/{test}")));
                }
                let sizes = [n - v - t, v, t];
                for (size, frac) in sizes.iter().zip([train, valid, test]) {
                    if frac > 0.0 && *size == 0 {
                        return Err(Error::Validation(format!(
                            "{n} positives are too few for the split {train}/{valid}/{test}"
                        )));
                    }
                }
                sizes
            }
            SplitSpec::Counts { train, valid, test } => {
                if train + valid + test > n {
                    return Err(Error::Validation(format!(
                        "{} positives requested but only {n} available",
                        train + valid + test
                    )));
                }
                [train, valid, test]
            }
        };
        if sizes[0] == 0 {
            return Err(Error::Validation("the training split is empty".into()));
        }
        Ok(sizes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Valid => "valid.jsonl",
            Split::Test => "test.jsonl",
        }
    }

    fn stream(self) -> u64 {
        self as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub unit: Unit,
    pub strategy: Strategy,
    pub seed: u64,
    pub split: SplitSpec,
    /// Samples per split, train/valid/test.
    pub sizes: [usize; 3],
    pub class_balance: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub info: DatasetInfo,
    pub vocabulary: Vocabulary,
    pub train: Vec<LabeledSample>,
    pub validation: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

fn example_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((split.stream() + 1) << 40) | index as u64);
    rng
}

/// A uniformly random cyclic permutation (Sattolo), so no element maps to itself.
fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    p
}

/// Splits positives, then pairs each with one negative of `strategy`.
///
/// The split depends only on the seed and the positive pool, so datasets of
/// different strategies built with the same seed share their positives.
/// Dialogues with an empty sequence are skipped; for SqD so are dialogues
/// with a single unit. An empty negative drops its positive too.
pub fn build_dataset(
    positives: &[Dialogue],
    vocabulary: &Vocabulary,
    strategy: Strategy,
    unit: Unit,
    seed: u64,
    split: SplitSpec,
) -> Result<Dataset> {
    if vocabulary.unit != unit {
        return Err(Error::Parameter(format!(
            "vocabulary unit is {} but dataset unit is {unit}",
            vocabulary.unit
        )));
    }
    let pool: Vec<&Dialogue> = positives
        .iter()
        .filter(|d| {
            let keep = !d.sequence(unit).is_empty();
            if !keep {
                warn!("dialogue `{}` has an empty {unit} sequence, skipped", d.id);
            }
            keep
        })
        .collect();
    if pool.is_empty() {
        return Err(Error::Validation("no positive has a non-empty sequence".into()));
    }
    let sizes = split.sizes(pool.len())?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let unigram = match strategy {
        Strategy::VoD => Some(UnigramDistribution::new(vocabulary)?),
        _ => None,
    };
    let mut splits: Vec<Vec<LabeledSample>> = Vec::with_capacity(3);
    let mut offset = 0;
    for (s, &size) in Split::ALL.iter().zip(&sizes) {
        let members: Vec<&Dialogue> = order[offset..offset + size].iter().map(|&i| pool[i]).collect();
        offset += size;
        let partners = if strategy.needs_partner() {
            if members.len() == 1 {
                return Err(Error::Validation(format!(
                    "{strategy} needs at least two positives in the {s:?} split"
                )));
            }
            let mut rng = example_rng(seed, *s, u32::MAX as usize);
            derangement(members.len(), &mut rng)
        } else {
            Vec::new()
        };
        let pairs: Vec<Option<[LabeledSample; 2]>> = members
            .par_iter()
            .enumerate()
            .map(|(i, a)| -> Result<Option<[LabeledSample; 2]>> {
                let seq = vocabulary.encode(a.sequence(unit))?;
                let mut rng = example_rng(seed, *s, i);
                let (negative, provenance) = match strategy {
                    Strategy::RUf => (sample_ruf(&seq, vocabulary, &mut rng)?, vec![a.id.clone()]),
                    Strategy::VoD => {
                        let dist = unigram.as_ref().expect("built for VoD");
                        (sample_vod(&seq, dist, &mut rng), vec![a.id.clone()])
                    }
                    Strategy::SqD => {
                        if seq.len() < 2 {
                            warn!("dialogue `{}` has a single {unit}, skipped for SqD", a.id);
                            return Ok(None);
                        }
                        let p = sample_sqd(&seq, &mut rng);
                        if p.unchanged {
                            warn!("dialogue `{}`: no reordering differs from the original", a.id);
                        }
                        (p.sequence, vec![a.id.clone()])
                    }
                    Strategy::VSp | Strategy::HSp => {
                        let b = members[partners[i]];
                        let tokens = if strategy == Strategy::VSp {
                            sample_vsp(a, b, unit)?
                        } else {
                            sample_hsp(a, b, unit)?
                        };
                        (vocabulary.encode(&tokens)?, vec![a.id.clone(), b.id.clone()])
                    }
                };
                if negative.is_empty() {
                    warn!("dialogue `{}`: empty {strategy} negative, pair dropped", a.id);
                    return Ok(None);
                }
                Ok(Some([
                    LabeledSample::positive(seq, &a.id),
                    LabeledSample {
                        sequence: negative,
                        label: Label::Adversarial,
                        strategy: Some(strategy),
                        provenance,
                    },
                ]))
            })
            .collect::<Result<_>>()?;
        splits.push(pairs.into_iter().flatten().flatten().collect());
    }
    let test = splits.pop().unwrap_or_default();
    let validation = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    if train.is_empty() {
        return Err(Error::Validation("no training samples could be built".into()));
    }
    let balance = |v: &[LabeledSample]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().filter(|s| s.label == Label::Coherent).count() as f64 / v.len() as f64
        }
    };
    Ok(Dataset {
        info: DatasetInfo {
            unit,
            strategy,
            seed,
            split,
            sizes: [train.len(), validation.len(), test.len()],
            class_balance: [balance(&train), balance(&validation), balance(&test)],
        },
        vocabulary: vocabulary.clone(),
        train,
        validation,
        test,
    })
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[LabeledSample] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.validation,
            Split::Test => &self.test,
        }
    }

    /// Writes `train.jsonl`, `valid.jsonl`, `test.jsonl`, `vocab.json` and `dataset.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for s in Split::ALL {
            save_samples(self.split(s), &dir.join(s.file_name()))?;
        }
        self.vocabulary.save(&dir.join("vocab.json"))?;
        let path = dir.join("dataset.json");
        let json = serde_json::to_string_pretty(&self.info).expect("dataset info serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("dataset.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let info: DatasetInfo =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        Ok(Dataset {
            info,
            vocabulary: Vocabulary::load(&dir.join("vocab.json"))?,
            train: load_samples(&dir.join(Split::Train.file_name()))?,
            validation: load_samples(&dir.join(Split::Valid.file_name()))?,
            test: load_samples(&dir.join(Split::Test.file_name()))?,
        })
    }
}

pub fn write_samples<W: Write>(samples: &[LabeledSample], mut w: W) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_samples(samples: &[LabeledSample], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_samples(samples, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_samples(path: &Path) -> Result<Vec<LabeledSample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: LabeledSample = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        s.validate()
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        out.push(s);
    }
    Ok(out)
}
