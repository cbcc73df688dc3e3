//! Distance distributions, accuracy matrices and activation heatmaps.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Unit;
use crate::embedding::{cosine_distance, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::net::{accuracy, CoherenceModel};
use crate::paths::{ContextReport, DialogueSubgraph, NamedPath};
use crate::sampler::{Label, LabeledSample, Strategy};

pub const COSINE_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Cosine,
    PathLength,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Cosine => "cosine",
            Metric::PathLength => "path_length",
        })
    }
}

/// Which entity pairs of a sequence are measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Each entity with the one before it.
    #[default]
    Consecutive,
    /// Each entity with every entity before it.
    AllPairs,
}

impl FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consecutive" => Ok(Pairing::Consecutive),
            "all" | "all-pairs" | "all_pairs" => Ok(Pairing::AllPairs),
            other => Err(Error::Parameter(format!("unknown pairing `{other}`"))),
        }
    }
}

/// Index pairs `(earlier, later)` of a sequence of length `n`.
pub fn pair_indices(n: usize, pairing: Pairing) -> Vec<(usize, usize)> {
    match pairing {
        Pairing::Consecutive => (1..n).map(|i| (i - 1, i)).collect(),
        Pairing::AllPairs => (1..n).flat_map(|i| (0..i).map(move |j| (j, i))).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// Inclusive lower edge.
    pub lower: f64,
    /// Exclusive upper edge, inclusive for the last cosine bin.
    pub upper: f64,
    /// Value used when averaging: the midpoint, or the length for path bins.
    pub center: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceDistribution {
    /// Sample type, e.g. `positive` or a strategy name.
    pub label: String,
    pub metric: Metric,
    pub bins: Vec<Bin>,
    /// Path pairs with no path within the length limit; always 0 for cosine.
    pub unreachable: u64,
}

impl DistanceDistribution {
    pub fn cosine(label: impl Into<String>, width: f64) -> Result<Self> {
        if !(width > 0.0 && width <= 2.0) {
            return Err(Error::Parameter(format!("bin width must be in (0, 2], got {width}")));
        }
        let n = (2.0 / width).ceil() as usize;
        let bins = (0..n)
            .map(|i| {
                let lower = i as f64 * width;
                let upper = ((i + 1) as f64 * width).min(2.0);
                Bin {
                    lower,
                    upper,
                    center: (lower + upper) / 2.0,
                    count: 0,
                }
            })
            .collect();
        Ok(DistanceDistribution {
            label: label.into(),
            metric: Metric::Cosine,
            bins,
            unreachable: 0,
        })
    }

    pub fn path_length(label: impl Into<String>, max_length: usize) -> Self {
        DistanceDistribution {
            label: label.into(),
            metric: Metric::PathLength,
            bins: (0..=max_length)
                .map(|l| Bin {
                    lower: l as f64,
                    upper: (l + 1) as f64,
                    center: l as f64,
                    count: 0,
                })
                .collect(),
            unreachable: 0,
        }
    }

    pub fn add_cosine(&mut self, d: f64) {
        let n = self.bins.len();
        let width = self.bins[0].upper - self.bins[0].lower;
        let i = ((d / width).floor() as usize).min(n - 1);
        self.bins[i].count += 1;
    }

    pub fn add_path(&mut self, length: Option<usize>) {
        match length {
            Some(l) if l < self.bins.len() => self.bins[l].count += 1,
            _ => self.unreachable += 1,
        }
    }

    /// Number of pairs, including unreachable ones.
    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum::<u64>() + self.unreachable
    }

    /// Count-weighted mean of bin centers, ignoring unreachable pairs.
    pub fn mean(&self) -> Option<f64> {
        let n: u64 = self.bins.iter().map(|b| b.count).sum();
        if n == 0 {
            return None;
        }
        Some(self.bins.iter().map(|b| b.center * b.count as f64).sum::<f64>() / n as f64)
    }

    /// Pairs at length at most `l` (path metric).
    pub fn mass_at_most(&self, l: usize) -> u64 {
        self.bins.iter().take(l + 1).map(|b| b.count).sum()
    }
}

/// Cosine distances of the entity pairs of one sequence.
pub fn cosine_pair_distances<S: AsRef<str>>(
    sequence: &[S],
    embeddings: &EmbeddingMatrix,
    pairing: Pairing,
) -> Result<Vec<f64>> {
    pair_indices(sequence.len(), pairing)
        .into_iter()
        .map(|(i, j)| {
            let a = embeddings.lookup(sequence[i].as_ref());
            let b = embeddings.lookup(sequence[j].as_ref());
            cosine_distance(a, b).map(|d| d.value)
        })
        .collect()
}

pub fn cosine_distribution<S: AsRef<str>>(
    label: &str,
    sequences: &[Vec<S>],
    embeddings: &EmbeddingMatrix,
    pairing: Pairing,
    bin_width: f64,
) -> Result<DistanceDistribution> {
    if sequences.is_empty() {
        return Err(Error::Validation("no samples to measure".into()));
    }
    let mut dist = DistanceDistribution::cosine(label, bin_width)?;
    for s in sequences {
        for d in cosine_pair_distances(s, embeddings, pairing)? {
            dist.add_cosine(d);
        }
    }
    Ok(dist)
}

/// Shortest returned path length of each entity pair of a subgraph.
///
/// A pair of identical entities has length 0; a pair whose record holds no
/// path counts as unreachable.
pub fn path_pair_lengths(sub: &DialogueSubgraph, pairing: Pairing) -> Vec<Option<usize>> {
    let e = &sub.entities;
    pair_indices(e.len(), pairing)
        .into_iter()
        .map(|(i, j)| {
            if e[i] == e[j] {
                return Some(0);
            }
            sub.pair(&e[i], &e[j])
                .and_then(|p| p.paths.iter().map(NamedPath::len).min())
        })
        .collect()
}

pub fn path_distribution(
    label: &str,
    subgraphs: &[DialogueSubgraph],
    pairing: Pairing,
    max_length: usize,
) -> Result<DistanceDistribution> {
    if subgraphs.is_empty() {
        return Err(Error::Validation("no samples to measure".into()));
    }
    let mut dist = DistanceDistribution::path_length(label, max_length);
    for s in subgraphs {
        for l in path_pair_lengths(s, pairing) {
            dist.add_path(l);
        }
    }
    Ok(dist)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub mean_pos: f64,
    pub mean_neg: f64,
    /// `mean_neg - mean_pos`
    pub gap: f64,
}

pub fn distribution_separation(pos: &DistanceDistribution, neg: &DistanceDistribution) -> Result<Separation> {
    if pos.metric != neg.metric {
        return Err(Error::Parameter(format!(
            "cannot compare {} with {} distributions",
            pos.metric, neg.metric
        )));
    }
    if pos.bins.len() != neg.bins.len() {
        return Err(Error::Parameter("distributions use different bins".into()));
    }
    let mean = |d: &DistanceDistribution| {
        d.mean()
            .ok_or_else(|| Error::Validation(format!("distribution `{}` has no measured pairs", d.label)))
    };
    let (mean_pos, mean_neg) = (mean(pos)?, mean(neg)?);
    Ok(Separation {
        mean_pos,
        mean_neg,
        gap: mean_neg - mean_pos,
    })
}

pub fn save_distributions_csv(dists: &[DistanceDistribution], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let run = |w: &mut csv::Writer<std::fs::File>| -> csv::Result<()> {
        w.write_record(["label", "metric", "lower", "upper", "count"])?;
        for d in dists {
            let metric = d.metric.to_string();
            for b in &d.bins {
                w.write_record([
                    d.label.as_str(),
                    &metric,
                    &b.lower.to_string(),
                    &b.upper.to_string(),
                    &b.count.to_string(),
                ])?;
            }
            if d.metric == Metric::PathLength {
                w.write_record([d.label.as_str(), &metric, "unreachable", "unreachable", &d.unreachable.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: impl fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub embedding: String,
    pub train_strategy: Strategy,
    pub tpos: f64,
    /// Accuracy on the negatives of each test strategy, in column order.
    pub tneg: Vec<f64>,
    /// `(tpos + tneg[i]) / 2`
    pub pair_avg: Vec<f64>,
    /// Mean of `pair_avg`.
    pub avg: f64,
}

impl MatrixRow {
    pub fn new(embedding: impl Into<String>, train_strategy: Strategy, tpos: f64, tneg: Vec<f64>) -> Self {
        let pair_avg: Vec<f64> = tneg.iter().map(|t| (tpos + t) / 2.0).collect();
        let avg = if pair_avg.is_empty() {
            tpos
        } else {
            pair_avg.iter().sum::<f64>() / pair_avg.len() as f64
        };
        MatrixRow {
            embedding: embedding.into(),
            train_strategy,
            tpos,
            tneg,
            pair_avg,
            avg,
        }
    }
}

/// Accuracy of every model on every test strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub unit: Unit,
    pub test_strategies: Vec<Strategy>,
    pub rows: Vec<MatrixRow>,
}

impl AccuracyMatrix {
    /// Checks cell ranges and that every average equals the mean it names.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if r.tneg.len() != self.test_strategies.len() {
                return Err(Error::Validation("row width differs from the column count".into()));
            }
            let expect = MatrixRow::new(r.embedding.clone(), r.train_strategy, r.tpos, r.tneg.clone());
            let cells = std::iter::once(r.tpos).chain(r.tneg.iter().copied()).chain(r.pair_avg.iter().copied());
            for c in cells.chain(std::iter::once(r.avg)) {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::Validation(format!("cell {c} is outside [0, 1]")));
                }
            }
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
            if !close(expect.avg, r.avg) || !expect.pair_avg.iter().zip(&r.pair_avg).all(|(a, b)| close(*a, *b)) {
                return Err(Error::Validation(format!(
                    "averages of row {}/{} do not match their cells",
                    r.embedding, r.train_strategy
                )));
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let run = |w: &mut csv::Writer<std::fs::File>| -> csv::Result<()> {
            let mut header = vec!["embedding".to_string(), "train".to_string(), "TPos".to_string()];
            for s in &self.test_strategies {
                header.push(s.to_string());
                header.push(format!("{s} Avg"));
            }
            header.push("Avg".into());
            w.write_record(&header)?;
            for r in &self.rows {
                let mut rec = vec![r.embedding.clone(), r.train_strategy.to_string(), r.tpos.to_string()];
                for (t, a) in r.tneg.iter().zip(&r.pair_avg) {
                    rec.push(t.to_string());
                    rec.push(a.to_string());
                }
                rec.push(r.avg.to_string());
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok(())
        };
        run(&mut w).map_err(|e| csv_err(path, e))
    }
}

/// A trained model to place in the matrix.
pub struct MatrixModel<'a> {
    pub embedding: String,
    pub train_strategy: Strategy,
    pub model: &'a CoherenceModel,
}

/// A test split of one strategy.
pub struct TestSet<'a> {
    pub strategy: Strategy,
    pub unit: Unit,
    pub samples: &'a [LabeledSample],
}

/// Evaluates every model on every test set. TPos is measured once per model
/// on the union of the test sets' positives, deduplicated.
pub fn accuracy_matrix(models: &[MatrixModel<'_>], test_sets: &[TestSet<'_>]) -> Result<AccuracyMatrix> {
    let unit = test_sets
        .first()
        .map(|t| t.unit)
        .ok_or_else(|| Error::Validation("no test sets".into()))?;
    if let Some(t) = test_sets.iter().find(|t| t.unit != unit) {
        return Err(Error::Validation(format!("test set {} holds {} not {unit}", t.strategy, t.unit)));
    }
    if let Some(m) = models.iter().find(|m| m.model.config.unit != unit) {
        return Err(Error::Validation(format!(
            "model {}/{} reads {} not {unit}",
            m.embedding, m.train_strategy, m.model.config.unit
        )));
    }
    let mut seen = HashSet::new();
    let positives: Vec<LabeledSample> = test_sets
        .iter()
        .flat_map(|t| t.samples.iter())
        .filter(|s| s.label == Label::Coherent)
        .filter(|s| seen.insert((s.provenance.clone(), s.sequence.clone())))
        .cloned()
        .collect();
    let negatives: Vec<Vec<LabeledSample>> = test_sets
        .iter()
        .map(|t| {
            t.samples
                .iter()
                .filter(|s| s.label == Label::Adversarial)
                .cloned()
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(models.len());
    for m in models {
        let tpos = accuracy(m.model, &positives)?;
        let tneg = negatives
            .iter()
            .map(|n| accuracy(m.model, n))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(MatrixRow::new(m.embedding.clone(), m.train_strategy, tpos, tneg));
    }
    Ok(AccuracyMatrix {
        unit,
        test_strategies: test_sets.iter().map(|t| t.strategy).collect(),
        rows,
    })
}

pub fn save_context_csv(report: &ContextReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let run = |w: &mut csv::Writer<std::fs::File>| -> csv::Result<()> {
        w.write_record(["kind", "rank", "label", "count"])?;
        for (kind, list) in [
            ("mentioned", &report.mentioned),
            ("context", &report.context),
            ("relation", &report.relations),
        ] {
            for (i, lc) in list.iter().enumerate() {
                w.write_record([kind, &(i + 1).to_string(), &lc.label, &lc.count.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| csv_err(path, e))
}

/// A labelled matrix as written to a heatmap CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl LabeledMatrix {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        let run = |w: &mut csv::Writer<std::fs::File>| -> csv::Result<()> {
            w.write_record(std::iter::once(&self.corner).chain(&self.columns))?;
            for (label, row) in self.rows.iter().zip(&self.values) {
                let mut rec = vec![label.clone()];
                rec.extend(row.iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
            w.flush()?;
            Ok(())
        };
        run(&mut w).map_err(|e| csv_err(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        let mut out = LabeledMatrix {
            corner: header.get(0).unwrap_or_default().to_owned(),
            columns: header.iter().skip(1).map(str::to_owned).collect(),
            rows: Vec::new(),
            values: Vec::new(),
        };
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            out.rows.push(rec.get(0).unwrap_or_default().to_owned());
            let row = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::parse(format!("{}:{}", path.display(), i + 2), format!("bad number `{v}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            out.values.push(row);
        }
        Ok(out)
    }
}

/// Embedding-layer and convolution-layer activations of one sample.
pub fn heatmaps(model: &CoherenceModel, sequence: &[u32]) -> Result<(LabeledMatrix, LabeledMatrix)> {
    let act = model.layer_activations(sequence)?;
    let c = &model.config;
    let embedding = LabeledMatrix {
        corner: "token".into(),
        columns: (0..c.embed_dim).map(|d| format!("d{d}")).collect(),
        rows: act
            .tokens
            .iter()
            .map(|&id| model.embeddings.token(id as usize).to_owned())
            .collect(),
        values: act.embedding,
    };
    let conv = LabeledMatrix {
        corner: "position".into(),
        columns: (0..c.num_filters).map(|f| format!("f{f}")).collect(),
        rows: (0..act.conv.len()).map(|p| p.to_string()).collect(),
        values: act.conv,
    };
    Ok((embedding, conv))
}

/// Writes `<prefix>.embedding.csv` and `<prefix>.conv.csv`; returns both paths.
pub fn export_heatmap(model: &CoherenceModel, sequence: &[u32], prefix: &Path) -> Result<[PathBuf; 2]> {
    let (emb, conv) = heatmaps(model, sequence)?;
    let with_suffix = |s: &str| {
        let mut p = prefix.as_os_str().to_owned();
        p.push(s);
        PathBuf::from(p)
    };
    let paths = [with_suffix(".embedding.csv"), with_suffix(".conv.csv")];
    emb.save_csv(&paths[0])?;
    conv.save_csv(&paths[1])?;
    Ok(paths)
}
