use std::collections::{HashMap, HashSet, VecDeque};

use coherence_core::analysis::{
    accuracy_matrix, cosine_distribution, distribution_separation, export_heatmap, heatmaps, path_distribution,
    AccuracyMatrix, LabeledMatrix, MatrixModel, MatrixRow, Pairing, TestSet, COSINE_BIN_WIDTH,
};
use coherence_core::corpus::{build_vocabulary, Unit};
use coherence_core::embedding::EmbeddingMatrix;
use coherence_core::kg::KnowledgeGraph;
use coherence_core::net::{accuracy, CoherenceModel, ModelConfig};
use coherence_core::paths::{induce_dialogue_subgraph, PathQueryParams};
use coherence_core::sampler::{build_dataset, Label, LabeledSample, SplitSpec, Strategy};
use coherence_core::synthetic::{generate, SyntheticConfig, SyntheticCorpus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus() -> SyntheticCorpus {
    generate(&SyntheticConfig { dialogues: 80, clusters: 6, ..Default::default() }).unwrap()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

fn decode(seqs: &[LabeledSample], vocab: &coherence_core::corpus::Vocabulary, label: Label) -> Vec<Vec<String>> {
    seqs.iter()
        .filter(|s| s.label == label)
        .map(|s| vocab.decode(&s.sequence).into_iter().map(str::to_owned).collect())
        .collect()
}

#[test]
fn cosine_histogram_matches_recount_and_separates_ruf() {
    let s = corpus();
    let vocab = build_vocabulary(&s.dialogues, Unit::Entities);
    let d = build_dataset(&s.dialogues, &vocab, Strategy::RUf, Unit::Entities, 1, SplitSpec::default()).unwrap();
    let pos = decode(&d.train, &vocab, Label::Coherent);
    let neg = decode(&d.train, &vocab, Label::Adversarial);
    for pairing in [Pairing::Consecutive, Pairing::AllPairs] {
        let hist = cosine_distribution("positive", &pos, &s.entity_vectors, pairing, COSINE_BIN_WIDTH).unwrap();
        assert_eq!(hist.bins.len(), 40);
        let mut counts = vec![0u64; 40];
        let mut pairs = 0u64;
        for seq in &pos {
            for i in 1..seq.len() {
                let earlier: Vec<usize> = match pairing {
                    Pairing::Consecutive => vec![i - 1],
                    Pairing::AllPairs => (0..i).collect(),
                };
                for j in earlier {
                    let v = cos(s.entity_vectors.lookup(&seq[j]), s.entity_vectors.lookup(&seq[i]));
                    counts[((v / 0.05).floor() as usize).min(39)] += 1;
                    pairs += 1;
                }
            }
        }
        assert_eq!(hist.bins.iter().map(|b| b.count).collect::<Vec<_>>(), counts);
        assert_eq!(hist.total(), pairs);
        let neg_hist = cosine_distribution("RUf", &neg, &s.entity_vectors, pairing, COSINE_BIN_WIDTH).unwrap();
        let sep = distribution_separation(&hist, &neg_hist).unwrap();
        assert!(sep.gap > 0.2, "gap {}", sep.gap);
    }
}

fn bfs(g: &KnowledgeGraph, from: &str, to: &str) -> Option<usize> {
    let (s, t) = (g.node(from)?, g.node(to)?);
    let mut dist = HashMap::from([(s, 0usize)]);
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        if v == t {
            return Some(dist[&v]);
        }
        for n in g.undirected_edges(v) {
            if !dist.contains_key(&n.node) {
                dist.insert(n.node, dist[&v] + 1);
                queue.push_back(n.node);
            }
        }
    }
    None
}

#[test]
fn path_histogram_matches_breadth_first_distances() {
    let s = corpus();
    let g = KnowledgeGraph::from_triples(s.triples.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())));
    let max_len = 3;
    // a k large enough that no pair is crowded out of a multi-source result
    let params = PathQueryParams::unbounded(10_000, max_len);
    let subs: Vec<_> = s.dialogues[..25]
        .iter()
        .map(|d| induce_dialogue_subgraph(&g, &d.entity_sequence, &params).unwrap())
        .collect();
    let hist = path_distribution("positive", &subs, Pairing::Consecutive, max_len).unwrap();
    let mut counts = vec![0u64; max_len + 1];
    let mut unreachable = 0;
    for d in &s.dialogues[..25] {
        for w in d.entity_sequence.windows(2) {
            match bfs(&g, &w[0], &w[1]).filter(|&l| l <= max_len) {
                Some(l) => counts[l] += 1,
                None => unreachable += 1,
            }
        }
    }
    assert_eq!(hist.bins.iter().map(|b| b.count).collect::<Vec<_>>(), counts);
    assert_eq!(hist.unreachable, unreachable);
    assert_eq!(hist.mass_at_most(max_len) + hist.unreachable, hist.total());
}

#[test]
fn heatmap_csv_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let emb = EmbeddingMatrix::from_rows(
        4,
        (1..=6).map(|i| (format!("w{i}"), (0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>())),
    )
    .unwrap();
    let c = ModelConfig {
        max_seq_len: 7,
        embed_dim: 4,
        num_filters: 3,
        filter_width: 2,
        hidden_dim: 2,
        ..Default::default()
    };
    let m = CoherenceModel::new(c, emb).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let [e, v] = export_heatmap(&m, &[3, 1, 4, 1, 5], &dir.path().join("sample")).unwrap();
    let (want_e, want_v) = heatmaps(&m, &[3, 1, 4, 1, 5]).unwrap();
    assert_eq!(LabeledMatrix::load_csv(&e).unwrap(), want_e);
    assert_eq!(LabeledMatrix::load_csv(&v).unwrap(), want_v);
    assert_eq!(want_e.rows[..5], ["w3", "w1", "w4", "w1", "w5"]);
    assert_eq!(want_v.values.len(), 6);
}

#[test]
fn matrix_averages_match_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let cols = rng.random_range(1..=5);
        let tpos: f64 = rng.random();
        let tneg: Vec<f64> = (0..cols).map(|_| rng.random()).collect();
        let row = MatrixRow::new("w2v", Strategy::RUf, tpos, tneg.clone());
        let mean = tneg.iter().map(|t| (tpos + t) / 2.0).sum::<f64>() / cols as f64;
        assert!((row.avg - mean).abs() < 1e-12);
        let mut m = AccuracyMatrix {
            unit: Unit::Words,
            test_strategies: Strategy::ALL[..cols].to_vec(),
            rows: vec![row],
        };
        m.validate().unwrap();
        m.rows[0].avg += 0.01;
        assert!(m.validate().is_err());
    }
}

#[test]
fn matrix_tpos_uses_deduplicated_positives() {
    let s = corpus();
    let vocab = build_vocabulary(&s.dialogues, Unit::Entities);
    let sets: Vec<_> = [Strategy::RUf, Strategy::SqD]
        .iter()
        .map(|&st| build_dataset(&s.dialogues, &vocab, st, Unit::Entities, 2, SplitSpec::default()).unwrap())
        .collect();
    let c = ModelConfig {
        unit: Unit::Entities,
        embed_dim: s.entity_vectors.dim(),
        num_filters: 4,
        hidden_dim: 4,
        max_seq_len: 20,
        ..Default::default()
    };
    let model = CoherenceModel::new(c, s.entity_vectors.aligned(&vocab)).unwrap();
    let test_sets: Vec<TestSet> = sets
        .iter()
        .map(|d| TestSet { strategy: d.info.strategy, unit: Unit::Entities, samples: &d.test })
        .collect();
    let m = accuracy_matrix(
        &[MatrixModel { embedding: "synthetic".into(), train_strategy: Strategy::RUf, model: &model }],
        &test_sets,
    )
    .unwrap();
    m.validate().unwrap();
    let mut seen = HashSet::new();
    let positives: Vec<LabeledSample> = sets
        .iter()
        .flat_map(|d| &d.test)
        .filter(|x| x.label == Label::Coherent && seen.insert(x.provenance[0].clone()))
        .cloned()
        .collect();
    assert_eq!(m.rows[0].tpos, accuracy(&model, &positives).unwrap());
    for (i, d) in sets.iter().enumerate() {
        let negs: Vec<LabeledSample> = d.test.iter().filter(|x| x.label == Label::Adversarial).cloned().collect();
        assert_eq!(m.rows[0].tneg[i], accuracy(&model, &negs).unwrap());
    }
}
