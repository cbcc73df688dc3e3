use std::collections::{BTreeSet, HashMap};

use coherence_core::corpus::{build_vocabulary, Unit, Vocabulary};
use coherence_core::sampler::{
    build_dataset, sample_ruf, sample_sqd, sample_vod, Dataset, Label, Split, SplitSpec, Strategy,
    UnigramDistribution,
};
use coherence_core::synthetic::{generate, SyntheticConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper-tail p-value of Pearson's chi-square statistic.
fn chi_square_p(observed: &[u64], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dof = (observed.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

fn vocab_with(freqs: &[u64]) -> Vocabulary {
    let counts: HashMap<String, u64> = freqs.iter().enumerate().map(|(i, &f)| (format!("t{i:02}"), f)).collect();
    Vocabulary::from_counts(Unit::Words, counts)
}

#[test]
fn ruf_draws_are_uniform_over_the_vocabulary() {
    let vocab = vocab_with(&[1; 20]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = [0u64; 21];
    let positive = vec![1u32; 100];
    for _ in 0..2000 {
        for id in sample_ruf(&positive, &vocab, &mut rng).unwrap() {
            counts[id as usize] += 1;
        }
    }
    assert_eq!(counts[0], 0, "pad drawn");
    let expected = vec![200_000.0 / 20.0; 20];
    let p = chi_square_p(&counts[1..], &expected);
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn vod_draws_follow_unigram_frequencies() {
    let freqs: Vec<u64> = (1..=15).collect();
    let vocab = vocab_with(&freqs);
    let dist = UnigramDistribution::new(&vocab).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut counts = vec![0u64; vocab.len() + 1];
    let n = 240_000;
    for id in sample_vod(&vec![1u32; n], &dist, &mut rng) {
        counts[id as usize] += 1;
    }
    let total: u64 = freqs.iter().sum();
    let expected: Vec<f64> = vocab
        .ids()
        .map(|id| n as f64 * vocab.frequency(id).unwrap() as f64 / total as f64)
        .collect();
    let observed: Vec<u64> = vocab.ids().map(|id| counts[id as usize]).collect();
    let p = chi_square_p(&observed, &expected);
    assert!(p > 1e-3, "p = {p}");
}

#[test]
fn sqd_reorders_uniformly_and_never_returns_the_input() {
    let positive = [1u32, 2, 3, 4];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut counts: HashMap<Vec<u32>, u64> = HashMap::new();
    let n = 46_000;
    for _ in 0..n {
        let p = sample_sqd(&positive, &mut rng);
        assert!(!p.unchanged);
        *counts.entry(p.sequence).or_default() += 1;
    }
    assert!(!counts.contains_key(positive.as_slice()));
    assert_eq!(counts.len(), 23);
    let observed: Vec<u64> = counts.values().copied().collect();
    let p = chi_square_p(&observed, &[n as f64 / 23.0; 23]);
    assert!(p > 1e-3, "p = {p}");
}

proptest! {
    #[test]
    fn sqd_preserves_the_multiset(seq in prop::collection::vec(1u32..6, 0..12), seed in any::<u64>()) {
        let p = sample_sqd(&seq, &mut ChaCha8Rng::seed_from_u64(seed));
        let (mut a, mut b) = (seq.clone(), p.sequence.clone());
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        prop_assert_eq!(p.unchanged, p.sequence == seq);
        if seq.iter().collect::<BTreeSet<_>>().len() > 1 {
            prop_assert!(!p.unchanged);
        }
    }

    #[test]
    fn ruf_and_vod_keep_length(len in 0usize..40, seed in any::<u64>()) {
        let vocab = vocab_with(&[3, 1, 4, 1, 5]);
        let positive = vec![1u32; len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = sample_ruf(&positive, &vocab, &mut rng).unwrap();
        let v = sample_vod(&positive, &UnigramDistribution::new(&vocab).unwrap(), &mut rng);
        prop_assert_eq!(r.len(), len);
        prop_assert_eq!(v.len(), len);
        prop_assert!(r.iter().chain(&v).all(|&id| (1..=5).contains(&id)));
    }
}

fn corpus() -> Vec<coherence_core::corpus::Dialogue> {
    generate(&SyntheticConfig { dialogues: 120, clusters: 8, ..Default::default() })
        .unwrap()
        .dialogues
}

fn dataset_bytes(d: &Dataset) -> Vec<Vec<u8>> {
    let dir = tempfile::tempdir().unwrap();
    d.save(dir.path()).unwrap();
    ["train.jsonl", "valid.jsonl", "test.jsonl", "vocab.json", "dataset.json"]
        .iter()
        .map(|f| std::fs::read(dir.path().join(f)).unwrap())
        .collect()
}

#[test]
fn datasets_are_byte_identical_across_runs_and_thread_counts() {
    let dialogues = corpus();
    for unit in [Unit::Words, Unit::Entities] {
        let vocab = build_vocabulary(&dialogues, unit);
        for strategy in Strategy::ALL {
            let build = || build_dataset(&dialogues, &vocab, strategy, unit, 7, SplitSpec::default()).unwrap();
            let a = build();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            let b = pool.install(build);
            assert_eq!(dataset_bytes(&a), dataset_bytes(&b), "{strategy} {unit}");
            let loaded = {
                let dir = tempfile::tempdir().unwrap();
                a.save(dir.path()).unwrap();
                Dataset::load(dir.path()).unwrap()
            };
            assert_eq!(loaded, a);
            let other = build_dataset(&dialogues, &vocab, strategy, unit, 8, SplitSpec::default()).unwrap();
            assert_ne!(other.train, a.train);
        }
    }
}

#[test]
fn splits_are_disjoint_balanced_and_shared_across_strategies() {
    let dialogues = corpus();
    let vocab = build_vocabulary(&dialogues, Unit::Entities);
    let mut positives_by_strategy = Vec::new();
    for strategy in Strategy::ALL {
        let d = build_dataset(&dialogues, &vocab, strategy, Unit::Entities, 11, SplitSpec::default()).unwrap();
        let ids: Vec<BTreeSet<String>> = Split::ALL
            .iter()
            .map(|&s| {
                d.split(s)
                    .iter()
                    .filter(|x| x.label == Label::Coherent)
                    .map(|x| x.provenance[0].clone())
                    .collect()
            })
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(ids[i].is_disjoint(&ids[j]), "{strategy}: splits overlap");
            }
        }
        for (s, balance) in Split::ALL.iter().zip(d.info.class_balance) {
            assert_eq!(balance, 0.5, "{strategy} {s:?}");
            for pair in d.split(*s).chunks(2) {
                assert_eq!(pair[0].label, Label::Coherent);
                assert_eq!(pair[1].label, Label::Adversarial);
                assert_eq!(pair[1].strategy, Some(strategy));
                assert_eq!(pair[1].provenance[0], pair[0].provenance[0]);
                if strategy.needs_partner() {
                    assert_ne!(pair[1].provenance[1], pair[0].provenance[0]);
                }
            }
        }
        positives_by_strategy.push(ids);
    }
    // every strategy drops at most a few positives of the shared split
    let ruf = &positives_by_strategy[0];
    for other in &positives_by_strategy[1..] {
        for (a, b) in ruf.iter().zip(other) {
            assert!(b.is_subset(a));
        }
    }
}
