#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coherence_core::synthetic::{entity_iri, generate, SyntheticConfig};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const BIN: &str = env!("CARGO_BIN_EXE_coherence");

/// Runs the binary with `COHERENCE_CACHE_DIR` cleared.
pub fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(BIN)
        .args(args)
        .env_remove("COHERENCE_CACHE_DIR")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

#[track_caller]
pub fn ok<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(|a| a.as_ref().to_owned()).collect();
    let out = run(&args);
    assert!(
        out.status.success(),
        "{args:?} exited with {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn small_synthetic(dir: &Path, dialogues: usize, seed: u64) {
    generate(&SyntheticConfig {
        dialogues,
        clusters: 6,
        entities_per_cluster: 10,
        dim: 8,
        seed,
        ..Default::default()
    })
    .and_then(|c| c.write_files(dir))
    .expect("fixture");
}

/// sha256 of every file under `root`, keyed by relative path, manifests excluded.
pub fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.unwrap();
        if !entry.file_type().is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy();
        if name.ends_with("manifest.json") {
            continue;
        }
        let rel = entry.path().strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
        let bytes = std::fs::read(entry.path()).unwrap();
        out.insert(rel, hex::encode(Sha256::digest(&bytes)));
    }
    out
}

/// Every stage of the command-line pipeline on a small synthetic fixture under `root`.
pub fn pipeline(root: &Path, threads: usize) -> PathBuf {
    let fx = root.join("fixture");
    small_synthetic(&fx, 60, 11);
    let out = root.join("out");
    std::fs::create_dir_all(&out).unwrap();
    let p = |name: &str| out.join(name);
    let f = |name: &str| fx.join(name);
    let t = threads.to_string();
    let common = ["--threads", t.as_str()];

    let step = |args: &[&std::ffi::OsStr]| {
        let mut all: Vec<&std::ffi::OsStr> = common.iter().map(|s| s.as_ref()).collect();
        all.extend_from_slice(args);
        ok(all)
    };
    macro_rules! s {
        ($($a:expr),* $(,)?) => { step(&[$(AsRef::<std::ffi::OsStr>::as_ref(&$a)),*]) };
    }

    s!("corpus", "ingest", "--in", f("corpus"), "--out", p("raw.jsonl"));
    s!("annotate", "--gazetteer", f("gazetteer.tsv"), "--in", p("raw.jsonl"), "--out", p("annotated.jsonl"));
    s!("corpus", "filter", "--in", p("annotated.jsonl"), "--out", p("filtered.jsonl"));
    s!("corpus", "stats", "--in", p("filtered.jsonl"), "--out", p("stats.json"));
    s!("kg", "load", "--in", f("kg.nt"), "--stats", "--out", p("kg.json"));
    s!("paths", "--kg", f("kg.nt"), "--in", p("filtered.jsonl"), "--k", "3", "--max-length", "4", "--no-timeout", "--out", p("subgraphs.jsonl"));
    s!("report", "context", "--in", p("subgraphs.jsonl"), "--out", p("context.csv"));
    for strategy in ["ruf", "sqd"] {
        s!("sample", "--strategy", strategy, "--seed", "3", "--in", p("filtered.jsonl"), "--out", p(&format!("data_{strategy}")));
    }
    s!("embed", "cache", "--vectors", f("entities.txt"), "--out", p("entities.cemb"));
    s!("embed", "stats", "--vectors", p("entities.cemb"), "--vocab", p("data_ruf/vocab.json"), "--out", p("coverage.json"));
    for strategy in ["ruf", "sqd"] {
        s!(
            "train", "--data", p(&format!("data_{strategy}")), "--vectors", f("entities.txt"),
            "--epochs", "4", "--num-filters", "8", "--hidden-dim", "8", "--max-seq-len", "40", "--batch-size", "8", "--seed", "2",
            "--out", p(&format!("model_{strategy}.ckpt"))
        );
    }
    s!("eval", "--model", p("model_ruf.ckpt"), "--test", p("data_ruf/test.jsonl"), "--out", p("eval.json"));
    let ruf_model = format!("entities:ruf:{}", p("model_ruf.ckpt").display());
    let sqd_model = format!("entities:sqd:{}", p("model_sqd.ckpt").display());
    s!("report", "matrix", "--model", ruf_model, "--model", sqd_model, "--test", p("data_ruf"), "--test", p("data_sqd"), "--out", p("matrix.csv"));
    s!("report", "distances", "--data", p("data_ruf"), "--metric", "cosine", "--vectors", f("entities.txt"), "--out", p("cosine.csv"));
    s!("report", "distances", "--data", p("data_ruf"), "--metric", "path", "--kg", f("kg.nt"), "--max-length", "4", "--no-timeout", "--split", "test", "--out", p("path.csv"));
    let seq = (0..3).map(|j| entity_iri(0, j)).collect::<Vec<_>>().join(" ");
    s!("report", "heatmap", "--model", p("model_ruf.ckpt"), "--sequence", seq, "--out", p("heatmap"));
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
