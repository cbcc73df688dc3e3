//! Writes a synthetic corpus, gazetteer, graph and embeddings to a directory.
//!
//! `cargo run --example make_fixture -- OUT_DIR [DIALOGUES] [SEED]`

use std::path::PathBuf;
use std::process::ExitCode;

use coherence_core::synthetic::{generate, SyntheticConfig};

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let Some(out) = args.next().map(PathBuf::from) else {
        eprintln!("usage: make_fixture OUT_DIR [DIALOGUES] [SEED]");
        return ExitCode::from(2);
    };
    let mut config = SyntheticConfig::default();
    if let Some(n) = args.next() {
        config.dialogues = n.parse().expect("DIALOGUES must be an integer");
    }
    if let Some(s) = args.next() {
        config.seed = s.parse().expect("SEED must be an integer");
    }
    match generate(&config).and_then(|c| c.write_files(&out)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
