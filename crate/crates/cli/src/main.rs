//! `coherence`: the command-line front end of the dialogue coherence pipeline.

mod args;
mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use coherence_core::{Error, ErrorCategory};

use args::{Cli, Command, CorpusCommand, EmbedCommand, KgCommand, ReportCommand};
use commands::Ctx;
use config::FileConfig;
use manifest::{manifest_path, RunManifest};

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Io => 1,
        ErrorCategory::Parameter => 2,
        ErrorCategory::Parse | ErrorCategory::Validation => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let config = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(config.threads).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    let mut manifest = RunManifest::new(std::env::args().collect(), rayon::current_num_threads());
    if let Some(p) = &cli.config {
        manifest.config = Some(RunManifest::digest(p)?);
    }
    let mut ctx = Ctx { config, manifest };
    let out = match &cli.command {
        Command::Corpus(CorpusCommand::Ingest(a)) => commands::corpus_ingest(&mut ctx, a),
        Command::Corpus(CorpusCommand::Filter(a)) => commands::corpus_filter(&mut ctx, a),
        Command::Corpus(CorpusCommand::Stats(a)) => commands::corpus_stats_cmd(&mut ctx, a),
        Command::Annotate(a) => commands::annotate_cmd(&mut ctx, a),
        Command::Kg(KgCommand::Load(a)) => commands::kg_load(&mut ctx, a),
        Command::Paths(a) => commands::paths_cmd(&mut ctx, a),
        Command::Embed(EmbedCommand::Stats(a)) => commands::embed_stats(&mut ctx, a),
        Command::Embed(EmbedCommand::Cache(a)) => commands::embed_cache(&mut ctx, a),
        Command::Sample(a) => commands::sample_cmd(&mut ctx, a),
        Command::Train(a) => commands::train_cmd(&mut ctx, a),
        Command::Eval(a) => commands::eval_cmd(&mut ctx, a),
        Command::Score(a) => commands::score_cmd(&mut ctx, a),
        Command::Report(ReportCommand::Distances(a)) => commands::report_distances(&mut ctx, a),
        Command::Report(ReportCommand::Matrix(a)) => commands::report_matrix(&mut ctx, a),
        Command::Report(ReportCommand::Context(a)) => commands::report_context(&mut ctx, a),
        Command::Report(ReportCommand::Heatmap(a)) => commands::report_heatmap(&mut ctx, a),
    }?;
    if let Some(out) = out {
        ctx.manifest.write(&manifest_path(&out))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category().as_str());
            ExitCode::from(exit_code(&e))
        }
    }
}
