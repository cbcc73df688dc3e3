//! One function per subcommand. Each records its inputs and outputs in the
//! run manifest and returns the output the manifest belongs next to.

use std::path::{Path, PathBuf};
use std::time::Duration;

use coherence_core::analysis::{
    accuracy_matrix, cosine_distribution, distribution_separation, export_heatmap, path_distribution,
    save_context_csv, save_distributions_csv, MatrixModel, TestSet,
};
use coherence_core::annotator::{annotate, annotate_with, build_gazetteer, RemoteAnnotator};
use coherence_core::corpus::{
    build_vocabulary, corpus_stats, filter_corpus, load_dialogues, save_jsonl, tokenize, CorpusFormat, Dialogue,
    Unit, Vocabulary, PAD_ID,
};
use coherence_core::embedding::{coverage, load_embeddings, EmbeddingMatrix};
use coherence_core::kg::{load_triples, KnowledgeGraph, TripleFormat};
use coherence_core::net::{evaluate, load_model, save_model, train, CoherenceModel};
use coherence_core::paths::{
    context_frequency, induce_dialogue_subgraph, load_subgraphs, path_length_histogram, save_subgraphs,
    DialogueSubgraph, PathQueryParams,
};
use coherence_core::sampler::{build_dataset, load_samples, Dataset, Label, LabeledSample, Split};
use coherence_core::{Error, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::config::{FileConfig, DEFAULT_MIN_NEW_ENTITIES, DEFAULT_SEED};
use crate::manifest::RunManifest;

/// Directory for binary copies of text embedding files, keyed by content hash.
pub const CACHE_ENV: &str = "COHERENCE_CACHE_DIR";

pub struct Ctx {
    pub config: FileConfig,
    pub manifest: RunManifest,
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_corpus(ctx: &mut Ctx, path: &Path) -> Result<Vec<Dialogue>> {
    ctx.manifest.input(path)?;
    load_dialogues(path, CorpusFormat::Jsonl)
}

fn load_graph(ctx: &mut Ctx, path: &Path) -> Result<KnowledgeGraph> {
    ctx.manifest.input(path)?;
    load_triples(path, TripleFormat::from_path(path))
}

fn is_cache_file(path: &Path) -> bool {
    use std::io::Read;
    let mut magic = [0u8; 4];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .is_ok()
        && &magic == b"CEMB"
}

/// Loads vectors from a text file or a binary cache, consulting [`CACHE_ENV`] for text files.
fn load_vectors(ctx: &mut Ctx, path: &Path) -> Result<EmbeddingMatrix> {
    let hash = ctx.manifest.input(path)?;
    if is_cache_file(path) {
        return EmbeddingMatrix::load_cache(path);
    }
    let Some(dir) = std::env::var_os(CACHE_ENV).map(PathBuf::from) else {
        return load_embeddings(path, None);
    };
    let cached = dir.join(format!("{hash}.cemb"));
    if cached.is_file() {
        match EmbeddingMatrix::load_cache(&cached) {
            Ok(m) => {
                info!("loaded {} from cache {}", path.display(), cached.display());
                return Ok(m);
            }
            Err(e) => warn!("ignoring unreadable cache {}: {e}", cached.display()),
        }
    }
    let m = load_embeddings(path, None)?;
    let store = || -> Result<()> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let tmp = dir.join(format!("{hash}.cemb.tmp"));
        m.save_cache(&tmp)?;
        std::fs::rename(&tmp, &cached).map_err(|e| Error::io(&cached, e))
    };
    if let Err(e) = store() {
        warn!("could not write embedding cache: {e}");
    }
    Ok(m)
}

pub fn corpus_ingest(ctx: &mut Ctx, a: &IngestArgs) -> Result<Option<PathBuf>> {
    ctx.manifest.input(&a.input)?;
    let dialogues = load_dialogues(&a.input, a.format)?;
    save_jsonl(&dialogues, &a.out)?;
    info!("wrote {} dialogues to {}", dialogues.len(), a.out.display());
    ctx.manifest.output(&a.out)?;
    Ok(Some(a.out.clone()))
}

pub fn corpus_filter(ctx: &mut Ctx, a: &FilterArgs) -> Result<Option<PathBuf>> {
    let min = a
        .min_new_entities
        .or(ctx.config.corpus.min_new_entities)
        .unwrap_or(DEFAULT_MIN_NEW_ENTITIES);
    let dialogues = load_corpus(ctx, &a.input)?;
    let kept = filter_corpus(&dialogues, min)?;
    info!("kept {} of {} dialogues", kept.len(), dialogues.len());
    save_jsonl(&kept, &a.out)?;
    ctx.manifest.parameters(json!({ "min_new_entities": min }));
    ctx.manifest.output(&a.out)?;
    Ok(Some(a.out.clone()))
}

pub fn corpus_stats_cmd(ctx: &mut Ctx, a: &StatsArgs) -> Result<Option<PathBuf>> {
    let dialogues = load_corpus(ctx, &a.input)?;
    let stats = corpus_stats(&dialogues);
    print_json(&stats);
    write_optional(ctx, a.out.as_deref(), &stats)
}

fn write_optional(ctx: &mut Ctx, out: Option<&Path>, value: &impl Serialize) -> Result<Option<PathBuf>> {
    match out {
        Some(path) => {
            write_json(path, value)?;
            ctx.manifest.output(path)?;
            Ok(Some(path.to_path_buf()))
        }
        None => Ok(None),
    }
}

pub fn annotate_cmd(ctx: &mut Ctx, a: &AnnotateArgs) -> Result<Option<PathBuf>> {
    let dialogues = load_corpus(ctx, &a.input)?;
    let annotated: Vec<Dialogue> = match (&a.gazetteer, &a.endpoint) {
        (Some(g), _) => {
            ctx.manifest.input(g)?;
            let gaz = build_gazetteer(g)?;
            dialogues.par_iter().map(|d| annotate(d, &gaz)).collect()
        }
        (None, Some(url)) => {
            let remote = RemoteAnnotator::new(url.clone(), Duration::from_millis(a.endpoint_timeout_ms));
            ctx.manifest.parameters(json!({ "endpoint": url }));
            dialogues
                .iter()
                .map(|d| annotate_with(d, &remote))
                .collect::<Result<_>>()?
        }
        (None, None) => return Err(Error::Parameter("either --gazetteer or --endpoint is required".into())),
    };
    let mentions: usize = annotated.iter().map(|d| d.entity_sequence.len()).sum();
    info!("linked {mentions} mentions in {} dialogues", annotated.len());
    save_jsonl(&annotated, &a.out)?;
    ctx.manifest.output(&a.out)?;
    Ok(Some(a.out.clone()))
}

pub fn kg_load(ctx: &mut Ctx, a: &KgLoadArgs) -> Result<Option<PathBuf>> {
    let g = load_graph(ctx, &a.input)?;
    let mut report = json!({
        "nodes": g.node_count(),
        "relations": g.relation_count(),
        "triples": g.triple_count(),
    });
    if a.stats {
        report["degree_histogram"] = json!(g.degree_stats());
    }
    print_json(&report);
    write_optional(ctx, a.out.as_deref(), &report)
}

/// Subgraphs of every sequence with at least one resolvable entity, in input order.
fn induce_all(g: &KnowledgeGraph, items: &[(String, Vec<String>)], params: &PathQueryParams) -> Result<Vec<DialogueSubgraph>> {
    let results: Vec<Option<DialogueSubgraph>> = items
        .par_iter()
        .map(|(id, seq)| {
            if seq.is_empty() {
                warn!("`{id}` has no entities, skipped");
                return Ok(None);
            }
            match induce_dialogue_subgraph(g, seq, params) {
                Ok(mut s) => {
                    s.dialogue_id = id.clone();
                    Ok(Some(s))
                }
                Err(Error::Validation(msg)) => {
                    warn!("`{id}`: {msg}, skipped");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

pub fn paths_cmd(ctx: &mut Ctx, a: &PathsArgs) -> Result<Option<PathBuf>> {
    let params = ctx.config.path_params(&a.query)?;
    let g = load_graph(ctx, &a.kg)?;
    let dialogues = load_corpus(ctx, &a.input)?;
    let items: Vec<(String, Vec<String>)> = dialogues.iter().map(|d| (d.id.clone(), d.entity_sequence.clone())).collect();
    let subs = induce_all(&g, &items, &params)?;
    let timed_out = subs.iter().flat_map(|s| &s.pairs).filter(|p| p.timed_out).count();
    if timed_out > 0 {
        warn!("{timed_out} path queries hit the timeout; their results are partial");
    }
    let h = path_length_histogram(&subs);
    info!("{} pairs, {} unreachable", h.total(), h.unreachable);
    save_subgraphs(&subs, &a.out)?;
    ctx.manifest.parameters(&params);
    ctx.manifest.output(&a.out)?;
    Ok(Some(a.out.clone()))
}

pub fn embed_stats(ctx: &mut Ctx, a: &EmbedStatsArgs) -> Result<Option<PathBuf>> {
    let m = load_vectors(ctx, &a.vectors)?;
    ctx.manifest.input(&a.vocab)?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let tokens: Vec<&str> = vocab.tokens_by_id().into_iter().skip(1).collect();
    let c = coverage(&m, &tokens)?;
    let report = json!({
        "dim": m.dim(),
        "vectors": m.len(),
        "vocabulary": c.total,
        "covered": c.covered,
        "coverage": c.fraction,
        "missing_sample": c.missing.iter().take(a.show_missing).collect::<Vec<_>>(),
    });
    print_json(&report);
    write_optional(ctx, a.out.as_deref(), &report)
}

pub fn embed_cache(ctx: &mut Ctx, a: &EmbedCacheArgs) -> Result<Option<PathBuf>> {
    ctx.manifest.input(&a.vectors)?;
    let m = load_embeddings(&a.vectors, a.dim)?;
    m.save_cache(&a.out)?;
    info!("cached {} vectors of dimension {}", m.len(), m.dim());
    ctx.manifest.output(&a.out)?;
    Ok(Some(a.out.clone()))
}

pub fn sample_cmd(ctx: &mut Ctx, a: &SampleArgs) -> Result<Option<PathBuf>> {
    let strategy = ctx.config.strategy(a.strategy)?;
    let unit = ctx.config.unit(a.unit)?;
    let seed = a.seed.or(ctx.config.sample.seed).unwrap_or(DEFAULT_SEED);
    let split = ctx.config.split(a.split.as_deref())?;
    let dialogues = load_corpus(ctx, &a.input)?;
    let vocab = build_vocabulary(&dialogues, unit);
    let ds = build_dataset(&dialogues, &vocab, strategy, unit, seed, split)?;
    ds.save(&a.out)?;
    info!(
        "{strategy} {unit}: {} train, {} validation, {} test samples",
        ds.train.len(),
        ds.validation.len(),
        ds.test.len()
    );
    ctx.manifest.seeds.insert("sample".into(), seed);
    ctx.manifest.parameters(&ds.info);
    for s in Split::ALL {
        ctx.manifest.output(&a.out.join(s.file_name()))?;
    }
    ctx.manifest.output(&a.out.join("vocab.json"))?;
    ctx.manifest.output(&a.out.join("dataset.json"))?;
    Ok(Some(a.out.clone()))
}

pub fn train_cmd(ctx: &mut Ctx, a: &TrainArgs) -> Result<Option<PathBuf>> {
    ctx.manifest.input(&a.data)?;
    let ds = Dataset::load(&a.data)?;
    let vectors = load_vectors(ctx, &a.vectors)?;
    let tokens: Vec<&str> = ds.vocabulary.tokens_by_id().into_iter().skip(1).collect();
    let cov = coverage(&vectors, &tokens)?;
    if cov.covered < cov.total {
        warn!(
            "{} of {} vocabulary tokens have no vector and use the zero vector",
            cov.total - cov.covered,
            cov.total
        );
    }
    let config = ctx.config.model(ds.info.unit, vectors.dim(), &a.model)?;
    let mut model = CoherenceModel::new(config.clone(), vectors.aligned(&ds.vocabulary))?;
    let report = train(&mut model, &ds.train, &ds.validation)?;
    save_model(&model, &a.out)?;
    print_json(&report);
    ctx.manifest.seeds.insert("model".into(), config.seed);
    ctx.manifest.seeds.insert("dataset".into(), ds.info.seed);
    ctx.manifest.parameters(json!({ "model": config, "report": report }));
    ctx.manifest.output(&a.out)?;
    Ok(Some(a.out.clone()))
}

pub fn eval_cmd(ctx: &mut Ctx, a: &EvalArgs) -> Result<Option<PathBuf>> {
    ctx.manifest.input(&a.model)?;
    let model = load_model(&a.model)?;
    ctx.manifest.input(&a.test)?;
    let samples = load_samples(&a.test)?;
    let e = evaluate(&model, &samples)?;
    print_json(&e);
    write_optional(ctx, a.out.as_deref(), &e)
}

/// Maps text to model row ids; unknown tokens take the zero vector.
fn encode_text(model: &CoherenceModel, text: &str) -> Vec<u32> {
    let tokens: Vec<String> = match model.config.unit {
        Unit::Words => tokenize(text),
        Unit::Entities => text.split_whitespace().map(str::to_owned).collect(),
    };
    tokens
        .iter()
        .map(|t| match model.embeddings.row_of(t) {
            Some(r) => r as u32,
            None => {
                warn!("`{t}` is not in the model vocabulary; using the zero vector");
                PAD_ID
            }
        })
        .collect()
}

pub fn score_cmd(ctx: &mut Ctx, a: &ScoreArgs) -> Result<Option<PathBuf>> {
    ctx.manifest.input(&a.model)?;
    let model = load_model(&a.model)?;
    let ids = encode_text(&model, &a.sequence);
    println!("{}", model.score(&ids)?);
    Ok(None)
}

fn select_samples<'a>(ds: &'a Dataset, split: Option<&str>) -> Result<Vec<&'a LabeledSample>> {
    Ok(match split {
        None => ds.train.iter().chain(&ds.validation).chain(&ds.test).collect(),
        Some(name) => {
            let s = match name {
                "train" => Split::Train,
                "valid" | "validation" => Split::Valid,
                "test" => Split::Test,
                other => return Err(Error::Parameter(format!("unknown split `{other}`"))),
            };
            ds.split(s).iter().collect()
        }
    })
}

pub fn report_distances(ctx: &mut Ctx, a: &DistancesArgs) -> Result<Option<PathBuf>> {
    ctx.manifest.input(&a.data)?;
    let ds = Dataset::load(&a.data)?;
    let samples = select_samples(&ds, a.split.as_deref())?;
    let decode = |label: Label| -> Vec<(String, Vec<String>)> {
        samples
            .iter()
            .filter(|s| s.label == label)
            .enumerate()
            .map(|(i, s)| {
                let seq = ds.vocabulary.decode(&s.sequence).into_iter().map(str::to_owned).collect();
                (format!("{}#{i}", s.provenance.join("+")), seq)
            })
            .collect()
    };
    let groups = [
        ("positive".to_string(), decode(Label::Coherent)),
        (ds.info.strategy.to_string(), decode(Label::Adversarial)),
    ];
    let dists = match a.metric {
        MetricArg::Cosine => {
            let vectors = load_vectors(ctx, a.vectors.as_deref().expect("clap requires --vectors"))?;
            groups
                .iter()
                .map(|(label, items)| {
                    let seqs: Vec<Vec<String>> = items.iter().map(|(_, s)| s.clone()).collect();
                    cosine_distribution(label, &seqs, &vectors, a.pairing, a.bin_width)
                })
                .collect::<Result<Vec<_>>>()?
        }
        MetricArg::Path => {
            if ds.info.unit != Unit::Entities {
                return Err(Error::Parameter("the path metric needs an entity dataset".into()));
            }
            let params = ctx.config.path_params(&a.query)?;
            let g = load_graph(ctx, a.kg.as_deref().expect("clap requires --kg"))?;
            ctx.manifest.parameters(&params);
            groups
                .iter()
                .map(|(label, items)| {
                    let subs = induce_all(&g, items, &params)?;
                    path_distribution(label, &subs, a.pairing, params.max_length)
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    save_distributions_csv(&dists, &a.out)?;
    print_json(&distribution_separation(&dists[0], &dists[1])?);
    ctx.manifest.output(&a.out)?;
    Ok(Some(a.out.clone()))
}

pub fn report_matrix(ctx: &mut Ctx, a: &MatrixArgs) -> Result<Option<PathBuf>> {
    let mut models = Vec::new();
    for spec in &a.models {
        let parts: Vec<&str> = spec.splitn(3, ':').collect();
        let [embedding, strategy, path] = parts[..] else {
            return Err(Error::Parameter(format!(
                "--model `{spec}` must look like embedding:strategy:checkpoint"
            )));
        };
        let path = Path::new(path);
        ctx.manifest.input(path)?;
        models.push((embedding.to_owned(), strategy.parse()?, load_model(path)?));
    }
    let mut datasets = Vec::new();
    for dir in &a.tests {
        ctx.manifest.input(dir)?;
        datasets.push(Dataset::load(dir)?);
    }
    let test_sets: Vec<TestSet> = datasets
        .iter()
        .map(|d| TestSet {
            strategy: d.info.strategy,
            unit: d.info.unit,
            samples: &d.test,
        })
        .collect();
    let entries: Vec<MatrixModel> = models
        .iter()
        .map(|(embedding, strategy, model)| MatrixModel {
            embedding: embedding.clone(),
            train_strategy: *strategy,
            model,
        })
        .collect();
    let m = accuracy_matrix(&entries, &test_sets)?;
    m.validate()?;
    m.save_csv(&a.out)?;
    print_json(&m);
    ctx.manifest.output(&a.out)?;
    Ok(Some(a.out.clone()))
}

pub fn report_context(ctx: &mut Ctx, a: &ContextArgs) -> Result<Option<PathBuf>> {
    ctx.manifest.input(&a.input)?;
    let subs = load_subgraphs(&a.input)?;
    let report = context_frequency(&subs, a.top);
    save_context_csv(&report, &a.out)?;
    ctx.manifest.parameters(json!({ "top": a.top }));
    ctx.manifest.output(&a.out)?;
    Ok(Some(a.out.clone()))
}

pub fn report_heatmap(ctx: &mut Ctx, a: &HeatmapArgs) -> Result<Option<PathBuf>> {
    ctx.manifest.input(&a.model)?;
    let model = load_model(&a.model)?;
    let ids = encode_text(&model, &a.sequence);
    let paths = export_heatmap(&model, &ids, &a.out)?;
    for p in &paths {
        ctx.manifest.output(p)?;
    }
    ctx.manifest.parameters(json!({ "sequence": a.sequence }));
    Ok(Some(a.out.clone()))
}
