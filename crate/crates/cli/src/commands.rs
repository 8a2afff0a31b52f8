use std::fmt::Write as _;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use rpr::corpus::{
    build_polarity_documents, build_vocabulary, generate_synthetic, ingest_records, load_embeddings,
    random_embeddings, split_dataset, to_json_lines, tokenize, FieldSchema, Partition, SyntheticConfig,
    POLARITY_THRESHOLD,
};
use rpr::eval::{evaluate, explain_rating, top_aspect_words, MetricsReport};
use rpr::model::{certify_default, Polarity, Predictor, Variant};
use rpr::train::{assemble, grid_search, train, GridSpec, TrainConfig, TrainData};

use crate::artifacts::*;
use crate::{Diverged, Usage};

/// Flags shared by the training-shaped commands.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub clip_predictions: bool,
    pub freeze_embeddings: bool,
    pub epoch_schedule: bool,
}

pub fn resolve_config(path: Option<&Path>, o: &Overrides) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::from_toml(&read_text(p)?).with_context(|| format!("in {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(v) = o.variant {
        cfg.variant = v;
    }
    cfg.clip_predictions |= o.clip_predictions;
    cfg.freeze_embeddings |= o.freeze_embeddings;
    cfg.epoch_schedule |= o.epoch_schedule;
    cfg.validate()?;
    Ok(cfg)
}

fn config_input(manifest: &mut RunManifest, path: Option<&Path>) -> Result<()> {
    if let Some(p) = path {
        manifest.input_file(p)?;
    }
    Ok(())
}

fn cache_inputs(manifest: &mut RunManifest, cache: &Cache) -> Result<()> {
    for (name, digest) in cache.digests()? {
        manifest.inputs.insert(cache.dir.join(name).display().to_string(), digest);
    }
    Ok(())
}

pub fn training_data(cache: &Cache, cfg: &TrainConfig) -> Result<TrainData> {
    if cache.embeddings.dim() != cfg.embedding_dim {
        anyhow::bail!(rpr::Error::Config(format!(
            "config embedding_dim {} but the cache holds {}-dimensional vectors",
            cfg.embedding_dim,
            cache.embeddings.dim()
        )));
    }
    Ok(assemble(
        &cache.records,
        &cache.split,
        &cache.vocab,
        cache.embeddings.clone(),
        cfg.variant.merged_documents(),
        cfg.max_len,
    )?)
}

pub struct SynthArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn synth(args: &SynthArgs, argv: &[String]) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => toml::from_str::<SyntheticConfig>(&read_text(p)?)
            .map_err(|e| rpr::Error::Config(e.message().to_owned()))
            .with_context(|| format!("in {}", p.display()))?,
        None => SyntheticConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let (records, truth) = generate_synthetic(&cfg)?;
    let mut m = RunManifest::new("synth", argv, toml::to_string(&cfg)?);
    config_input(&mut m, args.config.as_deref())?;
    m.seeds.insert("seed".into(), cfg.seed);
    m.output(&args.out, RECORDS_FILE, to_json_lines(&records, &FieldSchema::default()).as_bytes())?;
    m.output(&args.out, "truth.json", serde_json::to_string_pretty(&truth)?.as_bytes())?;
    m.finish(&args.out)?;
    println!("wrote {} records for {} users and {} items to {}", records.len(), cfg.n_users, cfg.n_items, args.out.display());
    Ok(())
}

pub struct PrepareArgs {
    pub data: PathBuf,
    pub schema: FieldSchema,
    pub embeddings: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn prepare(args: &PrepareArgs, argv: &[String]) -> Result<()> {
    let cfg = resolve_config(args.config.as_deref(), &Overrides { seed: args.seed, ..Default::default() })?;
    let file = std::fs::File::open(&args.data).with_context(|| format!("cannot read {}", args.data.display()))?;
    let (records, summary) = ingest_records(BufReader::new(file), &args.schema)
        .with_context(|| format!("cannot parse {}", args.data.display()))?;
    let split = split_dataset(&records, cfg.seed, 0.8, 0.1)?;
    let train_records = split.records(&records, Partition::Train);
    let tokens: Vec<Vec<String>> = train_records.iter().map(|r| tokenize(&r.review)).collect();
    let vocab = build_vocabulary(tokens.iter().map(|t| t.as_slice()), cfg.min_count);
    let embeddings = match &args.embeddings {
        Some(p) => {
            let f = std::fs::File::open(p).with_context(|| format!("cannot read {}", p.display()))?;
            load_embeddings(BufReader::new(f), &vocab, cfg.embedding_dim, cfg.seed)
                .with_context(|| format!("cannot parse {}", p.display()))?
        }
        None => random_embeddings(&vocab, cfg.embedding_dim, cfg.seed),
    };
    let docs = build_polarity_documents(&train_records, &vocab, POLARITY_THRESHOLD, cfg.max_len);

    let mut m = RunManifest::new("prepare", argv, cfg.to_toml());
    m.input_file(&args.data)?;
    config_input(&mut m, args.config.as_deref())?;
    if let Some(p) = &args.embeddings {
        m.input_file(p)?;
    }
    m.seeds.insert("split".into(), cfg.seed);
    m.seeds.insert("embeddings".into(), cfg.seed);
    let out = &args.out;
    m.output(out, RECORDS_FILE, to_json_lines(&records, &FieldSchema::default()).as_bytes())?;
    m.output(out, SPLIT_FILE, serde_json::to_string(&split)?.as_bytes())?;
    m.output(out, VOCAB_FILE, vocab.to_tsv().as_bytes())?;
    m.output(out, DOCUMENTS_FILE, &docs.to_bytes())?;
    m.output(out, EMBEDDINGS_FILE, &encode_embeddings(&embeddings))?;
    m.finish(out)?;
    println!(
        "kept {} records (dropped {} empty, {} out of range); train {} / validation {} / test {}; vocabulary {}; embedding coverage {:.3}",
        summary.kept,
        summary.dropped_empty,
        summary.dropped_range,
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        vocab.len(),
        embeddings.coverage(&vocab)
    );
    Ok(())
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub data: PathBuf,
    pub out: PathBuf,
}

pub fn train_cmd(args: &TrainArgs, argv: &[String]) -> Result<()> {
    let cfg = resolve_config(args.config.as_deref(), &args.overrides)?;
    let cache = Cache::load(&args.data)?;
    let data = training_data(&cache, &cfg)?;
    let outcome = train(&data, &cfg)?;

    let mut m = RunManifest::new("train", argv, cfg.to_toml());
    config_input(&mut m, args.config.as_deref())?;
    cache_inputs(&mut m, &cache)?;
    m.seeds.insert("seed".into(), cfg.seed);
    let out = &args.out;
    m.output(out, CHECKPOINT_FILE, &rpr::checkpoint::encode_checkpoint(&outcome.params, cache.vocab.stable_hash()))?;
    m.output(out, CONFIG_FILE, cfg.to_toml().as_bytes())?;
    m.output(out, HISTORY_FILE, outcome.history.to_csv().as_bytes())?;
    // wall-clock times differ between identical runs; keep them out of the digests
    write_atomic(&out.join(TIMING_FILE), outcome.history.timing_csv().as_bytes())?;
    m.finish(out)?;

    let best = outcome.history.best_epoch.map(|e| &outcome.history.epochs[e]);
    match best {
        Some(b) => println!(
            "{} epochs; best epoch {} with validation mse {} mae {}",
            outcome.history.epochs.len(),
            b.epoch,
            b.val_mse,
            b.val_mae
        ),
        None => println!("no epoch completed"),
    }
    if let Some(d) = outcome.divergence {
        return Err(anyhow::Error::new(Diverged(format!(
            "training diverged at epoch {} batch {}; best parameters so far saved to {}",
            d.epoch,
            d.batch,
            out.join(CHECKPOINT_FILE).display()
        ))));
    }
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub data: PathBuf,
    pub out: Option<PathBuf>,
}

/// The config a checkpoint was trained with: `--config`, else the
/// `config.toml` stored beside it, else the defaults.
fn checkpoint_config(args: &EvalArgs) -> Result<(TrainConfig, Option<PathBuf>)> {
    let path = args.config.clone().or_else(|| {
        let beside = args.checkpoint.parent().map(|d| d.join(CONFIG_FILE))?;
        beside.is_file().then_some(beside)
    });
    Ok((resolve_config(path.as_deref(), &args.overrides)?, path))
}

fn load_for_eval(args: &EvalArgs) -> Result<(TrainConfig, Option<PathBuf>, Cache, rpr::model::ModelParams)> {
    if !args.checkpoint.is_file() {
        return Err(anyhow::Error::new(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("checkpoint {} not found", args.checkpoint.display()),
        )));
    }
    let (cfg, cfg_path) = checkpoint_config(args)?;
    let cache = Cache::load(&args.data)?;
    let params = load_checkpoint(&args.checkpoint, Some(cache.vocab.stable_hash()))?;
    Ok((cfg, cfg_path, cache, params))
}

pub fn evaluate_cmd(args: &EvalArgs, argv: &[String]) -> Result<()> {
    let (cfg, cfg_path, cache, params) = load_for_eval(args)?;
    let data = training_data(&cache, &cfg)?;
    let predictor = Predictor::new(&params, cfg.variant)?;
    let mut csv = format!("partition,{}\n", MetricsReport::csv_header());
    for (name, examples) in [("validation", &data.validation), ("test", &data.test)] {
        if examples.is_empty() {
            continue;
        }
        let m = evaluate(&predictor, &data.documents, examples, cfg.clip_predictions)?;
        let _ = writeln!(csv, "{name},{}", m.csv_row());
    }
    print!("{csv}");
    if let Some(out) = &args.out {
        let mut m = RunManifest::new("evaluate", argv, cfg.to_toml());
        m.input_file(&args.checkpoint)?;
        config_input(&mut m, cfg_path.as_deref())?;
        cache_inputs(&mut m, &cache)?;
        m.output(out, "metrics.csv", csv.as_bytes())?;
        m.finish(out)?;
    }
    Ok(())
}

pub struct ExplainArgs {
    pub eval: EvalArgs,
    pub user: String,
    pub item: String,
    pub top_words: usize,
}

pub fn explain(args: &ExplainArgs, argv: &[String]) -> Result<()> {
    let (cfg, cfg_path, cache, params) = load_for_eval(&args.eval)?;
    let data = training_data(&cache, &cfg)?;
    let predictor = Predictor::new(&params, cfg.variant)?;
    let report = explain_rating(&predictor, &data.entities, &data.documents, &args.user, &args.item)?;
    let mut text = report.render();
    if args.top_words > 0 {
        let u = data.entities.user(&args.user)?;
        for side in [Polarity::Preferred, Polarity::Rejected] {
            let doc = side.document(&data.documents[u]);
            let label = match side {
                Polarity::Preferred => "preferred",
                Polarity::Rejected => "rejected",
            };
            let _ = writeln!(text, "[{label} words]");
            for (a, words) in top_aspect_words(&params, doc, side, args.top_words)?.iter().enumerate() {
                let list: Vec<&str> = words.iter().filter_map(|(id, _)| cache.vocab.token(*id)).collect();
                let _ = writeln!(text, "{a}\t{}", list.join(" "));
            }
        }
    }
    print!("{text}");
    if let Some(out) = &args.eval.out {
        let mut m = RunManifest::new("explain", argv, cfg.to_toml());
        m.input_file(&args.eval.checkpoint)?;
        config_input(&mut m, cfg_path.as_deref())?;
        cache_inputs(&mut m, &cache)?;
        m.output(out, "explanation.txt", text.as_bytes())?;
        m.finish(out)?;
    }
    Ok(())
}

pub struct GridArgs {
    pub config: Option<PathBuf>,
    pub overrides: Overrides,
    pub data: PathBuf,
    pub out: PathBuf,
}

/// One row per variant, base first.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub test: MetricsReport,
    pub val_mse: f64,
    pub diverged: bool,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,test_mse,test_mae,val_mse,diverged\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.variant, r.test.mse, r.test.mae, r.val_mse, r.diverged);
    }
    s
}

pub fn run_ablation(cache: &Cache, cfg: &TrainConfig) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let vcfg = TrainConfig { variant, ..cfg.clone() };
        let data = training_data(cache, &vcfg)?;
        let outcome = train(&data, &vcfg)?;
        let predictor = Predictor::new(&outcome.params, variant)?;
        let test = evaluate(&predictor, &data.documents, &data.test, vcfg.clip_predictions)?;
        let val_mse = outcome.history.best_epoch.map_or(f64::INFINITY, |e| outcome.history.epochs[e].val_mse);
        rows.push(AblationRow { variant, test, val_mse, diverged: outcome.divergence.is_some() });
    }
    Ok(rows)
}

pub fn ablate(args: &GridArgs, argv: &[String]) -> Result<()> {
    let cfg = resolve_config(args.config.as_deref(), &args.overrides)?;
    let cache = Cache::load(&args.data)?;
    let rows = run_ablation(&cache, &cfg)?;
    let csv = ablation_csv(&rows);
    print!("{csv}");
    let mut m = RunManifest::new("ablate", argv, cfg.to_toml());
    config_input(&mut m, args.config.as_deref())?;
    cache_inputs(&mut m, &cache)?;
    m.seeds.insert("seed".into(), cfg.seed);
    m.output(&args.out, "ablation.csv", csv.as_bytes())?;
    m.finish(&args.out)
}

pub fn sweep(args: &GridArgs, grid_path: Option<&Path>, argv: &[String]) -> Result<()> {
    let cfg = resolve_config(args.config.as_deref(), &args.overrides)?;
    let grid = match grid_path {
        Some(p) => toml::from_str::<GridSpec>(&read_text(p)?)
            .map_err(|e| rpr::Error::Config(e.message().to_owned()))
            .with_context(|| format!("in {}", p.display()))?,
        None => GridSpec::reference(),
    };
    let cache = Cache::load(&args.data)?;
    let data = training_data(&cache, &cfg)?;
    let report = grid_search(&data, &cfg, &grid)?;
    let csv = report.to_csv();
    print!("{csv}");
    println!("best cell {}", report.best);
    let mut m = RunManifest::new("sweep", argv, cfg.to_toml());
    config_input(&mut m, args.config.as_deref())?;
    if let Some(p) = grid_path {
        m.input_file(p)?;
    }
    cache_inputs(&mut m, &cache)?;
    for c in &report.cells {
        m.seeds.insert(format!("cell{}", c.index), c.seed);
    }
    let out = &args.out;
    m.output(out, "sweep.csv", csv.as_bytes())?;
    m.output(out, CONFIG_FILE, report.best_config.to_toml().as_bytes())?;
    m.output(out, CHECKPOINT_FILE, &rpr::checkpoint::encode_checkpoint(&report.best_params, cache.vocab.stable_hash()))?;
    m.finish(out)
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Returns the worst relative error over the selected variants.
pub fn gradcheck(seed: u64, variant: Option<Variant>) -> Result<f64> {
    let variants: Vec<Variant> = variant.map_or(Variant::ALL.to_vec(), |v| vec![v]);
    let mut worst: f64 = 0.0;
    for v in variants {
        let report = certify_default(seed, v)?;
        println!("{v}\t{:.3e}", report.max);
        worst = worst.max(report.max);
    }
    println!("max relative error: {worst:.3e}");
    if worst >= GRADCHECK_TOLERANCE {
        return Err(anyhow::Error::new(Diverged(format!(
            "gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        ))));
    }
    Ok(worst)
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}
