//! `bela`: build, train, link, evaluate, sweep, and generate synthetic data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use bela::data::{read_catalog, read_corpus, write_catalog, write_corpus};
use bela::encoder::EncoderConfig;
use bela::error::{BelaError, Result};
use bela::eval::{ed_accuracy, evaluate, render_report, underlabeling_report};
use bela::index::{build_approximate, build_exact, BuildParams, EntityIndex};
use bela::manifest::RunManifest;
use bela::model::{ModelParams, Stage};
use bela::pipeline::{
    link_corpus, read_predictions, sweep_gamma, write_predictions, write_sweep_csv, LinkerConfig,
};
use bela::train::{self, synth, TrainConfig};

#[derive(Parser)]
#[command(name = "bela", version, about = "End-to-end entity linking at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Exact,
    Hnsw,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic catalog plus 80/10/10 train/dev/test corpus files.
    GenSynth {
        /// Number of catalog entities (>= 2).
        #[arg(long)]
        entities: usize,
        /// Number of passages before splitting.
        #[arg(long)]
        passages: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for catalog.jsonl, train.jsonl, dev.jsonl, test.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite files in a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Encode a catalog with a model's entity encoder and save the index.
    BuildIndex {
        /// Entity catalog (JSONL, one entity per line).
        #[arg(long)]
        catalog: PathBuf,
        /// Model file providing the entity encoder.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Output index file.
        #[arg(long)]
        out: PathBuf,
        /// Store vectors as int8 with per-vector scales.
        #[arg(long)]
        quantize: bool,
        /// HNSW max neighbors per node.
        #[arg(long, default_value_t = BuildParams::default().m)]
        m: usize,
        #[arg(long, default_value_t = BuildParams::default().ef_construction)]
        ef_construction: usize,
        #[arg(long, default_value_t = BuildParams::default().ef_search)]
        ef_search: usize,
        /// Seed for HNSW level assignment.
        #[arg(long, default_value_t = BuildParams::default().seed)]
        index_seed: u64,
    },
    /// Train one stage (ed_inbatch, ed_hard, or end_to_end).
    Train {
        /// Stage name: ed_inbatch | ed_hard | end_to_end.
        #[arg(long)]
        stage: String,
        /// Training corpus (JSONL passages with gold mentions).
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        /// Optional key=value config file; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output model file; a CSV loss report lands next to it.
        #[arg(long)]
        out: PathBuf,
        /// Initial model file; omitted means a fresh seeded model.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Skip the stage-order check.
        #[arg(long)]
        from_scratch: bool,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Hard negatives mined per gold mention.
        #[arg(long)]
        hard_negatives: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Encoder dimension for a fresh model (ignored with --init).
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Link a corpus: detect, disambiguate, reject, and write predictions.
    Link {
        /// Input corpus (JSONL passages; gold mentions ignored).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Mention-detection threshold.
        #[arg(long, default_value_t = LinkerConfig::default().beta)]
        beta: f64,
        /// Rejection threshold.
        #[arg(long, default_value_t = LinkerConfig::default().gamma)]
        gamma: f64,
        /// Output predictions file (JSONL).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = LinkerConfig::default().max_seq_len)]
        max_seq_len: usize,
        #[arg(long, default_value_t = LinkerConfig::default().window_overlap)]
        window_overlap: usize,
        #[arg(long, default_value_t = LinkerConfig::default().max_mention_len)]
        max_mention_len: usize,
        /// Candidates retrieved per mention.
        #[arg(long, default_value_t = LinkerConfig::default().k)]
        k: usize,
    },
    /// Evaluate predictions against gold with hard-match metrics.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Also report ED accuracy under oracle mention detection.
        #[arg(long, requires = "model", requires = "index")]
        ed_only: bool,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        /// List unmatched predictions (possible gold under-labeling).
        #[arg(long)]
        audit: bool,
        /// Optional JSON report output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the rejection threshold over a grid and report the best F1.
    Sweep {
        /// Dev corpus with gold mentions.
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        index: PathBuf,
        /// Grid as start:end:step, for example 0:1:0.05.
        #[arg(long)]
        grid: String,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = LinkerConfig::default().beta)]
        beta: f64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("bela: {e}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynth { entities, passages, seed, out, force } => {
            cmd_gen_synth(entities, passages, seed, &out, force)
        }
        Command::BuildIndex {
            catalog,
            model,
            kind,
            out,
            quantize,
            m,
            ef_construction,
            ef_search,
            index_seed,
        } => cmd_build_index(
            &catalog,
            &model,
            kind,
            &out,
            quantize,
            BuildParams { m, ef_construction, ef_search, seed: index_seed },
        ),
        Command::Train {
            stage,
            corpus,
            catalog,
            config,
            out,
            init,
            from_scratch,
            learning_rate,
            batch_size,
            epochs,
            hard_negatives,
            seed,
            dim,
        } => {
            let overrides = TrainOverrides {
                learning_rate,
                batch_size,
                epochs,
                hard_negatives,
                seed,
                dim,
            };
            cmd_train(
                &stage,
                &corpus,
                &catalog,
                config.as_deref(),
                &out,
                init.as_deref(),
                from_scratch,
                overrides,
            )
        }
        Command::Link {
            input,
            model,
            index,
            beta,
            gamma,
            out,
            threads,
            max_seq_len,
            window_overlap,
            max_mention_len,
            k,
        } => {
            let config = LinkerConfig {
                beta,
                gamma,
                max_seq_len,
                window_overlap,
                max_mention_len,
                k,
            };
            cmd_link(&input, &model, &index, &config, &out, threads)
        }
        Command::Eval { pred, gold, ed_only, model, index, audit, out } => cmd_eval(
            &pred,
            &gold,
            ed_only,
            model.as_deref(),
            index.as_deref(),
            audit,
            out.as_deref(),
        ),
        Command::Sweep { dev, model, index, grid, out, beta, threads } => {
            cmd_sweep(&dev, &model, &index, &grid, &out, beta, threads)
        }
    }
}

fn cmd_gen_synth(entities: usize, passages: usize, seed: u64, out: &Path, force: bool) -> Result<()> {
    let started = Instant::now();
    if out.exists() {
        let non_empty = std::fs::read_dir(out)
            .map_err(|e| BelaError::io(out.display().to_string(), e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(BelaError::Invalid(format!(
                "output directory {} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
    } else {
        std::fs::create_dir_all(out).map_err(|e| BelaError::io(out.display().to_string(), e))?;
    }
    let (catalog, corpus) = synth::generate_synthetic_corpus(entities, passages, seed)?;
    let (train_split, dev_split, test_split) = synth::split_corpus(corpus, seed);

    let mut manifest = RunManifest::new("gen-synth");
    manifest.set_config("entities", entities);
    manifest.set_config("passages", passages);
    manifest.seed = Some(seed);
    for (name, writer) in [
        ("catalog.jsonl", Box::new(|p: &Path| write_catalog(p, &catalog)) as Box<dyn Fn(&Path) -> Result<()>>),
        ("train.jsonl", Box::new(|p: &Path| write_corpus(p, &train_split))),
        ("dev.jsonl", Box::new(|p: &Path| write_corpus(p, &dev_split))),
        ("test.jsonl", Box::new(|p: &Path| write_corpus(p, &test_split))),
    ] {
        let path = out.join(name);
        writer(&path)?;
        manifest.add_output(&path)?;
    }
    manifest.duration_secs = started.elapsed().as_secs_f64();
    manifest.save(&out.join("manifest.json"))?;
    println!(
        "wrote {} entities and {} passages ({} train / {} dev / {} test) to {}",
        entities,
        passages,
        train_split.len(),
        dev_split.len(),
        test_split.len(),
        out.display()
    );
    Ok(())
}

fn cmd_build_index(
    catalog_path: &Path,
    model_path: &Path,
    kind: KindArg,
    out: &Path,
    quantize: bool,
    build_params: BuildParams,
) -> Result<()> {
    let started = Instant::now();
    let catalog = read_catalog(catalog_path)?;
    let model = ModelParams::load(model_path)?;
    let mut index = match kind {
        KindArg::Exact => build_exact(&catalog, &model.enc_entity)?,
        KindArg::Hnsw => build_approximate(&catalog, &model.enc_entity, build_params)?,
    };
    if quantize {
        index = index.quantized();
    }
    index.save(out)?;

    let mut manifest = RunManifest::new("build-index");
    manifest.set_config("kind", format!("{kind:?}").to_lowercase());
    manifest.set_config("quantize", quantize);
    if matches!(kind, KindArg::Hnsw) {
        manifest.set_config("m", build_params.m);
        manifest.set_config("ef_construction", build_params.ef_construction);
        manifest.set_config("ef_search", build_params.ef_search);
        manifest.seed = Some(build_params.seed);
    }
    manifest.add_input(catalog_path)?;
    manifest.add_input(model_path)?;
    manifest.add_output(out)?;
    manifest.duration_secs = started.elapsed().as_secs_f64();
    manifest.save(&RunManifest::path_for(out))?;
    println!("indexed {} entities ({:?}) into {}", index.len(), kind, out.display());
    Ok(())
}

struct TrainOverrides {
    learning_rate: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    hard_negatives: Option<usize>,
    seed: Option<u64>,
    dim: Option<usize>,
}

/// key=value lines; '#' starts a comment, blank lines ignored.
fn read_kv_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            BelaError::format(
                path.display().to_string(),
                format!("line {}: expected key=value, got '{line}'", lineno + 1),
            )
        })?;
        out.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(out)
}

fn parse_kv<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match kv.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse()
            .map(Some)
            .map_err(|_| BelaError::Invalid(format!("config key {key}: cannot parse '{raw}'"))),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    stage: &str,
    corpus_path: &Path,
    catalog_path: &Path,
    config_path: Option<&Path>,
    out: &Path,
    init_path: Option<&Path>,
    from_scratch: bool,
    overrides: TrainOverrides,
) -> Result<()> {
    let started = Instant::now();
    let stage = Stage::parse(stage)?;
    let kv = match config_path {
        Some(p) => read_kv_config(p)?,
        None => BTreeMap::new(),
    };
    const KNOWN: &[&str] = &[
        "learning_rate",
        "batch_size",
        "epochs",
        "hard_negatives_per_positive",
        "seed",
        "dim",
    ];
    if let Some(bad) = kv.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(BelaError::Invalid(format!("unknown config key '{bad}'")));
    }

    let defaults = TrainConfig::default();
    let config = TrainConfig {
        stage,
        learning_rate: overrides
            .learning_rate
            .or(parse_kv(&kv, "learning_rate")?)
            .unwrap_or(defaults.learning_rate),
        batch_size: overrides
            .batch_size
            .or(parse_kv(&kv, "batch_size")?)
            .unwrap_or(defaults.batch_size),
        epochs: overrides.epochs.or(parse_kv(&kv, "epochs")?).unwrap_or(defaults.epochs),
        hard_negatives_per_positive: overrides
            .hard_negatives
            .or(parse_kv(&kv, "hard_negatives_per_positive")?)
            .unwrap_or(defaults.hard_negatives_per_positive),
        seed: overrides.seed.or(parse_kv(&kv, "seed")?).unwrap_or(defaults.seed),
        from_scratch,
    };
    let dim = overrides.dim.or(parse_kv(&kv, "dim")?).unwrap_or(64);

    if from_scratch && stage != Stage::EdInBatch {
        eprintln!("bela: warning: training {stage} from scratch, skipping earlier stages");
    }
    let corpus = read_corpus(corpus_path)?;
    let catalog = read_catalog(catalog_path)?;
    let init = match init_path {
        Some(p) => ModelParams::load(p)?,
        None => ModelParams::seeded_init(EncoderConfig { dim, ..Default::default() }, config.seed)?,
    };
    let (model, report) = train::train(&config, &corpus, &catalog, &init)?;
    model.save(out)?;
    let report_path = report_path_for(out);
    report.write_csv(&report_path)?;

    let mut manifest = RunManifest::new("train");
    manifest.set_config("stage", stage);
    manifest.set_config("learning_rate", config.learning_rate);
    manifest.set_config("batch_size", config.batch_size);
    manifest.set_config("epochs", config.epochs);
    manifest.set_config("hard_negatives_per_positive", config.hard_negatives_per_positive);
    manifest.set_config("from_scratch", from_scratch);
    manifest.seed = Some(config.seed);
    manifest.add_input(corpus_path)?;
    manifest.add_input(catalog_path)?;
    if let Some(p) = init_path {
        manifest.add_input(p)?;
    }
    manifest.add_output(out)?;
    manifest.add_output(&report_path)?;
    manifest.duration_secs = started.elapsed().as_secs_f64();
    manifest.save(&RunManifest::path_for(out))?;

    if report.num_unaligned_gold + report.num_unknown_entity > 0 {
        eprintln!(
            "bela: warning: dropped {} misaligned and {} unknown-entity gold mentions",
            report.num_unaligned_gold, report.num_unknown_entity
        );
    }
    if let Some(last) = report.epochs.last() {
        println!(
            "trained {stage} for {} epochs; final losses md={:.4} ed={:.4} r={:.4} total={:.4}",
            report.epochs.len(),
            last.md,
            last.ed,
            last.r,
            last.total
        );
    } else {
        println!("trained {stage} for 0 epochs (model unchanged)");
    }
    println!("model: {}", out.display());
    println!("report: {}", report_path.display());
    Ok(())
}

/// `model.bin` → `model.report.csv` next to it.
fn report_path_for(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "train".into());
    out.with_file_name(format!("{stem}.report.csv"))
}

fn cmd_link(
    input: &Path,
    model_path: &Path,
    index_path: &Path,
    config: &LinkerConfig,
    out: &Path,
    threads: usize,
) -> Result<()> {
    let started = Instant::now();
    config.validate()?;
    let corpus = read_corpus(input)?;
    let model = ModelParams::load(model_path)?;
    let index = EntityIndex::load(index_path)?;
    if index.dim != model.dim() {
        return Err(BelaError::DimMismatch { expected: model.dim(), got: index.dim });
    }
    let preds = link_corpus(&corpus, &model, &index, config, threads)?;
    write_predictions(out, &preds)?;
    let secs = started.elapsed().as_secs_f64();

    let mut manifest = RunManifest::new("link");
    manifest.set_config("beta", config.beta);
    manifest.set_config("gamma", config.gamma);
    manifest.set_config("max_seq_len", config.max_seq_len);
    manifest.set_config("window_overlap", config.window_overlap);
    manifest.set_config("max_mention_len", config.max_mention_len);
    manifest.set_config("k", config.k);
    manifest.set_config("threads", threads);
    manifest.add_input(input)?;
    manifest.add_input(model_path)?;
    manifest.add_input(index_path)?;
    manifest.add_output(out)?;
    manifest.duration_secs = secs;
    manifest.save(&RunManifest::path_for(out))?;

    let mentions: usize = preds.iter().map(|p| p.mentions.len()).sum();
    println!(
        "linked {} passages ({} mentions) in {:.2}s: {:.1} passages/sec",
        preds.len(),
        mentions,
        secs,
        preds.len() as f64 / secs.max(1e-9)
    );
    Ok(())
}

fn cmd_eval(
    pred_path: &Path,
    gold_path: &Path,
    ed_only: bool,
    model_path: Option<&Path>,
    index_path: Option<&Path>,
    audit: bool,
    out: Option<&Path>,
) -> Result<()> {
    let preds = read_predictions(pred_path)?;
    let gold = read_corpus(gold_path)?;
    let mut report = evaluate(&preds, &gold)?;
    if ed_only {
        // flag constraints guarantee both paths are present
        let model = ModelParams::load(model_path.unwrap())?;
        let index = EntityIndex::load(index_path.unwrap())?;
        let (acc, scored, unreachable) =
            ed_accuracy(&gold, &model, &index, LinkerConfig::default().max_seq_len)?;
        report.overall.ed_accuracy = acc;
        print!("{}", render_report(&report));
        match acc {
            Some(acc) => println!(
                "ED accuracy (oracle MD): {acc:.4} over {scored} mentions ({unreachable} unreachable)"
            ),
            None => println!("ED accuracy (oracle MD): no reachable gold mentions"),
        }
    } else {
        print!("{}", render_report(&report));
    }
    if audit {
        let (unmatched, by_entity) = underlabeling_report(&preds, &gold);
        println!("unmatched predictions (possible gold under-labeling): {}", unmatched.len());
        for u in unmatched.iter().take(20) {
            println!(
                "  {} [{}..{}) {} md={:.3} r={:.3}",
                u.passage_id, u.mention.start, u.mention.end, u.mention.entity_id, u.mention.md, u.mention.r
            );
        }
        if !by_entity.is_empty() {
            let mut top: Vec<_> = by_entity.iter().collect();
            top.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
            println!("most frequent unmatched entities:");
            for (id, n) in top.iter().take(10) {
                println!("  {id}: {n}");
            }
        }
    }
    if let Some(out) = out {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| BelaError::Invalid(format!("report serialization: {e}")))?;
        std::fs::write(out, json).map_err(|e| BelaError::io(out.display().to_string(), e))?;
        println!("report JSON: {}", out.display());
    }
    Ok(())
}

/// "start:end:step" → inclusive grid of gammas.
fn parse_grid(grid: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = grid.split(':').collect();
    let err = || BelaError::Invalid(format!("malformed grid '{grid}', expected start:end:step"));
    if parts.len() != 3 {
        return Err(err());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| err()))
        .collect::<Result<_>>()?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0 && start <= end && (0.0..=1.0).contains(&start) && (0.0..=1.0).contains(&end)) {
        return Err(err());
    }
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let g = start + step * i as f64;
        if g > end + 1e-9 {
            break;
        }
        out.push(g.min(end).min(1.0));
        i += 1;
    }
    Ok(out)
}

fn cmd_sweep(
    dev_path: &Path,
    model_path: &Path,
    index_path: &Path,
    grid: &str,
    out: &Path,
    beta: f64,
    threads: usize,
) -> Result<()> {
    let started = Instant::now();
    let gammas = parse_grid(grid)?;
    let dev = read_corpus(dev_path)?;
    let model = ModelParams::load(model_path)?;
    let index = EntityIndex::load(index_path)?;
    if index.dim != model.dim() {
        return Err(BelaError::DimMismatch { expected: model.dim(), got: index.dim });
    }
    let config = LinkerConfig { beta, ..Default::default() };
    config.validate()?;
    let _ = threads; // candidates are cached once; the sweep itself is cheap
    let result = sweep_gamma(&dev, &model, &index, &config, &gammas)?;
    write_sweep_csv(out, &result)?;

    let mut manifest = RunManifest::new("sweep");
    manifest.set_config("grid", grid);
    manifest.set_config("beta", beta);
    manifest.add_input(dev_path)?;
    manifest.add_input(model_path)?;
    manifest.add_input(index_path)?;
    manifest.add_output(out)?;
    manifest.duration_secs = started.elapsed().as_secs_f64();
    manifest.save(&RunManifest::path_for(out))?;

    let best = result
        .points
        .iter()
        .find(|p| p.gamma == result.best_gamma)
        .expect("best gamma is on the grid");
    println!(
        "swept {} gammas in {:.2}s; best gamma {:.4} with F1 {:.4}",
        result.points.len(),
        started.elapsed().as_secs_f64(),
        result.best_gamma,
        best.f1
    );
    println!("csv: {}", out.display());
    Ok(())
}
