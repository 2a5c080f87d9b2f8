use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ppat::caption::{
    caption_batch, generate_caption, sketch_hash, CaptionCache, CaptionClient, MentalPrompt, MockClient,
    RemoteClient, RetryPolicy, DEFAULT_CONCURRENCY,
};
use ppat::eval::{
    cross_validate, cross_validate_logreg, cross_validate_mlp, holdout_preset, make_folds, parse_predictions,
    read_corpus, run_ablation, score_predictions, synth_corpus, write_corpus, DatasetRecord, FoldPlan, LogRegConfig,
    MetricsRecord, MlpConfig,
};
use ppat::model::{train, ModelConfig, VsLlm};
use ppat::service::{ServiceConfig, ServiceState, Store};
use ppat::sketch::{decompose, parse_sketch_json, rasterize, Sketch};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

/// Environment variable holding the optional bearer token for `serve`.
const SERVICE_TOKEN_ENV: &str = "PPAT_SERVICE_TOKEN";

#[derive(Parser)]
#[command(name = "ppat", version, about = "Sketch-sequence depression screening toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RasterFormat {
    Raw,
    Png,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderArg {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Reference,
    Desk,
    Tiny,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Cv,
    Holdout,
}

#[derive(clap::Args)]
struct ModelArgs {
    /// JSON file mirroring the model configuration; overrides --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "reference")]
    preset: Preset,
}

#[derive(clap::Args)]
struct ProviderArgs {
    #[arg(long, value_enum, default_value = "mock")]
    provider: ProviderArg,
    /// Caption endpoint for the remote provider.
    #[arg(long)]
    endpoint: Option<String>,
    /// Per-request timeout in seconds for the remote provider.
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    #[arg(long, default_value = "v1")]
    template_version: String,
    /// Prompt template file; required for any version other than the built-in one.
    #[arg(long)]
    template: Option<PathBuf>,
}

#[derive(clap::Args)]
struct FoldArgs {
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, value_enum, default_value = "cv")]
    split: Split,
}

#[derive(Subcommand)]
enum Command {
    /// Write the 12 cumulative sub-sketches of a sketch as JSON files.
    Decompose {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize a sketch.
    Render {
        input: PathBuf,
        #[arg(long, default_value_t = 96)]
        size: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "raw")]
        format: RasterFormat,
    },
    /// Caption every sketch of a corpus into the cache.
    Caption {
        corpus: PathBuf,
        #[arg(long, default_value = "captions.ndjson")]
        cache: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CONCURRENCY)]
        concurrency: usize,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Train on a whole corpus and write a checkpoint.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Caption cache; captions are generated with the mock provider when omitted.
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long, default_value = "v1")]
        template_version: String,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assess one sketch with a trained checkpoint.
    Assess {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        sketch: PathBuf,
        #[arg(long)]
        captions: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Cross-validate the model (and optionally the FEATS baselines).
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long, default_value = "v1")]
        template_version: String,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        folds: FoldArgs,
        /// Also run logistic regression and MLP on the FEATS vectors.
        #[arg(long)]
        baselines: bool,
        /// Run only the FEATS baselines.
        #[arg(long)]
        baselines_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the four standard ablation rows.
    Ablate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long, default_value = "v1")]
        template_version: String,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        folds: FoldArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic labeled corpus.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        pos_frac: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score externally computed predictions on the standard folds.
    ScorePreds {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        variant: String,
        #[command(flatten)]
        folds: FoldArgs,
    },
    /// Run the HTTP assessment service.
    Serve {
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Allowed browser origin; repeatable. Any origin when omitted.
        #[arg(long = "cors-origin")]
        cors_origins: Vec<String>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Decompose { input, out } => cmd_decompose(&input, &out),
        Command::Render {
            input,
            size,
            out,
            format,
        } => cmd_render(&input, size, &out, format),
        Command::Caption {
            corpus,
            cache,
            concurrency,
            provider,
        } => cmd_caption(&corpus, &cache, concurrency, &provider),
        Command::Train {
            corpus,
            captions,
            template_version,
            model,
            out,
        } => cmd_train(&corpus, captions.as_deref(), &template_version, &model, &out),
        Command::Assess {
            ckpt,
            sketch,
            captions,
            provider,
        } => cmd_assess(&ckpt, &sketch, captions.as_deref(), &provider),
        Command::Eval {
            corpus,
            captions,
            template_version,
            model,
            folds,
            baselines,
            baselines_only,
            out,
        } => {
            let records = load_corpus(&corpus)?;
            let plan = fold_plan(&records, &folds)?;
            let mut results = Vec::new();
            if !baselines_only {
                let cfg = load_config(&model)?;
                let caps = captions_for(&records, captions.as_deref(), &template_version)?;
                results.push(cross_validate(&records, &caps, &cfg, &plan, "vs_llm")?);
            }
            if baselines || baselines_only {
                results.push(cross_validate_logreg(&records, &plan, &LogRegConfig::default())?);
                results.push(cross_validate_mlp(&records, &plan, &MlpConfig::default())?);
            }
            emit(&results, out.as_deref())
        }
        Command::Ablate {
            corpus,
            captions,
            template_version,
            model,
            folds,
            out,
        } => {
            let records = load_corpus(&corpus)?;
            let plan = fold_plan(&records, &folds)?;
            let cfg = load_config(&model)?;
            let caps = captions_for(&records, captions.as_deref(), &template_version)?;
            emit(&run_ablation(&records, &caps, &cfg, &plan)?, out.as_deref())
        }
        Command::Synth { n, pos_frac, seed, out } => {
            let records = synth_corpus(n, pos_frac, seed)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_corpus(&records, BufWriter::new(file))?;
            let pos = records.iter().filter(|r| r.label == 1).count();
            eprintln!("wrote {n} records ({pos} positive) to {}", out.display());
            Ok(())
        }
        Command::ScorePreds {
            corpus,
            preds,
            variant,
            folds,
        } => {
            let records = load_corpus(&corpus)?;
            let plan = fold_plan(&records, &folds)?;
            let text = std::fs::read_to_string(&preds).with_context(|| format!("reading {}", preds.display()))?;
            let predictions = parse_predictions(&text)?;
            emit(&[score_predictions(&records, &plan, &predictions, &variant)?], None)
        }
        Command::Serve {
            ckpt,
            store,
            host,
            port,
            cors_origins,
            provider,
        } => cmd_serve(ckpt.as_deref(), &store, &host, port, cors_origins, &provider),
    }
}

fn read_sketch(path: &Path) -> Result<Sketch> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_sketch_json(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_decompose(input: &Path, out: &Path) -> Result<()> {
    let sketch = read_sketch(input)?;
    let seq = decompose(&sketch)?;
    std::fs::create_dir_all(out)?;
    for (j, sub) in seq.sub_sketches.iter().enumerate() {
        let path = out.join(format!("{}_{:02}.json", sketch.id(), j + 1));
        std::fs::write(&path, sub.to_json())?;
    }
    println!("{}", serde_json::to_string(&seq.cumulative_counts)?);
    Ok(())
}

fn cmd_render(input: &Path, size: u32, out: &Path, format: RasterFormat) -> Result<()> {
    let image = rasterize(&read_sketch(input)?, size, size)?;
    let bytes = match format {
        RasterFormat::Raw => image.to_raw_bytes(),
        RasterFormat::Png => image.to_png(),
    };
    std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))
}

fn load_prompt(args: &ProviderArgs) -> Result<MentalPrompt> {
    let mut prompt = MentalPrompt::default();
    match &args.template {
        Some(path) => {
            prompt.template_text = std::fs::read_to_string(path)?.trim_end().to_string();
            prompt.template_version = args.template_version.clone();
        }
        None if args.template_version != prompt.template_version => {
            bail!("template version `{}` needs --template", args.template_version)
        }
        None => {}
    }
    prompt.validate()?;
    Ok(prompt)
}

fn make_client(args: &ProviderArgs) -> Result<Arc<dyn CaptionClient>> {
    Ok(match args.provider {
        ProviderArg::Mock => Arc::new(MockClient),
        ProviderArg::Remote => {
            let endpoint = args
                .endpoint
                .clone()
                .ok_or_else(|| anyhow!("--endpoint is required with --provider remote"))?;
            Arc::new(RemoteClient::from_env(endpoint, Duration::from_secs(args.timeout_secs)))
        }
    })
}

/// Any line holding a `sketch` field is a dataset record; otherwise the line
/// is a bare sketch document.
fn load_sketches(path: &Path) -> Result<Vec<Sketch>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let v: serde_json::Value = serde_json::from_str(line).with_context(|| format!("line {}", n + 1))?;
            let doc = v.get("sketch").unwrap_or(&v);
            parse_sketch_json(doc.to_string().as_bytes()).with_context(|| format!("line {}", n + 1))
        })
        .collect()
}

fn cmd_caption(corpus: &Path, cache_path: &Path, concurrency: usize, args: &ProviderArgs) -> Result<()> {
    let sketches = load_sketches(corpus)?;
    let prompt = load_prompt(args)?;
    let client = make_client(args)?;
    let cache = CaptionCache::open(cache_path)?;
    let before = cache.len();
    let results = caption_batch(
        &sketches,
        &prompt,
        client.as_ref(),
        &cache,
        &RetryPolicy::default(),
        concurrency,
    );
    let mut failed = 0;
    for (sketch, r) in sketches.iter().zip(results) {
        if let Err(e) = r {
            failed += 1;
            eprintln!("{}: {e}", sketch.id());
        }
    }
    eprintln!(
        "{} sketches, {} new captions, {failed} failures, cache {}",
        sketches.len(),
        cache.len() - before,
        cache_path.display()
    );
    if failed > 0 {
        bail!("{failed} sketches could not be captioned");
    }
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_corpus(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_config(args: &ModelArgs) -> Result<ModelConfig> {
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de).with_context(|| format!("parsing {}", path.display()))?
        }
        None => match args.preset {
            Preset::Reference => ModelConfig::reference(),
            Preset::Desk => ModelConfig::desk(),
            Preset::Tiny => ModelConfig::tiny(),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Captions aligned with `records`: looked up in the cache when one is
/// given, otherwise generated with the mock provider.
fn captions_for(records: &[DatasetRecord], cache: Option<&Path>, template_version: &str) -> Result<Vec<String>> {
    match cache {
        Some(path) => {
            let cache = CaptionCache::open(path)?;
            records
                .iter()
                .map(|r| {
                    let hash = sketch_hash(&r.sketch)?;
                    cache
                        .get(&hash, template_version)
                        .map(|c| c.caption_text)
                        .ok_or_else(|| anyhow!("no {template_version} caption for `{}`; run `ppat caption` first", r.record_id))
                })
                .collect()
        }
        None => Ok(records.iter().map(|r| ppat::caption::mock_caption(&r.sketch)).collect()),
    }
}

fn fold_plan(records: &[DatasetRecord], args: &FoldArgs) -> Result<FoldPlan> {
    Ok(match args.split {
        Split::Cv => make_folds(records, args.folds, args.seed)?,
        Split::Holdout => holdout_preset(records, args.seed)?,
    })
}

fn emit(results: &[MetricsRecord], out: Option<&Path>) -> Result<()> {
    let mut text = String::new();
    for r in results {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
        eprintln!(
            "{:<12} mean_acc {:.4}  folds [{}]",
            r.variant,
            r.mean_acc,
            r.folds.iter().map(|f| format!("{:.3}", f.acc)).collect::<Vec<_>>().join(", ")
        );
    }
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_train(corpus: &Path, captions: Option<&Path>, template_version: &str, args: &ModelArgs, out: &Path) -> Result<()> {
    let records = load_corpus(corpus)?;
    let cfg = load_config(args)?;
    let caps = captions_for(&records, captions, template_version)?;
    let mut model = VsLlm::new(cfg)?;
    let data = records
        .iter()
        .zip(&caps)
        .map(|(r, c)| model.prepare(&r.sketch, c, r.label))
        .collect::<Result<Vec<_>, _>>()?;
    let log = train(&mut model, &data, |e, _| {
        eprintln!("epoch {:>3}  loss {:.6}  train_acc {:.4}", e.epoch, e.mean_loss, e.train_accuracy)
    })?;
    if log.stopped_early {
        eprintln!("stopped early after {} epochs", log.epochs.len());
    }
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    model.save(BufWriter::new(file))?;
    Ok(())
}

fn load_model(path: &Path) -> Result<VsLlm> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    VsLlm::load(BufReader::new(file)).with_context(|| format!("loading {}", path.display()))
}

fn cmd_assess(ckpt: &Path, sketch_path: &Path, captions: Option<&Path>, args: &ProviderArgs) -> Result<()> {
    let model = load_model(ckpt)?;
    let sketch = read_sketch(sketch_path)?;
    let prompt = load_prompt(args)?;
    let client = make_client(args)?;
    let cache = match captions {
        Some(p) => CaptionCache::open(p)?,
        None => CaptionCache::in_memory(),
    };
    let caption = generate_caption(&sketch, &prompt, client.as_ref(), &cache, &RetryPolicy::default())?;
    let mut assessment = model.forward(&sketch, &caption.caption_text)?;
    assessment.caption_used = Some(ppat::model::CaptionRef {
        sketch_hash: caption.sketch_hash,
        template_version: caption.template_version,
    });
    println!("{}", serde_json::to_string(&assessment)?);
    Ok(())
}

fn cmd_serve(
    ckpt: Option<&Path>,
    store_dir: &Path,
    host: &str,
    port: u16,
    cors_origins: Vec<String>,
    args: &ProviderArgs,
) -> Result<()> {
    let model = ckpt.map(load_model).transpose()?;
    let store = Store::open(store_dir)?;
    let cache = CaptionCache::open(store_dir.join("captions.ndjson"))?;
    let config = ServiceConfig {
        prompt: load_prompt(args)?,
        retry: RetryPolicy::default(),
        bearer_token: std::env::var(SERVICE_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
        cors_origins,
    };
    let state = ServiceState::new(store, cache, make_client(args)?, model, config);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        ppat::service::serve(listener, state).await?;
        Ok(())
    })
}
