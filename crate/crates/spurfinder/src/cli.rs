//! Command line front end. Every command prints JSON on stdout, logs on
//! stderr, and exits 0 on success, 1 on a user error and 2 when a model
//! service failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use spurfinder_core::{ContentHash, LabelId};
use spurfinder_engine::datasetgen::{export, load_seed_dir, AdversarialDataset};
use spurfinder_engine::metrics::{
    consistency, fid_between, kid_between, nearest, transfer_matrix, LabeledImage, MetricReport,
};
use spurfinder_engine::pipeline;
use spurfinder_engine::{Engine, Progress, Stored};
use spurfinder_gateway::{CLUSTER_SPACE, FID_SPACE};
use spurfinder_store::{RecordKind, RunReader};
use spurfinder_synthworld::{default_world, SynthBackend, World, WorldConfig};

use crate::api::{self, ApiState};
use crate::config::{AppConfig, Context};
use crate::error::{AppError, AppResult};

#[derive(Debug, Parser)]
#[command(name = "spurfinder", version, about = "Find captions that make an image classifier fail")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every command that touches a run.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model backend: synth, synth:<world.json> or http://host:port.
    #[arg(long)]
    pub backend: Option<String>,
    /// Label hierarchy file (id, name, parent per tab-separated line).
    #[arg(long)]
    pub hierarchy: Option<PathBuf>,
    /// Run id; defaults to a prefix of the config hash.
    #[arg(long)]
    pub run: Option<String>,
    /// Overrides the engine seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = "SPURFINDER_RUN_ROOT", default_value = "runs")]
    pub run_root: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Baseline, clustering, caption assembly and refinement for a label.
    Discover {
        label: String,
        #[arg(long)]
        target: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Measures one caption against the label's baseline.
    Measure {
        #[arg(long)]
        caption: String,
        #[arg(long)]
        label: String,
        #[arg(long)]
        target: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Applies the rewrite rules to a stored hypothesis.
    Refine {
        #[arg(long)]
        hypothesis: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Captions seed images (<dir>/<label>/*.png) and keeps generated failures.
    Harvest {
        #[arg(long)]
        seeds: PathBuf,
        /// Dataset name; defaults to the seed directory's name.
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Analyses of harvested datasets.
    Metrics {
        #[command(subcommand)]
        metric: MetricCommand,
    },
    /// Writes a harvested dataset as manifest.jsonl plus blobs.
    Export {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// The synthetic world as a standalone model service.
    Synthworld {
        #[command(subcommand)]
        command: SynthCommand,
    },
    /// HTTP API over the run store.
    Serve {
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Images to analyse: a harvested dataset in the run or a seed-style
/// directory.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct ImageSet {
    /// Harvest record id.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory laid out as <dir>/<label>/*.png.
    #[arg(long)]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum MetricCommand {
    /// Frechet distance to a reference set in the "fid" space.
    Fid {
        #[command(flatten)]
        set: ImageSet,
        #[arg(long)]
        reference: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Kernel distance to a reference set, block-averaged.
    Kid {
        #[command(flatten)]
        set: ImageSet,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 50)]
        block: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Failure rate of the set under other classifiers.
    Transfer {
        #[command(flatten)]
        set: ImageSet,
        /// `name=backend`, repeatable. The run's own classifier is `source`.
        #[arg(long = "model")]
        models: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Error consistency (kappa) of two classifiers.
    Consistency {
        #[command(flatten)]
        set: ImageSet,
        /// Defaults to the run's backend.
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Nearest neighbors of a stored image.
    Nn {
        #[command(flatten)]
        set: ImageSet,
        /// Hash of the query image in the run's blob store.
        #[arg(long)]
        image: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = FID_SPACE)]
        space: String,
        /// Only neighbors with this label.
        #[arg(long)]
        label: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Serves the model wire protocol.
    Serve {
        /// World config JSON; the shipped default world when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8700)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Prints the world's label hierarchy file.
    Labels {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Prints the world config JSON.
    Show {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Parses `argv` and runs the command; returns the exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return 1;
        }
    };
    match rt.block_on(run(cli.command)) {
        Ok(out) => {
            if let Some(v) = out {
                println!("{}", serde_json::to_string_pretty(&v).expect("output serializes"));
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub async fn run(cmd: Command) -> AppResult<Option<Value>> {
    match cmd {
        Command::Discover { label, target, run } => discover(&run, &label, target.as_deref()).await.map(Some),
        Command::Measure {
            caption,
            label,
            target,
            run,
        } => measure(&run, &caption, &label, target.as_deref()).await.map(Some),
        Command::Refine { hypothesis, run } => refine(&run, &hypothesis).await.map(Some),
        Command::Harvest { seeds, name, run } => harvest(&run, &seeds, name).await.map(Some),
        Command::Metrics { metric } => metrics(metric).await.map(Some),
        Command::Export { dataset, out, run } => export_dataset(&run, &dataset, &out).map(Some),
        Command::Synthworld { command } => synthworld(command).await,
        Command::Serve {
            host,
            port,
            workers,
            run,
        } => serve(&run, host, port, workers).await.map(|_| None),
    }
}

/// Loads the config and applies command-line overrides.
pub fn context(args: &RunArgs) -> AppResult<Context> {
    let mut cfg = match &args.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(b) = &args.backend {
        cfg.backend = b.clone();
    }
    if let Some(h) = &args.hierarchy {
        cfg.hierarchy = Some(h.clone());
    }
    if let Some(r) = &args.run {
        cfg.run_id = Some(r.clone());
    }
    if let Some(s) = args.seed {
        cfg.engine.seed = s;
    }
    Context::new(cfg)
}

fn open(args: &RunArgs) -> AppResult<(Context, Engine)> {
    let ctx = context(args)?;
    let run = ctx.open_run(&args.run_root)?;
    let engine = ctx.engine(Some(run))?;
    Ok((ctx, engine))
}

fn label(ctx: &Context, text: &str) -> AppResult<LabelId> {
    ctx.hierarchy.resolve(text).map_err(|e| AppError::user(e.to_string()))
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result serializes")
}

async fn discover(args: &RunArgs, label_text: &str, target: Option<&str>) -> AppResult<Value> {
    let (ctx, engine) = open(args)?;
    let label = label(&ctx, label_text)?;
    let target = target.map(|t| self::label(&ctx, t)).transpose()?;
    let report = pipeline::discover(&engine, &label, target.as_ref(), &Progress::default()).await?;
    match report.best() {
        Some(b) => eprintln!(
            "best: {} (confirmed: {}, ratio: {})",
            b.value.caption.render(),
            b.value.confirmed,
            b.value
                .ratio_target
                .or(b.value.ratio_any)
                .map_or_else(|| "undefined".into(), |r| format!("{r:.2}"))
        ),
        None => eprintln!("no failure cluster was large enough to caption"),
    }
    Ok(json!({
        "run": ctx.run_id(),
        "baseline": report.baseline.id,
        "clusters": report.clusters.id,
        "hypotheses": report.hypotheses.iter().map(|h| &h.id).collect::<Vec<_>>(),
        "refinement": report.refinement.as_ref().map(|r| &r.id),
        "best": report.best().map(to_json),
    }))
}

async fn measure(args: &RunArgs, caption: &str, label_text: &str, target: Option<&str>) -> AppResult<Value> {
    let (ctx, engine) = open(args)?;
    let label = label(&ctx, label_text)?;
    let target = target.map(|t| self::label(&ctx, t)).transpose()?;
    let h = pipeline::measure(&engine, caption, &label, target.as_ref(), &Progress::default()).await?;
    Ok(to_json(&h))
}

async fn refine(args: &RunArgs, hypothesis: &str) -> AppResult<Value> {
    let (ctx, engine) = open(args)?;
    let (report, refined) = pipeline::refine_by_id(&engine, hypothesis, &Progress::default()).await?;
    let candidates: Vec<Value> = report
        .value
        .candidates
        .iter()
        .map(|c| {
            json!({
                "caption": c.caption.render(),
                "rule": c.rule,
                "rate": c.hypothesis().map(|h| h.measurement.primary_rate().p),
                "confirmed": c.hypothesis().map(|h| h.confirmed),
            })
        })
        .collect();
    Ok(json!({
        "run": ctx.run_id(),
        "refinement": report.id,
        "candidates": candidates,
        "refined": refined.as_ref().map(to_json),
    }))
}

async fn harvest(args: &RunArgs, seeds: &Path, name: Option<String>) -> AppResult<Value> {
    let (ctx, engine) = open(args)?;
    let name = name
        .or_else(|| seeds.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "harvest".into());
    let images = load_seed_dir(seeds)?;
    let ds = pipeline::harvest_seeds(&engine, &name, &images, &Progress::default()).await?;
    Ok(json!({
        "run": ctx.run_id(),
        "dataset": ds.id,
        "name": ds.value.name,
        "entries": ds.value.entries.len(),
        "captions": ds.value.captions.len(),
        "manifest_hash": ds.value.manifest_hash,
    }))
}

fn export_dataset(args: &RunArgs, dataset: &str, out: &Path) -> AppResult<Value> {
    let ctx = context(args)?;
    let reader = RunReader::open(&args.run_root, &ctx.run_id())?;
    let rec = reader
        .by_id(dataset)
        .filter(|r| r.kind == RecordKind::Harvest)
        .ok_or_else(|| AppError::user(format!("no harvest record `{dataset}` in run {}", ctx.run_id())))?;
    let ds: AdversarialDataset = rec.decode()?;
    let blobs = reader.blobs();
    let manifest = export(&ds, out, |h| Ok(Arc::new(blobs.get(h)?)))?;
    Ok(json!({
        "dataset": dataset,
        "manifest": manifest,
        "entries": ds.entries.len(),
        "manifest_hash": ds.manifest_hash,
    }))
}

/// The images of `set` with a stable description used in record keys.
fn image_set(engine: &Engine, set: &ImageSet) -> AppResult<(String, Vec<LabeledImage>)> {
    if let Some(id) = &set.dataset {
        let ds: Stored<AdversarialDataset> = pipeline::load(engine, id, RecordKind::Harvest)?;
        let images = ds
            .value
            .entries
            .iter()
            .map(|e| {
                Ok(LabeledImage {
                    image: e.image,
                    png: engine.image(&e.image)?,
                    truth: e.truth.clone(),
                })
            })
            .collect::<AppResult<Vec<_>>>()?;
        return Ok((format!("dataset:{id}"), images));
    }
    let dir = set.images.as_ref().expect("clap requires one of the two");
    directory_images(dir)
}

fn directory_images(dir: &Path) -> AppResult<(String, Vec<LabeledImage>)> {
    let mut listing = String::new();
    let images: Vec<LabeledImage> = load_seed_dir(dir)?
        .into_iter()
        .map(|s| {
            let image = ContentHash::of(&s.png);
            listing.push_str(&format!("{}\t{image}\n", s.truth));
            LabeledImage {
                image,
                png: s.png,
                truth: s.truth,
            }
        })
        .collect();
    Ok((format!("images:{}", ContentHash::of(listing.as_bytes())), images))
}

fn pngs(images: &[LabeledImage]) -> Vec<Arc<Vec<u8>>> {
    images.iter().map(|i| i.png.clone()).collect()
}

async fn metrics(cmd: MetricCommand) -> AppResult<Value> {
    let stored = match cmd {
        MetricCommand::Fid { set, reference, run } => {
            let (_, engine) = open(&run)?;
            let (a_key, a) = image_set(&engine, &set)?;
            let (b_key, b) = directory_images(&reference)?;
            pipeline::metric(&engine, &format!("fid/{a_key}/{b_key}"), async {
                Ok(MetricReport::Fid {
                    report: fid_between(engine.gateway(), &pngs(&a), &pngs(&b)).await?,
                    dataset: a_key.clone(),
                    reference: b_key.clone(),
                })
            })
            .await?
        }
        MetricCommand::Kid {
            set,
            reference,
            block,
            run,
        } => {
            let (_, engine) = open(&run)?;
            let (a_key, a) = image_set(&engine, &set)?;
            let (b_key, b) = directory_images(&reference)?;
            pipeline::metric(&engine, &format!("kid/{a_key}/{b_key}/{block}"), async {
                Ok(MetricReport::Kid {
                    report: kid_between(engine.gateway(), &pngs(&a), &pngs(&b), block).await?,
                    dataset: a_key.clone(),
                    reference: b_key.clone(),
                })
            })
            .await?
        }
        MetricCommand::Transfer { set, models, run } => {
            let (ctx, engine) = open(&run)?;
            let (key, images) = image_set(&engine, &set)?;
            let mut classifiers = vec![("source".to_string(), ctx.gateway.clone())];
            for m in &models {
                let (name, spec) = m
                    .split_once('=')
                    .ok_or_else(|| AppError::user(format!("--model expects name=backend, got `{m}`")))?;
                classifiers.push((name.to_string(), ctx.gateway_for(spec)?));
            }
            let policy = engine.config().policy.clone();
            pipeline::metric(&engine, &format!("transfer/{key}/{}", models.join(",")), async {
                Ok(MetricReport::Transfer {
                    rates: transfer_matrix(&images, &classifiers, &policy, engine.hierarchy()).await?,
                    dataset: key.clone(),
                    policy: policy.clone(),
                })
            })
            .await?
        }
        MetricCommand::Consistency { set, a, b, run } => {
            let (ctx, engine) = open(&run)?;
            let (key, images) = image_set(&engine, &set)?;
            let a = a.unwrap_or_else(|| ctx.config.backend.clone());
            let (ga, gb) = (ctx.gateway_for(&a)?, ctx.gateway_for(&b)?);
            pipeline::metric(&engine, &format!("consistency/{key}/{a}/{b}"), async {
                Ok(MetricReport::Consistency {
                    kappa: consistency(&ga, &gb, &images).await?,
                    n: images.len(),
                    dataset: key.clone(),
                    a: a.clone(),
                    b: b.clone(),
                })
            })
            .await?
        }
        MetricCommand::Nn {
            set,
            image,
            k,
            space,
            label,
            run,
        } => {
            let (ctx, engine) = open(&run)?;
            if space != FID_SPACE && space != CLUSTER_SPACE {
                return Err(AppError::user(format!("unknown embedding space `{space}`")));
            }
            let query: ContentHash = image
                .parse()
                .map_err(|_| AppError::user(format!("`{image}` is not an image hash")))?;
            let filter = label.as_deref().map(|l| self::label(&ctx, l)).transpose()?;
            let png = engine.image(&query)?;
            let (key, corpus) = image_set(&engine, &set)?;
            let filter_key = filter.as_ref().map_or("-", LabelId::as_str);
            pipeline::metric(&engine, &format!("nn/{key}/{query}/{space}/{k}/{filter_key}"), async {
                Ok(MetricReport::Nn {
                    neighbors: nearest(engine.gateway(), &png, &corpus, &space, k, filter.as_ref()).await?,
                    query,
                    dataset: key.clone(),
                })
            })
            .await?
        }
    };
    Ok(to_json(&stored))
}

fn world_config(path: Option<&Path>) -> AppResult<WorldConfig> {
    match path {
        Some(p) => WorldConfig::load(p).map_err(|e| AppError::user(format!("{}: {e}", p.display()))),
        None => Ok(default_world()),
    }
}

async fn synthworld(cmd: SynthCommand) -> AppResult<Option<Value>> {
    match cmd {
        SynthCommand::Serve { config, port, host } => {
            let world = World::new(world_config(config.as_deref())?).map_err(|e| AppError::user(e.to_string()))?;
            let listener = bind(&host, port).await?;
            let router = spurfinder_gateway::server::router(Arc::new(SynthBackend::new(world)));
            axum::serve(listener, router)
                .with_graceful_shutdown(shutdown())
                .await
                .map_err(|e| AppError::user(format!("server: {e}")))?;
            Ok(None)
        }
        SynthCommand::Labels { config } => {
            let h = world_config(config.as_deref())?
                .hierarchy()
                .map_err(|e| AppError::user(e.to_string()))?;
            print!("{}", h.to_tsv());
            Ok(None)
        }
        SynthCommand::Show { config } => {
            let cfg = world_config(config.as_deref())?;
            Ok(Some(serde_json::from_str(&cfg.to_json()).expect("world config is JSON")))
        }
    }
}

async fn bind(host: &str, port: u16) -> AppResult<tokio::net::TcpListener> {
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .map_err(|e| AppError::user(format!("cannot bind {host}:{port}: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| AppError::user(format!("cannot bind {host}:{port}: {e}")))?;
    eprintln!("listening on http://{addr}");
    Ok(listener)
}

async fn shutdown() {
    let _ = tokio::signal::ctrl_c().await;
}

async fn serve(args: &RunArgs, host: Option<String>, port: Option<u16>, workers: Option<usize>) -> AppResult<()> {
    let mut ctx = context(args)?;
    if let Some(w) = workers {
        if w == 0 {
            return Err(AppError::user("--workers must be at least 1"));
        }
        ctx.config.server.workers = w;
    }
    let host = host.unwrap_or_else(|| ctx.config.server.host.clone());
    let port = port.unwrap_or(ctx.config.server.port);
    let state = ApiState::new(args.run_root.clone(), Arc::new(ctx))?;
    eprintln!("serving run {}", state.run_id());
    let listener = bind(&host, port).await?;
    axum::serve(listener, api::router(state))
        .with_graceful_shutdown(shutdown())
        .await
        .map_err(|e| AppError::user(format!("server: {e}")))
}
