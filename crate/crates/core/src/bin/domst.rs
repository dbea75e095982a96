use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use domst::data::{generate_corpus, generate_synthetic, load_corpus_dir, load_watershed_dir, write_watershed_csv, GenConfig, WatershedDataset};
use domst::eval::{heavy_model_config, pixcon_recovery_score, run_comparison, run_grad_check, run_model_parallel_bench, run_timing_table, GradCheckSpec};
use domst::exec::{trace_summary, write_traces_jsonl, ExecutorKind, TrainConfig};
use domst::model::{ModelConfig, Variant};
use domst::pipeline::{derive_seed, param_digest, train_watershed, JobSettings, DEFAULT_TRAIN_FRACTION};
use domst::{Error, Result};

#[derive(Parser)]
#[command(name = "domst", version, about = "Distributed Dom-ST training and evaluation")]
struct Cli {
    /// Global seed for data generation, initialization and shuffling.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// TOML or JSON file with optional [gen], [model], [train] sections and train_fraction.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker pool size for watershed jobs.
    #[arg(long, global = true, default_value_t = 4)]
    pool: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Write per-step traces of the distributed executor as JSON lines.
    #[arg(long, global = true)]
    emit_traces: bool,
    /// Write the pixel-to-head assignment as JSON.
    #[arg(long, global = true)]
    dump_partition: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic watersheds as CSV.
    GenData(GenArgs),
    /// Train one variant on one watershed.
    Train(TrainArgs),
    /// Three-variant NSE comparison over watersheds and seeds.
    Compare(CompareArgs),
    /// Sequential versus pooled job timing, optionally model-parallel timing.
    Bench(BenchArgs),
    /// Finite-difference gradient check of every variant.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1)]
    watersheds: usize,
    #[arg(long)]
    pixels: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    /// Noise std as a fraction of the clean signal's std.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    tau_km: Option<f64>,
}

#[derive(Args, Clone)]
struct TrainOpts {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lookback: Option<usize>,
    /// Heads of the multihead variant.
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    executor: Option<ExecutorKind>,
}

#[derive(Args)]
struct TrainArgs {
    /// Watershed directory; a synthetic watershed is generated when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "multihead_plus_p")]
    variant: Variant,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct CompareArgs {
    /// Directory of watershed directories; synthetic when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    watersheds: usize,
    /// Number of seeds, counting up from --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, value_delimiter = ',', default_values = ["singlehead", "singlehead_plus_p", "multihead_plus_p"])]
    variants: Vec<Variant>,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 8)]
    jobs: usize,
    #[arg(long, value_delimiter = ',', default_values = ["singlehead_plus_p", "multihead_plus_p"])]
    variants: Vec<Variant>,
    /// Also time one compute-heavy model under both executors.
    #[arg(long)]
    model_parallel: bool,
    #[command(flatten)]
    opts: TrainOpts,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, value_delimiter = ',', default_values = ["singlehead", "singlehead_plus_p", "multihead_plus_p"])]
    variants: Vec<Variant>,
    #[arg(long, default_value_t = 8)]
    pixels: usize,
    #[arg(long, default_value_t = 16)]
    lookback: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    gen: Option<GenConfig>,
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
    train_fraction: Option<f64>,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

struct Ctx {
    seed: u64,
    pool: usize,
    out: PathBuf,
    emit_traces: bool,
    dump_partition: bool,
    file: FileConfig,
}

impl Ctx {
    fn gen(&self) -> GenConfig {
        let mut g = self.file.gen.clone().unwrap_or_default();
        if self.file.gen.is_none() {
            g.seed = self.seed;
        }
        g
    }

    fn settings(&self, variant: Variant, opts: &TrainOpts) -> JobSettings {
        let mut model = self.file.model.clone().unwrap_or_default();
        if let Some(h) = opts.heads {
            model.heads = h;
        }
        if let Some(l) = opts.lookback {
            model.lookback = l;
        }
        let mut train = self.file.train.clone().unwrap_or_default();
        if let Some(e) = opts.epochs {
            train.epochs = e;
        }
        if let Some(b) = opts.batch_size {
            train.batch_size = b;
        }
        if let Some(lr) = opts.lr {
            train.adam.lr = lr;
        }
        if let Some(x) = opts.executor {
            train.executor = x;
        }
        JobSettings {
            model: model.for_variant(variant),
            train,
            train_fraction: self.file.train_fraction.unwrap_or(DEFAULT_TRAIN_FRACTION),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Writes `<name>.json` and `<name>.txt`, echoing the text to stdout.
    fn emit<T: Serialize>(&self, name: &str, report: &T, text: &str) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let json_path = self.path(&format!("{name}.json"));
        let body = serde_json::to_string_pretty(report)? + "\n";
        fs::write(&json_path, body).map_err(|e| Error::io(&json_path, e))?;
        let txt_path = self.path(&format!("{name}.txt"));
        fs::write(&txt_path, text).map_err(|e| Error::io(&txt_path, e))?;
        print!("{text}");
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn synthetic_corpus(ctx: &Ctx, count: usize) -> Result<Vec<Arc<WatershedDataset>>> {
    Ok(generate_corpus(&ctx.gen(), count, ctx.seed)?.into_iter().map(Arc::new).collect())
}

fn gen_data(ctx: &Ctx, args: &GenArgs) -> Result<()> {
    let mut gen = ctx.gen();
    if let Some(p) = args.pixels {
        gen.pixels = p;
    }
    if let Some(d) = args.days {
        gen.days = d;
    }
    if let Some(n) = args.noise {
        gen.noise_rel = n;
    }
    if let Some(t) = args.tau_km {
        gen.tau_km = t;
    }
    let corpus = generate_corpus(&gen, args.watersheds, ctx.seed)?;
    let mut rows = Vec::new();
    let mut text = String::new();
    for ds in &corpus {
        let dir = ctx.path(&ds.watershed_id);
        write_watershed_csv(ds, &dir)?;
        let mean = ds.discharge.iter().sum::<f64>() / ds.num_days() as f64;
        let peak = ds.discharge.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rows.push(json!({
            "watershed_id": ds.watershed_id,
            "seed": derive_seed(ctx.seed, &ds.watershed_id),
            "pixels": ds.num_pixels(),
            "days": ds.num_days(),
            "mean_discharge": mean,
            "peak_discharge": peak,
            "dir": dir,
        }));
        text.push_str(&format!("{}: {} pixels, {} days, mean discharge {mean:.3}, peak {peak:.3}\n", ds.watershed_id, ds.num_pixels(), ds.num_days()));
    }
    ctx.emit("gen-data", &json!({ "seed": ctx.seed, "gen": gen, "watersheds": rows }), &text)
}

fn train_cmd(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let ds = match &args.data {
        Some(dir) => load_watershed_dir(dir)?,
        None => generate_synthetic(&ctx.gen())?,
    };
    let mut settings = ctx.settings(args.variant, &args.opts);
    settings.model.seed = ctx.seed;
    settings.train.shuffle_seed = ctx.seed;
    if ctx.emit_traces && settings.train.executor == ExecutorKind::Sequential {
        return Err(Error::InvalidArgument("--emit-traces needs --executor distributed".into()));
    }
    let t = train_watershed(&ds, &settings.model, &settings.train, settings.train_fraction)?;
    let model = &t.outcome.model;
    let checkpoint = ctx.path("model.json");
    fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
    model.save(&checkpoint)?;
    if ctx.dump_partition {
        ctx.write_json("partition.json", &model.partition.dump())?;
    }
    if ctx.emit_traces {
        write_traces_jsonl(&t.outcome.traces, &ctx.path("traces.jsonl"))?;
    }
    let recovery = pixcon_recovery_score(model, ds.truth.as_ref()).ok();
    let summary = if t.outcome.traces.is_empty() { None } else { Some(trace_summary(&t.outcome.traces)?) };
    let report = json!({
        "watershed_id": ds.watershed_id,
        "variant": args.variant,
        "seed": ctx.seed,
        "model": settings.model,
        "train": settings.train,
        "train_fraction": settings.train_fraction,
        "epoch_losses": t.outcome.epoch_losses,
        "nse_train": t.nse_train,
        "nse_test": t.nse_test,
        "pixcon_spearman": recovery,
        "pixcon_weights": model.pixcon_weights(),
        "rebalances": t.outcome.rebalances,
        "param_digest": param_digest(model),
        "checkpoint": checkpoint,
        "timing": { "setup_secs": t.setup_secs, "total_secs": t.outcome.timing.total_secs, "epoch_secs": t.outcome.timing.epoch_secs },
        "trace_summary": summary,
    });
    let mut text = format!(
        "{} on {}: NSE train {:.4}, test {:.4} after {} epochs ({:.2}s)\n",
        args.variant.label(),
        ds.watershed_id,
        t.nse_train,
        t.nse_test,
        t.outcome.epoch_losses.len(),
        t.outcome.timing.total_secs
    );
    if let Some(r) = recovery {
        text.push_str(&format!("Pix-Con rank correlation with true contributions: {r:.3}\n"));
    }
    ctx.emit("train", &report, &text)
}

fn corpus_for(ctx: &Ctx, data: Option<&Path>, count: usize) -> Result<Vec<Arc<WatershedDataset>>> {
    match data {
        Some(dir) => Ok(load_corpus_dir(dir)?.into_iter().map(Arc::new).collect()),
        None => synthetic_corpus(ctx, count),
    }
}

fn compare_cmd(ctx: &Ctx, args: &CompareArgs) -> Result<()> {
    let datasets = corpus_for(ctx, args.data.as_deref(), args.watersheds)?;
    let seeds: Vec<u64> = (0..args.seeds).map(|i| ctx.seed.wrapping_add(i)).collect();
    let settings = ctx.settings(Variant::MultiheadPlusP, &args.opts);
    let table = run_comparison(&datasets, &args.variants, &seeds, &settings, ctx.pool)?;
    ctx.emit("compare", &table, &table.to_text())
}

fn bench_cmd(ctx: &Ctx, args: &BenchArgs) -> Result<()> {
    let datasets = synthetic_corpus(ctx, args.jobs)?;
    let settings = ctx.settings(Variant::MultiheadPlusP, &args.opts);
    let table = run_timing_table(&datasets, &args.variants, &settings, ctx.seed, ctx.pool)?;
    let mut text = table.to_text();
    let mp = if args.model_parallel {
        let mut model = heavy_model_config(args.opts.heads.unwrap_or(4)).with_seed(ctx.seed);
        if let Some(l) = args.opts.lookback {
            model.lookback = l;
        }
        let r = run_model_parallel_bench(&datasets[0], &model, &settings.train, settings.train_fraction)?;
        text.push_str(&r.to_text());
        Some(r)
    } else {
        None
    };
    ctx.emit("bench", &json!({ "seed": ctx.seed, "timing": table, "model_parallel": mp }), &text)
}

fn grad_check_cmd(ctx: &Ctx, args: &GradCheckArgs) -> Result<()> {
    let mut spec = GradCheckSpec {
        pixels: args.pixels,
        lookback: args.lookback,
        heads: args.heads,
        seed: ctx.seed,
        tolerance: args.tolerance,
        ..Default::default()
    };
    if let Some(m) = &ctx.file.model {
        spec.model = m.clone();
    }
    let suite = run_grad_check(&spec, &args.variants)?;
    ctx.emit("grad-check", &suite, &suite.to_text())?;
    if suite.passed {
        Ok(())
    } else {
        let worst = suite.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
        Err(Error::InvalidArgument(format!("gradient check failed: max relative error {worst:e} >= {}", args.tolerance)))
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.pool == 0 {
        return Err(Error::InvalidArgument("--pool must be at least 1".into()));
    }
    let ctx = Ctx {
        seed: cli.seed,
        pool: cli.pool,
        out: cli.out,
        emit_traces: cli.emit_traces,
        dump_partition: cli.dump_partition,
        file: read_config(cli.config.as_deref())?,
    };
    match &cli.command {
        Command::GenData(a) => gen_data(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Compare(a) => compare_cmd(&ctx, a),
        Command::Bench(a) => bench_cmd(&ctx, a),
        Command::GradCheck(a) => grad_check_cmd(&ctx, a),
    }
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
