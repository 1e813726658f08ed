use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bimdiff::block::Block;
use bimdiff::checkpoint;
use bimdiff::config::Config;
use bimdiff::data::{load_csv, synth_generate, write_csv, Dataset, MissingPolicy, Normalizer, SynthSpec};
use bimdiff::experiment::{apply_variant, load_dataset, prepare, train_and_test, VARIANTS};
use bimdiff::par;
use bimdiff::trainer::{evaluate, forecast_window, EvalOptions};
use bimdiff::{BimDiff, Error, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bimdiff", version, about = "Memory-augmented diffusion forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override `section.field=value` or `field=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for per-sample and per-window work.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct FromCheckpoint {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV to read instead of the dataset named in the checkpoint's config.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    substeps: Option<usize>,
    /// Sampling seed; defaults to the training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured data and score the test split.
    Train(Common),
    /// Forecast the horizon after the last lookback window of the input.
    Forecast(FromCheckpoint),
    /// MAE/MSE of a checkpoint on the test split.
    Evaluate(FromCheckpoint),
    /// Train and score each memory variant.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of: full, w/o-semantic, w/o-episodic, w/o-both, w/o-shared.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
    },
    /// Semantic and episodic recall weights for the last lookback window.
    ExportScores(FromCheckpoint),
    /// Write the synthetic cross-channel dataset.
    Synth(Common),
}

fn load_config(c: &Common) -> Result<Config> {
    let text = match &c.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = Config::from_toml_with_overrides(&text, &c.set)?;
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_snapshot(dir: &Path, cfg: &Config) -> Result<()> {
    fs::write(dir.join("resolved_config.toml"), cfg.resolved_toml())?;
    Ok(())
}

fn cmd_train(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    create_out(&c.out)?;
    let ds = load_dataset(&cfg)?;
    let data = prepare(&mut cfg, &ds, None)?;
    write_snapshot(&c.out, &cfg)?;
    write_json(&c.out.join("dataset_stats.json"), &serde_json::to_value(&data.stats)?)?;
    let mut log = BufWriter::new(fs::File::create(c.out.join("training.log"))?);
    let every = cfg.train.checkpoint_every;
    let out = c.out.clone();
    let norm = data.normalizer.clone();
    let run = train_and_test(&cfg, &data, Some(&mut log), |epoch, t| {
        if every > 0 && epoch % every == 0 {
            checkpoint::save(&out.join(format!("checkpoint_epoch{epoch}.bin")), &t.model, &norm)?;
        }
        Ok(())
    })?;
    log.flush()?;
    checkpoint::save(&c.out.join("checkpoint.bin"), &run.trainer.model, &data.normalizer)?;
    let metrics = json!({
        "split": "test",
        "mae": run.test.mae,
        "mse": run.test.mse,
        "windows": run.test.windows,
        "steps": run.summary.steps,
        "epochs": run.summary.epochs,
        "aborted_steps": run.summary.aborted_steps,
        "best_val_mae": run.summary.best_val_mae,
        "seed": cfg.train.seed,
        "config_hash": cfg.hash(),
    });
    write_json(&c.out.join("metrics.json"), &metrics)?;
    println!("test mae={:.6} mse={:.6} steps={}", run.test.mae, run.test.mse, run.summary.steps);
    Ok(())
}

struct Loaded {
    model: BimDiff,
    norm: Normalizer,
    cfg: Config,
    seed: u64,
}

fn load_checkpoint(a: &FromCheckpoint) -> Result<Loaded> {
    let (model, norm) = checkpoint::load(&a.checkpoint)?;
    let mut cfg = model.config().clone();
    if let Some(s) = a.substeps {
        cfg.eval.substeps = s;
        cfg.eval.sampler = "ddim".into();
    }
    cfg.validate()?;
    let seed = a.seed.unwrap_or(cfg.train.seed);
    create_out(&a.out)?;
    write_snapshot(&a.out, &cfg)?;
    Ok(Loaded { model, norm, cfg, seed })
}

fn input_dataset(a: &FromCheckpoint, cfg: &Config) -> Result<Dataset> {
    match &a.input {
        Some(p) => load_csv(p, cfg.data.missing.parse::<MissingPolicy>()?),
        None => load_dataset(cfg),
    }
}

/// Normalised last `L` rows of the input.
fn last_lookback(ds: &Dataset, l: &Loaded) -> Result<Block> {
    let lookback = l.cfg.model.lookback;
    if ds.samples() < lookback {
        return Err(Error::Data(format!("input has {} rows, lookback needs {lookback}", ds.samples())));
    }
    l.norm.normalize(&ds.values.slice_rows(ds.samples() - lookback, ds.samples()))
}

fn cmd_forecast(a: &FromCheckpoint) -> Result<()> {
    let l = load_checkpoint(a)?;
    let ds = input_dataset(a, &l.cfg)?;
    let x = last_lookback(&ds, &l)?;
    let opts = EvalOptions::from_config(&l.cfg, l.seed);
    let pred = l.norm.denormalize(&forecast_window(&l.model, &x, &opts, 0)?)?;
    let steps: Vec<String> = (1..=pred.rows()).map(|h| h.to_string()).collect();
    write_csv(&a.out.join("forecasts.csv"), &ds.channel_names, Some(("step", &steps)), &pred)?;
    let sidecar = json!({
        "config_hash": l.cfg.hash(),
        "seed": l.seed,
        "substeps": l.cfg.eval.substeps,
        "sampler": l.cfg.eval.sampler,
        "horizon": pred.rows(),
        "channels": pred.cols(),
    });
    write_json(&a.out.join("forecasts.json"), &sidecar)
}

fn cmd_evaluate(a: &FromCheckpoint) -> Result<()> {
    let l = load_checkpoint(a)?;
    let mut cfg = l.cfg.clone();
    let ds = input_dataset(a, &cfg)?;
    let data = prepare(&mut cfg, &ds, Some(&l.norm))?;
    let m = evaluate(&l.model, &data.test, &data.normalizer, &EvalOptions::from_config(&cfg, l.seed))?;
    let metrics = json!({
        "split": "test",
        "mae": m.mae,
        "mse": m.mse,
        "windows": m.windows,
        "substeps": cfg.eval.substeps,
        "sampler": cfg.eval.sampler,
        "seed": l.seed,
        "config_hash": cfg.hash(),
    });
    write_json(&a.out.join("metrics.json"), &metrics)?;
    println!("test mae={:.6} mse={:.6}", m.mae, m.mse);
    Ok(())
}

fn cmd_ablate(c: &Common, variants: Option<&[String]>) -> Result<()> {
    let mut base = load_config(c)?;
    create_out(&c.out)?;
    let names: Vec<String> = match variants {
        Some(v) => v.iter().map(|s| s.trim().to_string()).collect(),
        None => VARIANTS.iter().map(|s| s.to_string()).collect(),
    };
    let ds = load_dataset(&base)?;
    let data = prepare(&mut base, &ds, None)?;
    write_snapshot(&c.out, &base)?;
    let mut rows = Vec::new();
    let mut log = BufWriter::new(fs::File::create(c.out.join("training.log"))?);
    for name in &names {
        let cfg = apply_variant(&base, name)?;
        cfg.validate()?;
        writeln!(log, "variant={name} config_hash={}", cfg.hash())?;
        let run = train_and_test(&cfg, &data, Some(&mut log), |_, _| Ok(()))?;
        println!("{name:<14} mae={:.6} mse={:.6}", run.test.mae, run.test.mse);
        rows.push(json!({
            "variant": name,
            "mae": run.test.mae,
            "mse": run.test.mse,
            "windows": run.test.windows,
            "config_hash": cfg.hash(),
        }));
    }
    log.flush()?;
    write_json(&c.out.join("metrics.json"), &json!({ "seed": base.train.seed, "rows": rows }))
}

fn cmd_export_scores(a: &FromCheckpoint) -> Result<()> {
    let l = load_checkpoint(a)?;
    let ds = input_dataset(a, &l.cfg)?;
    let x = last_lookback(&ds, &l)?;
    let (semantic, episodic) = l.model.attention_scores(&x)?;
    let rows: Vec<String> = ds.channel_names.clone();
    let write = |name: &str, b: Option<Block>, prefix: &str| -> Result<()> {
        let b = b.unwrap_or_else(|| Block::zeros(rows.len(), 0));
        let header: Vec<String> = (0..b.cols()).map(|i| format!("{prefix}{i}")).collect();
        write_csv(&a.out.join(name), &header, Some(("channel", &rows)), &b)
    };
    write("scores_semantic.csv", semantic, "block")?;
    write("scores_episodic.csv", episodic, "record")
}

fn cmd_synth(c: &Common) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(s) = c.seed {
        cfg.synth.seed = s;
    }
    create_out(&c.out)?;
    write_snapshot(&c.out, &cfg)?;
    let (ds, events) = synth_generate(&SynthSpec::from(&cfg.synth), cfg.synth.seed)?;
    write_csv(&c.out.join("synthetic.csv"), &ds.channel_names, None, &ds.values)?;
    let ev = Block::from_vec(
        events.len(),
        3,
        events.iter().flat_map(|e| [e.motif as f64, e.channel as f64, e.start as f64]).collect(),
    )?;
    let names = ["motif".to_string(), "channel".to_string(), "start".to_string()];
    write_csv(&c.out.join("events.csv"), &names, None, &ev)?;
    write_json(
        &c.out.join("dataset_stats.json"),
        &json!({ "name": ds.name, "samples": ds.samples(), "channels": ds.channels(), "events": events.len() }),
    )
}

fn run(cli: &Cli) -> Result<()> {
    let threads = match &cli.command {
        Command::Train(c) | Command::Synth(c) | Command::Ablate { common: c, .. } => c.threads,
        Command::Forecast(a) | Command::Evaluate(a) | Command::ExportScores(a) => a.threads,
    };
    if threads == 0 {
        return Err(Error::Config("--threads must be positive".into()));
    }
    par::with_threads(threads, || match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Ablate { common, variants } => cmd_ablate(common, variants.as_deref()),
        Command::ExportScores(a) => cmd_export_scores(a),
        Command::Synth(c) => cmd_synth(c),
    })?
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message, "exit_code": code }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 1),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string(), e.exit_code() as u8),
    }
}
