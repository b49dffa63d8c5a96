use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use zian_core::config::ExperimentConfig;
use zian_core::data::manifest::{load_image, load_manifest, write_manifest_set};
use zian_core::data::synthetic::{generate_set, SyntheticConfig};
use zian_core::experiment::{evaluate_checkpoint, infer_checkpoint, run_experiment_in, EvalReport};
use zian_core::gradsuite::{run_suite, DEFAULT_SEEDS, TOLERANCE};
use zian_core::overlay::render_overlay;

#[derive(Parser)]
#[command(name = "zian", version, about = "Coarse-to-fine landmark localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured data, then evaluate on its held-out split.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's checkpoint directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the images listed in a manifest.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Also write report.json and report.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the landmark of one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Write the image with the predicted point and heatmap drawn on it.
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Write synthetic images and their manifest.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Take the image generator settings from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference checks of every differentiable operation.
    Gradcheck {
        /// Only run checks whose name contains this.
        #[arg(long)]
        op: Option<String>,
        #[arg(long, default_value_t = DEFAULT_SEEDS.end)]
        seeds: u64,
    },
}

fn write_reports(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("report.json"), report.to_json())?;
    fs::write(dir.join("report.txt"), report.table())?;
    Ok(())
}

fn train(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = out.unwrap_or_else(|| cfg.checkpoint.dir.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let outcome = run_experiment_in(&cfg, Some(&dir))?;
    print!("{}", outcome.report.table());
    println!("center baseline AVG L2 {:.3}", outcome.report.center_baseline_avg_l2);
    if let Some(ckpt) = outcome.checkpoint {
        println!("checkpoint {}", ckpt.display());
    }
    Ok(())
}

fn eval(config: &Path, checkpoint: &Path, manifest: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let samples = load_manifest(manifest)?.load_all()?;
    if samples.is_empty() {
        bail!("{} lists no images", manifest.display());
    }
    let report = evaluate_checkpoint(&cfg, checkpoint, &samples)?;
    print!("{}", report.table());
    if let Some(dir) = out {
        write_reports(&dir, &report)?;
    }
    Ok(())
}

fn infer(checkpoint: &Path, image: &Path, overlay: Option<PathBuf>) -> Result<()> {
    let raw = load_image(image)?;
    let (_, pred) = infer_checkpoint(checkpoint, &raw)?;
    let line = serde_json::json!({
        "image": image.display().to_string(),
        "u": pred.u,
        "v": pred.v,
        "coarse_u": pred.coarse_u,
        "coarse_v": pred.coarse_v,
        "fell_back": pred.fell_back,
    });
    println!("{line}");
    if let Some(path) = overlay {
        let mut hm = pred.outputs.fine_hm.clone().unwrap_or_else(|| pred.outputs.coarse_hm.clone());
        hm.frame = pred.input_frame.then(&hm.frame);
        let info = render_overlay(&raw, Some(&hm), None, (pred.u, pred.v), &path)?;
        if info.pred_clamped {
            log::warn!("prediction ({:.1}, {:.1}) lies outside the image", pred.u, pred.v);
        }
    }
    Ok(())
}

fn synth(count: usize, out: &Path, seed: u64, config: Option<PathBuf>) -> Result<()> {
    let syn = match config {
        Some(p) => ExperimentConfig::load(p)?.data.synthetic,
        None => SyntheticConfig::default(),
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let samples = generate_set(seed, count, &syn)?;
    let manifest = write_manifest_set(&samples, out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn gradcheck(op: Option<String>, seeds: u64) -> Result<bool> {
    let summaries = run_suite(op.as_deref(), 0..seeds)?;
    println!("{:<24} {:>12} {:>6} {:>9} {:>9}  result", "check", "max rel", "seed", "elements", "seconds");
    let mut ok = true;
    for s in &summaries {
        ok &= s.passed();
        println!(
            "{:<24} {:>12.3e} {:>6} {:>9} {:>9.2}  {}",
            s.name,
            s.max_rel_error,
            s.worst_seed,
            s.checked,
            s.elapsed.as_secs_f64(),
            if s.passed() { "ok" } else { "FAIL" }
        );
    }
    println!("tolerance {TOLERANCE:e}, {seeds} seeds");
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out } => train(&config, out).map(|_| true),
        Command::Eval {
            config,
            checkpoint,
            manifest,
            out,
        } => eval(&config, &checkpoint, &manifest, out).map(|_| true),
        Command::Infer {
            checkpoint,
            image,
            overlay,
        } => infer(&checkpoint, &image, overlay).map(|_| true),
        Command::Synth {
            count,
            out,
            seed,
            config,
        } => synth(count, &out, seed, config).map(|_| true),
        Command::Gradcheck { op, seeds } => gradcheck(op, seeds),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
