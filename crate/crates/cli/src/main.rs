use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use kid_core::eval::pca::{class_token_features, write_pca_csv};
use kid_core::eval::plot::{line_plot, scatter_plot};
use kid_core::eval::viz::export_localization_map;
use kid_core::eval::{
    auc, export_correlation_viz, layerwise_activation_report, pca_features, robustness_sweep, Aggregation, EvalRecord,
    FrameScore,
};
use kid_core::synthesis::dataset::write_manifest;
use kid_core::training::{convergence_report, score_samples, synthesize_pairs, StopReason, TrainingData, CONVERGENCE_LOSS};
use kid_core::workflow::{initial_model, run_dir, source_images, test_samples, JsonlWriter};
use kid_core::{AttentionMode, Checkpoint, ConfigFile, ImageSample, Model, TrainMode, Trainer};

#[derive(Parser)]
#[command(name = "kid", version, about = "Knowledge-injection deepfake detection: training and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration; absent keys take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Seed for initialization, data order and synthesis; overrides the file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone)]
struct Trained {
    #[command(flatten)]
    common: Common,
    /// Weights to load instead of `<run dir>/model.kid`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a detector; writes metrics.jsonl, model.kid and summary.csv to the run directory.
    Train(Common),
    /// Score the held-out test set at frame and video level.
    Eval(Trained),
    /// Write real frames and their self-blended fakes as a manifest directory.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Destination; defaults to `<run dir>/synthesized`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlation heatmaps, patch activations, localization maps and a PCA scatter.
    Visualize {
        #[command(flatten)]
        trained: Trained,
        /// Number of test images to render.
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Per-layer injected activation for real and fake test images.
    ReportActivations(Trained),
    /// Test AUC under each degradation at every severity.
    Robustness(Trained),
    /// Train injected and full fine-tuning from the same start and compare steps to a loss level.
    ConvergenceCompare {
        #[command(flatten)]
        common: Common,
        /// Training-loss level to time both runs to.
        #[arg(long, default_value_t = CONVERGENCE_LOSS)]
        threshold: f64,
    },
}

fn load_config(common: &Common) -> Result<ConfigFile> {
    let mut file =
        ConfigFile::load(&common.config).with_context(|| format!("reading config {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        file.seed = seed;
    }
    file.into_training().context("validating config")?;
    Ok(file)
}

fn load_model(file: &ConfigFile, checkpoint: Option<&Path>) -> Result<Model> {
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| run_dir(file).join("model.kid"));
    let ck = Checkpoint::load(&path, Some(&file.backbone()))
        .with_context(|| format!("loading {} (train first or pass --checkpoint)", path.display()))?;
    Ok(ck.model)
}

fn attention(mode: TrainMode) -> AttentionMode {
    match mode {
        TrainMode::Baseline => AttentionMode::Baseline,
        _ => AttentionMode::Injected,
    }
}

fn write_summary(path: &Path, rows: &[(&str, String)]) -> Result<()> {
    let mut text = String::from("metric,value\n");
    for (k, v) in rows {
        text.push_str(&format!("{k},{v}\n"));
    }
    fs::write(path, text)?;
    Ok(())
}

fn starting_model(file: &ConfigFile) -> Result<Model> {
    Ok(initial_model(file, |h| {
        eprintln!("pretrained backbone: attribute loss {:.4} -> {:.4} over {} epochs", h[0], h[h.len() - 1], h.len());
    })?)
}

/// Trains from `model`, streaming one JSON line per epoch to `metrics`.
fn fit(file: &ConfigFile, model: Model, data: &TrainingData, metrics: &Path) -> Result<kid_core::TrainOutcome> {
    let cfg = file.into_training()?;
    let mut log = JsonlWriter::create(metrics)?;
    let mut write_err = None;
    let outcome = Trainer::with_model(cfg, model)?.run(data, |r| {
        eprintln!(
            "epoch {:>3} step {:>5} lr {:.2e} loss {:.4} (ce {:.4} dice {:.4} sup {:.4} con {:.4}) val auc {}",
            r.epoch,
            r.step,
            r.lr,
            r.train.total,
            r.train.ce,
            r.train.dice,
            r.train.suppression,
            r.train.contrast,
            r.val_auc.map_or("-".into(), |a| format!("{a:.4}")),
        );
        if let Err(e) = log.write(r) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing metrics");
    }
    Ok(outcome)
}

struct Scored {
    record: EvalRecord,
    frame_auc: f64,
    video_auc: f64,
}

fn score(file: &ConfigFile, model: &Model, samples: &[ImageSample]) -> Result<Scored> {
    let refs: Vec<&ImageSample> = samples.iter().collect();
    let scores = score_samples(model, file.mode, &refs)?;
    let frame_scores: Vec<FrameScore> = samples
        .iter()
        .zip(&scores)
        .map(|(s, &score)| FrameScore { id: s.id, group_id: s.group_id.clone(), score, label: s.label as u8 })
        .collect();
    let labels: Vec<u8> = frame_scores.iter().map(|f| f.label).collect();
    let frame_auc = auc(&scores, &labels)?;
    let record = EvalRecord { frame_scores, aggregation: Aggregation::Video };
    let video_auc = record.auc(file.video_frames, &mut ChaCha8Rng::seed_from_u64(file.seed))?;
    Ok(Scored { record, frame_auc, video_auc })
}

fn train(common: &Common) -> Result<()> {
    let file = load_config(common)?;
    let dir = run_dir(&file);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), file.to_toml())?;
    let data = TrainingData::split(source_images(&file)?, &file.into_training()?)?;
    let model = starting_model(&file)?;
    let outcome = fit(&file, model, &data, &dir.join("metrics.jsonl"))?;
    let step = outcome.log.last().map_or(0, |r| r.step);
    let ck = Checkpoint { model: outcome.model, optimizer: Some(outcome.optimizer), epoch: outcome.epochs, step };
    ck.save(&dir.join("model.kid"))?;
    if let StopReason::Diverged(why) = &outcome.stop {
        bail!("training diverged ({why}); last good weights saved to {}", dir.join("model.kid").display());
    }
    let scored = score(&file, &ck.model, &test_samples(&file)?)?;
    let seconds: f64 = outcome.log.iter().map(|r| r.wall_clock_s).sum();
    write_summary(
        &dir.join("summary.csv"),
        &[
            ("epochs", outcome.epochs.to_string()),
            ("stop", format!("{:?}", outcome.stop)),
            ("final_train_loss", outcome.log.last().map_or(f64::NAN, |r| r.train.total).to_string()),
            ("test_frame_auc", scored.frame_auc.to_string()),
            ("test_video_auc", scored.video_auc.to_string()),
            ("train_seconds", format!("{seconds:.1}")),
        ],
    )?;
    println!("{}: {:?} after {} epochs, test AUC {:.4}", dir.display(), outcome.stop, outcome.epochs, scored.frame_auc);
    Ok(())
}

fn eval(args: &Trained) -> Result<()> {
    let file = load_config(&args.common)?;
    let dir = run_dir(&file);
    fs::create_dir_all(&dir)?;
    let model = load_model(&file, args.checkpoint.as_deref())?;
    let scored = score(&file, &model, &test_samples(&file)?)?;
    let mut w = JsonlWriter::create(&dir.join("eval.jsonl"))?;
    for f in &scored.record.frame_scores {
        w.write(f)?;
    }
    write_summary(
        &dir.join("eval_summary.csv"),
        &[
            ("frames", scored.record.frame_scores.len().to_string()),
            ("frame_auc", scored.frame_auc.to_string()),
            ("video_auc", scored.video_auc.to_string()),
        ],
    )?;
    println!("frame AUC {:.4}, video AUC {:.4}", scored.frame_auc, scored.video_auc);
    Ok(())
}

fn synthesize(common: &Common, out: Option<&Path>) -> Result<()> {
    let file = load_config(common)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir(&file).join("synthesized"));
    let reals = source_images(&file)?;
    let first_id = reals.iter().map(|s| s.id).max().map_or(0, |m| m + 1);
    let pairs = synthesize_pairs(&reals, file.seed, first_id)?;
    let samples: Vec<ImageSample> = pairs.into_iter().flat_map(|(r, f)| [r, f]).collect();
    let records = write_manifest(&samples, &out)?;
    println!("{} images written to {}", records.len(), out.display());
    Ok(())
}

fn visualize(args: &Trained, count: usize) -> Result<()> {
    let file = load_config(&args.common)?;
    let dir = run_dir(&file).join("viz");
    let model = load_model(&file, args.checkpoint.as_deref())?;
    let samples = test_samples(&file)?;
    for s in samples.iter().take(count) {
        let tag = format!("{}_{}", if s.label as u8 == 1 { "fake" } else { "real" }, s.id);
        let sub = dir.join(&tag);
        fs::create_dir_all(&sub)?;
        s.pixels.save_png(&sub.join("input.png"))?;
        for layer in 0..file.num_layers {
            export_correlation_viz(&model, &s.pixels, layer, file.patch_activation, Some(&sub))?;
        }
        if file.mode != TrainMode::Baseline && file.localization {
            export_localization_map(&model, &s.pixels, Some(&sub.join("localization.png")))?;
        }
    }
    let features = class_token_features(&model, attention(file.mode), &samples)?;
    let pca = pca_features(&features, 2)?;
    write_pca_csv(&samples, &pca, &dir.join("pca.csv"))?;
    let points: Vec<(f64, f64, usize)> =
        samples.iter().enumerate().map(|(i, s)| (pca.coords[(i, 0)], pca.coords[(i, 1)], s.label as usize)).collect();
    scatter_plot(&points, &dir.join("pca.png"))?;
    println!("{} images and a PCA of {} samples written to {}", count.min(samples.len()), samples.len(), dir.display());
    Ok(())
}

fn report_activations(args: &Trained) -> Result<()> {
    let file = load_config(&args.common)?;
    let dir = run_dir(&file);
    fs::create_dir_all(&dir)?;
    let model = load_model(&file, args.checkpoint.as_deref())?;
    let report = layerwise_activation_report(&model, &test_samples(&file)?)?;
    report.write_csv(&dir.join("activations.csv"))?;
    report.plot(&dir.join("activations.png"))?;
    for l in 0..report.num_layers() {
        println!(
            "layer {l}: real {:.4} ± {:.4}, fake {:.4} ± {:.4}",
            report.real_mean[l], report.real_std[l], report.fake_mean[l], report.fake_std[l]
        );
    }
    Ok(())
}

fn robustness(args: &Trained) -> Result<()> {
    let file = load_config(&args.common)?;
    let dir = run_dir(&file);
    fs::create_dir_all(&dir)?;
    let model = load_model(&file, args.checkpoint.as_deref())?;
    let table = robustness_sweep(&model, attention(file.mode), &test_samples(&file)?)?;
    table.write_csv(&dir.join("robustness.csv"))?;
    table.plot(&dir.join("robustness.png"))?;
    for (kind, aucs) in &table.rows {
        let vals: Vec<String> = aucs.iter().map(|a| format!("{a:.3}")).collect();
        println!("{kind:>10}: {}", vals.join(" "));
    }
    Ok(())
}

#[derive(Serialize)]
struct ConvergenceSummary {
    threshold: f64,
    report: kid_core::training::Convergence,
    injected_epochs: usize,
    full_epochs: usize,
}

fn convergence_compare(common: &Common, threshold: f64) -> Result<()> {
    let file = load_config(common)?;
    if file.mode == TrainMode::Baseline {
        bail!("convergence comparison needs an injected configuration");
    }
    let dir = run_dir(&file).join("convergence");
    fs::create_dir_all(&dir)?;
    let data = TrainingData::split(source_images(&file)?, &file.into_training()?)?;
    let start = starting_model(&file)?;
    let injected_file = ConfigFile { mode: TrainMode::Injected, ..file.clone() };
    let full_file = ConfigFile { mode: TrainMode::FullFinetune, ..file.clone() };
    eprintln!("injected:");
    let injected = fit(&injected_file, start.clone(), &data, &dir.join("metrics_injected.jsonl"))?;
    eprintln!("full fine-tuning:");
    let full = fit(&full_file, start, &data, &dir.join("metrics_full.jsonl"))?;
    let report = convergence_report(&injected.log, &full.log, threshold);
    let curve = |log: &[kid_core::EpochRecord]| log.iter().map(|r| (r.step as f64, r.train.total)).collect::<Vec<_>>();
    line_plot(&[curve(&injected.log), curve(&full.log)], &dir.join("loss_curves.png"))?;
    let summary = ConvergenceSummary { threshold, report, injected_epochs: injected.epochs, full_epochs: full.epochs };
    fs::write(dir.join("convergence.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(c) => train(&c),
        Command::Eval(t) => eval(&t),
        Command::Synthesize { common, out } => synthesize(&common, out.as_deref()),
        Command::Visualize { trained, count } => visualize(&trained, count),
        Command::ReportActivations(t) => report_activations(&t),
        Command::Robustness(t) => robustness(&t),
        Command::ConvergenceCompare { common, threshold } => convergence_compare(&common, threshold),
    }
}
