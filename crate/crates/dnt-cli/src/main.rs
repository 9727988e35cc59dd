//! `dnt`: dataset synthesis, LBP extraction, training, evaluation,
//! ablation presets, and the self-verification suites.
//!
//! Exit codes: 0 success, 1 failed check or runtime failure, 2 usage or
//! configuration error. Every command is non-interactive and writes only
//! inside the directory it was given.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dnt::data::{
    load_image, read_manifest, resolve_path, synth_texture_dataset, DatasetManifest, Split,
    SynthConfig,
};
use dnt::lbp::{texture_descriptor, to_grayscale};
use dnt::model::{load_checkpoint, save_checkpoint, DntModel};
use dnt::train::{
    abln_paper, evaluate, run_ablation, train, write_ablation_csv, write_confusion_csv,
    write_epoch_log, write_metrics_json, EpochRecord,
};
use dnt::verify::{run_grad_suite, run_invariant_suite, run_lbp_suite, SuiteReport};
use dnt::{Error, Result};

mod config;

use config::{load_config, parse_lbp_config, RunConfig};

#[derive(Parser)]
#[command(name = "dnt", version, about = "Two-stream deep + LBP texture classifier")]
struct Cli {
    /// Overrides the seed of whichever subcommand runs.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Single-threaded, bitwise-reproducible execution.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Worker threads for batch parallelism (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic texture dataset and its manifest.
    Synth {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long = "per-class", default_value_t = 70)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 20.0)]
        sigma: f64,
        /// Fraction of each class assigned to the training split.
        #[arg(long = "split-ratio", default_value_t = 0.6)]
        split_ratio: f64,
        /// Output directory for the class folders and manifest.csv.
        #[arg(long)]
        out: PathBuf,
    },

    /// Write LBP descriptors to CSV, one row per image.
    ExtractLbp {
        /// Manifest whose records (both splits) are described.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Explicit image files, as an alternative to a manifest.
        images: Vec<PathBuf>,
        /// Neighborhoods as P,R pairs, e.g. --configs 8,1 16,2.
        #[arg(long, num_args = 1..)]
        configs: Vec<String>,
        /// Emit raw counts instead of L1-normalized histograms.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: PathBuf,
    },

    /// Train a model; all artifacts land in the run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// section.key=value settings applied over the config file.
        #[arg(long = "override")]
        overrides: Vec<String>,
        /// Dataset manifest (shorthand for --override data.manifest=...).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long = "run-dir")]
        run_dir: PathBuf,
    },

    /// Evaluate a checkpoint on a manifest's test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "run-dir")]
        run_dir: PathBuf,
    },

    /// Train and evaluate an ablation preset, one row per variant.
    Ablation {
        /// Only preset: abln-paper (backbone/erasing/patch-LBP grid).
        #[arg(long, default_value = "abln-paper")]
        preset: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override")]
        overrides: Vec<String>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long = "run-dir")]
        run_dir: PathBuf,
    },

    /// Run the self-check suites and report worst-case errors.
    Verify {
        /// lbp, grad, invariants, or all.
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // A second invocation in-process would fail; the CLI builds one
        // pool per run, so a failure here means the flag was ignored.
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("warning: thread pool already initialized; --threads ignored");
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Usage(_) | Error::Manifest(_) => 2u8,
                Error::Io { .. } | Error::Format(_) => 1u8,
            })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth { classes, per_class, size, sigma, split_ratio, out } => cmd_synth(
            SynthConfig {
                classes,
                per_class,
                size,
                noise_sigma: sigma,
                split_ratio,
                seed: cli.seed.unwrap_or(1),
            },
            &out,
        ),
        Command::ExtractLbp { manifest, images, configs, raw, out } => {
            cmd_extract_lbp(manifest.as_deref(), &images, &configs, !raw, &out)
        }
        Command::Train { config, overrides, manifest, run_dir } => {
            let cfg = effective_config(config.as_deref(), &overrides, manifest.as_deref(), &cli)?;
            cmd_train(&cfg, &run_dir)
        }
        Command::Eval { checkpoint, manifest, run_dir } => {
            cmd_eval(&checkpoint, &manifest, &run_dir)
        }
        Command::Ablation { preset, config, overrides, manifest, run_dir } => {
            if preset != "abln-paper" {
                return Err(Error::Usage(format!(
                    "unknown preset '{preset}' (available: abln-paper)"
                )));
            }
            let cfg = effective_config(config.as_deref(), &overrides, manifest.as_deref(), &cli)?;
            cmd_ablation(&cfg, &run_dir)
        }
        Command::Verify { suite } => cmd_verify(&suite, cli.seed.unwrap_or(1)),
    }
}

/// Merges the config file, --override list, and the explicit flags, in
/// that order, so the resolved config echoes exactly what the run used.
fn effective_config(
    path: Option<&Path>,
    overrides: &[String],
    manifest: Option<&Path>,
    cli: &Cli,
) -> Result<RunConfig> {
    let mut all = overrides.to_vec();
    if let Some(m) = manifest {
        all.push(format!("data.manifest={}", m.display()));
    }
    if let Some(s) = cli.seed {
        all.push(format!("training.seed={s}"));
    }
    if cli.deterministic {
        all.push("training.deterministic=true".to_string());
    }
    load_config(path, &all)
}

fn cmd_synth(cfg: SynthConfig, out: &Path) -> Result<ExitCode> {
    let (manifest_path, manifest) = synth_texture_dataset(out, &cfg)?;
    println!(
        "wrote {} images ({} train / {} test, {} classes) under {}",
        manifest.records.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Test),
        manifest.classes.len(),
        out.display()
    );
    println!("manifest: {}", manifest_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_extract_lbp(
    manifest: Option<&Path>,
    images: &[PathBuf],
    config_specs: &[String],
    normalize: bool,
    out: &Path,
) -> Result<ExitCode> {
    let configs = if config_specs.is_empty() {
        dnt::lbp::default_configs()
    } else {
        config_specs.iter().map(|s| parse_lbp_config(s)).collect::<Result<Vec<_>>>()?
    };
    let paths: Vec<PathBuf> = match (manifest, images.is_empty()) {
        (Some(m), true) => {
            let data = read_manifest(m)?;
            data.records.iter().map(|r| resolve_path(m, r)).collect()
        }
        (None, false) => images.to_vec(),
        (Some(_), false) => {
            return Err(Error::Usage("pass either --manifest or image files, not both".into()))
        }
        (None, true) => {
            return Err(Error::Usage("pass --manifest or at least one image file".into()))
        }
    };

    let width = 256 * configs.len();
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(out)
        .map_err(|e| Error::Format(format!("{}: {e}", out.display())))?;
    let mut header = vec!["path".to_string()];
    header.extend((0..width).map(|i| format!("f{i}")));
    writer.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;

    let mut written = 0usize;
    for path in &paths {
        let row = load_image(path)
            .and_then(|img| texture_descriptor(&to_grayscale(&img), &configs, normalize));
        match row {
            Ok(desc) => {
                let mut record = vec![path.display().to_string()];
                record.extend(desc.values.iter().map(|v| format!("{v}")));
                writer.write_record(&record).map_err(|e| Error::Format(e.to_string()))?;
                written += 1;
            }
            Err(e) => eprintln!("warning: skipping {}: {e}", path.display()),
        }
    }
    writer.flush().map_err(|e| Error::Format(e.to_string()))?;
    if written == 0 {
        return Err(Error::Format("no input image could be decoded".into()));
    }
    println!("wrote {written} of {} descriptors to {}", paths.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn manifest_from(cfg: &RunConfig) -> Result<(PathBuf, DatasetManifest)> {
    if cfg.data.manifest.is_empty() {
        return Err(Error::Usage(
            "no dataset manifest configured; pass --manifest or set data.manifest".into(),
        ));
    }
    let path = PathBuf::from(&cfg.data.manifest);
    let manifest = read_manifest(&path)?;
    Ok((path, manifest))
}

fn prepare_run_dir(run_dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(run_dir)
        .map_err(|e| Error::Io { path: run_dir.to_path_buf(), source: e })?;
    let resolved = run_dir.join("resolved-config.toml");
    fs::write(&resolved, cfg.to_toml()).map_err(|e| Error::Io { path: resolved, source: e })?;
    Ok(())
}

fn print_epoch(rec: &EpochRecord) {
    let val = match (rec.val_loss, rec.val_acc) {
        (Some(l), Some(a)) => format!("  val_loss {l:.4}  val_acc {a:5.2}%"),
        _ => String::new(),
    };
    println!(
        "epoch {:>3}  lr {:.1e}  loss {:.4}  acc {:5.2}%{val}  ({:.1}s)",
        rec.epoch, rec.lr, rec.train_loss, rec.train_acc, rec.seconds
    );
}

fn cmd_train(cfg: &RunConfig, run_dir: &Path) -> Result<ExitCode> {
    let model_cfg = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let aug_cfg = cfg.augmentation_config()?;
    let (manifest_path, manifest) = manifest_from(cfg)?;
    prepare_run_dir(run_dir, cfg)?;

    let mut model = DntModel::new(model_cfg, train_cfg.seed)?;
    println!("{} parameters; training on {}", model.param_count(), manifest_path.display());
    let every = cfg.training.checkpoint_every;
    let log = train(&mut model, &manifest, &manifest_path, &train_cfg, &aug_cfg, |m, rec| {
        print_epoch(rec);
        if every > 0 && (rec.epoch + 1) % every == 0 {
            save_checkpoint(m, &run_dir.join(format!("checkpoint-epoch-{:04}.ckpt", rec.epoch)))?;
        }
        Ok(())
    })?;

    write_epoch_log(&run_dir.join("epoch-log.csv"), &log)?;
    save_checkpoint(&model, &run_dir.join("checkpoint.ckpt"))?;
    println!("artifacts in {}: epoch-log.csv, checkpoint.ckpt, resolved-config.toml", run_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(checkpoint: &Path, manifest_path: &Path, run_dir: &Path) -> Result<ExitCode> {
    if !checkpoint.exists() {
        return Err(Error::Usage(format!("checkpoint {} does not exist", checkpoint.display())));
    }
    let model = load_checkpoint(checkpoint)?;
    let manifest = read_manifest(manifest_path)?;
    let report = evaluate(&model, &manifest, manifest_path)?;
    fs::create_dir_all(run_dir)
        .map_err(|e| Error::Io { path: run_dir.to_path_buf(), source: e })?;
    write_metrics_json(&run_dir.join("metrics.json"), &report)?;
    write_confusion_csv(&run_dir.join("confusion.csv"), &report)?;
    println!(
        "top1 {:.2}% over {} test samples (mean loss {:.4}); metrics.json and confusion.csv in {}",
        report.top1_accuracy,
        report.total,
        report.loss,
        run_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablation(cfg: &RunConfig, run_dir: &Path) -> Result<ExitCode> {
    let base = cfg.model_config()?;
    let train_cfg = cfg.train_config()?;
    let aug_cfg = cfg.augmentation_config()?;
    let (manifest_path, manifest) = manifest_from(cfg)?;
    prepare_run_dir(run_dir, cfg)?;

    let rows = run_ablation(
        &base,
        &abln_paper(),
        &manifest,
        &manifest_path,
        &train_cfg,
        &aug_cfg,
        |row| {
            println!("{}: top1 {:.2}% ({} parameters)", row.label, row.top1, row.params);
            Ok(())
        },
    )?;
    write_ablation_csv(&run_dir.join("ablation.csv"), &rows)?;
    println!("ablation table in {}", run_dir.join("ablation.csv").display());
    Ok(ExitCode::SUCCESS)
}

fn print_suite(suite: &SuiteReport) -> bool {
    println!("suite {}:", suite.suite);
    for check in &suite.checks {
        let status = if check.passed { "  ok  " } else { " FAIL " };
        println!(
            "  [{status}] {}: worst {:.3e} (tolerance {:.1e}); {}",
            check.name, check.worst, check.tolerance, check.detail
        );
    }
    let passed = suite.checks.iter().filter(|c| c.passed).count();
    println!("  {passed}/{} checks passed", suite.checks.len());
    suite.passed()
}

fn cmd_verify(suite: &str, seed: u64) -> Result<ExitCode> {
    let reports = match suite {
        "lbp" => vec![run_lbp_suite(seed)],
        "grad" => vec![run_grad_suite(seed)],
        "invariants" => vec![run_invariant_suite(seed)],
        "all" => vec![run_lbp_suite(seed), run_grad_suite(seed), run_invariant_suite(seed)],
        other => {
            return Err(Error::Usage(format!(
                "unknown suite '{other}' (available: lbp, grad, invariants, all)"
            )))
        }
    };
    let mut all_passed = true;
    for report in &reports {
        all_passed &= print_suite(report);
    }
    if all_passed {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("verification FAILED");
        Ok(ExitCode::FAILURE)
    }
}
