//! Subcommands tying the toolkit together: dataset indexing, the
//! leakage-aware split, the similarity audit, preprocessing, a flow debug
//! dump, training, evaluation and the parameter table.

use clap::{Args, Parser, Subcommand};
use fgn_core::data::{
    build_manifest, load_manifest, save_manifest, similarity_audit, split_dataset,
    write_audit_csv, Split,
};
use fgn_core::error::{Error, Result};
use fgn_core::flow::{farneback_flow, write_flow, FarnebackParams};
use fgn_core::model::{build_model, ModelTopology, ModelVariant};
use fgn_core::train::{
    cache_file_name, evaluate_checkpoint, load_or_preprocess, train, write_eval_metrics_csv,
    write_predictions_csv, TrainConfig,
};
use fgn_core::video::{load_clip_dir, Label};
use std::ffi::OsString;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "fgn", version, about = "Flow gated network toolkit for video violence detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset manifest operations.
    Manifest {
        #[command(subcommand)]
        action: ManifestAction,
    },
    /// Assign train/test splits, grouped by source id.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output path; defaults to rewriting the input manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank intra-partition clip pairs by color-histogram similarity.
    Audit {
        #[arg(long)]
        manifest: PathBuf,
        /// Fraction of each partition's pairs to flag for review.
        #[arg(long, default_value_t = 0.3)]
        top: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Preprocess every manifest clip into the sample cache.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        /// Cache directory receiving one .clp file per clip.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long, default_value_t = 224)]
        side: usize,
    },
    /// Compute dense flow between two frames of a clip (debug dump).
    Flow {
        /// Clip directory holding frame_*.png files.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame_a: usize,
        #[arg(long, default_value_t = 1)]
        frame_b: usize,
    },
    /// Train a model per the config file (flags override file values).
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "cache")]
        cache_dir: PathBuf,
        /// Expected variant; rejected if the checkpoint differs.
        #[arg(long)]
        variant: Option<String>,
        /// Metrics CSV (epoch,step,lr,loss,train_acc,test_acc).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Per-clip predictions CSV.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        frames: usize,
        #[arg(long, default_value_t = 224)]
        side: usize,
        #[arg(long, default_value_t = 8)]
        fusion_window: usize,
    },
    /// Print the per-block trainable-parameter table of a variant.
    Params {
        #[arg(long)]
        variant: String,
    },
}

#[derive(Subcommand)]
enum ManifestAction {
    /// Walk root/{Violent,NonViolent}/<source>__<clip>/ and index clips.
    Build {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// key = value config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    side: Option<usize>,
    #[arg(long)]
    fusion_window: Option<usize>,
    #[arg(long)]
    eval_test: Option<bool>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    target_train_accuracy: Option<f64>,
}

/// Parses and runs; returns the process exit code. Usage errors exit 2,
/// execution failures print one line on stderr and exit 1.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage/help text; keep its exit code
            // semantics (0 for --help/--version, 2 for usage errors).
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn parse_split(s: &str) -> Result<Split> {
    Split::parse(s)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Manifest {
            action: ManifestAction::Build { root, out },
        } => {
            let build = build_manifest(&root)?;
            for line in &build.skipped {
                eprintln!("skipped {line}");
            }
            save_manifest(&build.manifest, &out)?;
            println!(
                "indexed {} clips ({} skipped) -> {}",
                build.manifest.entries.len(),
                build.skipped.len(),
                out.display()
            );
            Ok(())
        }
        Command::Split {
            manifest,
            fraction,
            seed,
            out,
        } => {
            let input = load_manifest(&manifest)?;
            let outcome = split_dataset(&input, fraction, seed)?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let target = out.unwrap_or(manifest);
            save_manifest(&outcome.manifest, &target)?;
            let train = outcome.manifest.split_entries(Split::Train).count();
            let test = outcome.manifest.split_entries(Split::Test).count();
            println!("assigned {train} train / {test} test -> {}", target.display());
            Ok(())
        }
        Command::Audit { manifest, top, out } => {
            let m = load_manifest(&manifest)?;
            let report = similarity_audit(&m, top)?;
            write_audit_csv(&out, &report)?;
            let flagged = report.pairs.iter().filter(|p| p.flagged).count();
            println!(
                "scored {} pairs, flagged {flagged} -> {}",
                report.pairs.len(),
                out.display()
            );
            Ok(())
        }
        Command::Preprocess {
            manifest,
            out,
            frames,
            side,
        } => {
            let m = load_manifest(&manifest)?;
            let geometry = fgn_core::preprocess::SampleGeometry { frames, side };
            for entry in &m.entries {
                load_or_preprocess(entry, &out, geometry)?;
                log::info!("cached {}", cache_file_name(&entry.clip_path));
            }
            println!("cached {} clips -> {}", m.entries.len(), out.display());
            Ok(())
        }
        Command::Flow {
            input,
            out,
            frame_a,
            frame_b,
        } => {
            let clip = load_clip_dir(&input, "debug", Label::NonViolent)?;
            let n = clip.frame_count();
            if frame_a >= n || frame_b >= n {
                return Err(Error::Config(format!(
                    "frame indices {frame_a},{frame_b} out of range for {n} frames"
                )));
            }
            let prev = clip.frames[frame_a].to_gray();
            let next = clip.frames[frame_b].to_gray();
            let flow = farneback_flow(&prev, &next, &FarnebackParams::default())?;
            write_flow(&out, &flow)?;
            println!(
                "wrote {}x{} flow field -> {}",
                flow.width,
                flow.height,
                out.display()
            );
            Ok(())
        }
        Command::Train(args) => {
            let mut config = match &args.config {
                Some(path) => TrainConfig::from_file(path)?,
                None => TrainConfig::default(),
            };
            apply_train_overrides(&mut config, &args)?;
            let report = train(&config)?;
            for e in &report.epochs {
                match e.test_accuracy {
                    Some(t) => println!(
                        "epoch {} loss {:.6} train_acc {:.4} test_acc {:.4}",
                        e.epoch, e.mean_loss, e.train_accuracy, t
                    ),
                    None => println!(
                        "epoch {} loss {:.6} train_acc {:.4}",
                        e.epoch, e.mean_loss, e.train_accuracy
                    ),
                }
            }
            println!(
                "finished after {} steps, final train accuracy {:.4}, checkpoint {}",
                report.steps,
                report.final_train_accuracy,
                config.checkpoint_path.display()
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
            cache_dir,
            variant,
            metrics,
            predictions,
            frames,
            side,
            fusion_window,
        } => {
            let m = load_manifest(&manifest)?;
            let split = parse_split(&split)?;
            let expected = variant.as_deref().map(ModelVariant::parse).transpose()?;
            let topology = ModelTopology {
                frames,
                side,
                fusion_window,
            };
            let report = evaluate_checkpoint(&checkpoint, expected, &m, split, &cache_dir, topology)?;
            println!(
                "{} accuracy {:.4} over {} clips (mean loss {:.6})",
                report.split.name(),
                report.accuracy,
                report.predictions.len(),
                report.mean_loss
            );
            println!(
                "confusion [truth x predicted]: NonViolent [{} {}], Violent [{} {}]",
                report.confusion[0][0],
                report.confusion[0][1],
                report.confusion[1][0],
                report.confusion[1][1]
            );
            if let Some(path) = metrics {
                write_eval_metrics_csv(&path, &report)?;
            }
            if let Some(path) = predictions {
                write_predictions_csv(&path, &report)?;
            }
            Ok(())
        }
        Command::Params { variant } => {
            let variant = ModelVariant::parse(&variant)?;
            let model = build_model::<f32>(variant, 0);
            println!("variant: {}", variant.name());
            println!("{:<16} {:<22} {:>10}", "block", "layer", "params");
            for (block, layer, count) in model.param_table() {
                if layer.is_empty() {
                    println!("{:<16} {:<22} {:>10}", block, "", count);
                } else {
                    println!("{:<16} {:<22} {:>10}", block, layer, count);
                }
            }
            Ok(())
        }
    }
}

fn apply_train_overrides(config: &mut TrainConfig, args: &TrainArgs) -> Result<()> {
    if let Some(v) = &args.variant {
        config.variant = ModelVariant::parse(v)?;
    }
    if let Some(lr) = args.lr {
        config.base_lr = lr;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(a) = args.augment {
        config.augment = a;
    }
    if let Some(d) = &args.cache_dir {
        config.cache_dir = d.clone();
    }
    if let Some(m) = &args.manifest {
        config.manifest_path = m.clone();
    }
    if let Some(c) = &args.checkpoint {
        config.checkpoint_path = c.clone();
    }
    if let Some(m) = &args.metrics {
        config.metrics_path = Some(m.clone());
    }
    if let Some(f) = args.frames {
        config.frames = f;
    }
    if let Some(s) = args.side {
        config.side = s;
    }
    if let Some(w) = args.fusion_window {
        config.fusion_window = w;
    }
    if let Some(e) = args.eval_test {
        config.eval_test_each_epoch = e;
    }
    if let Some(m) = args.max_steps {
        config.max_steps = Some(m);
    }
    if let Some(t) = args.target_train_accuracy {
        config.target_train_accuracy = Some(t);
    }
    Ok(())
}
