//! Deterministic training loop and evaluation.
//!
//! (manifest, config, seed) fully determine every emitted number: shuffling
//! and augmentation derive from explicit per-(epoch, clip) seeds, gradients
//! accumulate per sample in a fixed order, and the optimizer step is the
//! only parameter writer.

mod config;

pub use config::TrainConfig;

use crate::data::{load_manifest, Manifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::layers::SgdState;
use crate::model::{
    build_model_with, load_model, save_model, FlowGatedModel, ModelTopology, ModelVariant,
};
use crate::preprocess::{
    assemble_sample_with, augment, read_sample, write_sample, ClipSample, SampleGeometry,
};
use crate::tensor::Tape;
use crate::video::{load_clip_dir, Label};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: u64,
    pub final_train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipPrediction {
    pub clip_path: String,
    pub truth: Label,
    pub predicted: Label,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub split: Split,
    pub accuracy: f64,
    /// confusion[truth][predicted]; entries sum to the evaluated clip count.
    pub confusion: [[usize; 2]; 2],
    pub predictions: Vec<ClipPrediction>,
    pub mean_loss: f64,
}

fn fnv1a64(seed: u64, s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in seed.to_le_bytes().iter().chain(s.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Cache file for one clip: readable basename plus a path hash so distinct
/// clip directories never collide.
pub fn cache_file_name(clip_path: &str) -> String {
    let base = Path::new(clip_path)
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_else(|| "clip".to_string());
    format!("{base}_{:016x}.clp", fnv1a64(0, clip_path))
}

/// Loads a clip's preprocessed sample from the cache, assembling and caching
/// it first if missing. Cached geometry and label must match.
pub fn load_or_preprocess(
    entry: &ManifestEntry,
    cache_dir: &Path,
    geometry: SampleGeometry,
) -> Result<ClipSample> {
    std::fs::create_dir_all(cache_dir)?;
    let path = cache_dir.join(cache_file_name(&entry.clip_path));
    let sample = if path.exists() {
        read_sample(&path)?
    } else {
        let clip = load_clip_dir(Path::new(&entry.clip_path), &entry.source_id, entry.label)?;
        let sample = assemble_sample_with(&clip, geometry, &Default::default())?;
        write_sample(&path, &sample)?;
        sample
    };
    let expected = [geometry.frames, geometry.side, geometry.side, 5];
    if sample.data.shape() != expected {
        return Err(Error::SampleCache(format!(
            "{} holds dims {:?}, expected {:?}; clear the cache after changing geometry",
            path.display(),
            sample.data.shape(),
            expected
        )));
    }
    if sample.label != entry.label {
        return Err(Error::SampleCache(format!(
            "{} holds label {}, manifest says {}",
            path.display(),
            sample.label.name(),
            entry.label.name()
        )));
    }
    Ok(sample)
}

struct MetricsWriter {
    out: Option<BufWriter<File>>,
}

impl MetricsWriter {
    fn create(path: &Option<PathBuf>) -> Result<Self> {
        let out = match path {
            Some(p) => {
                if let Some(parent) = p.parent().filter(|q| !q.as_os_str().is_empty()) {
                    std::fs::create_dir_all(parent)?;
                }
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "epoch,step,lr,loss,train_acc,test_acc")?;
                Some(w)
            }
            None => None,
        };
        Ok(Self { out })
    }

    fn row(
        &mut self,
        epoch: usize,
        step: u64,
        lr: f64,
        loss: f64,
        train_acc: f64,
        test_acc: Option<f64>,
    ) -> Result<()> {
        if let Some(w) = self.out.as_mut() {
            let test = test_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
            writeln!(w, "{epoch},{step},{lr:.12},{loss:.6},{train_acc:.6},{test}")?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(w) = self.out.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

/// Forward + loss of one sample; returns (loss, predicted class, grads by
/// parameter name).
fn sample_pass(
    model: &FlowGatedModel<f32>,
    sample: &ClipSample,
) -> Result<(f64, usize, BTreeMap<String, Vec<f32>>)> {
    let mut tape = Tape::new();
    let id = tape.leaf(&sample.data);
    let record = model.forward_sample(&mut tape, id)?;
    let label = sample.label.class_index();
    let loss_id = tape.softmax_cross_entropy(record.logits, &[label])?;
    let loss = tape.values(loss_id)[0] as f64;
    let logits = tape.values(record.logits);
    let predicted = if logits[1] > logits[0] { 1 } else { 0 };
    tape.backward(loss_id)?;
    let grads = record
        .params
        .entries
        .iter()
        .map(|(name, pid)| (name.clone(), tape.grad(*pid).to_vec()))
        .collect();
    Ok((loss, predicted, grads))
}

pub fn train(config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let manifest = load_manifest(&config.manifest_path)?;
    if let Some(e) = manifest.entries.iter().find(|e| e.split == Split::Unassigned) {
        return Err(Error::UnassignedSplit(e.clip_path.clone()));
    }
    let train_entries: Vec<&ManifestEntry> = manifest.split_entries(Split::Train).collect();
    if train_entries.is_empty() {
        return Err(Error::Training("train split is empty".into()));
    }

    let topology = config.topology();
    let geometry = config.geometry();
    let mut model = build_model_with::<f32>(config.variant, config.seed, topology)?;
    let mut sgd = SgdState::<f32>::new(config.base_lr, config.momentum, config.decay);
    let mut metrics = MetricsWriter::create(&config.metrics_path)?;

    let mut report = TrainReport {
        epochs: Vec::new(),
        steps: 0,
        final_train_accuracy: 0.0,
    };

    'epochs: for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_entries.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(config.seed.wrapping_add((epoch as u64).wrapping_mul(0x9E3779B97F4A7C15)));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        let mut epoch_seen = 0usize;
        let mut epoch_steps = 0usize;

        for batch in order.chunks(config.batch_size) {
            if let Some(max) = config.max_steps {
                if sgd.iteration() >= max {
                    break 'epochs;
                }
            }
            let step = sgd.iteration();
            let lr = sgd.current_lr();

            let mut batch_loss = 0.0;
            for &idx in batch {
                let entry = train_entries[idx];
                let mut sample = load_or_preprocess(entry, &config.cache_dir, geometry)?;
                if config.augment {
                    let sample_seed = fnv1a64(config.seed, &format!("{}#{epoch}", entry.clip_path));
                    sample = augment(&sample, sample_seed);
                }
                let (loss, predicted, grads) =
                    sample_pass(&model, &sample).map_err(|e| {
                        Error::Training(format!(
                            "at epoch {epoch} step {step} clip {}: {e}",
                            entry.clip_path
                        ))
                    })?;
                if !loss.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite loss at epoch {epoch} step {step} clip {}",
                        entry.clip_path
                    )));
                }
                batch_loss += loss;
                epoch_correct += (predicted == sample.label.class_index()) as usize;
                epoch_seen += 1;
                for (name, param) in model.params_mut() {
                    if let Some(g) = grads.get(&name) {
                        param.accumulate_grad(g)?;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f32;
            let mut params = model.params_mut();
            for (_, param) in params.iter_mut() {
                param.scale_grad(scale);
            }
            sgd.step(params)?;

            batch_loss /= batch.len() as f64;
            epoch_loss += batch_loss;
            epoch_steps += 1;
            metrics.row(
                epoch,
                step,
                lr,
                batch_loss,
                epoch_correct as f64 / epoch_seen as f64,
                None,
            )?;
        }

        let train_accuracy = epoch_correct as f64 / epoch_seen.max(1) as f64;
        let mean_loss = epoch_loss / epoch_steps.max(1) as f64;
        save_model(&model, &config.checkpoint_path)?;

        let test_accuracy = if config.eval_test_each_epoch {
            Some(evaluate(&model, &manifest, Split::Test, &config.cache_dir)?.accuracy)
        } else {
            None
        };
        metrics.row(
            epoch,
            sgd.iteration(),
            sgd.current_lr(),
            mean_loss,
            train_accuracy,
            test_accuracy,
        )?;
        report.epochs.push(EpochMetrics {
            epoch,
            mean_loss,
            train_accuracy,
            test_accuracy,
        });
        report.steps = sgd.iteration();
        report.final_train_accuracy = train_accuracy;

        if let Some(target) = config.target_train_accuracy {
            // In-epoch accuracy is measured before each batch's update, so
            // confirm against the saved parameters before stopping.
            if train_accuracy >= target {
                let confirmed =
                    evaluate(&model, &manifest, Split::Train, &config.cache_dir)?.accuracy;
                report.final_train_accuracy = confirmed;
                if confirmed >= target {
                    break;
                }
            }
        }
    }

    save_model(&model, &config.checkpoint_path)?;
    metrics.finish()?;
    Ok(report)
}

/// Deterministic, augmentation-free evaluation of one split.
pub fn evaluate(
    model: &FlowGatedModel<f32>,
    manifest: &Manifest,
    split: Split,
    cache_dir: &Path,
) -> Result<EvalReport> {
    let entries: Vec<&ManifestEntry> = manifest.split_entries(split).collect();
    if entries.is_empty() {
        return Err(Error::Training(format!("{} split is empty", split.name())));
    }
    let topology = model.topology();
    let geometry = SampleGeometry {
        frames: topology.frames,
        side: topology.side,
    };

    let mut confusion = [[0usize; 2]; 2];
    let mut predictions = Vec::with_capacity(entries.len());
    let mut loss_sum = 0.0f64;
    for entry in &entries {
        let sample = load_or_preprocess(entry, cache_dir, geometry)?;
        let mut tape = Tape::new();
        let id = tape.leaf(&sample.data);
        let record = model.forward_sample(&mut tape, id)?;
        let loss_id = tape.softmax_cross_entropy(record.logits, &[entry.label.class_index()])?;
        loss_sum += tape.values(loss_id)[0] as f64;
        let logits = tape.values(record.logits);
        let predicted = if logits[1] > logits[0] { 1 } else { 0 };
        confusion[entry.label.class_index()][predicted] += 1;
        predictions.push(ClipPrediction {
            clip_path: entry.clip_path.clone(),
            truth: entry.label,
            predicted: Label::from_class_index(predicted)?,
        });
    }
    let total = entries.len();
    let accuracy = (confusion[0][0] + confusion[1][1]) as f64 / total as f64;
    Ok(EvalReport {
        split,
        accuracy,
        confusion,
        predictions,
        mean_loss: loss_sum / total as f64,
    })
}

/// Loads a checkpoint (validating the variant when one is expected) and
/// evaluates a split.
pub fn evaluate_checkpoint(
    checkpoint_path: &Path,
    expected_variant: Option<ModelVariant>,
    manifest: &Manifest,
    split: Split,
    cache_dir: &Path,
    topology: ModelTopology,
) -> Result<EvalReport> {
    let model = load_model(checkpoint_path, topology)?;
    if let Some(expected) = expected_variant {
        if model.variant() != expected {
            return Err(Error::VariantMismatch {
                expected: expected.name().to_string(),
                found: model.variant().name().to_string(),
            });
        }
    }
    evaluate(&model, manifest, split, cache_dir)
}

/// Single-row metrics CSV for an evaluation run (same column layout as the
/// training CSV; the split's accuracy lands in its matching column).
pub fn write_eval_metrics_csv(path: &Path, report: &EvalReport) -> Result<()> {
    if let Some(parent) = path.parent().filter(|q| !q.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,step,lr,loss,train_acc,test_acc")?;
    let (train_col, test_col) = match report.split {
        Split::Train => (format!("{:.6}", report.accuracy), String::new()),
        _ => (String::new(), format!("{:.6}", report.accuracy)),
    };
    writeln!(
        w,
        "0,0,,{:.6},{train_col},{test_col}",
        report.mean_loss
    )?;
    w.flush()?;
    Ok(())
}

/// Per-clip predictions as CSV (clip, truth, predicted, correct).
pub fn write_predictions_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Training(e.to_string()))?;
    w.write_record(["clip", "truth", "predicted", "correct"])
        .map_err(|e| Error::Training(e.to_string()))?;
    for p in &report.predictions {
        w.write_record([
            p.clip_path.as_str(),
            p.truth.name(),
            p.predicted.name(),
            if p.truth == p.predicted { "true" } else { "false" },
        ])
        .map_err(|e| Error::Training(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
