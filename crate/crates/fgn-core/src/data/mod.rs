//! Dataset indexing, the source-grouped train/test split, and the color
//! histogram similarity audit.
//!
//! Clips extracted from the same source video must never straddle the
//! train/test boundary, so assignment happens per source group, greedily
//! balancing per-label proportions toward the target fraction.

mod audit;

pub use audit::{
    audit_features, clip_histogram, cosine_similarity, similarity_audit, write_audit_csv,
    AuditReport, HistogramFeature, PairScore, HISTOGRAM_BINS, HISTOGRAM_DIMS,
};

use crate::error::{Error, Result};
use crate::video::Label;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::Manifest(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_path: String,
    pub label: Label,
    pub source_id: String,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if e.source_id.is_empty() {
                return Err(Error::Manifest(format!(
                    "entry {} has an empty source_id",
                    e.clip_path
                )));
            }
            if !seen.insert(e.clip_path.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate clip_path {}",
                    e.clip_path
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn split_entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn all_assigned(&self) -> bool {
        self.entries.iter().all(|e| e.split != Split::Unassigned)
    }
}

/// Result of walking a dataset root: the manifest plus one line per skipped
/// directory.
#[derive(Debug)]
pub struct ManifestBuild {
    pub manifest: Manifest,
    pub skipped: Vec<String>,
}

/// Walks `root/{Violent,NonViolent}/<source_id>__<clip_id>/` and indexes one
/// entry per clip directory. Malformed names and degenerate clip dirs are
/// reported and skipped, never fatal.
pub fn build_manifest(root: &Path) -> Result<ManifestBuild> {
    let mut entries = Vec::new();
    let mut skipped = Vec::new();

    for label in [Label::Violent, Label::NonViolent] {
        let label_dir = root.join(label.name());
        if !label_dir.is_dir() {
            continue;
        }
        let mut clip_dirs: Vec<_> = std::fs::read_dir(&label_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        clip_dirs.sort();
        for dir in clip_dirs {
            if !dir.is_dir() {
                skipped.push(format!("{}: not a directory", dir.display()));
                continue;
            }
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_default();
            let Some((source_id, _clip_id)) = name.split_once("__") else {
                skipped.push(format!(
                    "{}: name lacks the <source_id>__<clip_id> form",
                    dir.display()
                ));
                continue;
            };
            if source_id.is_empty() {
                skipped.push(format!("{}: empty source id", dir.display()));
                continue;
            }
            let frame_count = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().extension().map(|x| x == "png").unwrap_or(false))
                .count();
            if frame_count < 2 {
                skipped.push(format!(
                    "{}: {} frame(s), need at least 2",
                    dir.display(),
                    frame_count
                ));
                continue;
            }
            entries.push(ManifestEntry {
                clip_path: dir.to_string_lossy().to_string(),
                label,
                source_id: source_id.to_string(),
                split: Split::Unassigned,
            });
        }
    }
    entries.sort_by(|a, b| a.clip_path.cmp(&b.clip_path));
    Ok(ManifestBuild {
        manifest: Manifest::new(entries)?,
        skipped,
    })
}

fn fnv1a64(seed: u64, s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in seed.to_le_bytes().iter().chain(s.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Outcome of a split: the assigned manifest plus warnings about groups too
/// large to balance.
#[derive(Debug)]
pub struct SplitOutcome {
    pub manifest: Manifest,
    pub warnings: Vec<String>,
}

/// Assigns every source group to train or test.
///
/// Groups are processed largest first (ties ordered by a seeded hash of the
/// source id, which makes the result deterministic in the seed and invariant
/// to the entry order); each goes to whichever side keeps the per-label
/// train counts closest to `train_fraction`, preferring train on ties. All
/// clips of one source always land in the same partition.
pub fn split_dataset(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<SplitOutcome> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!(
            "train_fraction must be in [0,1], got {train_fraction}"
        )));
    }
    // counts per group: (violent, nonviolent)
    let mut groups: BTreeMap<&str, [usize; 2]> = BTreeMap::new();
    for e in &manifest.entries {
        if e.source_id.is_empty() {
            return Err(Error::Manifest(format!(
                "entry {} has an empty source_id",
                e.clip_path
            )));
        }
        let counts = groups.entry(&e.source_id).or_insert([0, 0]);
        counts[e.label.class_index()] += 1;
    }
    let mut totals = [0usize; 2];
    for counts in groups.values() {
        totals[0] += counts[0];
        totals[1] += counts[1];
    }
    let targets = [
        train_fraction * totals[0] as f64,
        train_fraction * totals[1] as f64,
    ];

    let mut order: Vec<(&str, [usize; 2])> = groups.iter().map(|(k, v)| (*k, *v)).collect();
    order.sort_by_key(|(id, counts)| {
        (std::cmp::Reverse(counts[0] + counts[1]), fnv1a64(seed, id))
    });

    let mut warnings = Vec::new();
    let mut train_counts = [0.0f64; 2];
    let mut assignment: BTreeMap<&str, Split> = BTreeMap::new();
    for (id, counts) in order {
        for l in 0..2 {
            if counts[l] as f64 > targets[l] && targets[l] > 0.0 {
                warnings.push(format!(
                    "source {id} alone exceeds the train fraction of its label ({} clips vs target {:.1})",
                    counts[l], targets[l]
                ));
            }
        }
        let cost = |tc: &[f64; 2]| {
            (tc[0] - targets[0]).powi(2) + (tc[1] - targets[1]).powi(2)
        };
        let with_train = [
            train_counts[0] + counts[0] as f64,
            train_counts[1] + counts[1] as f64,
        ];
        let split = if cost(&with_train) <= cost(&train_counts) {
            train_counts = with_train;
            Split::Train
        } else {
            Split::Test
        };
        assignment.insert(id, split);
    }

    let entries = manifest
        .entries
        .iter()
        .map(|e| ManifestEntry {
            split: assignment[e.source_id.as_str()],
            ..e.clone()
        })
        .collect();
    Ok(SplitOutcome {
        manifest: Manifest::new(entries)?,
        warnings,
    })
}

/// Newline-delimited serialization: a version header object followed by one
/// JSON object per entry.
pub fn save_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", serde_json::json!({ "manifest_version": MANIFEST_VERSION }))?;
    for e in &manifest.entries {
        writeln!(
            w,
            "{}",
            serde_json::to_string(e).map_err(|e| Error::Manifest(e.to_string()))?
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Manifest("empty manifest file".into()))??;
    let header: serde_json::Value =
        serde_json::from_str(&header).map_err(|e| Error::Manifest(format!("bad header: {e}")))?;
    let version = header
        .get("manifest_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Manifest("missing manifest_version".into()))?;
    if version != MANIFEST_VERSION as u64 {
        return Err(Error::Manifest(format!(
            "unsupported manifest version {version}"
        )));
    }
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest(format!("line {}: {e}", i + 2)))?;
        entries.push(entry);
    }
    Manifest::new(entries)
}
