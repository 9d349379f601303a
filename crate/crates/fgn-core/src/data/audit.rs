//! Near-duplicate detection inside each partition: a 96-dimensional color
//! histogram per clip, all intra-partition pairs ranked by cosine
//! similarity, the top fraction flagged for human review.

use super::{Manifest, Split};
use crate::error::{Error, Result};
use crate::video::{load_clip_dir, VideoClip};
use std::path::Path;

pub const HISTOGRAM_BINS: usize = 32;
pub const HISTOGRAM_DIMS: usize = 3 * HISTOGRAM_BINS;
/// At most this many frames feed the histogram, sampled uniformly.
const HISTOGRAM_FRAMES: usize = 16;

/// Three 32-bin per-channel histograms, concatenated, each block
/// L1-normalized. Blocks of an empty pixel set would stay all-zero; clips
/// always contain pixels, so in practice every block sums to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramFeature {
    pub values: Vec<f32>,
}

pub fn clip_histogram(clip: &VideoClip) -> HistogramFeature {
    let n = clip.frame_count();
    let indices: Vec<usize> = if n <= HISTOGRAM_FRAMES {
        (0..n).collect()
    } else {
        // Uniform sampling, duplicates impossible since n > frame budget.
        (0..HISTOGRAM_FRAMES)
            .map(|k| {
                ((k as f64) * ((n - 1) as f64) / ((HISTOGRAM_FRAMES - 1) as f64)).round() as usize
            })
            .collect()
    };

    let mut counts = vec![0u64; HISTOGRAM_DIMS];
    for &i in &indices {
        let frame = &clip.frames[i];
        for px in frame.rgb.chunks_exact(3) {
            for (c, &v) in px.iter().enumerate() {
                counts[c * HISTOGRAM_BINS + (v as usize * HISTOGRAM_BINS) / 256] += 1;
            }
        }
    }
    let mut values = vec![0.0f32; HISTOGRAM_DIMS];
    for c in 0..3 {
        let block = &counts[c * HISTOGRAM_BINS..(c + 1) * HISTOGRAM_BINS];
        let total: u64 = block.iter().sum();
        if total > 0 {
            for (v, &n) in values[c * HISTOGRAM_BINS..(c + 1) * HISTOGRAM_BINS]
                .iter_mut()
                .zip(block)
            {
                *v = n as f32 / total as f32;
            }
        }
    }
    HistogramFeature { values }
}

/// ⟨a,b⟩ / (‖a‖‖b‖), defined as 0 when either norm vanishes.
pub fn cosine_similarity(a: &HistogramFeature, b: &HistogramFeature) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        dot += x as f64 * y as f64;
        na += (x as f64).powi(2);
        nb += (y as f64).powi(2);
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairScore {
    pub clip_a: String,
    pub clip_b: String,
    pub similarity: f64,
    pub flagged: bool,
    pub partition: Split,
}

#[derive(Clone, Debug, Default)]
pub struct AuditReport {
    /// All intra-partition pairs, sorted by similarity descending
    /// (ties by path).
    pub pairs: Vec<PairScore>,
}

/// Pure ranking over precomputed features; the disk-backed entry point and
/// the test oracles share it.
pub fn audit_features(
    items: &[(String, Split, HistogramFeature)],
    top_fraction: f64,
) -> AuditReport {
    let mut pairs = Vec::new();
    for split in [Split::Train, Split::Test, Split::Unassigned] {
        let members: Vec<_> = items.iter().filter(|(_, s, _)| *s == split).collect();
        let mut split_pairs = Vec::new();
        for i in 0..members.len() {
            for j in i + 1..members.len() {
                let (pa, _, fa) = members[i];
                let (pb, _, fb) = members[j];
                let (pa, pb) = if pa <= pb { (pa, pb) } else { (pb, pa) };
                split_pairs.push(PairScore {
                    clip_a: pa.clone(),
                    clip_b: pb.clone(),
                    similarity: cosine_similarity(fa, fb),
                    flagged: false,
                    partition: split,
                });
            }
        }
        split_pairs.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .unwrap()
                .then_with(|| a.clip_a.cmp(&b.clip_a))
                .then_with(|| a.clip_b.cmp(&b.clip_b))
        });
        let flag_count = ((split_pairs.len() as f64) * top_fraction).ceil() as usize;
        for (rank, pair) in split_pairs.iter_mut().enumerate() {
            pair.flagged = rank < flag_count;
        }
        pairs.extend(split_pairs);
    }
    pairs.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .unwrap()
            .then_with(|| a.clip_a.cmp(&b.clip_a))
            .then_with(|| a.clip_b.cmp(&b.clip_b))
    });
    AuditReport { pairs }
}

/// Loads every clip in the manifest, computes features and ranks the
/// intra-partition pairs. `top_fraction` of each partition is flagged.
pub fn similarity_audit(manifest: &Manifest, top_fraction: f64) -> Result<AuditReport> {
    if !(0.0..=1.0).contains(&top_fraction) {
        return Err(Error::Config(format!(
            "top fraction must be in [0,1], got {top_fraction}"
        )));
    }
    let mut items = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let clip = load_clip_dir(Path::new(&e.clip_path), &e.source_id, e.label)?;
        items.push((e.clip_path.clone(), e.split, clip_histogram(&clip)));
    }
    Ok(audit_features(&items, top_fraction))
}

/// CSV with columns clip_a, clip_b, similarity, flagged.
pub fn write_audit_csv(path: &Path, report: &AuditReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Manifest(e.to_string()))?;
    w.write_record(["clip_a", "clip_b", "similarity", "flagged"])
        .map_err(|e| Error::Manifest(e.to_string()))?;
    for p in &report.pairs {
        w.write_record([
            p.clip_a.as_str(),
            p.clip_b.as_str(),
            &format!("{:.6}", p.similarity),
            if p.flagged { "true" } else { "false" },
        ])
        .map_err(|e| Error::Manifest(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
