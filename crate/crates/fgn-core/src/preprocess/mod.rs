//! Clip → model-input pipeline: dense flow between sampled frames, motion
//! intensity accumulation, maximum-intensity cropping, normalization, and
//! the two training-time augmentations (brightness, rotation).

mod cache;

pub use cache::{read_sample, write_sample};

use crate::error::{Error, Result};
use crate::flow::{farneback_flow, flow_magnitude, FarnebackParams, FlowField, Plane};
use crate::tensor::Tensor;
use crate::video::{Label, VideoClip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Channels of an assembled sample: normalized R,G,B then flow u,v.
pub const SAMPLE_CHANNELS: usize = 5;
/// Flow displacements are clamped to ±FLOW_CLAMP px before scaling to [-1,1].
pub const FLOW_CLAMP: f32 = 20.0;

/// Output geometry of the pipeline. The production values are 64 frames at
/// a 224×224 crop; smaller geometries drive the desk-scale fixtures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleGeometry {
    pub frames: usize,
    pub side: usize,
}

impl Default for SampleGeometry {
    fn default() -> Self {
        Self {
            frames: 64,
            side: 224,
        }
    }
}

/// Summed flow-magnitude heat map; `provenance` counts the fields summed.
#[derive(Clone, Debug)]
pub struct IntensityMap {
    pub plane: Plane,
    pub provenance: usize,
}

/// A side×side crop fully inside the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub side: usize,
}

/// Parameters of an applied augmentation; identity when untouched.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentRecord {
    pub seed: u64,
    pub brightness: f32,
    pub angle_degrees: f32,
}

impl AugmentRecord {
    pub fn identity() -> Self {
        Self {
            seed: 0,
            brightness: 1.0,
            angle_degrees: 0.0,
        }
    }
}

/// The model input: [frames, side, side, 5] with RGB in [0,1] and flow in
/// [-1,1].
#[derive(Clone, Debug)]
pub struct ClipSample {
    pub data: Tensor<f32>,
    pub label: Label,
    pub augmentation: AugmentRecord,
}

/// plane(x,y) = Σ_t ‖flow_t(x,y)‖.
pub fn motion_intensity_map(flows: &[FlowField]) -> Result<IntensityMap> {
    let first = flows.first().ok_or(Error::EmptyFlowList)?;
    let (w, h) = (first.width, first.height);
    let mut plane = Plane::new(w, h);
    for flow in flows {
        if flow.width != w || flow.height != h {
            return Err(Error::FlowSizeMismatch(w, h, flow.width, flow.height));
        }
        let mag = flow_magnitude(flow);
        for (acc, m) in plane.data.iter_mut().zip(&mag.data) {
            *acc += m;
        }
    }
    Ok(IntensityMap {
        plane,
        provenance: flows.len(),
    })
}

/// The in-bounds side×side window with the largest contained intensity,
/// found with an integral image; ties break to the smallest top, then the
/// smallest left.
pub fn select_crop_window(intensity: &IntensityMap, side: usize) -> Result<CropWindow> {
    let (w, h) = (intensity.plane.width, intensity.plane.height);
    if w < side || h < side {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            side,
        });
    }
    // integral[y][x] = sum over rows < y, cols < x (one row/col of padding).
    let mut integral = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            integral[(y + 1) * (w + 1) + (x + 1)] = intensity.plane.at(x, y) as f64
                + integral[y * (w + 1) + (x + 1)]
                + integral[(y + 1) * (w + 1) + x]
                - integral[y * (w + 1) + x];
        }
    }
    let window_sum = |top: usize, left: usize| {
        integral[(top + side) * (w + 1) + (left + side)]
            - integral[top * (w + 1) + (left + side)]
            - integral[(top + side) * (w + 1) + left]
            + integral[top * (w + 1) + left]
    };
    let mut best = CropWindow {
        top: 0,
        left: 0,
        side,
    };
    let mut best_sum = f64::NEG_INFINITY;
    for top in 0..=h - side {
        for left in 0..=w - side {
            let sum = window_sum(top, left);
            if sum > best_sum {
                best_sum = sum;
                best = CropWindow { top, left, side };
            }
        }
    }
    Ok(best)
}

/// Uniform sampling of `target` indices over `n_frames` frames:
/// i_k = round(k·(n−1)/(target−1)). Monotone, endpoints pinned, duplicates
/// appear when the clip is shorter than the target.
pub fn sample_frames(n_frames: usize, target: usize) -> Result<Vec<usize>> {
    if n_frames < 2 {
        return Err(Error::TooFewFrames(n_frames));
    }
    assert!(target >= 2, "target length must be at least 2");
    let last = (n_frames - 1) as f64;
    let span = (target - 1) as f64;
    Ok((0..target)
        .map(|k| (k as f64 * last / span).round() as usize)
        .collect())
}

/// Full §IV-A style pipeline at the production geometry (64 frames, 224
/// crop) with the default flow parameters.
pub fn assemble_sample(clip: &VideoClip) -> Result<ClipSample> {
    assemble_sample_with(clip, SampleGeometry::default(), &FarnebackParams::default())
}

/// Pipeline with explicit geometry and flow parameters:
/// upscale → sample frames → flow between consecutive sampled frames →
/// intensity map → one static crop window → crop + normalize → stack.
pub fn assemble_sample_with(
    clip: &VideoClip,
    geometry: SampleGeometry,
    params: &FarnebackParams,
) -> Result<ClipSample> {
    let indices = sample_frames(clip.frame_count(), geometry.frames)?;
    let frames: Vec<_> = indices
        .iter()
        .map(|&i| clip.frames[i].upscale_to_min_side(geometry.side))
        .collect();

    let grays: Vec<Plane> = frames.iter().map(|f| f.to_gray()).collect();
    let mut flows = Vec::with_capacity(geometry.frames);
    for pair in grays.windows(2) {
        flows.push(farneback_flow(&pair[0], &pair[1], params)?);
    }
    // Duplicate the last field so each of the `frames` steps has one.
    flows.push(flows.last().expect("at least two sampled frames").clone());

    let intensity = motion_intensity_map(&flows)?;
    let window = select_crop_window(&intensity, geometry.side)?;

    let side = geometry.side;
    let mut data = Tensor::zeros(&[geometry.frames, side, side, SAMPLE_CHANNELS]);
    {
        let values = data.values_mut();
        for (t, (frame, flow)) in frames.iter().zip(&flows).enumerate() {
            for y in 0..side {
                for x in 0..side {
                    let (sx, sy) = (window.left + x, window.top + y);
                    let [r, g, b] = frame.at(sx, sy);
                    let i = ((t * side + y) * side + x) * SAMPLE_CHANNELS;
                    values[i] = r as f32 / 255.0;
                    values[i + 1] = g as f32 / 255.0;
                    values[i + 2] = b as f32 / 255.0;
                    let fi = sy * flow.width + sx;
                    values[i + 3] = flow.u[fi].clamp(-FLOW_CLAMP, FLOW_CLAMP) / FLOW_CLAMP;
                    values[i + 4] = flow.v[fi].clamp(-FLOW_CLAMP, FLOW_CLAMP) / FLOW_CLAMP;
                }
            }
        }
    }
    if !data.all_finite() {
        return Err(Error::NonFinite("assembled sample".into()));
    }
    Ok(ClipSample {
        data,
        label: clip.label,
        augmentation: AugmentRecord::identity(),
    })
}

/// Draws brightness ~ U(0.8, 1.2) and rotation ~ U(-10°, +10°) from `seed`
/// and applies them. Training-time only; evaluation never augments.
pub fn augment(sample: &ClipSample, seed: u64) -> ClipSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let brightness = rng.random_range(0.8..1.2) as f32;
    let angle = rng.random_range(-10.0..10.0) as f32;
    let mut out = augment_with(sample, brightness, angle);
    out.augmentation.seed = seed;
    out
}

/// Deterministic augmentation: RGB scaled by `brightness` (clamped back to
/// [0,1]) and every frame rotated by `angle_degrees` about the image center
/// (bilinear, zero fill). Flow planes are resampled with the same rotation
/// and the displacement vectors are rotated by the same angle, keeping the
/// motion field consistent with the rotated imagery.
pub fn augment_with(sample: &ClipSample, brightness: f32, angle_degrees: f32) -> ClipSample {
    let shape = sample.data.shape().to_vec();
    let (frames, side) = (shape[0], shape[1]);
    let theta = (angle_degrees as f64).to_radians();
    let (sin, cos) = (theta.sin() as f32, theta.cos() as f32);
    let center = (side as f32 - 1.0) / 2.0;
    let identity_rotation = angle_degrees == 0.0;

    let mut out = Tensor::zeros(&shape);
    let src = sample.data.values();
    let dst = out.values_mut();
    let mut plane = vec![0.0f32; side * side];

    for t in 0..frames {
        let frame_base = t * side * side * SAMPLE_CHANNELS;
        for c in 0..SAMPLE_CHANNELS {
            for (i, p) in plane.iter_mut().enumerate() {
                *p = src[frame_base + i * SAMPLE_CHANNELS + c];
            }
            let rotated: Vec<f32> = if identity_rotation {
                plane.clone()
            } else {
                // Inverse mapping: output pixel p samples input at
                // c + R(-θ)(p - c); content therefore rotates by +θ.
                (0..side * side)
                    .map(|i| {
                        let x = (i % side) as f32 - center;
                        let y = (i / side) as f32 - center;
                        let sx = cos * x + sin * y + center;
                        let sy = -sin * x + cos * y + center;
                        bilinear_zero_fill(&plane, side, sx, sy)
                    })
                    .collect()
            };
            for (i, &v) in rotated.iter().enumerate() {
                dst[frame_base + i * SAMPLE_CHANNELS + c] = v;
            }
        }
        // Brightness on RGB, vector rotation on flow.
        for i in 0..side * side {
            let base = frame_base + i * SAMPLE_CHANNELS;
            for c in 0..3 {
                dst[base + c] = (dst[base + c] * brightness).clamp(0.0, 1.0);
            }
            let (u, v) = (dst[base + 3], dst[base + 4]);
            dst[base + 3] = cos * u - sin * v;
            dst[base + 4] = sin * u + cos * v;
        }
    }

    ClipSample {
        data: out,
        label: sample.label,
        augmentation: AugmentRecord {
            seed: sample.augmentation.seed,
            brightness,
            angle_degrees,
        },
    }
}

fn bilinear_zero_fill(plane: &[f32], side: usize, x: f32, y: f32) -> f32 {
    if x < -1.0 || y < -1.0 || x > side as f32 || y > side as f32 {
        return 0.0;
    }
    let x0 = x.floor() as isize;
    let y0 = y.floor() as isize;
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let fetch = |xi: isize, yi: isize| -> f32 {
        if xi < 0 || yi < 0 || xi >= side as isize || yi >= side as isize {
            0.0
        } else {
            plane[yi as usize * side + xi as usize]
        }
    };
    let top = fetch(x0, y0) * (1.0 - fx) + fetch(x0 + 1, y0) * fx;
    let bottom = fetch(x0, y0 + 1) * (1.0 - fx) + fetch(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

#[cfg(test)]
mod tests;
