//! Synthetic inputs with known ground truth, shared by the unit tests, the
//! acceptance suite and the examples. Patterns are analytic functions of
//! (x − shift_x, y − shift_y), so a shifted evaluation IS an exact
//! translation of the scene — no resampling error enters the oracle.

use crate::flow::Plane;
use crate::video::{Frame, Label, VideoClip};

/// Smooth multi-sinusoid pattern with gradients everywhere; values stay well
/// inside [0,1].
pub fn smooth_pattern(width: usize, height: usize, shift_x: f64, shift_y: f64) -> Plane {
    Plane::from_fn(width, height, |xi, yi| {
        let x = xi as f64 - shift_x;
        let y = yi as f64 - shift_y;
        let tau = std::f64::consts::TAU;
        let v = 0.5
            + 0.18 * (tau * x / 23.0 + 0.7).sin() * (tau * y / 31.0).cos()
            + 0.12 * (tau * x / 47.0 - 1.1).cos() * (tau * y / 17.0 + 2.0).sin()
            + 0.10 * (tau * (x + y) / 59.0).sin();
        v as f32
    })
}

/// A broad Gaussian blob over a gently textured background.
pub fn textured_blob(width: usize, height: usize, shift_x: f64, shift_y: f64) -> Plane {
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0;
    let sigma = width.min(height) as f64 / 5.0;
    Plane::from_fn(width, height, |xi, yi| {
        let x = xi as f64 - shift_x;
        let y = yi as f64 - shift_y;
        let r2 = (x - cx).powi(2) + (y - cy).powi(2);
        let tau = std::f64::consts::TAU;
        let v = 0.35
            + 0.35 * (-r2 / (2.0 * sigma * sigma)).exp()
            + 0.10 * (tau * x / 19.0).sin() * (tau * y / 23.0).cos();
        v as f32
    })
}

fn textured_background(x: usize, y: usize) -> [u8; 3] {
    let tau = std::f64::consts::TAU;
    let v = 0.35 + 0.12 * (tau * x as f64 / 21.0).sin() * (tau * y as f64 / 27.0).cos();
    let g = (v * 255.0) as u8;
    [g, g, (v * 200.0) as u8]
}

/// Static scene: every frame identical, no motion anywhere.
pub fn static_clip(
    width: usize,
    height: usize,
    n_frames: usize,
    source_id: &str,
) -> VideoClip {
    let frame = Frame::from_fn(width, height, textured_background);
    VideoClip::new(
        vec![frame; n_frames],
        30.0,
        source_id.to_string(),
        Label::NonViolent,
    )
    .expect("fixture clip is valid")
}

/// A bright square translating rightward by `step_px` per frame over a
/// textured background; the canonical "motion present" fixture.
pub fn moving_square_clip(
    width: usize,
    height: usize,
    n_frames: usize,
    step_px: usize,
    source_id: &str,
) -> VideoClip {
    let side = (width.min(height) / 4).max(4);
    let top = (height - side) / 2;
    let start = width / 8;
    let frames = (0..n_frames)
        .map(|t| {
            let left = (start + t * step_px).min(width - side);
            Frame::from_fn(width, height, |x, y| {
                if x >= left && x < left + side && y >= top && y < top + side {
                    [250, 240, 80]
                } else {
                    textured_background(x, y)
                }
            })
        })
        .collect();
    VideoClip::new(frames, 30.0, source_id.to_string(), Label::Violent)
        .expect("fixture clip is valid")
}

/// The square's horizontal trajectory over the clip: (first left, last
/// left + square side), plus the square's vertical band.
pub fn moving_square_bounds(
    width: usize,
    height: usize,
    n_frames: usize,
    step_px: usize,
) -> (usize, usize, usize, usize) {
    let side = (width.min(height) / 4).max(4);
    let top = (height - side) / 2;
    let start = width / 8;
    let last_left = (start + (n_frames - 1) * step_px).min(width - side);
    (start, last_left + side, top, top + side)
}
