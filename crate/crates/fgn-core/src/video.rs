//! Clip storage: ordered 8-bit RGB frames with label and source metadata.
//! Clips arrive on disk as frame directories (`frame_00000.png`, ...).

use crate::error::{Error, Result};
use crate::flow::Plane;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Violent,
    NonViolent,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::Violent => "Violent",
            Label::NonViolent => "NonViolent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "Violent" => Ok(Label::Violent),
            "NonViolent" => Ok(Label::NonViolent),
            other => Err(Error::Manifest(format!("unknown label {other:?}"))),
        }
    }

    /// Class index used by the loss (NonViolent = 0, Violent = 1).
    pub fn class_index(self) -> usize {
        match self {
            Label::NonViolent => 0,
            Label::Violent => 1,
        }
    }

    pub fn from_class_index(idx: usize) -> Result<Self> {
        match idx {
            0 => Ok(Label::NonViolent),
            1 => Ok(Label::Violent),
            other => Err(Error::LabelOutOfRange {
                label: other,
                classes: 2,
            }),
        }
    }
}

/// One H×W×3 8-bit frame, interleaved RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![0; width * height * 3],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut rgb = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                rgb.extend_from_slice(&f(x, y));
            }
        }
        Self { width, height, rgb }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// ITU-R 601 luma scaled to [0,1].
    pub fn to_gray(&self) -> Plane {
        Plane::from_fn(self.width, self.height, |x, y| {
            let [r, g, b] = self.at(x, y);
            (0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32) / 255.0
        })
    }

    /// Aspect-preserving bilinear upscale so min(width,height) >= min_side.
    /// Frames already large enough are returned unchanged.
    pub fn upscale_to_min_side(&self, min_side: usize) -> Frame {
        let short = self.width.min(self.height);
        if short >= min_side {
            return self.clone();
        }
        let scale = min_side as f64 / short as f64;
        let new_w = ((self.width as f64 * scale).round() as usize).max(min_side);
        let new_h = ((self.height as f64 * scale).round() as usize).max(min_side);
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.rgb.clone())
            .expect("frame buffer matches dims");
        let resized = image::imageops::resize(
            &img,
            new_w as u32,
            new_h as u32,
            image::imageops::FilterType::Triangle,
        );
        Frame {
            width: new_w,
            height: new_h,
            rgb: resized.into_raw(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct VideoClip {
    pub frames: Vec<Frame>,
    pub fps: f32,
    pub source_id: String,
    pub label: Label,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>, fps: f32, source_id: String, label: Label) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::TooFewFrames(frames.len()));
        }
        let (w, h) = (frames[0].width, frames[0].height);
        if frames.iter().any(|f| f.width != w || f.height != h) {
            return Err(Error::InvalidShape {
                shape: vec![w, h],
                reason: "frames differ in dimensions".into(),
            });
        }
        Ok(Self {
            frames,
            fps,
            source_id,
            label,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// Loads the PNG frames of one clip directory, sorted by filename.
pub fn load_clip_dir(dir: &Path, source_id: &str, label: Label) -> Result<VideoClip> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    paths.sort();
    let mut frames = Vec::with_capacity(paths.len());
    for path in &paths {
        let img = image::open(path)?.to_rgb8();
        frames.push(Frame {
            width: img.width() as usize,
            height: img.height() as usize,
            rgb: img.into_raw(),
        });
    }
    VideoClip::new(frames, 30.0, source_id.to_string(), label)
}

/// Writes a clip as `frame_%05d.png` under `dir` (fixture generation).
pub fn save_clip_dir(clip: &VideoClip, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, frame) in clip.frames.iter().enumerate() {
        let img =
            image::RgbImage::from_raw(frame.width as u32, frame.height as u32, frame.rgb.clone())
                .expect("frame buffer matches dims");
        img.save(dir.join(format!("frame_{i:05}.png")))?;
    }
    Ok(())
}
