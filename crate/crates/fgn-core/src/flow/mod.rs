//! Dense optical flow via polynomial expansion, coarse-to-fine.
//!
//! Coordinate convention: `u` is column displacement (right positive), `v`
//! is row displacement (down positive), both in pixels per frame step, as
//! displacements from `prev` to `next`.

mod io;
mod plane;
mod poly;

pub use io::{read_flow, write_flow};
pub use plane::{reflect, Plane};
pub use poly::{polynomial_expansion, PolyExpansion};

use crate::error::{Error, Result};

/// Absolute determinant regularizer for the 2×2 solve. Flat neighborhoods
/// produce an exactly zero system, which this maps to zero displacement
/// instead of a division by zero.
const DET_REG: f64 = 1e-18;

/// Displacements larger than this are clamped; keeps degenerate
/// (textureless) neighborhoods from feeding absurd warps back into the
/// iteration.
const MAX_DISPLACEMENT: f32 = 1e4;

#[derive(Clone, Debug)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Mean (u,v) over the interior, ignoring a margin, for oracle checks.
    pub fn mean_interior(&self, margin: usize) -> (f64, f64) {
        let mut su = 0.0;
        let mut sv = 0.0;
        let mut count = 0usize;
        for y in margin..self.height.saturating_sub(margin) {
            for x in margin..self.width.saturating_sub(margin) {
                let i = y * self.width + x;
                su += self.u[i] as f64;
                sv += self.v[i] as f64;
                count += 1;
            }
        }
        let count = count.max(1) as f64;
        (su / count, sv / count)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FarnebackParams {
    pub pyramid_scale: f64,
    pub levels: usize,
    pub window_size: usize,
    pub iterations: usize,
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        Self {
            pyramid_scale: 0.5,
            levels: 3,
            window_size: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FarnebackParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.pyramid_scale && self.pyramid_scale < 1.0) {
            return Err(Error::FlowParams(format!(
                "pyramid_scale must be in (0,1), got {}",
                self.pyramid_scale
            )));
        }
        if self.levels < 1 {
            return Err(Error::FlowParams("levels must be >= 1".into()));
        }
        if self.window_size % 2 == 0 || self.window_size < self.poly_n {
            return Err(Error::FlowParams(format!(
                "window_size must be odd and >= poly_n, got {}",
                self.window_size
            )));
        }
        if self.iterations < 1 {
            return Err(Error::FlowParams("iterations must be >= 1".into()));
        }
        if self.poly_n % 2 == 0 || self.poly_n < 3 {
            return Err(Error::FlowParams(format!(
                "poly_n must be an odd integer >= 3, got {}",
                self.poly_n
            )));
        }
        if self.poly_sigma <= 0.0 {
            return Err(Error::NonPositiveSigma(self.poly_sigma));
        }
        Ok(())
    }
}

/// Per-pixel normal equations of the displacement constraint A·d ≈ Δb,
/// stored as the five planes [AᵀA; AᵀΔb] to be averaged over the window.
struct NormalPlanes {
    m11: Plane,
    m12: Plane,
    m22: Plane,
    h1: Plane,
    h2: Plane,
}

/// Bilinear lookup into a coefficient plane with clamped coordinates.
#[inline]
fn warp_sample(data: &[f32], w: usize, h: usize, x: f32, y: f32) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f32) as f64;
    let fy = (y - y0 as f32) as f64;
    let top = data[y0 * w + x0] as f64 * (1.0 - fx) + data[y0 * w + x1] as f64 * fx;
    let bottom = data[y1 * w + x0] as f64 * (1.0 - fx) + data[y1 * w + x1] as f64 * fx;
    top * (1.0 - fy) + bottom * fy
}

fn update_matrices(prev: &PolyExpansion, next: &PolyExpansion, flow: &FlowField) -> NormalPlanes {
    let (w, h) = (prev.width, prev.height);
    let mut planes = NormalPlanes {
        m11: Plane::new(w, h),
        m12: Plane::new(w, h),
        m22: Plane::new(w, h),
        h1: Plane::new(w, h),
        h2: Plane::new(w, h),
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dx = flow.u[i];
            let dy = flow.v[i];
            // Sample the warped expansion bilinearly so the fixed point of
            // the iteration is subpixel-exact.
            let wx = x as f32 + dx;
            let wy = y as f32 + dy;
            let n_axx = warp_sample(&next.axx, w, h, wx, wy);
            let n_axy = warp_sample(&next.axy, w, h, wx, wy);
            let n_ayy = warp_sample(&next.ayy, w, h, wx, wy);
            let n_bx = warp_sample(&next.bx, w, h, wx, wy);
            let n_by = warp_sample(&next.by, w, h, wx, wy);

            let a11 = 0.5 * (prev.axx[i] as f64 + n_axx);
            let a12 = 0.5 * (prev.axy[i] as f64 + n_axy);
            let a22 = 0.5 * (prev.ayy[i] as f64 + n_ayy);
            // Δb for the TOTAL displacement: residual difference plus A·d₀.
            let db1 = -0.5 * (n_bx - prev.bx[i] as f64) + a11 * dx as f64 + a12 * dy as f64;
            let db2 = -0.5 * (n_by - prev.by[i] as f64) + a12 * dx as f64 + a22 * dy as f64;

            planes.m11.data[i] = (a11 * a11 + a12 * a12) as f32;
            planes.m12.data[i] = (a12 * (a11 + a22)) as f32;
            planes.m22.data[i] = (a22 * a22 + a12 * a12) as f32;
            planes.h1.data[i] = (a11 * db1 + a12 * db2) as f32;
            planes.h2.data[i] = (a12 * db1 + a22 * db2) as f32;
        }
    }
    planes
}

fn solve_flow(planes: &NormalPlanes, radius: usize) -> FlowField {
    let m11 = planes.m11.box_blur(radius);
    let m12 = planes.m12.box_blur(radius);
    let m22 = planes.m22.box_blur(radius);
    let h1 = planes.h1.box_blur(radius);
    let h2 = planes.h2.box_blur(radius);

    let (w, h) = (m11.width, m11.height);
    let mut flow = FlowField::zeros(w, h);
    for i in 0..w * h {
        let g11 = m11.data[i] as f64;
        let g12 = m12.data[i] as f64;
        let g22 = m22.data[i] as f64;
        let b1 = h1.data[i] as f64;
        let b2 = h2.data[i] as f64;
        let idet = 1.0 / (g11 * g22 - g12 * g12 + DET_REG);
        let u = ((g22 * b1 - g12 * b2) * idet) as f32;
        let v = ((g11 * b2 - g12 * b1) * idet) as f32;
        flow.u[i] = u.clamp(-MAX_DISPLACEMENT, MAX_DISPLACEMENT);
        flow.v[i] = v.clamp(-MAX_DISPLACEMENT, MAX_DISPLACEMENT);
    }
    flow
}

fn upsample_flow(flow: &FlowField, new_w: usize, new_h: usize) -> FlowField {
    let up = |data: &[f32]| {
        Plane {
            width: flow.width,
            height: flow.height,
            data: data.to_vec(),
        }
        .resize(new_w, new_h)
        .data
    };
    let sx = new_w as f32 / flow.width as f32;
    let sy = new_h as f32 / flow.height as f32;
    let mut u = up(&flow.u);
    let mut v = up(&flow.v);
    for x in u.iter_mut() {
        *x *= sx;
    }
    for x in v.iter_mut() {
        *x *= sy;
    }
    FlowField {
        width: new_w,
        height: new_h,
        u,
        v,
    }
}

/// Dense flow from `prev` to `next`, coarse-to-fine.
///
/// Levels that would shrink below `poly_n` are dropped automatically (noted
/// in the log). Both images must be single-channel with equal dimensions,
/// values nominally in [0,1].
pub fn farneback_flow(prev: &Plane, next: &Plane, params: &FarnebackParams) -> Result<FlowField> {
    params.validate()?;
    if prev.width != next.width || prev.height != next.height {
        return Err(Error::FlowSizeMismatch(
            prev.width,
            prev.height,
            next.width,
            next.height,
        ));
    }

    let mut levels = params.levels;
    let min_dim = prev.width.min(prev.height);
    while levels > 1 {
        let coarsest = (min_dim as f64 * params.pyramid_scale.powi(levels as i32 - 1)).round();
        if coarsest >= params.poly_n as f64 {
            break;
        }
        levels -= 1;
    }
    if levels != params.levels {
        log::debug!(
            "reduced pyramid levels {} -> {} for a {}x{} image",
            params.levels,
            levels,
            prev.width,
            prev.height
        );
    }

    // Anti-aliased pyramids, level 0 = original resolution.
    let blur_sigma = 1.0 / params.pyramid_scale - 1.0;
    let mut prev_pyr = vec![prev.clone()];
    let mut next_pyr = vec![next.clone()];
    for level in 1..levels {
        let (pw, ph) = {
            let p = &prev_pyr[level - 1];
            (
                ((p.width as f64 * params.pyramid_scale).round() as usize).max(1),
                ((p.height as f64 * params.pyramid_scale).round() as usize).max(1),
            )
        };
        prev_pyr.push(prev_pyr[level - 1].gaussian_blur(blur_sigma).resize(pw, ph));
        next_pyr.push(next_pyr[level - 1].gaussian_blur(blur_sigma).resize(pw, ph));
    }

    let radius = (params.window_size - 1) / 2;
    let mut flow: Option<FlowField> = None;
    for level in (0..levels).rev() {
        let p = &prev_pyr[level];
        let n = &next_pyr[level];
        let mut level_flow = match flow.take() {
            Some(coarser) => upsample_flow(&coarser, p.width, p.height),
            None => FlowField::zeros(p.width, p.height),
        };
        let exp_prev = polynomial_expansion(p, params.poly_n, params.poly_sigma)?;
        let exp_next = polynomial_expansion(n, params.poly_n, params.poly_sigma)?;
        for _ in 0..params.iterations {
            let planes = update_matrices(&exp_prev, &exp_next, &level_flow);
            level_flow = solve_flow(&planes, radius);
        }
        flow = Some(level_flow);
    }
    Ok(flow.expect("at least one level"))
}

/// Per-pixel Euclidean norm of the displacement field.
pub fn flow_magnitude(flow: &FlowField) -> Plane {
    let mut out = Plane::new(flow.width, flow.height);
    for (o, (&u, &v)) in out.data.iter_mut().zip(flow.u.iter().zip(&flow.v)) {
        *o = (u * u + v * v).sqrt();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn identical_frames_give_exactly_zero_flow() {
        let img = fixtures::smooth_pattern(128, 128, 0.0, 0.0);
        let flow = farneback_flow(&img, &img, &FarnebackParams::default()).unwrap();
        let max = flow
            .u
            .iter()
            .chain(&flow.v)
            .fold(0.0f32, |m, &x| m.max(x.abs()));
        assert!(max < 1e-3, "max |flow| = {max}");
        let mag_sum: f32 = flow_magnitude(&flow).data.iter().sum();
        assert!(mag_sum < 1e-2, "magnitude sum = {mag_sum}");
    }

    #[test]
    fn recovers_horizontal_translation() {
        let a = fixtures::smooth_pattern(128, 128, 0.0, 0.0);
        let b = fixtures::smooth_pattern(128, 128, 3.0, 0.0);
        let flow = farneback_flow(&a, &b, &FarnebackParams::default()).unwrap();
        let (mu, mv) = flow.mean_interior(16);
        assert!((mu - 3.0).abs() < 0.25, "mean u = {mu}");
        assert!(mv.abs() < 0.25, "mean v = {mv}");
    }

    #[test]
    fn recovers_upward_translation_with_row_down_sign() {
        // Content moving up by 2 rows means v = -2 under the row-down
        // convention.
        let a = fixtures::smooth_pattern(128, 128, 0.0, 0.0);
        let b = fixtures::smooth_pattern(128, 128, 0.0, -2.0);
        let flow = farneback_flow(&a, &b, &FarnebackParams::default()).unwrap();
        let (mu, mv) = flow.mean_interior(16);
        assert!(mu.abs() < 0.25, "mean u = {mu}");
        assert!((mv + 2.0).abs() < 0.25, "mean v = {mv}");
    }

    #[test]
    fn translated_gaussian_blob_is_recovered() {
        let a = fixtures::textured_blob(128, 128, 0.0, 0.0);
        let b = fixtures::textured_blob(128, 128, 3.0, 0.0);
        let flow = farneback_flow(&a, &b, &FarnebackParams::default()).unwrap();
        let (mu, mv) = flow.mean_interior(16);
        assert!((mu - 3.0).abs() < 0.25, "mean u = {mu}");
        assert!(mv.abs() < 0.25, "mean v = {mv}");
    }

    #[test]
    fn magnitude_is_the_pixelwise_norm() {
        let mut flow = FlowField::zeros(4, 3);
        flow.u[5] = 3.0;
        flow.v[5] = 4.0;
        let mag = flow_magnitude(&flow);
        assert_eq!(mag.data[5], 5.0);
        assert!(mag.data.iter().enumerate().all(|(i, &m)| i == 5 || m == 0.0));

        let zero = flow_magnitude(&FlowField::zeros(8, 8));
        assert!(zero.data.iter().all(|&m| m == 0.0));

        // Random field equals the brute-force per-pixel norm exactly.
        let mut f = FlowField::zeros(6, 5);
        for i in 0..30 {
            f.u[i] = (i as f32 * 0.37).sin();
            f.v[i] = (i as f32 * 0.73).cos();
        }
        let mag = flow_magnitude(&f);
        for i in 0..30 {
            assert_eq!(mag.data[i], (f.u[i] * f.u[i] + f.v[i] * f.v[i]).sqrt());
        }
    }

    #[test]
    fn flow_is_antisymmetric_under_frame_swap() {
        let a = fixtures::smooth_pattern(96, 96, 0.0, 0.0);
        let b = fixtures::smooth_pattern(96, 96, 2.0, 1.0);
        let fwd = farneback_flow(&a, &b, &FarnebackParams::default()).unwrap();
        let bwd = farneback_flow(&b, &a, &FarnebackParams::default()).unwrap();
        let mut abs_diff = 0.0f64;
        let mut count = 0usize;
        for y in 12..84 {
            for x in 12..84 {
                let i = y * 96 + x;
                abs_diff += ((fwd.u[i] + bwd.u[i]).abs() + (fwd.v[i] + bwd.v[i]).abs()) as f64;
                count += 2;
            }
        }
        assert!(abs_diff / count as f64 <= 0.5, "mean |fwd+bwd| = {}", abs_diff / count as f64);
    }

    #[test]
    fn single_and_three_level_pyramids_agree_for_small_shifts() {
        let a = fixtures::smooth_pattern(96, 96, 0.0, 0.0);
        let b = fixtures::smooth_pattern(96, 96, 2.0, 0.0);
        let one = farneback_flow(
            &a,
            &b,
            &FarnebackParams {
                levels: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let three = farneback_flow(&a, &b, &FarnebackParams::default()).unwrap();
        let mut diff = 0.0f64;
        let mut count = 0usize;
        for y in 12..84 {
            for x in 12..84 {
                let i = y * 96 + x;
                diff += ((one.u[i] - three.u[i]).powi(2) + (one.v[i] - three.v[i]).powi(2)).sqrt()
                    as f64;
                count += 1;
            }
        }
        assert!(diff / (count as f64) < 0.3, "mean diff = {}", diff / count as f64);
    }

    #[test]
    fn degenerate_inputs_stay_finite() {
        let params = FarnebackParams::default();
        let black = Plane::new(64, 64);
        let white = Plane::from_fn(64, 64, |_, _| 1.0);
        let mut noise = Plane::new(64, 64);
        noise.data[64 * 32 + 32] = 1.0;

        for (a, b) in [(&black, &black), (&white, &white), (&black, &white), (&noise, &black)] {
            let flow = farneback_flow(a, b, &params).unwrap();
            assert!(flow.all_finite());
        }
    }

    #[test]
    fn tiny_images_reduce_levels_instead_of_failing() {
        let a = Plane::from_fn(10, 10, |x, y| (x + y) as f32 / 20.0);
        let b = a.clone();
        let flow = farneback_flow(&a, &b, &FarnebackParams::default()).unwrap();
        assert!(flow.all_finite());
        assert_eq!((flow.width, flow.height), (10, 10));
    }

    #[test]
    fn rejects_mismatched_sizes() {
        let a = Plane::new(32, 32);
        let b = Plane::new(16, 32);
        assert!(matches!(
            farneback_flow(&a, &b, &FarnebackParams::default()),
            Err(Error::FlowSizeMismatch(32, 32, 16, 32))
        ));
    }
}
