//! Single-channel f32 raster with the resampling helpers the pyramid needs.

#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

/// Reflect-101 index fold (`gfedcb|abcdefg|fedcba`), looping so windows wider
/// than the image still resolve.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn at_reflect(&self, x: isize, y: isize) -> f32 {
        self.data[reflect(y, self.height) * self.width + reflect(x, self.width)]
    }

    /// Bilinear sample with clamped coordinates.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Bilinear resize; source pixels are treated as cell centers.
    pub fn resize(&self, new_width: usize, new_height: usize) -> Plane {
        let sx = self.width as f32 / new_width as f32;
        let sy = self.height as f32 / new_height as f32;
        Plane::from_fn(new_width, new_height, |x, y| {
            let src_x = (x as f32 + 0.5) * sx - 0.5;
            let src_y = (y as f32 + 0.5) * sy - 0.5;
            self.sample_bilinear(src_x, src_y)
        })
    }

    /// Separable Gaussian blur with reflected borders.
    pub fn gaussian_blur(&self, sigma: f64) -> Plane {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = ((3.0 * sigma).round() as usize).max(1);
        let mut kernel = Vec::with_capacity(2 * radius + 1);
        let mut sum = 0.0;
        for i in -(radius as isize)..=(radius as isize) {
            let w = (-((i * i) as f64) / (2.0 * sigma * sigma)).exp();
            kernel.push(w);
            sum += w;
        }
        for w in kernel.iter_mut() {
            *w /= sum;
        }

        // Horizontal pass.
        let mut tmp = Plane::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let xi = x as isize + k as isize - radius as isize;
                    acc += w * self.at_reflect(xi, y as isize) as f64;
                }
                tmp.data[y * self.width + x] = acc as f32;
            }
        }
        // Vertical pass.
        let mut out = Plane::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let yi = y as isize + k as isize - radius as isize;
                    acc += w * tmp.at_reflect(x as isize, yi) as f64;
                }
                out.data[y * self.width + x] = acc as f32;
            }
        }
        out
    }

    /// Normalized box average with partial windows at the borders
    /// (prefix sums, O(1) per pixel).
    pub fn box_blur(&self, radius: usize) -> Plane {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        let r = radius as isize;

        // Horizontal.
        let mut tmp = vec![0.0f32; w * h];
        let mut prefix = vec![0.0f64; w + 1];
        for y in 0..h {
            for x in 0..w {
                prefix[x + 1] = prefix[x] + self.at(x, y) as f64;
            }
            for x in 0..w as isize {
                let lo = (x - r).max(0) as usize;
                let hi = ((x + r) as usize).min(w - 1);
                let sum = prefix[hi + 1] - prefix[lo];
                tmp[y * w + x as usize] = (sum / (hi - lo + 1) as f64) as f32;
            }
        }
        // Vertical.
        let mut out = Plane::new(w, h);
        let mut prefix = vec![0.0f64; h + 1];
        for x in 0..w {
            for y in 0..h {
                prefix[y + 1] = prefix[y] + tmp[y * w + x] as f64;
            }
            for y in 0..h as isize {
                let lo = (y - r).max(0) as usize;
                let hi = ((y + r) as usize).min(h - 1);
                let sum = prefix[hi + 1] - prefix[lo];
                out.data[y as usize * w + x] = (sum / (hi - lo + 1) as f64) as f32;
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_folds_out_of_range_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(3, 5), 3);
        assert_eq!(reflect(9, 2), 1);
        assert_eq!(reflect(-7, 1), 0);
    }

    #[test]
    fn box_blur_preserves_constant_planes() {
        let p = Plane::from_fn(9, 7, |_, _| 0.4);
        let b = p.box_blur(3);
        assert!(b.data.iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn resize_preserves_constant_planes() {
        let p = Plane::from_fn(16, 12, |_, _| 0.25);
        let r = p.resize(8, 6);
        assert_eq!((r.width, r.height), (8, 6));
        assert!(r.data.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn gaussian_blur_keeps_mass_of_smooth_signals() {
        let p = Plane::from_fn(32, 32, |x, y| {
            0.5 + 0.3 * ((x as f32) / 8.0).sin() * ((y as f32) / 6.0).cos()
        });
        let b = p.gaussian_blur(1.0);
        let mean0: f32 = p.data.iter().sum::<f32>() / p.data.len() as f32;
        let mean1: f32 = b.data.iter().sum::<f32>() / b.data.len() as f32;
        assert!((mean0 - mean1).abs() < 1e-2);
    }
}
