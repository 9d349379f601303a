//! Per-pixel quadratic polynomial expansion.
//!
//! Each neighborhood is approximated as f(x) ≈ xᵀAx + bᵀx + c by weighted
//! least squares under a Gaussian applicability of radius (poly_n−1)/2. With
//! the separable basis {1, x, y, x², y², xy} the normal matrix G is constant
//! across pixels, so the fit reduces to six separable correlations followed
//! by a fixed linear solve per pixel. Borders are handled by reflecting the
//! image, keeping every window full.

use super::plane::Plane;
use crate::error::{Error, Result};

/// Per-pixel coefficient planes. `axy` stores the off-diagonal entry of the
/// symmetric matrix A itself (i.e. half the xy basis coefficient).
pub struct PolyExpansion {
    pub width: usize,
    pub height: usize,
    pub c: Vec<f32>,
    pub bx: Vec<f32>,
    pub by: Vec<f32>,
    pub axx: Vec<f32>,
    pub ayy: Vec<f32>,
    pub axy: Vec<f32>,
}

/// Inverts the symmetric 3×3 system coupling the {1, x², y²} moments.
fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    assert!(det.abs() > 1e-30, "degenerate applicability moments");
    let inv_det = 1.0 / det;
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let a = m[(i + 1) % 3][(j + 1) % 3] * m[(i + 2) % 3][(j + 2) % 3]
                - m[(i + 1) % 3][(j + 2) % 3] * m[(i + 2) % 3][(j + 1) % 3];
            // Transposed cofactor; m is symmetric so the distinction is moot.
            inv[j][i] = a * inv_det;
        }
    }
    inv
}

pub fn polynomial_expansion(gray: &Plane, poly_n: usize, poly_sigma: f64) -> Result<PolyExpansion> {
    if poly_sigma <= 0.0 {
        return Err(Error::NonPositiveSigma(poly_sigma));
    }
    if poly_n % 2 == 0 || poly_n < 3 {
        return Err(Error::FlowParams(format!(
            "poly_n must be an odd integer >= 3, got {poly_n}"
        )));
    }
    let radius = (poly_n - 1) / 2;
    let mut g = Vec::with_capacity(poly_n);
    let mut sum = 0.0;
    for i in -(radius as isize)..=(radius as isize) {
        let w = (-((i * i) as f64) / (2.0 * poly_sigma * poly_sigma)).exp();
        g.push(w);
        sum += w;
    }
    for w in g.iter_mut() {
        *w /= sum;
    }
    let offsets: Vec<f64> = (-(radius as isize)..=(radius as isize))
        .map(|i| i as f64)
        .collect();

    // Gaussian moments of the (normalized, separable) applicability.
    let s2: f64 = g.iter().zip(&offsets).map(|(w, o)| w * o * o).sum();
    let s4: f64 = g.iter().zip(&offsets).map(|(w, o)| w * o.powi(4)).sum();
    let s22 = s2 * s2;
    // G restricted to the coupled {1, x², y²} block; x, y and xy rows are
    // diagonal with entries s2, s2 and s22.
    let inv = invert3([[1.0, s2, s2], [s2, s4, s22], [s2, s22, s4]]);

    let (w, h) = (gray.width, gray.height);
    let n = w * h;

    // Vertical pass: correlate each column with g, y·g and y²·g.
    let mut t0 = vec![0.0f32; n];
    let mut t1 = vec![0.0f32; n];
    let mut t2 = vec![0.0f32; n];
    for y in 0..h {
        for x in 0..w {
            let (mut a0, mut a1, mut a2) = (0.0f64, 0.0f64, 0.0f64);
            for (k, (&wk, &ok)) in g.iter().zip(&offsets).enumerate() {
                let yi = y as isize + k as isize - radius as isize;
                let v = gray.at_reflect(x as isize, yi) as f64;
                a0 += wk * v;
                a1 += wk * ok * v;
                a2 += wk * ok * ok * v;
            }
            let i = y * w + x;
            t0[i] = a0 as f32;
            t1[i] = a1 as f32;
            t2[i] = a2 as f32;
        }
    }

    // Horizontal pass produces the six projections, then the fixed solve.
    let mut out = PolyExpansion {
        width: w,
        height: h,
        c: vec![0.0; n],
        bx: vec![0.0; n],
        by: vec![0.0; n],
        axx: vec![0.0; n],
        ayy: vec![0.0; n],
        axy: vec![0.0; n],
    };
    let t0_plane = Plane {
        width: w,
        height: h,
        data: t0,
    };
    let t1_plane = Plane {
        width: w,
        height: h,
        data: t1,
    };
    let t2_plane = Plane {
        width: w,
        height: h,
        data: t2,
    };
    for y in 0..h {
        for x in 0..w {
            let (mut m1, mut mx, mut mxx) = (0.0f64, 0.0f64, 0.0f64);
            let (mut my, mut mxy, mut myy) = (0.0f64, 0.0f64, 0.0f64);
            for (k, (&wk, &ok)) in g.iter().zip(&offsets).enumerate() {
                let xi = x as isize + k as isize - radius as isize;
                let v0 = t0_plane.at_reflect(xi, y as isize) as f64;
                let v1 = t1_plane.at_reflect(xi, y as isize) as f64;
                let v2 = t2_plane.at_reflect(xi, y as isize) as f64;
                m1 += wk * v0;
                mx += wk * ok * v0;
                mxx += wk * ok * ok * v0;
                my += wk * v1;
                mxy += wk * ok * v1;
                myy += wk * v2;
            }
            let i = y * w + x;
            out.bx[i] = (mx / s2) as f32;
            out.by[i] = (my / s2) as f32;
            // Coefficient of the xy basis function; A12 is half of it.
            out.axy[i] = (0.5 * mxy / s22) as f32;
            let c = inv[0][0] * m1 + inv[0][1] * mxx + inv[0][2] * myy;
            let rxx = inv[1][0] * m1 + inv[1][1] * mxx + inv[1][2] * myy;
            let ryy = inv[2][0] * m1 + inv[2][1] * mxx + inv[2][2] * myy;
            out.c[i] = c as f32;
            out.axx[i] = rxx as f32;
            out.ayy[i] = ryy as f32;
        }
    }
    Ok(out)
}
