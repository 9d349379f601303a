//! Raw compute kernels behind the tape ops.
//!
//! All kernels are deterministic: every output element is reduced in a fixed
//! sequential order, and parallelism only splits work across independent
//! output regions (or fixed-size chunks combined in chunk order), so results
//! are bit-identical regardless of thread count.

use crate::scalar::Scalar;
use rayon::prelude::*;

/// Fixed chunk count for the kernel-gradient reduction. A compile-time
/// constant (not the thread count) so the summation order never changes.
const GRAD_CHUNKS: usize = 8;

#[inline]
fn row<T>(data: &[T], start: usize, len: usize) -> &[T] {
    &data[start..start + len]
}

/// Same-padding stride-1 3D cross-correlation.
///
/// `x` is [t,h,w,cin], `k` is [kt,kh,kw,cin,cout], `bias` is [cout];
/// output is [t,h,w,cout]. Kernel extents must be odd.
pub fn conv3d_forward<T: Scalar>(
    x: &[T],
    xs: [usize; 4],
    k: &[T],
    ks: [usize; 5],
    bias: &[T],
) -> Vec<T> {
    let [t, h, w, cin] = xs;
    let [kt, kh, kw, kcin, cout] = ks;
    debug_assert_eq!(cin, kcin);
    let (ot, oh, ow) = (kt / 2, kh / 2, kw / 2);

    let mut out = vec![T::ZERO; t * h * w * cout];
    out.par_chunks_mut(h * w * cout)
        .enumerate()
        .for_each(|(to, out_slice)| {
            let mut acc = vec![T::ZERO; cout];
            for ho in 0..h {
                for wo in 0..w {
                    acc.copy_from_slice(bias);
                    for dt in 0..kt {
                        let ti = to as isize + dt as isize - ot as isize;
                        if ti < 0 || ti >= t as isize {
                            continue;
                        }
                        for dh in 0..kh {
                            let hi = ho as isize + dh as isize - oh as isize;
                            if hi < 0 || hi >= h as isize {
                                continue;
                            }
                            for dw in 0..kw {
                                let wi = wo as isize + dw as isize - ow as isize;
                                if wi < 0 || wi >= w as isize {
                                    continue;
                                }
                                let xrow = row(
                                    x,
                                    ((ti as usize * h + hi as usize) * w + wi as usize) * cin,
                                    cin,
                                );
                                let kbase = (((dt * kh + dh) * kw + dw) * cin) * cout;
                                for (ci, &xv) in xrow.iter().enumerate() {
                                    let krow = row(k, kbase + ci * cout, cout);
                                    for (a, &kv) in acc.iter_mut().zip(krow) {
                                        *a += xv * kv;
                                    }
                                }
                            }
                        }
                    }
                    let obase = (ho * w + wo) * cout;
                    out_slice[obase..obase + cout].copy_from_slice(&acc);
                }
            }
        });
    out
}

/// Gradient of the convolution w.r.t. its input (gather form).
pub fn conv3d_backward_input<T: Scalar>(
    g: &[T],
    xs: [usize; 4],
    k: &[T],
    ks: [usize; 5],
) -> Vec<T> {
    let [t, h, w, cin] = xs;
    let [kt, kh, kw, _, cout] = ks;
    let (ot, oh, ow) = (kt / 2, kh / 2, kw / 2);

    let mut dx = vec![T::ZERO; t * h * w * cin];
    dx.par_chunks_mut(h * w * cin)
        .enumerate()
        .for_each(|(ti, dx_slice)| {
            for hi in 0..h {
                for wi in 0..w {
                    let dbase = (hi * w + wi) * cin;
                    for dt in 0..kt {
                        let to = ti as isize + ot as isize - dt as isize;
                        if to < 0 || to >= t as isize {
                            continue;
                        }
                        for dh in 0..kh {
                            let ho = hi as isize + oh as isize - dh as isize;
                            if ho < 0 || ho >= h as isize {
                                continue;
                            }
                            for dw in 0..kw {
                                let wo = wi as isize + ow as isize - dw as isize;
                                if wo < 0 || wo >= w as isize {
                                    continue;
                                }
                                let grow = row(
                                    g,
                                    ((to as usize * h + ho as usize) * w + wo as usize) * cout,
                                    cout,
                                );
                                let kbase = (((dt * kh + dh) * kw + dw) * cin) * cout;
                                for ci in 0..cin {
                                    let krow = row(k, kbase + ci * cout, cout);
                                    let mut s = T::ZERO;
                                    for (&gv, &kv) in grow.iter().zip(krow) {
                                        s += gv * kv;
                                    }
                                    dx_slice[dbase + ci] += s;
                                }
                            }
                        }
                    }
                }
            }
        });
    dx
}

/// Gradient of the convolution w.r.t. the kernel.
pub fn conv3d_backward_kernel<T: Scalar>(
    x: &[T],
    xs: [usize; 4],
    g: &[T],
    ks: [usize; 5],
) -> Vec<T> {
    let [t, h, w, cin] = xs;
    let [kt, kh, kw, _, cout] = ks;
    let (ot, oh, ow) = (kt / 2, kh / 2, kw / 2);
    let ksize = kt * kh * kw * cin * cout;

    let chunk_len = t.div_ceil(GRAD_CHUNKS);
    let partials: Vec<Vec<T>> = (0..t.div_ceil(chunk_len.max(1)).max(1))
        .into_par_iter()
        .map(|chunk| {
            let t_lo = chunk * chunk_len;
            let t_hi = (t_lo + chunk_len).min(t);
            let mut dk = vec![T::ZERO; ksize];
            for to in t_lo..t_hi {
                for ho in 0..h {
                    for wo in 0..w {
                        let grow = row(g, ((to * h + ho) * w + wo) * cout, cout);
                        for dt in 0..kt {
                            let ti = to as isize + dt as isize - ot as isize;
                            if ti < 0 || ti >= t as isize {
                                continue;
                            }
                            for dh in 0..kh {
                                let hi = ho as isize + dh as isize - oh as isize;
                                if hi < 0 || hi >= h as isize {
                                    continue;
                                }
                                for dw in 0..kw {
                                    let wi = wo as isize + dw as isize - ow as isize;
                                    if wi < 0 || wi >= w as isize {
                                        continue;
                                    }
                                    let xrow = row(
                                        x,
                                        ((ti as usize * h + hi as usize) * w + wi as usize) * cin,
                                        cin,
                                    );
                                    let kbase = (((dt * kh + dh) * kw + dw) * cin) * cout;
                                    for (ci, &xv) in xrow.iter().enumerate() {
                                        let dkrow = &mut dk[kbase + ci * cout..kbase + (ci + 1) * cout];
                                        for (d, &gv) in dkrow.iter_mut().zip(grow) {
                                            *d += xv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dk
        })
        .collect();

    let mut dk = vec![T::ZERO; ksize];
    for partial in &partials {
        for (d, p) in dk.iter_mut().zip(partial) {
            *d += *p;
        }
    }
    dk
}

/// Gradient of the convolution w.r.t. the bias: column sums of `g`.
pub fn conv3d_backward_bias<T: Scalar>(g: &[T], cout: usize) -> Vec<T> {
    let mut db = vec![T::ZERO; cout];
    for grow in g.chunks_exact(cout) {
        for (d, &gv) in db.iter_mut().zip(grow) {
            *d += gv;
        }
    }
    db
}

/// Non-overlapping 3D max pooling over [t,h,w,c] with window [pt,ph,pw].
/// Returns values and the linear input index of each window maximum
/// (first occurrence in row-major window order on ties).
pub fn maxpool3d_forward<T: Scalar>(
    x: &[T],
    xs: [usize; 4],
    win: [usize; 3],
) -> (Vec<T>, Vec<u32>) {
    let [t, h, w, c] = xs;
    let [pt, ph, pw] = win;
    let (to_n, ho_n, wo_n) = (t / pt, h / ph, w / pw);

    let mut out = vec![T::ZERO; to_n * ho_n * wo_n * c];
    let mut arg = vec![0u32; out.len()];
    let plane = ho_n * wo_n * c;
    out.par_chunks_mut(plane)
        .zip(arg.par_chunks_mut(plane))
        .enumerate()
        .for_each(|(to, (out_slice, arg_slice))| {
            for ho in 0..ho_n {
                for wo in 0..wo_n {
                    for ci in 0..c {
                        let mut best = T::from_f64(f64::NEG_INFINITY);
                        let mut best_idx = 0u32;
                        for dt in 0..pt {
                            for dh in 0..ph {
                                for dw in 0..pw {
                                    let idx = (((to * pt + dt) * h + ho * ph + dh) * w
                                        + wo * pw
                                        + dw)
                                        * c
                                        + ci;
                                    let v = x[idx];
                                    if v > best {
                                        best = v;
                                        best_idx = idx as u32;
                                    }
                                }
                            }
                        }
                        let o = (ho * wo_n + wo) * c + ci;
                        out_slice[o] = best;
                        arg_slice[o] = best_idx;
                    }
                }
            }
        });
    (out, arg)
}

/// Routes each output gradient solely to its recorded argmax position.
pub fn maxpool3d_backward<T: Scalar>(g: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::ZERO; input_len];
    for (&gv, &idx) in g.iter().zip(arg) {
        dx[idx as usize] += gv;
    }
    dx
}

/// Max over all of t,h,w per channel; output is a [1,c] row vector.
pub fn global_maxpool_forward<T: Scalar>(x: &[T], c: usize) -> (Vec<T>, Vec<u32>) {
    let mut out = vec![T::from_f64(f64::NEG_INFINITY); c];
    let mut arg = vec![0u32; c];
    for (pos, xrow) in x.chunks_exact(c).enumerate() {
        for (ci, &v) in xrow.iter().enumerate() {
            if v > out[ci] {
                out[ci] = v;
                arg[ci] = (pos * c + ci) as u32;
            }
        }
    }
    (out, arg)
}

/// C[m,n] = A[m,k] B[k,n].
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::ZERO; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = row(b, p * n, n);
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// dA = G Bᵀ for G[m,n], B[k,n].
pub fn matmul_g_bt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut da = vec![T::ZERO; m * k];
    for i in 0..m {
        let grow = row(g, i * n, n);
        for p in 0..k {
            let brow = row(b, p * n, n);
            let mut s = T::ZERO;
            for (&gv, &bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            da[i * k + p] = s;
        }
    }
    da
}

/// dB = Aᵀ G for A[m,k], G[m,n].
pub fn matmul_at_g<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut db = vec![T::ZERO; k * n];
    for i in 0..m {
        let grow = row(g, i * n, n);
        for p in 0..k {
            let av = a[i * k + p];
            let dbrow = &mut db[p * n..(p + 1) * n];
            for (dv, &gv) in dbrow.iter_mut().zip(grow) {
                *dv += av * gv;
            }
        }
    }
    db
}

/// Row-wise softmax with max subtraction (overflow-safe for large logits).
pub fn softmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut probs = vec![T::ZERO; logits.len()];
    for (prow, lrow) in probs.chunks_exact_mut(classes).zip(logits.chunks_exact(classes)) {
        let mut mx = lrow[0];
        for &v in &lrow[1..] {
            mx = mx.maximum(v);
        }
        let mut sum = T::ZERO;
        for (p, &l) in prow.iter_mut().zip(lrow) {
            *p = (l - mx).exp();
            sum += *p;
        }
        for p in prow.iter_mut() {
            *p /= sum;
        }
    }
    probs
}

/// Numerically stable logistic function; exact 0/1 in the saturated tails.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}
