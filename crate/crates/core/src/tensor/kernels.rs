//! Pure compute kernels over raw slices. Every loop nest has a fixed
//! accumulation order, so results are bit-identical across runs and thread
//! counts; inner loops are written to autovectorize without floating-point
//! reassociation (independent lanes or saxpy-style updates).

use alloc::vec;
use alloc::vec::Vec;
// In no_std builds f64 math comes from the Float trait (libm); std test
// builds resolve the inherent methods instead and see this as unused.
#[allow(unused_imports)]
use num_traits::Float;

use crate::scalar::Scalar;

/// Microkernel tile: MR output rows by NR output columns held in registers.
const MR: usize = 4;
const NR: usize = 16;

/// out[m x n] += a[m x k] * b[k x n], all row-major.
///
/// Register-blocked: full MR x NR tiles accumulate in a local array over
/// ascending k, edge tiles fall back to scalar loops with the same
/// per-element ascending-k order.
pub fn mm_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut i = 0;
    while i < m {
        let mr = MR.min(m - i);
        let mut j = 0;
        while j < n {
            let nr = NR.min(n - j);
            if mr == MR && nr == NR {
                let a0 = &a[i * k..(i + 1) * k];
                let a1 = &a[(i + 1) * k..(i + 2) * k];
                let a2 = &a[(i + 2) * k..(i + 3) * k];
                let a3 = &a[(i + 3) * k..(i + 4) * k];
                let mut acc = [[S::zero(); NR]; MR];
                for kk in 0..k {
                    let brow: &[S; NR] = b[kk * n + j..kk * n + j + NR].try_into().unwrap();
                    let av = [a0[kk], a1[kk], a2[kk], a3[kk]];
                    for r in 0..MR {
                        for c in 0..NR {
                            acc[r][c] += av[r] * brow[c];
                        }
                    }
                }
                for r in 0..MR {
                    let orow = &mut out[(i + r) * n + j..(i + r) * n + j + NR];
                    for c in 0..NR {
                        orow[c] += acc[r][c];
                    }
                }
            } else {
                for r in 0..mr {
                    let arow = &a[(i + r) * k..(i + r + 1) * k];
                    for c in 0..nr {
                        let mut s = S::zero();
                        for kk in 0..k {
                            s += arow[kk] * b[kk * n + j + c];
                        }
                        out[(i + r) * n + j + c] += s;
                    }
                }
            }
            j += nr;
        }
        i += mr;
    }
}

/// Dot product with eight independent accumulator lanes (fixed combine order).
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let k = a.len();
    let mut acc = [S::zero(); 8];
    let mut i = 0;
    while i + 8 <= k {
        for l in 0..8 {
            acc[l] += a[i + l] * b[i + l];
        }
        i += 8;
    }
    let mut rest = S::zero();
    while i < k {
        rest += a[i] * b[i];
        i += 1;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + rest
}

/// out[m x n] += a[m x k] * bt[n x k]^T (i.e. out[i][j] = dot of rows).
///
/// Transposes bt once and runs the blocked [`mm_nn`] kernel; the copy is
/// cheap next to the multiply and the row-major kernel vectorizes far
/// better than per-element dot products.
pub fn mm_nt<S: Scalar>(a: &[S], bt: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(bt.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let mut b = vec![S::zero(); k * n];
    for j in 0..n {
        let src = &bt[j * k..(j + 1) * k];
        for (kk, v) in src.iter().enumerate() {
            b[kk * n + j] = *v;
        }
    }
    mm_nn(a, &b, m, k, n, out);
}

/// out[m x n] += at[k x m]^T * b[k x n].
pub fn mm_tn<S: Scalar>(at: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(at.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut i = 0;
    while i < m {
        let mr = MR.min(m - i);
        let mut j = 0;
        while j < n {
            let nr = NR.min(n - j);
            if mr == MR && nr == NR {
                let mut acc = [[S::zero(); NR]; MR];
                for kk in 0..k {
                    let av: &[S; MR] = at[kk * m + i..kk * m + i + MR].try_into().unwrap();
                    let brow: &[S; NR] = b[kk * n + j..kk * n + j + NR].try_into().unwrap();
                    for r in 0..MR {
                        for c in 0..NR {
                            acc[r][c] += av[r] * brow[c];
                        }
                    }
                }
                for r in 0..MR {
                    let orow = &mut out[(i + r) * n + j..(i + r) * n + j + NR];
                    for c in 0..NR {
                        orow[c] += acc[r][c];
                    }
                }
            } else {
                for r in 0..mr {
                    for c in 0..nr {
                        let mut s = S::zero();
                        for kk in 0..k {
                            s += at[kk * m + i + r] * b[kk * n + j + c];
                        }
                        out[(i + r) * n + j + c] += s;
                    }
                }
            }
            j += nr;
        }
        i += mr;
    }
}

/// out += a * x, elementwise.
pub fn axpy<S: Scalar>(out: &mut [S], a: S, x: &[S]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * *v;
    }
}

// ----- convolution -----

/// Geometry of a single conv2d application (square kernel, zero padding).
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvDims {
    pub fn h_out(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }
}

/// Unfold `x` [c_in, h, w] into col [c_in*k*k, h_out*w_out] with zero padding.
pub fn im2col<S: Scalar>(x: &[S], d: &ConvDims, col: &mut [S]) {
    let (ho, wo) = (d.h_out(), d.w_out());
    let n = ho * wo;
    debug_assert_eq!(x.len(), d.c_in * d.h * d.w);
    debug_assert_eq!(col.len(), d.c_in * d.k * d.k * n);
    let mut row = 0;
    for ci in 0..d.c_in {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let dst = &mut col[row * n..(row + 1) * n];
                row += 1;
                for oy in 0..ho {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= d.h as isize {
                        for v in drow.iter_mut() {
                            *v = S::zero();
                        }
                        continue;
                    }
                    let src = &x[(ci * d.h + iy as usize) * d.w..(ci * d.h + iy as usize + 1) * d.w];
                    for (ox, v) in drow.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        *v = if ix >= 0 && ix < d.w as isize {
                            src[ix as usize]
                        } else {
                            S::zero()
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add col gradients back onto the input grid.
pub fn col2im_acc<S: Scalar>(col: &[S], d: &ConvDims, gx: &mut [S]) {
    let (ho, wo) = (d.h_out(), d.w_out());
    let n = ho * wo;
    debug_assert_eq!(gx.len(), d.c_in * d.h * d.w);
    debug_assert_eq!(col.len(), d.c_in * d.k * d.k * n);
    let mut row = 0;
    for ci in 0..d.c_in {
        for ky in 0..d.k {
            for kx in 0..d.k {
                let src = &col[row * n..(row + 1) * n];
                row += 1;
                for oy in 0..ho {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        continue;
                    }
                    let dst =
                        &mut gx[(ci * d.h + iy as usize) * d.w..(ci * d.h + iy as usize + 1) * d.w];
                    for ox in 0..wo {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// out[c_out, h_out, w_out] = conv(x, weight) + bias. Overwrites `out`.
pub fn conv2d_forward<S: Scalar>(x: &[S], weight: &[S], bias: &[S], d: &ConvDims, out: &mut [S]) {
    let ck = d.c_in * d.k * d.k;
    let n = d.h_out() * d.w_out();
    debug_assert_eq!(weight.len(), d.c_out * ck);
    debug_assert_eq!(bias.len(), d.c_out);
    debug_assert_eq!(out.len(), d.c_out * n);
    let mut col = vec![S::zero(); ck * n];
    im2col(x, d, &mut col);
    for o in 0..d.c_out {
        let bv = bias[o];
        for v in &mut out[o * n..(o + 1) * n] {
            *v = bv;
        }
    }
    mm_nn(weight, &col, d.c_out, ck, n, out);
}

/// Accumulate conv gradients. The col matrix is rebuilt from `x` rather than
/// saved, trading negligible compute for activation memory.
pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    weight: &[S],
    d: &ConvDims,
    g_out: &[S],
    gx: Option<&mut [S]>,
    gw: Option<&mut [S]>,
    gb: Option<&mut [S]>,
) {
    let ck = d.c_in * d.k * d.k;
    let n = d.h_out() * d.w_out();
    debug_assert_eq!(g_out.len(), d.c_out * n);
    if let Some(gb) = gb {
        for o in 0..d.c_out {
            let mut acc = S::zero();
            for v in &g_out[o * n..(o + 1) * n] {
                acc += *v;
            }
            gb[o] += acc;
        }
    }
    if gw.is_some() || gx.is_some() {
        if let Some(gw) = gw {
            let mut col = vec![S::zero(); ck * n];
            im2col(x, d, &mut col);
            // gw[o][r] = dot(g_out row o, col row r)
            mm_nt(g_out, &col, d.c_out, n, ck, gw);
        }
        if let Some(gx) = gx {
            let mut gcol = vec![S::zero(); ck * n];
            // gcol[r][pos] = sum_o weight[o][r] * g_out[o][pos]
            mm_tn(weight, g_out, ck, d.c_out, n, &mut gcol);
            col2im_acc(&gcol, d, gx);
        }
    }
}

// ----- pointwise and normalization -----

pub fn relu_forward<S: Scalar>(x: &[S], out: &mut [S]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o = v.max(S::zero());
    }
}

/// Subgradient 0 at exactly 0.
pub fn relu_backward<S: Scalar>(x: &[S], g: &[S], gx: &mut [S]) {
    for i in 0..x.len() {
        if x[i] > S::zero() {
            gx[i] += g[i];
        }
    }
}

/// Column-wise softmax of a row-major [r x c] matrix, max-shifted for
/// stability. Every column of the output sums to 1.
pub fn softmax_columns<S: Scalar>(x: &[S], r: usize, c: usize, out: &mut [S]) {
    debug_assert_eq!(x.len(), r * c);
    for j in 0..c {
        let mut mx = x[j];
        for i in 1..r {
            mx = mx.max(x[i * c + j]);
        }
        let mut sum = S::zero();
        for i in 0..r {
            let e = (x[i * c + j] - mx).exp();
            out[i * c + j] = e;
            sum += e;
        }
        let inv = S::one() / sum;
        for i in 0..r {
            out[i * c + j] *= inv;
        }
    }
}

pub fn softmax_columns_backward<S: Scalar>(y: &[S], g: &[S], r: usize, c: usize, gx: &mut [S]) {
    for j in 0..c {
        let mut d = S::zero();
        for i in 0..r {
            d += g[i * c + j] * y[i * c + j];
        }
        for i in 0..r {
            gx[i * c + j] += y[i * c + j] * (g[i * c + j] - d);
        }
    }
}

/// Per-position channel vectors divided by max(norm, eps); `n` spatial
/// positions, channel stride `n`. A zero vector stays zero.
pub fn l2_normalize_channels<S: Scalar>(x: &[S], c: usize, n: usize, eps: S, out: &mut [S]) {
    debug_assert_eq!(x.len(), c * n);
    for p in 0..n {
        let mut sq = S::zero();
        for ch in 0..c {
            let v = x[ch * n + p];
            sq += v * v;
        }
        let inv = S::one() / sq.sqrt().max(eps);
        for ch in 0..c {
            out[ch * n + p] = x[ch * n + p] * inv;
        }
    }
}

pub fn l2_normalize_channels_backward<S: Scalar>(
    x: &[S],
    y: &[S],
    g: &[S],
    c: usize,
    n: usize,
    eps: S,
    gx: &mut [S],
) {
    for p in 0..n {
        let mut sq = S::zero();
        for ch in 0..c {
            let v = x[ch * n + p];
            sq += v * v;
        }
        let norm = sq.sqrt();
        if norm >= eps {
            let mut yg = S::zero();
            for ch in 0..c {
                yg += y[ch * n + p] * g[ch * n + p];
            }
            let inv = S::one() / norm;
            for ch in 0..c {
                gx[ch * n + p] += (g[ch * n + p] - y[ch * n + p] * yg) * inv;
            }
        } else {
            // Below eps the map is v / eps, a constant scaling.
            let inv = S::one() / eps;
            for ch in 0..c {
                gx[ch * n + p] += g[ch * n + p] * inv;
            }
        }
    }
}

// ----- bilinear sampling -----

/// Normalized coordinate -> fractional cell index (cell j center at index j).
#[inline]
fn to_index<S: Scalar>(coord: S, side: usize) -> S {
    (coord + S::one()) * S::of_f64(side as f64 * 0.5) - S::of_f64(0.5)
}

/// Sample `x` [c, h, w] at `n` normalized grid points (x, y pairs), zero
/// padding outside the image. Output is [c, n].
pub fn bilinear_sample<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, grid: &[S], out: &mut [S]) {
    let n = grid.len() / 2;
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(out.len(), c * n);
    for i in 0..n {
        let col = to_index(grid[2 * i], w);
        let row = to_index(grid[2 * i + 1], h);
        let c0 = col.floor();
        let r0 = row.floor();
        let wx = col - c0;
        let wy = row - r0;
        let ci = c0.to_f64_lossy() as isize;
        let ri = r0.to_f64_lossy() as isize;
        let taps = [
            (ri, ci, (S::one() - wy) * (S::one() - wx)),
            (ri, ci + 1, (S::one() - wy) * wx),
            (ri + 1, ci, wy * (S::one() - wx)),
            (ri + 1, ci + 1, wy * wx),
        ];
        for ch in 0..c {
            let plane = &x[ch * h * w..(ch + 1) * h * w];
            let mut acc = S::zero();
            for &(r, cc, wt) in &taps {
                if r >= 0 && r < h as isize && cc >= 0 && cc < w as isize {
                    acc += wt * plane[r as usize * w + cc as usize];
                }
            }
            out[ch * n + i] = acc;
        }
    }
}

/// Gradients of [`bilinear_sample`] wrt the image and the grid coordinates.
pub fn bilinear_sample_backward<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    grid: &[S],
    g: &[S],
    mut gx: Option<&mut [S]>,
    mut ggrid: Option<&mut [S]>,
) {
    let n = grid.len() / 2;
    for i in 0..n {
        let col = to_index(grid[2 * i], w);
        let row = to_index(grid[2 * i + 1], h);
        let c0 = col.floor();
        let r0 = row.floor();
        let wx = col - c0;
        let wy = row - r0;
        let ci = c0.to_f64_lossy() as isize;
        let ri = r0.to_f64_lossy() as isize;
        let inside =
            |r: isize, cc: isize| -> bool { r >= 0 && r < h as isize && cc >= 0 && cc < w as isize };
        let tap = |plane: &[S], r: isize, cc: isize| -> S {
            if inside(r, cc) {
                plane[r as usize * w + cc as usize]
            } else {
                S::zero()
            }
        };
        let taps = [
            (ri, ci, (S::one() - wy) * (S::one() - wx)),
            (ri, ci + 1, (S::one() - wy) * wx),
            (ri + 1, ci, wy * (S::one() - wx)),
            (ri + 1, ci + 1, wy * wx),
        ];
        let (mut dcol, mut drow) = (S::zero(), S::zero());
        for ch in 0..c {
            let go = g[ch * n + i];
            if let Some(gx) = gx.as_deref_mut() {
                let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
                for &(r, cc, wt) in &taps {
                    if inside(r, cc) {
                        plane[r as usize * w + cc as usize] += go * wt;
                    }
                }
            }
            if ggrid.is_some() {
                let plane = &x[ch * h * w..(ch + 1) * h * w];
                let (p00, p01) = (tap(plane, ri, ci), tap(plane, ri, ci + 1));
                let (p10, p11) = (tap(plane, ri + 1, ci), tap(plane, ri + 1, ci + 1));
                dcol += go * ((S::one() - wy) * (p01 - p00) + wy * (p11 - p10));
                drow += go * ((S::one() - wx) * (p10 - p00) + wx * (p11 - p01));
            }
        }
        if let Some(gg) = ggrid.as_deref_mut() {
            gg[2 * i] += dcol * S::of_f64(w as f64 * 0.5);
            gg[2 * i + 1] += drow * S::of_f64(h as f64 * 0.5);
        }
    }
}

// ----- pose grid -----

/// Canonical patch lattice coordinate of cell `i` out of `n`.
#[inline]
pub fn lattice<S: Scalar>(i: usize, n: usize) -> S {
    S::of_f64(-1.0 + (2 * i + 1) as f64 / n as f64)
}

/// Grid points of pose theta = (tx, ty, r): point_i = R(r) * (scale * u_i) + t
/// over the row-major hp x wp canonical lattice. Output is [hp*wp, 2].
pub fn make_grid<S: Scalar>(theta: &[S], hp: usize, wp: usize, scale: S, out: &mut [S]) {
    debug_assert_eq!(theta.len(), 3);
    debug_assert_eq!(out.len(), hp * wp * 2);
    let (tx, ty, r) = (theta[0], theta[1], theta[2]);
    let (cr, sr) = (r.cos(), r.sin());
    for iy in 0..hp {
        let uy = lattice::<S>(iy, hp) * scale;
        for ix in 0..wp {
            let ux = lattice::<S>(ix, wp) * scale;
            let i = iy * wp + ix;
            out[2 * i] = ux * cr - uy * sr + tx;
            out[2 * i + 1] = ux * sr + uy * cr + ty;
        }
    }
}

pub fn make_grid_backward<S: Scalar>(
    theta: &[S],
    hp: usize,
    wp: usize,
    scale: S,
    g: &[S],
    gtheta: &mut [S],
) {
    let r = theta[2];
    let (cr, sr) = (r.cos(), r.sin());
    let (mut dtx, mut dty, mut dr) = (S::zero(), S::zero(), S::zero());
    for iy in 0..hp {
        let uy = lattice::<S>(iy, hp) * scale;
        for ix in 0..wp {
            let ux = lattice::<S>(ix, wp) * scale;
            let i = iy * wp + ix;
            let (gpx, gpy) = (g[2 * i], g[2 * i + 1]);
            dtx += gpx;
            dty += gpy;
            dr += gpx * (-ux * sr - uy * cr) + gpy * (ux * cr - uy * sr);
        }
    }
    gtheta[0] += dtx;
    gtheta[1] += dty;
    gtheta[2] += dr;
}

// ----- linear layer -----

/// out[m] = w[m x n] * x[n] + b[m].
pub fn linear_forward<S: Scalar>(x: &[S], w: &[S], b: &[S], m: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(x.len(), n);
    debug_assert_eq!(w.len(), m * n);
    for o in 0..m {
        out[o] = b[o] + dot(&w[o * n..(o + 1) * n], x);
    }
}

pub fn linear_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    m: usize,
    n: usize,
    g: &[S],
    gx: Option<&mut [S]>,
    gw: Option<&mut [S]>,
    gb: Option<&mut [S]>,
) {
    if let Some(gx) = gx {
        for o in 0..m {
            axpy(gx, g[o], &w[o * n..(o + 1) * n]);
        }
    }
    if let Some(gw) = gw {
        for o in 0..m {
            axpy(&mut gw[o * n..(o + 1) * n], g[o], x);
        }
    }
    if let Some(gb) = gb {
        for o in 0..m {
            gb[o] += g[o];
        }
    }
}

/// Mean of a slice (fixed summation order).
pub fn mean<S: Scalar>(x: &[S]) -> S {
    let mut acc = S::zero();
    for v in x {
        acc += *v;
    }
    acc / S::of_f64(x.len() as f64)
}

/// Bilinear upsample of [c, h, w] by an integer factor with clamp-to-edge
/// handling, used for decoding label maps and flow fields to pixel resolution.
pub fn upsample_bilinear<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, factor: usize) -> Vec<S> {
    let (ho, wo) = (h * factor, w * factor);
    let mut out = vec![S::zero(); c * ho * wo];
    let f = factor as f64;
    for oy in 0..ho {
        let sy = ((oy as f64 + 0.5) / f - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = S::of_f64(sy - y0 as f64);
        for ox in 0..wo {
            let sx = ((ox as f64 + 0.5) / f - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = S::of_f64(sx - x0 as f64);
            for ch in 0..c {
                let plane = &x[ch * h * w..(ch + 1) * h * w];
                let top = plane[y0 * w + x0] * (S::one() - wx) + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * (S::one() - wx) + plane[y1 * w + x1] * wx;
                out[(ch * ho + oy) * wo + ox] = top * (S::one() - wy) + bot * wy;
            }
        }
    }
    out
}
