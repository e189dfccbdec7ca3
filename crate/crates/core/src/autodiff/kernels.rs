//! Numeric kernels behind the tape ops. Matrix products go through
//! `matrixmultiply`; batch items run in parallel and partial weight
//! gradients are reduced in batch order so results do not depend on the
//! thread count.

use rayon::prelude::*;

use crate::error::{config, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvGeom {
    pub fn check(x: &[usize], kernel: &[usize], bias: Option<&[usize]>) -> Result<Self> {
        let (&[n, cin, h, w], &[cout, kcin, kh, kw]) = (x, kernel) else {
            return config(format!(
                "conv2d expects [N,Cin,H,W] input and [Cout,Cin,k,k] kernel, got {x:?} and {kernel:?}"
            ));
        };
        if kcin != cin {
            return config(format!(
                "conv2d channel mismatch: input has {cin}, kernel expects {kcin}"
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return config(format!("conv2d kernel must be square and odd, got {kh}x{kw}"));
        }
        if let Some(b) = bias {
            if b != [cout] {
                return config(format!("conv2d bias {b:?} does not match {cout} outputs"));
            }
        }
        Ok(Self {
            n,
            cin,
            cout,
            h,
            w,
            k: kh,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }
}

/// `c[m×n] (+)= a[m×k] · b[k×n]` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    debug_assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the asserted extents cover every element the strides address.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &ConvGeom, x: &[f32], col: &mut [f32]) {
    let r = (g.k / 2) as isize;
    let hw = g.hw();
    for c in 0..g.cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dx = kx as isize - r;
                for y in 0..g.h {
                    let sy = y as isize + dy;
                    let line = &mut dst[y * g.w..(y + 1) * g.w];
                    if sy < 0 || sy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                    for (xo, v) in line.iter_mut().enumerate() {
                        let sx = xo as isize + dx;
                        *v = if sx < 0 || sx >= g.w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, col: &[f32], dx: &mut [f32]) {
    let r = (g.k / 2) as isize;
    let hw = g.hw();
    for c in 0..g.cin {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - r;
                let dxo = kx as isize - r;
                for y in 0..g.h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= g.h as isize {
                        continue;
                    }
                    let line = &src[y * g.w..(y + 1) * g.w];
                    let dst = &mut plane[sy as usize * g.w..(sy as usize + 1) * g.w];
                    for (xo, &v) in line.iter().enumerate() {
                        let sx = xo as isize + dxo;
                        if sx >= 0 && sx < g.w as isize {
                            dst[sx as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f32], w: &[f32], b: Option<&[f32]>) -> Vec<f32> {
    let hw = g.hw();
    let mut out = vec![0.0; g.n * g.cout * hw];
    out.par_chunks_mut(g.cout * hw)
        .zip(x.par_chunks(g.cin * hw))
        .for_each(|(o, xi)| {
            let mut beta = 0.0;
            if let Some(b) = b {
                for (co, &bv) in b.iter().enumerate() {
                    o[co * hw..(co + 1) * hw].iter_mut().for_each(|v| *v = bv);
                }
                beta = 1.0;
            }
            if g.k == 1 {
                gemm(g.cout, g.cin, hw, w, (g.cin, 1), xi, (hw, 1), beta, o);
            } else {
                let mut col = vec![0.0; g.patch() * hw];
                im2col(g, xi, &mut col);
                gemm(g.cout, g.patch(), hw, w, (g.patch(), 1), &col, (hw, 1), beta, o);
            }
        });
    out
}

/// Returns `(d input, d kernel, d bias)`; the input gradient is skipped
/// when `need_dx` is false.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    need_dx: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let hw = g.hw();
    let patch = g.patch();
    let per_item: Vec<(Vec<f32>, Vec<f32>, Vec<f32>)> = x
        .par_chunks(g.cin * hw)
        .zip(dy.par_chunks(g.cout * hw))
        .map(|(xi, gi)| {
            let mut col = vec![0.0; patch * hw];
            if g.k == 1 {
                col.copy_from_slice(xi);
            } else {
                im2col(g, xi, &mut col);
            }
            let mut dw = vec![0.0; g.cout * patch];
            // dW = dY[Cout×HW] · colᵀ[HW×patch]
            gemm(g.cout, hw, patch, gi, (hw, 1), &col, (1, hw), 0.0, &mut dw);
            let db = gi.chunks(hw).map(|c| c.iter().sum()).collect();
            let mut dx = Vec::new();
            if need_dx {
                // dcol = Wᵀ[patch×Cout] · dY[Cout×HW]
                let mut dcol = vec![0.0; patch * hw];
                gemm(patch, g.cout, hw, w, (1, patch), gi, (hw, 1), 0.0, &mut dcol);
                if g.k == 1 {
                    dx = dcol;
                } else {
                    dx = vec![0.0; g.cin * hw];
                    col2im(g, &dcol, &mut dx);
                }
            }
            (dx, dw, db)
        })
        .collect();

    let mut dw = vec![0.0; g.cout * patch];
    let mut db = vec![0.0; g.cout];
    let mut dx = need_dx.then(|| Vec::with_capacity(x.len()));
    for (dxi, dwi, dbi) in per_item {
        dw.iter_mut().zip(&dwi).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&dbi).for_each(|(a, b)| *a += b);
        if let Some(dx) = dx.as_mut() {
            dx.extend_from_slice(&dxi);
        }
    }
    (dx, dw, db)
}

pub(crate) fn linear_forward(
    rows: usize,
    fan_in: usize,
    fan_out: usize,
    x: &[f32],
    w: &[f32],
    b: Option<&[f32]>,
) -> Vec<f32> {
    let mut out = vec![0.0; rows * fan_out];
    let mut beta = 0.0;
    if let Some(b) = b {
        for r in out.chunks_mut(fan_out) {
            r.copy_from_slice(b);
        }
        beta = 1.0;
    }
    // Y = X[rows×in] · Wᵀ[in×out]
    gemm(rows, fan_in, fan_out, x, (fan_in, 1), w, (1, fan_in), beta, &mut out);
    out
}

pub(crate) fn linear_backward(
    rows: usize,
    fan_in: usize,
    fan_out: usize,
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    need_dx: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let mut dw = vec![0.0; fan_out * fan_in];
    // dW = dYᵀ[out×rows] · X[rows×in]
    gemm(fan_out, rows, fan_in, dy, (1, fan_out), x, (fan_in, 1), 0.0, &mut dw);
    let mut db = vec![0.0; fan_out];
    for r in dy.chunks(fan_out) {
        db.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; rows * fan_in];
        // dX = dY[rows×out] · W[out×in]
        gemm(rows, fan_out, fan_in, dy, (fan_out, 1), w, (fan_in, 1), 0.0, &mut dx);
        dx
    });
    (dx, dw, db)
}

/// Calls `f(src, dst)` for every element of a pixel shuffle from
/// `[n, c·r², h, w]` to `[n, c, h·r, w·r]`.
pub(crate) fn pixel_shuffle_map(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    r: usize,
    mut f: impl FnMut(usize, usize),
) {
    let (oh, ow) = (h * r, w * r);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let sc = ch * r * r + i * r + j;
                    for y in 0..h {
                        for x in 0..w {
                            let src = ((b * c * r * r + sc) * h + y) * w + x;
                            let dst = ((b * c + ch) * oh + y * r + i) * ow + x * r + j;
                            f(src, dst);
                        }
                    }
                }
            }
        }
    }
}
