//! Reference implementations used as independent oracles. Everything here
//! is deliberately naive: direct loops over the textbook definitions, in f64.

#![allow(dead_code)]

use coordsr::autodiff::Tape;
use coordsr::models::{Arch, Model, ModelConfig};
use coordsr::{ImageGrid, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

pub fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
    ImageGrid::from_fn(h, w, |_, _| rng.random_range(0.0f32..1.0))
}

/// Six nested loops over the zero-padded cross-correlation definition.
pub fn naive_conv2d(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let [n, cin, h, w] = <[usize; 4]>::try_from(x.shape()).unwrap();
    let [cout, _, ks, _] = <[usize; 4]>::try_from(k.shape()).unwrap();
    let r = (ks / 2) as isize;
    let mut out = vec![0.0f64; n * cout * h * w];
    for bi in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = b.data()[co] as f64;
                    for ci in 0..cin {
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let sy = y as isize + ky as isize - r;
                                let sx = xx as isize + kx as isize - r;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((bi * cin + ci) * h + sy as usize) * w + sx as usize];
                                let kv = k.data()[((co * cin + ci) * ks + ky) * ks + kx];
                                s += xv as f64 * kv as f64;
                            }
                        }
                    }
                    out[((bi * cout + co) * h + y) * w + xx] = s;
                }
            }
        }
    }
    out
}

/// Triple loop `x · wᵀ + b` over rows of `x`.
pub fn naive_linear(x: &Tensor, wt: &Tensor, b: &Tensor) -> Vec<f64> {
    let fan_in = *x.shape().last().unwrap();
    let fan_out = wt.shape()[0];
    let rows = x.len() / fan_in;
    let mut out = vec![0.0; rows * fan_out];
    for r in 0..rows {
        for o in 0..fan_out {
            let mut s = b.data()[o] as f64;
            for i in 0..fan_in {
                s += x.data()[r * fan_in + i] as f64 * wt.data()[o * fan_in + i] as f64;
            }
            out[r * fan_out + o] = s;
        }
    }
    out
}

/// O(N²) 2D DFT with unitary scaling; input and output as (re, im) pairs.
pub fn naive_dft2(h: usize, w: usize, x: &[(f64, f64)], inverse: bool) -> Vec<(f64, f64)> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let norm = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![(0.0, 0.0); h * w];
    for ky in 0..h {
        for kx in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    let ph = sign
                        * 2.0
                        * std::f64::consts::PI
                        * ((ky * y) as f64 / h as f64 + (kx * xx) as f64 / w as f64);
                    let (s, c) = ph.sin_cos();
                    let (a, b) = x[y * w + xx];
                    re += a * c - b * s;
                    im += a * s + b * c;
                }
            }
            out[ky * w + kx] = (re * norm, im * norm);
        }
    }
    out
}

/// Double-sum orthonormal DCT-II of an 8×8 block.
pub fn naive_dct2(b: &[[f32; 8]; 8]) -> [[f64; 8]; 8] {
    let alpha = |k: usize| if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
    let mut out = [[0.0; 8]; 8];
    for (u, row) in out.iter_mut().enumerate() {
        for (v, o) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for (y, brow) in b.iter().enumerate() {
                for (x, &bv) in brow.iter().enumerate() {
                    s += bv as f64
                        * (std::f64::consts::PI * (2 * y + 1) as f64 * u as f64 / 16.0).cos()
                        * (std::f64::consts::PI * (2 * x + 1) as f64 * v as f64 / 16.0).cos();
                }
            }
            *o = alpha(u) * alpha(v) * s;
        }
    }
    out
}

fn keys(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t.powi(3) - (a + 3.0) * t.powi(2) + 1.0
    } else if t < 2.0 {
        a * t.powi(3) - 5.0 * a * t.powi(2) + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

fn mirror101(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
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

/// Per output pixel, sums the 4×4 tensor-product kernel footprint directly.
pub fn naive_bicubic(img: &ImageGrid, oh: usize, ow: usize) -> Vec<f64> {
    let (h, w) = img.dims();
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        let sy = (oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5;
        for ox in 0..ow {
            let sx = (ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5;
            let mut s = 0.0;
            for iy in (sy.floor() as i64 - 1)..=(sy.floor() as i64 + 2) {
                for ix in (sx.floor() as i64 - 1)..=(sx.floor() as i64 + 2) {
                    let wgt = keys(sy - iy as f64) * keys(sx - ix as f64);
                    s += wgt * img.get(mirror101(iy, h as i64), mirror101(ix, w as i64)) as f64;
                }
            }
            out[oy * ow + ox] = s;
        }
    }
    out
}

/// Relative gradient error with a small absolute floor for values that are
/// both essentially zero (dead ReLU paths).
pub fn grad_close(analytic: f64, numeric: f64, rtol: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= rtol * analytic.abs().max(numeric.abs()) || diff <= 1e-5
}

/// A stand-alone f64 re-implementation of the model's forward pass, built
/// from the parameter names and the architecture description only.
pub struct RefNet {
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub cfg: ModelConfig,
}

pub struct Plane {
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl RefNet {
    pub fn from_model(model: &Model) -> Self {
        let params = model
            .params
            .names()
            .iter()
            .zip(model.params.tensors())
            .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.data().iter().map(|&v| v as f64).collect()))
            .collect();
        Self {
            params,
            cfg: model.config.clone(),
        }
    }

    fn get(&self, name: &str) -> &(String, Vec<usize>, Vec<f64>) {
        self.params.iter().find(|p| p.0 == name).unwrap()
    }

    fn conv(&self, x: &Plane, name: &str) -> Plane {
        let (_, shape, k) = self.get(&format!("{name}.weight"));
        let (_, _, b) = self.get(&format!("{name}.bias"));
        let (cout, cin) = (shape[0], shape[1]);
        assert_eq!(cin, x.c);
        let mut out = vec![0.0; cout * x.h * x.w];
        for co in 0..cout {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut s = b[co];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                    continue;
                                }
                                s += k[((co * cin + ci) * 3 + ky) * 3 + kx]
                                    * x.v[(ci * x.h + sy as usize) * x.w + sx as usize];
                            }
                        }
                    }
                    out[(co * x.h + y) * x.w + xx] = s;
                }
            }
        }
        Plane { c: cout, h: x.h, w: x.w, v: out }
    }

    pub fn encode(&self, x_lr: &ImageGrid) -> Plane {
        let (h, w) = x_lr.dims();
        let x = Plane {
            c: 1,
            h,
            w,
            v: x_lr.data().iter().map(|&v| v as f64 - 0.5).collect(),
        };
        let head = self.conv(&x, "enc.head");
        let mut r = Plane { v: head.v.clone(), ..head };
        for b in 0..self.cfg.blocks {
            let mut t = self.conv(&r, &format!("enc.block{b}.conv1"));
            t.v.iter_mut().for_each(|v| *v = v.max(0.0));
            let t = self.conv(&t, &format!("enc.block{b}.conv2"));
            for (a, b) in r.v.iter_mut().zip(&t.v) {
                *a += 0.1 * b;
            }
        }
        let mut tail = self.conv(&r, "enc.tail");
        for (a, b) in tail.v.iter_mut().zip(&head.v) {
            *a += b;
        }
        tail
    }

    fn mlp(&self, input: &[f64]) -> f64 {
        let mut h = input.to_vec();
        for j in 0..self.cfg.mlp_layers {
            let (_, shape, wt) = self.get(&format!("dec.mlp{j}.weight"));
            let (_, _, b) = self.get(&format!("dec.mlp{j}.bias"));
            let mut out: Vec<f64> = (0..shape[0])
                .map(|o| b[o] + (0..shape[1]).map(|i| wt[o * shape[1] + i] * h[i]).sum::<f64>())
                .collect();
            if j + 1 < self.cfg.mlp_layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        h[0]
    }

    /// Output raster `oh × ow` (before clamping).
    pub fn forward(&self, x_lr: &ImageGrid, (oh, ow): (usize, usize)) -> Vec<f64> {
        let f = self.encode(x_lr);
        if self.cfg.arch == Arch::Conv {
            return self.conv_head(f);
        }
        let (l, w) = (f.h, f.w);
        let axis = |p: f64, n: usize| -> (f64, [usize; 2], [f64; 2]) {
            let u = p * n as f64 - 0.5;
            if n == 1 {
                return (u, [0, 0], [1.0, 0.0]);
            }
            let uc = u.clamp(0.0, (n - 1) as f64);
            let lo = (uc.floor() as usize).min(n - 2);
            let t = uc - lo as f64;
            (u, [lo, lo + 1], [1.0 - t, t])
        };
        let mut out = Vec::with_capacity(oh * ow);
        for r in 0..oh {
            let (qy, rows, wy) = axis((r as f64 + 0.5) / oh as f64, l);
            for c in 0..ow {
                let (qx, cols, wx) = axis((c as f64 + 0.5) / ow as f64, w);
                let mut acc = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        let cell = rows[a] * w + cols[b];
                        let mut code: Vec<f64> = (0..f.c).map(|ch| f.v[ch * l * w + cell]).collect();
                        if self.cfg.liif_mode {
                            code.push(qy - rows[a] as f64);
                            code.push(qx - cols[b] as f64);
                        }
                        acc += wy[a] * wx[b] * self.mlp(&code);
                    }
                }
                out.push(acc + 0.5);
            }
        }
        out
    }

    fn conv_head(&self, f: Plane) -> Vec<f64> {
        let stages: &[(usize, &str)] = match self.cfg.scale.unwrap() {
            4 => &[(2, "dec.up0"), (2, "dec.up1")],
            s if s == 2 => &[(2, "dec.up0")],
            _ => &[(3, "dec.up0")],
        };
        let mut x = f;
        for &(r, name) in stages {
            let y = self.conv(&x, name);
            let c = y.c / (r * r);
            let (h, w) = (y.h * r, y.w * r);
            let mut v = vec![0.0; c * h * w];
            for ch in 0..c {
                for oy in 0..h {
                    for ox in 0..w {
                        let src_c = ch * r * r + (oy % r) * r + ox % r;
                        v[(ch * h + oy) * w + ox] = y.v[(src_c * y.h + oy / r) * y.w + ox / r];
                    }
                }
            }
            x = Plane { c, h, w, v };
        }
        self.conv(&x, "dec.out").v.iter().map(|v| v + 0.5).collect()
    }
}

pub struct FdReport {
    pub checked: usize,
    pub passed: usize,
    pub worst: f64,
}

/// Compares the tape's gradients of `L_c + λ·L_d` on `samples` randomly
/// chosen scalar parameters against central differences (step `h`) of the
/// f64 reference network.
pub fn model_fd_check(
    model: &Model,
    x_lr: &ImageGrid,
    out_dims: (usize, usize),
    target: &ImageGrid,
    denoised: &ImageGrid,
    lambda: f32,
    samples: usize,
    h: f64,
    seed: u64,
) -> FdReport {
    let mut tape = Tape::new();
    let vars = model.params.register(&mut tape, true);
    let pred = model.forward(&mut tape, &vars, x_lr, out_dims).unwrap();
    let lc = tape.l1_mean(pred, &target.to_tensor()).unwrap();
    let ld = tape.mse_mean(pred, &denoised.to_tensor()).unwrap();
    let ld = tape.scale(ld, lambda).unwrap();
    let loss = tape.add(lc, ld).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut net = RefNet::from_model(model);
    let eval = |net: &RefNet| -> f64 {
        let p = net.forward(x_lr, out_dims);
        let n = p.len() as f64;
        let l1: f64 = p.iter().zip(target.data()).map(|(a, &t)| (a - t as f64).abs()).sum::<f64>() / n;
        let l2: f64 = p.iter().zip(denoised.data()).map(|(a, &d)| (a - d as f64).powi(2)).sum::<f64>() / n;
        l1 + lambda as f64 * l2
    };

    let sizes: Vec<usize> = net.params.iter().map(|p| p.2.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut r = rng(seed);
    let mut report = FdReport {
        checked: 0,
        passed: 0,
        worst: 0.0,
    };
    for _ in 0..samples {
        let mut flat = r.random_range(0..total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let analytic = grads.get(vars[ti]).unwrap().data()[flat] as f64;
        let orig = net.params[ti].2[flat];
        net.params[ti].2[flat] = orig + h;
        let up = eval(&net);
        net.params[ti].2[flat] = orig - h;
        let dn = eval(&net);
        net.params[ti].2[flat] = orig;
        let numeric = (up - dn) / (2.0 * h);
        report.checked += 1;
        if grad_close(analytic, numeric, 1e-2) {
            report.passed += 1;
        } else {
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
            report.worst = report.worst.max(rel);
        }
    }
    report
}

/// Mean squared error straight from the definition, then `10·log10(1/mse)`.
pub fn naive_psnr(a: &ImageGrid, b: &ImageGrid) -> f64 {
    let mut se = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let d = a.get(y, x) as f64 - b.get(y, x) as f64;
            se += d * d;
        }
    }
    10.0 * (1.0 / (se / (a.height() * a.width()) as f64)).log10()
}

/// Pixel-domain VIF computed pixel by pixel with a full 2-D window.
pub fn naive_vif(dist: &ImageGrid, reference: &ImageGrid) -> f64 {
    let to255 = |img: &ImageGrid| -> (usize, usize, Vec<f64>) {
        (img.height(), img.width(), img.data().iter().map(|&v| v as f64 * 255.0).collect())
    };
    let (mut h, mut w, mut r) = to255(reference);
    let (_, _, mut d) = to255(dist);
    let (mut num, mut den) = (0.0, 0.0);
    for k in 1..=4u32 {
        let std = 2f64.powi(k as i32 - 1) * 0.5;
        let rad = 2i64.pow(k - 1);
        let mut win = vec![];
        for i in -rad..=rad {
            for j in -rad..=rad {
                win.push((i, j, (-((i * i + j * j) as f64) / (2.0 * std * std)).exp()));
            }
        }
        let z: f64 = win.iter().map(|t| t.2).sum();
        let filt = |img: &[f64], h: usize, w: usize, y: usize, x: usize| -> f64 {
            win.iter()
                .map(|&(i, j, g)| {
                    let yy = mirror101(y as i64 + i, h as i64);
                    let xx = mirror101(x as i64 + j, w as i64);
                    g / z * img[yy * w + xx]
                })
                .sum()
        };
        if k > 1 {
            let (nh, nw) = (h.div_ceil(2), w.div_ceil(2));
            let mut nr = vec![0.0; nh * nw];
            let mut nd = vec![0.0; nh * nw];
            for y in 0..nh {
                for x in 0..nw {
                    nr[y * nw + x] = filt(&r, h, w, 2 * y, 2 * x);
                    nd[y * nw + x] = filt(&d, h, w, 2 * y, 2 * x);
                }
            }
            (h, w, r, d) = (nh, nw, nr, nd);
        }
        let rr: Vec<f64> = r.iter().map(|v| v * v).collect();
        let dd: Vec<f64> = d.iter().map(|v| v * v).collect();
        let rd: Vec<f64> = r.iter().zip(&d).map(|(a, b)| a * b).collect();
        for y in 0..h {
            for x in 0..w {
                let (mr, md) = (filt(&r, h, w, y, x), filt(&d, h, w, y, x));
                let mut sr = (filt(&rr, h, w, y, x) - mr * mr).max(0.0);
                let sd = (filt(&dd, h, w, y, x) - md * md).max(0.0);
                let srd = filt(&rd, h, w, y, x) - mr * md;
                let eps = 1e-10;
                let (mut g, mut sv) = (srd / (sr + eps), sd - srd * srd / (sr + eps));
                if sr < 1e-4 {
                    (g, sv, sr) = (0.0, sd, 0.0);
                }
                if sd < 1e-4 {
                    (g, sv) = (0.0, 0.0);
                }
                if g < 0.0 {
                    (g, sv) = (0.0, sd);
                }
                let sv = sv.max(eps);
                num += (1.0 + g * g * sr / (sv + 2.0)).ln();
                den += (1.0 + sr / 2.0).ln();
            }
        }
    }
    num / den
}
