mod common;

use std::sync::Arc;

use common::*;
use coordsr::autodiff::Tape;
use coordsr::denoise::{dct2, idct2};
use coordsr::mri_sim::fft::C32;
use coordsr::mri_sim::{fft2, ifft2, KSpace};
use coordsr::resample::{
    bicubic_resize, ensemble_weights, make_lr_pair, ContinuousCoord, EnsemblePlan,
};
use coordsr::{ImageGrid, Tensor};
use rand::Rng;

const INSTANCES: u64 = 20;

#[test]
fn conv2d_matches_six_loop_reference() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let n = r.random_range(1..3);
        let cin = r.random_range(1..4);
        let cout = r.random_range(1..4);
        let k = [1, 3, 5][r.random_range(0..3)];
        let h = r.random_range(3..9);
        let w = r.random_range(3..9);
        let x = random_tensor(&[n, cin, h, w], &mut r);
        let kern = random_tensor(&[cout, cin, k, k], &mut r);
        let b = random_tensor(&[cout], &mut r);
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.constant(x.clone()), tape.constant(kern.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, kv, Some(bv)).unwrap();
        let got = tape.value(y);
        assert_eq!(got.shape(), &[n, cout, h, w]);
        let want = naive_conv2d(&x, &kern, &b);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((*g as f64 - w).abs() < 1e-5, "seed {seed}: {g} vs {w}");
        }
    }
}

#[test]
fn conv2d_spec_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let k = tape.constant(Tensor::full(&[1, 1, 1, 1], 2.0));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(x, k, Some(b)).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 2.0));

    let mut delta = Tensor::zeros(&[1, 1, 5, 5]);
    delta.data_mut()[12] = 1.0;
    let kern = Tensor::new(&[1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
    let x = tape.constant(delta);
    let k = tape.constant(kern.clone());
    let y = tape.conv2d(x, k, None).unwrap();
    let out = tape.value(y).data();
    // Cross-correlation with a delta yields the kernel flipped about its center.
    for ky in 0..3 {
        for kx in 0..3 {
            assert_eq!(out[(1 + ky) * 5 + 1 + kx], kern.data()[(2 - ky) * 3 + (2 - kx)]);
        }
    }
    assert_eq!(out.iter().filter(|v| **v != 0.0).count(), 9);
}

#[test]
fn conv2d_shape_mismatch_is_config_error() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let k = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(tape.conv2d(x, k, None).unwrap_err().is_usage());
    let k = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
    assert!(tape.conv2d(x, k, None).is_err());
}

#[test]
fn linear_matches_triple_loop_reference() {
    for seed in 0..INSTANCES {
        let mut r = rng(100 + seed);
        let rows = r.random_range(1..20);
        let fin = r.random_range(1..40);
        let fout = r.random_range(1..40);
        let x = random_tensor(&[rows, fin], &mut r);
        let wt = random_tensor(&[fout, fin], &mut r);
        let b = random_tensor(&[fout], &mut r);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(wt.clone()), tape.constant(b.clone()));
        let y = tape.linear(xv, wv, Some(bv)).unwrap();
        assert_eq!(tape.value(y).shape(), &[rows, fout]);
        for (g, w) in tape.value(y).data().iter().zip(naive_linear(&x, &wt, &b)) {
            assert!((*g as f64 - w).abs() < 1e-5);
        }
    }
}

#[test]
fn linear_spec_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap());
    let w = tape.constant(Tensor::new(&[2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap());
    let b = tape.constant(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
    let y = tape.linear(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0, 2.0]);

    let eye = tape.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let y = tape.linear(x, eye, None).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0]);

    let bad = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(tape.linear(x, bad, None).is_err());
}

fn random_kspace(h: usize, w: usize, seed: u64) -> KSpace {
    let mut r = rng(seed);
    let mut k = KSpace::zeros(h, w);
    for c in &mut k.data {
        *c = C32::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
    }
    k
}

#[test]
fn fft2_matches_naive_dft() {
    for seed in 0..INSTANCES {
        let (h, w) = if seed < 10 {
            (16, 16)
        } else {
            let mut r = rng(seed);
            (r.random_range(2..13), r.random_range(2..13))
        };
        let x = random_kspace(h, w, 200 + seed);
        let pairs: Vec<(f64, f64)> = x.data.iter().map(|c| (c.re as f64, c.im as f64)).collect();
        for inverse in [false, true] {
            let got = if inverse { ifft2(&x).unwrap() } else { fft2(&x).unwrap() };
            let want = naive_dft2(h, w, &pairs, inverse);
            for (g, (re, im)) in got.data.iter().zip(want) {
                assert!((g.re as f64 - re).abs() < 1e-4 && (g.im as f64 - im).abs() < 1e-4);
            }
        }
    }
}

#[test]
fn dct2_matches_double_sum_definition() {
    for seed in 0..INSTANCES {
        let mut r = rng(300 + seed);
        let mut b = [[0.0f32; 8]; 8];
        for row in &mut b {
            for v in row.iter_mut() {
                *v = r.random_range(-1.0..1.0);
            }
        }
        let got = dct2(&b);
        let want = naive_dct2(&b);
        for u in 0..8 {
            for v in 0..8 {
                assert!((got[u][v] as f64 - want[u][v]).abs() < 1e-5);
            }
        }
        let back = idct2(&got);
        for y in 0..8 {
            for x in 0..8 {
                assert!((back[y][x] - b[y][x]).abs() < 1e-5);
            }
        }
    }
}

fn assert_bicubic(img: &ImageGrid, oh: usize, ow: usize) {
    let got = bicubic_resize(img, (oh, ow)).unwrap();
    assert_eq!(got.dims(), (oh, ow));
    for (g, w) in got.data().iter().zip(naive_bicubic(img, oh, ow)) {
        assert!((*g as f64 - w).abs() < 1e-5, "{g} vs {w}");
    }
}

#[test]
fn bicubic_matches_kernel_sum_reference() {
    let ramp = ImageGrid::from_fn(8, 8, |y, x| (y * 8 + x) as f32 / 63.0);
    assert_bicubic(&ramp, 5, 5);
    for seed in 0..INSTANCES {
        let mut r = rng(400 + seed);
        let (h, w) = (r.random_range(2..20), r.random_range(2..20));
        let img = random_image(h, w, &mut r);
        assert_bicubic(&img, r.random_range(1..30), r.random_range(1..30));
    }
}

#[test]
fn lr_pair_at_fractional_scale_matches_reference() {
    let mut r = rng(7);
    let hr = random_image(48, 48, &mut r);
    let (lr, s) = make_lr_pair(&hr, 1.5).unwrap();
    assert_eq!((lr.dims(), s), ((32, 32), 1.5));
    for (g, w) in lr.data().iter().zip(naive_bicubic(&hr, 32, 32)) {
        assert!((*g as f64 - w).abs() < 1e-5);
    }
    assert_eq!(make_lr_pair(&hr, 1.0).unwrap().0, hr);
    assert_eq!(make_lr_pair(&hr, 2.0).unwrap().0.dims(), (24, 24));
    assert!(make_lr_pair(&hr, 7.0).is_err());
}

#[test]
fn bicubic_is_exact_on_separable_linear_images() {
    let img = ImageGrid::from_fn(16, 16, |y, x| 0.1 + 0.02 * y as f32 + 0.03 * x as f32);
    let out = bicubic_resize(&img, (24, 12)).unwrap();
    // Stay clear of the reflected border, where a ramp is no longer linear.
    for oy in 4..20 {
        for ox in 2..10 {
            let sy = (oy as f64 + 0.5) * 16.0 / 24.0 - 0.5;
            let sx = (ox as f64 + 0.5) * 16.0 / 12.0 - 0.5;
            let want = 0.1 + 0.02 * sy + 0.03 * sx;
            assert!((out.get(oy, ox) as f64 - want).abs() < 1e-5);
        }
    }
}

#[test]
fn ensemble_weights_reproduce_bilinear_ramp() {
    let (l, w) = (7, 11);
    let f = |r: f64, c: f64| 0.3 + 0.5 * r - 0.25 * c + 0.125 * r * c;
    let mut r = rng(9);
    for _ in 0..1000 {
        let q = ContinuousCoord::new(r.random_range(0.0..=1.0), r.random_range(0.0..=1.0)).unwrap();
        let e = ensemble_weights(q, (l, w)).unwrap();
        let sum: f32 = e.weights.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        let got: f64 = e
            .neighbor_indices()
            .iter()
            .zip(e.weights)
            .map(|(&(rr, cc), wt)| wt as f64 * f(rr as f64, cc as f64))
            .sum();
        // Border queries clamp to the edge cell centers.
        let ry = (q.y * l as f64 - 0.5).clamp(0.0, (l - 1) as f64);
        let cx = (q.x * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
        assert!((got - f(ry, cx)).abs() < 1e-5);
    }
}

#[test]
fn pixel_shuffle_matches_index_formula() {
    let (n, c, h, w, r) = (2, 3, 4, 5, 3);
    let mut g = rng(11);
    let x = random_tensor(&[n, c * r * r, h, w], &mut g);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.pixel_shuffle(xv, r).unwrap();
    let out = tape.value(y);
    assert_eq!(out.shape(), &[n, c, h * r, w * r]);
    for b in 0..n {
        for ch in 0..c {
            for oy in 0..h * r {
                for ox in 0..w * r {
                    let src_c = ch * r * r + (oy % r) * r + ox % r;
                    let src = ((b * c * r * r + src_c) * h + oy / r) * w + ox / r;
                    let dst = ((b * c + ch) * h * r + oy) * w * r + ox;
                    assert_eq!(out.data()[dst], x.data()[src]);
                }
            }
        }
    }
    let k = tape.constant(Tensor::full(&[1, 4, 3, 3], 0.7));
    let y = tape.pixel_shuffle(k, 2).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.7));
}

#[test]
fn blend_matches_per_point_weights() {
    let mut g = rng(12);
    let grid = random_tensor(&[1, 2, 5, 6], &mut g);
    let plan = Arc::new(EnsemblePlan::new((5, 6), (13, 9)).unwrap());
    let mut tape = Tape::new();
    let x = tape.constant(grid.clone());
    let y = tape.blend(x, plan.clone()).unwrap();
    let out = tape.value(y).data();
    for ch in 0..2 {
        for (p, e) in plan.entries().iter().enumerate() {
            let want: f64 = (0..4)
                .map(|k| e.weights[k] as f64 * grid.data()[ch * 30 + e.cells[k]] as f64)
                .sum();
            assert!((out[ch * 117 + p] as f64 - want).abs() < 1e-6);
        }
    }
}
