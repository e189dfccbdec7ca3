//! Unitary 2D DFT pair (`1/√N` in both directions) over row-major complex
//! arrays. One-dimensional passes are delegated to `rustfft`, which handles
//! every length, so no power-of-two restriction applies.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{config, Result};
use crate::image::ImageGrid;

pub type C32 = Complex<f32>;

/// A complex 2D array: k-space data or a complex image.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpace {
    pub height: usize,
    pub width: usize,
    pub data: Vec<C32>,
}

impl KSpace {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![C32::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_real(img: &ImageGrid) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            data: img.data().iter().map(|&v| C32::new(v, 0.0)).collect(),
        }
    }

    pub fn magnitude(&self) -> ImageGrid {
        ImageGrid::new(self.height, self.width, self.data.iter().map(|c| c.norm()).collect())
            .expect("dims agree")
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr() as f64).sum()
    }
}

fn transform(input: &KSpace, inverse: bool) -> Result<KSpace> {
    let (h, w) = (input.height, input.width);
    if h == 0 || w == 0 || input.data.len() != h * w {
        return config(format!("cannot transform a {h}x{w} array"));
    }
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut buf: Vec<Complex<f64>> = input
        .data
        .iter()
        .map(|c| Complex::new(c.re as f64, c.im as f64))
        .collect();
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    let norm = 1.0 / ((h * w) as f64).sqrt();
    Ok(KSpace {
        height: h,
        width: w,
        data: buf
            .into_iter()
            .map(|c| C32::new((c.re * norm) as f32, (c.im * norm) as f32))
            .collect(),
    })
}

pub fn fft2(x: &KSpace) -> Result<KSpace> {
    transform(x, false)
}

pub fn ifft2(k: &KSpace) -> Result<KSpace> {
    transform(k, true)
}

/// Fraction of non-DC spectral energy at radial frequency above half the
/// Nyquist limit (`> 0.25` cycles/pixel).
pub fn high_frequency_fraction(img: &ImageGrid) -> Result<f64> {
    let spec = fft2(&KSpace::from_real(img))?;
    let (h, w) = (spec.height, spec.width);
    let (mut hi, mut total) = (0.0f64, 0.0f64);
    for ky in 0..h {
        let fy = signed_freq(ky, h);
        for kx in 0..w {
            if ky == 0 && kx == 0 {
                continue;
            }
            let fx = signed_freq(kx, w);
            let e = spec.data[ky * w + kx].norm_sqr() as f64;
            total += e;
            if (fx * fx + fy * fy).sqrt() > 0.25 {
                hi += e;
            }
        }
    }
    Ok(if total > 0.0 { hi / total } else { 0.0 })
}

/// Frequency of DFT bin `k` of `n`, in cycles per sample within `[-0.5, 0.5)`.
pub fn signed_freq(k: usize, n: usize) -> f64 {
    let k = if k >= n.div_ceil(2) { k as f64 - n as f64 } else { k as f64 };
    k / n as f64
}
