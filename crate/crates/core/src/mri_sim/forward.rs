//! Multi-coil k-space forward model with complex Gaussian measurement noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::fft::{fft2, ifft2, KSpace, C32};
use crate::error::{config, domain, Result};
use crate::image::ImageGrid;

/// Complex sensitivity of one receive coil.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilMap {
    pub sensitivity: KSpace,
    /// Width of the magnitude bump, as a fraction of the image side.
    pub smoothness: f32,
}

/// `n_coils` smooth maps arranged on a ring around the image center:
/// Gaussian-bump magnitudes with a slow linear phase, normalized so the
/// root-sum-of-squares over coils is 1 at every pixel.
pub fn synthetic_coils(n_coils: usize, height: usize, width: usize, smoothness: f32) -> Result<Vec<CoilMap>> {
    if n_coils == 0 {
        return config("at least one coil is required");
    }
    if !(smoothness > 0.0) {
        return domain(format!("coil smoothness {smoothness} must be positive"));
    }
    let mut maps: Vec<Vec<C32>> = Vec::with_capacity(n_coils);
    let sigma = smoothness as f64;
    for c in 0..n_coils {
        let angle = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64;
        let (cy, cx) = (0.5 + 0.5 * angle.sin(), 0.5 + 0.5 * angle.cos());
        let mut map = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                let (py, px) = ((y as f64 + 0.5) / height as f64, (x as f64 + 0.5) / width as f64);
                let d2 = (py - cy).powi(2) + (px - cx).powi(2);
                let mag = (-d2 / (2.0 * sigma * sigma)).exp() + 1e-3;
                let phase = 0.5 * angle + 0.8 * (px - 0.5) * angle.cos() + 0.8 * (py - 0.5) * angle.sin();
                map.push(C32::new((mag * phase.cos()) as f32, (mag * phase.sin()) as f32));
            }
        }
        maps.push(map);
    }
    for p in 0..height * width {
        let rss = maps.iter().map(|m| m[p].norm_sqr() as f64).sum::<f64>().sqrt() as f32;
        for m in &mut maps {
            m[p] /= rss;
        }
    }
    Ok(maps
        .into_iter()
        .map(|data| CoilMap {
            sensitivity: KSpace {
                height,
                width,
                data,
            },
            smoothness,
        })
        .collect())
}

/// Fully-sampled per-coil k-space `y_i = F(S_i ⊙ x) + n_i` with
/// `n_i ~ CN(0, σ_k²)` per real/imaginary component.
pub fn measure(x: &ImageGrid, coils: &[CoilMap], sigma_k: f32, seed: u64) -> Result<Vec<KSpace>> {
    if !(sigma_k >= 0.0) {
        return domain(format!("noise level {sigma_k} must be >= 0"));
    }
    let (h, w) = x.dims();
    for c in coils {
        if (c.sensitivity.height, c.sensitivity.width) != (h, w) {
            return config(format!(
                "coil map {}x{} does not match image {h}x{w}",
                c.sensitivity.height, c.sensitivity.width
            ));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, sigma_k).expect("sigma checked");
    let unit;
    let coils: Vec<&KSpace> = if coils.is_empty() {
        unit = KSpace {
            height: h,
            width: w,
            data: vec![C32::new(1.0, 0.0); h * w],
        };
        vec![&unit]
    } else {
        coils.iter().map(|c| &c.sensitivity).collect()
    };
    let mut out = Vec::with_capacity(coils.len());
    for s in coils {
        let weighted = KSpace {
            height: h,
            width: w,
            data: s
                .data
                .iter()
                .zip(x.data())
                .map(|(sv, &xv)| sv * xv)
                .collect(),
        };
        let mut k = fft2(&weighted)?;
        if sigma_k > 0.0 {
            for v in &mut k.data {
                v.re += noise.sample(&mut rng);
                v.im += noise.sample(&mut rng);
            }
        }
        out.push(k);
    }
    Ok(out)
}

/// Root-sum-of-squares combination of per-coil inverse transforms.
pub fn rss_reconstruct(kspace: &[KSpace]) -> Result<ImageGrid> {
    let first = kspace.first().ok_or_else(|| crate::Error::Config("no coil data".into()))?;
    let (h, w) = (first.height, first.width);
    let mut acc = vec![0.0f64; h * w];
    for k in kspace {
        let img = ifft2(k)?;
        for (a, c) in acc.iter_mut().zip(&img.data) {
            *a += c.norm_sqr() as f64;
        }
    }
    ImageGrid::new(h, w, acc.into_iter().map(|v| v.sqrt() as f32).collect())
}

/// Noisy magnitude image from the forward model, clamped to `[0, 1]`.
/// An empty coil list means a single uniform coil.
pub fn simulate_measurement(x: &ImageGrid, coils: &[CoilMap], sigma_k: f32, seed: u64) -> Result<ImageGrid> {
    let k = measure(x, coils, sigma_k, seed)?;
    Ok(rss_reconstruct(&k)?.clamp01())
}
