//! The denoiser applied to ground truth for the regularization target.
//!
//! `block-dct` is overlapping-block DCT hard thresholding. It runs on the
//! half-sample symmetric extension of the image with circular block tiling,
//! so every pixel sees the same number of blocks, and averages the mirror
//! copies of each pixel back into the image.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::image::ImageGrid;

pub const BLOCK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKind {
    BlockDct,
    Gaussian,
    Identity,
}

impl fmt::Display for DenoiserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenoiserKind::BlockDct => "block-dct",
            DenoiserKind::Gaussian => "gaussian",
            DenoiserKind::Identity => "identity",
        })
    }
}

impl FromStr for DenoiserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block-dct" => Ok(DenoiserKind::BlockDct),
            "gaussian" => Ok(DenoiserKind::Gaussian),
            "identity" => Ok(DenoiserKind::Identity),
            other => config(format!("unknown denoiser `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserSpec {
    pub kind: DenoiserKind,
    /// Noise std in `[0, 1]` intensity units.
    pub sigma: f32,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_threshold")]
    pub threshold_mult: f32,
}

fn default_stride() -> usize {
    4
}

fn default_threshold() -> f32 {
    2.7
}

impl DenoiserSpec {
    pub fn block_dct(sigma: f32) -> Self {
        Self {
            kind: DenoiserKind::BlockDct,
            sigma,
            stride: default_stride(),
            threshold_mult: default_threshold(),
        }
    }

    pub fn gaussian(sigma: f32) -> Self {
        Self {
            kind: DenoiserKind::Gaussian,
            ..Self::block_dct(sigma)
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: DenoiserKind::Identity,
            ..Self::block_dct(0.0)
        }
    }

    /// Cache location `<dataset>/denoised/<σ>/<item>.ft1`; kinds other than
    /// block-dct get a `<kind>-` prefix on the σ directory.
    pub fn cache_path(&self, dataset_dir: &Path, item: &str) -> PathBuf {
        let dir = match self.kind {
            DenoiserKind::BlockDct => format!("{}", self.sigma),
            k => format!("{k}-{}", self.sigma),
        };
        dataset_dir
            .join("denoised")
            .join(dir)
            .join(format!("{item}.ft1"))
    }
}

/// Orthonormal DCT-II basis: `basis[k][n] = α(k)·cos(π(2n+1)k / 2N)`.
fn dct_basis() -> [[f64; BLOCK]; BLOCK] {
    let mut b = [[0.0; BLOCK]; BLOCK];
    let n = BLOCK as f64;
    for (k, row) in b.iter_mut().enumerate() {
        let alpha = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for (i, v) in row.iter_mut().enumerate() {
            *v = alpha * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos();
        }
    }
    b
}

pub type Block = [[f32; BLOCK]; BLOCK];

type Block64 = [[f64; BLOCK]; BLOCK];

fn separable(block: &Block64, basis: &Block64, forward: bool) -> Block64 {
    // forward: B·X·Bᵀ; inverse: Bᵀ·X·B
    let m = |a: usize, b: usize| if forward { basis[a][b] } else { basis[b][a] };
    let mut tmp = [[0.0f64; BLOCK]; BLOCK];
    for (r, trow) in tmp.iter_mut().enumerate() {
        for (c, t) in trow.iter_mut().enumerate() {
            *t = (0..BLOCK).map(|k| block[r][k] * m(c, k)).sum();
        }
    }
    let mut out = [[0.0f64; BLOCK]; BLOCK];
    for (r, orow) in out.iter_mut().enumerate() {
        for (c, o) in orow.iter_mut().enumerate() {
            *o = (0..BLOCK).map(|k| m(r, k) * tmp[k][c]).sum::<f64>();
        }
    }
    out
}

fn separable32(block: &Block, forward: bool) -> Block {
    let wide = block.map(|row| row.map(f64::from));
    separable(&wide, &dct_basis(), forward).map(|row| row.map(|v| v as f32))
}

pub fn dct2(block: &Block) -> Block {
    separable32(block, true)
}

pub fn idct2(coeffs: &Block) -> Block {
    separable32(coeffs, false)
}

pub fn denoise(x: &ImageGrid, spec: &DenoiserSpec) -> Result<ImageGrid> {
    if !(spec.sigma >= 0.0) {
        return domain(format!("denoiser strength {} must be >= 0", spec.sigma));
    }
    if spec.sigma == 0.0 {
        return Ok(x.clone());
    }
    match spec.kind {
        DenoiserKind::Identity => Ok(x.clone()),
        DenoiserKind::Gaussian => Ok(gaussian_blur(x, 25.0 * spec.sigma as f64)),
        DenoiserKind::BlockDct => {
            if spec.stride == 0 || spec.stride > BLOCK {
                return config(format!("block stride {} must be in 1..={BLOCK}", spec.stride));
            }
            Ok(block_dct(x, spec.threshold_mult * spec.sigma, spec.stride))
        }
    }
}

/// Half-sample symmetric index: `… 1 0 | 0 1 … n-1 | n-1 n-2 …`.
fn symmetric(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - 1 - m) as usize
    } else {
        m as usize
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Sliding-block hard thresholding on the symmetric extension of `x`.
///
/// Blocks tile a torus whose period is a multiple of both the mirrored
/// length `2n` and the stride, so every torus pixel is covered equally
/// often; each output pixel then averages all of its mirror copies. Both
/// steps average per-block contractions, which keeps the filter
/// non-expansive for any image size.
fn block_dct(x: &ImageGrid, threshold: f32, stride: usize) -> ImageGrid {
    let (h, w) = x.dims();
    let period = |n: usize| 2 * n * stride / gcd(2 * n, stride);
    let (ph, pw) = (period(h), period(w));
    let ext = |y: usize, xx: usize| x.get(symmetric(y as isize, h), symmetric(xx as isize, w)) as f64;
    let basis = dct_basis();
    let threshold = threshold as f64;
    let mut acc = vec![0.0f64; ph * pw];
    let mut count = vec![0u32; ph * pw];
    for by in (0..ph).step_by(stride) {
        for bx in (0..pw).step_by(stride) {
            let mut blk = [[0.0f64; BLOCK]; BLOCK];
            for (r, row) in blk.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v = ext((by + r) % ph, (bx + c) % pw);
                }
            }
            let mut coef = separable(&blk, &basis, true);
            for (r, row) in coef.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    if (r, c) != (0, 0) && v.abs() < threshold {
                        *v = 0.0;
                    }
                }
            }
            let rec = separable(&coef, &basis, false);
            for (r, row) in rec.iter().enumerate() {
                let yy = (by + r) % ph;
                for (c, &v) in row.iter().enumerate() {
                    let i = yy * pw + (bx + c) % pw;
                    acc[i] += v;
                    count[i] += 1;
                }
            }
        }
    }
    let mut sum = vec![0.0f64; h * w];
    let mut copies = vec![0u32; h * w];
    for yy in 0..ph {
        let y = symmetric(yy as isize, h);
        for xx in 0..pw {
            let i = yy * pw + xx;
            sum[y * w + symmetric(xx as isize, w)] += acc[i] / count[i] as f64;
            copies[y * w + symmetric(xx as isize, w)] += 1;
        }
    }
    let data = sum
        .iter()
        .zip(&copies)
        .map(|(&s, &c)| (s / c as f64) as f32)
        .collect();
    ImageGrid::new(h, w, data).expect("dims agree")
}

/// Normalized Gaussian kernel truncated at three standard deviations.
pub fn gaussian_kernel(std: f64) -> Vec<f64> {
    let radius = (3.0 * std).ceil().max(0.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * std * std)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with half-sample symmetric borders.
pub fn gaussian_blur(x: &ImageGrid, std: f64) -> ImageGrid {
    if std <= 0.0 {
        return x.clone();
    }
    let k = gaussian_kernel(std);
    let r = (k.len() / 2) as isize;
    let (h, w) = x.dims();
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for xx in 0..w {
            tmp[y * w + xx] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * x.get(y, symmetric(xx as isize + i as isize - r, w)) as f64)
                .sum();
        }
    }
    ImageGrid::from_fn(h, w, |y, xx| {
        k.iter()
            .enumerate()
            .map(|(i, kv)| kv * tmp[symmetric(y as isize + i as isize - r, h) * w + xx])
            .sum::<f64>() as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::from_fn(h, w, |_, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn zero_sigma_is_exact_identity() {
        let x = random_image(16, 12, 1);
        for spec in [DenoiserSpec::block_dct(0.0), DenoiserSpec::gaussian(0.0)] {
            assert_eq!(denoise(&x, &spec).unwrap(), x);
        }
    }

    #[test]
    fn constant_image_unchanged() {
        let x = ImageGrid::filled(20, 24, 0.42);
        for spec in [DenoiserSpec::block_dct(0.05), DenoiserSpec::gaussian(0.05)] {
            let y = denoise(&x, &spec).unwrap();
            for v in y.data() {
                assert!((v - 0.42).abs() < 1e-6, "{spec:?}: {v}");
            }
        }
    }

    #[test]
    fn negative_sigma_rejected() {
        let x = ImageGrid::filled(8, 8, 0.5);
        assert!(matches!(
            denoise(&x, &DenoiserSpec::gaussian(-0.1)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn constant_block_has_only_dc() {
        let b = [[0.3f32; BLOCK]; BLOCK];
        let c = dct2(&b);
        assert!((c[0][0] - 0.3 * 8.0).abs() < 1e-5);
        for (r, row) in c.iter().enumerate() {
            for (cc, v) in row.iter().enumerate() {
                if (r, cc) != (0, 0) {
                    assert!(v.abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn dct_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = [[0.0f32; BLOCK]; BLOCK];
        b.iter_mut()
            .flatten()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        let back = idct2(&dct2(&b));
        for (r, row) in back.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((v - b[r][c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn symmetric_border_indices() {
        let got: Vec<usize> = (-4..8).map(|i| symmetric(i, 3)).collect();
        assert_eq!(got, vec![2, 2, 1, 0, 0, 1, 2, 2, 1, 0, 0, 1]);
    }

    #[test]
    fn gaussian_kernel_width() {
        let k = gaussian_kernel(0.75);
        assert_eq!(k.len(), 2 * 3 + 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
