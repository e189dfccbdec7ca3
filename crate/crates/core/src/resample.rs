//! Continuous-coordinate geometry: bicubic resizing and the four-neighbor
//! ensemble weights used by the coordinate decoder.
//!
//! Coordinates live in `[0, 1]²` with half-pixel centers: cell `(i, j)` of an
//! `l × w` grid is centered at `((j + 0.5) / w, (i + 0.5) / l)`.

use crate::error::{domain, Result};
use crate::image::ImageGrid;

/// Smallest LR side accepted for training pairs.
pub const MIN_LR_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContinuousCoord {
    pub x: f64,
    pub y: f64,
}

impl ContinuousCoord {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return domain(format!("coordinate ({x}, {y}) outside [0,1]²"));
        }
        Ok(Self { x, y })
    }

    /// Center of output pixel `(row, col)` on an `h × w` raster.
    pub fn pixel_center(row: usize, col: usize, h: usize, w: usize) -> Self {
        Self {
            x: (col as f64 + 0.5) / w as f64,
            y: (row as f64 + 0.5) / h as f64,
        }
    }
}

/// The four grid cells around a query and their bilinear weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleWeights {
    /// Flat `row * w + col` indices, ordered top-left, top-right,
    /// bottom-left, bottom-right.
    pub cells: [usize; 4],
    pub weights: [f32; 4],
    /// `(dy, dx)` from each cell's center to the query, in cell units.
    pub offsets: [(f32, f32); 4],
    grid_w: usize,
}

impl EnsembleWeights {
    pub fn neighbor_indices(&self) -> [(usize, usize); 4] {
        self.cells.map(|c| (c / self.grid_w, c % self.grid_w))
    }

    /// `Σ weights[k] · value(cells[k])`.
    #[inline]
    pub fn blend(&self, mut value: impl FnMut(usize) -> f32) -> f32 {
        let mut acc = 0.0f32;
        for k in 0..4 {
            acc += self.weights[k] * value(self.cells[k]);
        }
        acc
    }
}

/// Locates the query between cell centers along one axis of length `n`:
/// returns `(lower index, upper index, fraction toward upper)`.
fn axis_neighbors(pos: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let u = (pos * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = (u.floor() as usize).min(n - 2);
    (lo, lo + 1, u - lo as f64)
}

pub fn ensemble_weights(query: ContinuousCoord, grid_dims: (usize, usize)) -> Result<EnsembleWeights> {
    let (l, w) = grid_dims;
    if l == 0 || w == 0 {
        return domain("ensemble grid must be at least 1x1");
    }
    let ContinuousCoord { x, y } = ContinuousCoord::new(query.x, query.y)?;
    let (r0, r1, fy) = axis_neighbors(y, l);
    let (c0, c1, fx) = axis_neighbors(x, w);
    let rows = [r0, r0, r1, r1];
    let cols = [c0, c1, c0, c1];
    let wy = [1.0 - fy, 1.0 - fy, fy, fy];
    let wx = [1.0 - fx, fx, 1.0 - fx, fx];
    let (qy, qx) = (y * l as f64 - 0.5, x * w as f64 - 0.5);
    let mut out = EnsembleWeights {
        cells: [0; 4],
        weights: [0.0; 4],
        offsets: [(0.0, 0.0); 4],
        grid_w: w,
    };
    for k in 0..4 {
        out.cells[k] = rows[k] * w + cols[k];
        out.weights[k] = (wy[k] * wx[k]) as f32;
        out.offsets[k] = ((qy - rows[k] as f64) as f32, (qx - cols[k] as f64) as f32);
    }
    Ok(out)
}

/// Ensemble weights for every pixel center of an output raster.
#[derive(Clone, Debug)]
pub struct EnsemblePlan {
    grid: (usize, usize),
    out: (usize, usize),
    entries: Vec<EnsembleWeights>,
}

impl EnsemblePlan {
    pub fn new(grid: (usize, usize), out: (usize, usize)) -> Result<Self> {
        if out.0 == 0 || out.1 == 0 {
            return domain("output dims must be at least 1x1");
        }
        let mut entries = Vec::with_capacity(out.0 * out.1);
        for r in 0..out.0 {
            for c in 0..out.1 {
                entries.push(ensemble_weights(
                    ContinuousCoord::pixel_center(r, c, out.0, out.1),
                    grid,
                )?);
            }
        }
        Ok(Self { grid, out, entries })
    }

    pub fn from_queries(grid: (usize, usize), queries: &[ContinuousCoord]) -> Result<Self> {
        let entries = queries
            .iter()
            .map(|&q| ensemble_weights(q, grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            out: (1, entries.len()),
            entries,
        })
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        self.grid
    }

    pub fn out_dims(&self) -> (usize, usize) {
        self.out
    }

    pub fn entries(&self) -> &[EnsembleWeights] {
        &self.entries
    }
}

/// Catmull-Rom cubic convolution kernel (`a = -0.5`).
pub fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Reflect-101 border: `… 2 1 | 0 1 2 … n-1 | n-2 n-3 …`.
pub fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Per-output-sample source taps along one axis.
fn cubic_taps(src: usize, dst: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = (o as f64 + 0.5) * ratio - 0.5;
            let base = pos.floor();
            let t = pos - base;
            let b = base as isize;
            let idx = [
                reflect101(b - 1, src),
                reflect101(b, src),
                reflect101(b + 1, src),
                reflect101(b + 2, src),
            ];
            let w = [
                cubic_kernel(t + 1.0),
                cubic_kernel(t),
                cubic_kernel(1.0 - t),
                cubic_kernel(2.0 - t),
            ];
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resize to arbitrary output dims, up or down.
pub fn bicubic_resize(img: &ImageGrid, out_dims: (usize, usize)) -> Result<ImageGrid> {
    let (h, w) = img.dims();
    let (oh, ow) = out_dims;
    if h == 0 || w == 0 {
        return domain("cannot resize an empty image");
    }
    if oh == 0 || ow == 0 {
        return domain(format!("output dims {oh}x{ow} must be at least 1x1"));
    }
    if (oh, ow) == (h, w) {
        return Ok(img.clone());
    }
    let xt = cubic_taps(w, ow);
    let yt = cubic_taps(h, oh);
    let mut tmp = vec![0.0f64; h * ow];
    for y in 0..h {
        let row = &img.data()[y * w..(y + 1) * w];
        for (x, (idx, wt)) in xt.iter().enumerate() {
            tmp[y * ow + x] = (0..4).map(|k| wt[k] * row[idx[k]] as f64).sum();
        }
    }
    let mut out = vec![0.0f32; oh * ow];
    for (y, (idx, wt)) in yt.iter().enumerate() {
        for x in 0..ow {
            out[y * ow + x] = (0..4).map(|k| wt[k] * tmp[idx[k] * ow + x]).sum::<f64>() as f32;
        }
    }
    ImageGrid::new(oh, ow, out)
}

/// LR side length for an HR side `n` at scale `s`.
pub fn lr_side(n: usize, s: f64) -> usize {
    // Nudge keeps exact ratios such as 48 / 1.5 from flooring to 31.
    ((n as f64 / s) + 1e-9).floor() as usize
}

/// Bicubic-downsampled network input for a square-or-rectangular HR image.
pub fn make_lr_pair(x_hr: &ImageGrid, s: f64) -> Result<(ImageGrid, f64)> {
    if !(s >= 1.0) || !s.is_finite() {
        return domain(format!("scale {s} must be >= 1"));
    }
    let (h, w) = x_hr.dims();
    let (lh, lw) = (lr_side(h, s), lr_side(w, s));
    if lh < MIN_LR_SIDE || lw < MIN_LR_SIDE {
        return domain(format!(
            "{h}x{w} at scale {s} gives {lh}x{lw}, below the {MIN_LR_SIDE}px minimum"
        ));
    }
    Ok((bicubic_resize(x_hr, (lh, lw))?, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(-1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        assert!((cubic_kernel(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic_kernel(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn reflect101_indices() {
        let got: Vec<usize> = (-3..7).map(|i| reflect101(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect101(-5, 1), 0);
    }

    #[test]
    fn cell_center_gets_full_weight() {
        for &(l, w) in &[(4, 6), (1, 3), (5, 1)] {
            for i in 0..l {
                for j in 0..w {
                    let q = ContinuousCoord::pixel_center(i, j, l, w);
                    let e = ensemble_weights(q, (l, w)).unwrap();
                    let mut total = 0.0;
                    for k in 0..4 {
                        if e.cells[k] == i * w + j {
                            total += e.weights[k];
                        } else {
                            assert!(e.weights[k].abs() < 1e-6, "{:?}", e);
                        }
                    }
                    assert!((total - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn midpoint_of_four_centers_is_uniform() {
        let q = ContinuousCoord::new(2.0 / 4.0, 1.0 / 4.0).unwrap();
        let e = ensemble_weights(q, (4, 4)).unwrap();
        for wk in e.weights {
            assert!((wk - 0.25).abs() < 1e-7);
        }
        assert_eq!(e.neighbor_indices(), [(0, 1), (0, 2), (1, 1), (1, 2)]);
    }

    #[test]
    fn out_of_domain_query_rejected() {
        assert!(ContinuousCoord::new(1.01, 0.5).is_err());
        let bad = ContinuousCoord { x: -0.1, y: 0.2 };
        assert!(ensemble_weights(bad, (3, 3)).is_err());
        assert!(ensemble_weights(ContinuousCoord { x: 0.5, y: 0.5 }, (0, 3)).is_err());
    }

    #[test]
    fn boundary_queries_clamp_to_edge_cells() {
        let e = ensemble_weights(ContinuousCoord { x: 0.0, y: 1.0 }, (4, 5)).unwrap();
        let mut w = [0.0f32; 20];
        for k in 0..4 {
            w[e.cells[k]] += e.weights[k];
        }
        assert!((w[3 * 5] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identity_resize_is_exact() {
        let img = ImageGrid::from_fn(7, 5, |y, x| ((y * 31 + x * 17) % 11) as f32 / 10.0);
        assert_eq!(bicubic_resize(&img, (7, 5)).unwrap(), img);
    }

    #[test]
    fn lr_pair_dims() {
        let hr = ImageGrid::filled(48, 48, 0.3);
        let (lr, _) = make_lr_pair(&hr, 2.0).unwrap();
        assert_eq!(lr.dims(), (24, 24));
        let (lr, _) = make_lr_pair(&hr, 1.5).unwrap();
        assert_eq!(lr.dims(), (32, 32));
        let (lr, _) = make_lr_pair(&hr, 1.0).unwrap();
        assert_eq!(lr, hr);
        assert!(make_lr_pair(&hr, 7.0).is_err());
        assert!(make_lr_pair(&hr, 0.5).is_err());
    }
}
