//! PSNR, pixel-domain VIF, and evaluation over a manifest split.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, usage, Result};
use crate::image::ImageGrid;
use crate::models::Model;
use crate::mri_sim::{item_id, DatasetManifest, Split};
use crate::resample::{bicubic_resize, make_lr_pair, reflect101};

pub const VIF_SCALES: usize = 4;
pub const VIF_MIN_SIDE: usize = 32;
/// Noise floor in 0–255 intensity units.
pub const VIF_SIGMA_N2: f64 = 2.0;
const VIF_EPS: f64 = 1e-10;
/// Local variances (0–255 units²) below this count as flat. Smaller values
/// come from f32 rounding on plateaus, where E[x²] − μ² has no correct digits
/// left and the gain term s_rd²/s_r would be rounding noise.
pub const VIF_FLAT: f64 = 1e-4;

fn check_dims(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if a.dims() != b.dims() {
        return usage(format!("image dims differ: {:?} vs {:?}", a.dims(), b.dims()));
    }
    Ok(())
}

/// `10·log10(peak² / MSE)`; identical images give `+∞`.
pub fn psnr(pred: &ImageGrid, reference: &ImageGrid, peak: f64) -> Result<f64> {
    check_dims(pred, reference)?;
    let n = pred.data().len() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn from_image(img: &ImageGrid) -> Self {
        Self {
            h: img.height(),
            w: img.width(),
            v: img.data().iter().map(|&x| x as f64 * 255.0).collect(),
        }
    }

    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            v: self.v.iter().zip(&other.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Separable same-size filtering with reflect-101 borders.
    fn filter(&self, k: &[f64]) -> Plane {
        let r = (k.len() / 2) as isize;
        let (h, w) = (self.h, self.w);
        let mut tmp = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, &kv)| kv * self.v[y * w + reflect101(x as isize + i as isize - r, w)])
                    .sum();
            }
        }
        let mut v = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                v[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, &kv)| kv * tmp[reflect101(y as isize + i as isize - r, h) * w + x])
                    .sum();
            }
        }
        Plane { h, w, v }
    }

    fn subsample(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let v = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| self.v[2 * y * self.w + 2 * x])
            .collect();
        Plane { h, w, v }
    }
}

/// Normalized Gaussian window of scale `k` (1-based): std `2^(k-1)/2`,
/// `2^k + 1` taps.
pub fn vif_window(k: usize) -> Vec<f64> {
    let std = (1u32 << (k - 1)) as f64 * 0.5;
    let r = 1isize << (k - 1);
    let g: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * std * std)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Per-scale (distorted, reference) information sums.
pub fn vif_terms(pred: &ImageGrid, reference: &ImageGrid) -> Result<Vec<(f64, f64)>> {
    check_dims(pred, reference)?;
    let (h, w) = reference.dims();
    if h < VIF_MIN_SIDE || w < VIF_MIN_SIDE {
        return domain(format!("VIF needs at least {VIF_MIN_SIDE}x{VIF_MIN_SIDE}, got {h}x{w}"));
    }
    let mut r = Plane::from_image(reference);
    let mut d = Plane::from_image(pred);
    let mut out = Vec::with_capacity(VIF_SCALES);
    for k in 1..=VIF_SCALES {
        let win = vif_window(k);
        if k > 1 {
            r = r.filter(&win).subsample();
            d = d.filter(&win).subsample();
        }
        let mu_r = r.filter(&win);
        let mu_d = d.filter(&win);
        let rr = r.map2(&r, |a, b| a * b).filter(&win);
        let dd = d.map2(&d, |a, b| a * b).filter(&win);
        let rd = r.map2(&d, |a, b| a * b).filter(&win);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..r.v.len() {
            let mut s_r = (rr.v[i] - mu_r.v[i] * mu_r.v[i]).max(0.0);
            let s_d = (dd.v[i] - mu_d.v[i] * mu_d.v[i]).max(0.0);
            let s_rd = rd.v[i] - mu_r.v[i] * mu_d.v[i];
            let mut g = s_rd / (s_r + VIF_EPS);
            let mut sv = s_d - g * s_rd;
            if s_r < VIF_FLAT {
                g = 0.0;
                sv = s_d;
                s_r = 0.0;
            }
            if s_d < VIF_FLAT {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = s_d;
                g = 0.0;
            }
            let sv = sv.max(VIF_EPS);
            num += (1.0 + g * g * s_r / (sv + VIF_SIGMA_N2)).ln();
            den += (1.0 + s_r / VIF_SIGMA_N2).ln();
        }
        out.push((num, den));
    }
    Ok(out)
}

/// Pixel-domain VIF of `pred` against `reference`, summed over four scales.
pub fn vif(pred: &ImageGrid, reference: &ImageGrid) -> Result<f64> {
    let terms = vif_terms(pred, reference)?;
    let num: f64 = terms.iter().map(|t| t.0).sum();
    let den: f64 = terms.iter().map(|t| t.1).sum();
    if den <= 0.0 {
        return domain("VIF is undefined for a constant reference image");
    }
    Ok(num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub item: String,
    pub psnr_db: f64,
    pub vif: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scale: f64,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f32>,
    pub rows: Vec<MetricRow>,
    pub mean: MetricRow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bicubic: Option<Vec<MetricRow>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bicubic_mean: Option<MetricRow>,
}

fn mean_row(label: &str, rows: &[MetricRow]) -> MetricRow {
    let n = rows.len() as f64;
    MetricRow {
        item: label.into(),
        psnr_db: rows.iter().map(|r| r.psnr_db).sum::<f64>() / n,
        vif: rows.iter().map(|r| r.vif).sum::<f64>() / n,
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.6}")
    }
}

impl MetricReport {
    /// `item,psnr_db,vif` rows, then `mean`, then `bicubic` if computed.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("item,psnr_db,vif\n");
        let rows = self.rows.iter().chain([&self.mean]).chain(self.bicubic_mean.iter());
        for r in rows {
            let _ = writeln!(s, "{},{},{}", r.item, fmt_value(r.psnr_db), fmt_value(r.vif));
        }
        s
    }

    /// JSON with infinite PSNR written as the string `"inf"`.
    pub fn to_json(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        fix_infinities(&mut v, self);
        let mut s = serde_json::to_string_pretty(&v)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, csv_path: &Path) -> Result<()> {
        if let Some(dir) = csv_path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(csv_path, self.to_csv())?;
        fs::write(csv_path.with_extension("json"), self.to_json()?)?;
        Ok(())
    }
}

// serde_json turns non-finite floats into null; restore them as strings.
fn fix_infinities(v: &mut serde_json::Value, report: &MetricReport) {
    let patch = |slot: &mut serde_json::Value, row: &MetricRow| {
        for (key, val) in [("psnr_db", row.psnr_db), ("vif", row.vif)] {
            if !val.is_finite() {
                slot[key] = fmt_value(val).into();
            }
        }
    };
    for (i, row) in report.rows.iter().enumerate() {
        patch(&mut v["rows"][i], row);
    }
    patch(&mut v["mean"], &report.mean);
    if let Some(rows) = &report.bicubic {
        for (i, row) in rows.iter().enumerate() {
            patch(&mut v["bicubic"][i], row);
        }
    }
    if let Some(row) = &report.bicubic_mean {
        patch(&mut v["bicubic_mean"], row);
    }
}

/// Ground-truth region a model at `scale` reconstructs from an `h × w`
/// image: all of it for coordinate models, `s·floor(n/s)` for conv models.
pub fn target_dims(model: &Model, dims: (usize, usize), scale: f64) -> Result<(usize, usize)> {
    match model.fixed_scale() {
        None => Ok(dims),
        Some(s) => {
            if (scale - s as f64).abs() > 1e-9 {
                return usage(format!("conv checkpoint is fixed at {s}x, cannot evaluate at {scale}x"));
            }
            Ok((dims.0 / s * s, dims.1 / s * s))
        }
    }
}

/// Downsamples ground truth by `scale`, reconstructs it, and scores the
/// result (clamped to `[0, 1]`).
pub fn evaluate_item(model: &Model, gt: &ImageGrid, scale: f64) -> Result<(f64, f64)> {
    let (th, tw) = target_dims(model, gt.dims(), scale)?;
    let gt = gt.crop(0, 0, th, tw)?;
    let (lr, _) = make_lr_pair(&gt, scale)?;
    let pred = model.predict(&lr, (th, tw))?.clamp01();
    Ok((psnr(&pred, &gt, 1.0)?, vif(&pred, &gt)?))
}

pub fn bicubic_item(gt: &ImageGrid, scale: f64) -> Result<(f64, f64)> {
    let (lr, _) = make_lr_pair(gt, scale)?;
    let pred = bicubic_resize(&lr, gt.dims())?.clamp01();
    Ok((psnr(&pred, gt, 1.0)?, vif(&pred, gt)?))
}

/// Loads every item of `split`, in manifest order.
pub fn load_split(manifest: &DatasetManifest, dataset_dir: &Path, split: Split) -> Result<Vec<(String, ImageGrid)>> {
    manifest
        .split(split)
        .map(|it| Ok((item_id(it), ImageGrid::load(&dataset_dir.join(&it.path))?)))
        .collect()
}

/// Scores `model` (or only bicubic when `model` is `None`) on `items`.
/// Items run in parallel; rows keep input order.
pub fn evaluate_images(
    model: Option<&Model>,
    items: &[(String, ImageGrid)],
    scale: f64,
    with_bicubic: bool,
) -> Result<MetricReport> {
    if items.is_empty() {
        return usage("evaluation split is empty");
    }
    let score = |f: &(dyn Fn(&ImageGrid) -> Result<(f64, f64)> + Sync)| -> Result<Vec<MetricRow>> {
        items
            .par_iter()
            .map(|(id, gt)| {
                let (psnr_db, vif) = f(gt)?;
                Ok(MetricRow {
                    item: id.clone(),
                    psnr_db,
                    vif,
                })
            })
            .collect()
    };
    let bicubic = |gt: &ImageGrid| bicubic_item(gt, scale);
    let (label, rows) = match model {
        Some(m) => (m.config.arch.to_string(), score(&|gt| evaluate_item(m, gt, scale))?),
        None => ("bicubic".to_string(), score(&bicubic)?),
    };
    let (bic, bic_mean) = if with_bicubic && model.is_some() {
        let rows = score(&bicubic)?;
        let mean = mean_row("bicubic", &rows);
        (Some(rows), Some(mean))
    } else {
        (None, None)
    };
    Ok(MetricReport {
        scale,
        model: label,
        lambda: None,
        mean: mean_row("mean", &rows),
        rows,
        bicubic: bic,
        bicubic_mean: bic_mean,
    })
}

pub fn evaluate(
    model: Option<&Model>,
    manifest: &DatasetManifest,
    dataset_dir: &Path,
    split: Split,
    scale: f64,
    with_bicubic: bool,
) -> Result<MetricReport> {
    let items = load_split(manifest, dataset_dir, split)?;
    evaluate_images(model, &items, scale, with_bicubic)
}
