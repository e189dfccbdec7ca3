//! Tile sampling, the composite loss, Adam training with periodic
//! validation, best-checkpoint selection, inference and λ sweeps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape, Var};
use crate::denoise::{denoise, DenoiserKind, DenoiserSpec};
use crate::error::{config, usage, Error, Result};
use crate::image::ImageGrid;
use crate::metrics::{evaluate_images, load_split};
use crate::models::{Arch, Model, ModelConfig};
use crate::mri_sim::{item_id, DatasetManifest, Split};
use crate::resample::{lr_side, make_lr_pair, MIN_LR_SIDE};
use crate::tensor::Tensor;

pub const CURVE_FILE: &str = "curve.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved-config.json";
pub const BEST_FILE: &str = "best.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const MAX_TILE_DRAWS: usize = 100;
pub const T_COORD: u64 = 1_000;
pub const T_CONV: u64 = 100_000;

/// Everything a training run depends on. JSON field names match these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Dataset directory holding `manifest.json`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub model: Arch,
    pub d: usize,
    pub blocks: usize,
    pub mlp_layers: usize,
    pub hidden: usize,
    pub liif_mode: bool,
    pub scale_range: [f64; 2],
    pub lambda: f32,
    pub sigma: f32,
    pub denoiser: DenoiserKind,
    /// Step budget `T`; `None` picks the per-model default.
    #[serde(alias = "T")]
    pub steps: Option<u64>,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub tile_hr: usize,
    pub batch: usize,
    pub seed: u64,
    /// `None` evaluates at 1, 2, 5, 10, 20, 50, … and the final step.
    pub eval_every: Option<u64>,
    /// Validation scale; defaults to the top of `scale_range`.
    pub val_scale: Option<f64>,
    /// Write real elapsed times into the curve's `wall_ms` column. Off by
    /// default so curves are byte-reproducible; `timing.csv` always has them.
    pub record_wall_ms: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::coord_default();
        let adam = AdamConfig::default();
        Self {
            dataset: None,
            model: Arch::Coord,
            d: m.d,
            blocks: m.blocks,
            mlp_layers: m.mlp_layers,
            hidden: m.hidden,
            liif_mode: false,
            scale_range: [1.0, 2.0],
            lambda: 1.0,
            sigma: 0.03,
            denoiser: DenoiserKind::BlockDct,
            steps: None,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            tile_hr: 48,
            batch: 16,
            seed: 0,
            eval_every: None,
            val_scale: None,
            record_wall_ms: false,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        self.steps.unwrap_or(match self.model {
            Arch::Coord => T_COORD,
            Arch::Conv => T_CONV,
        })
    }

    pub fn val_scale(&self) -> f64 {
        self.val_scale.unwrap_or(self.scale_range[1])
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            arch: self.model,
            d: self.d,
            blocks: self.blocks,
            mlp_layers: self.mlp_layers,
            hidden: self.hidden,
            liif_mode: self.liif_mode,
            scale: (self.model == Arch::Conv).then_some(self.scale_range[0] as usize),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn denoiser_spec(&self) -> DenoiserSpec {
        DenoiserSpec {
            kind: self.denoiser,
            ..DenoiserSpec::block_dct(self.sigma)
        }
    }

    /// One message per offending field, each prefixed by the field name.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let [lo, hi] = self.scale_range;
        if !(lo.is_finite() && hi.is_finite() && 1.0 <= lo && lo <= hi) {
            p.push(format!("scale_range: need 1 <= s_min <= s_max, got [{lo}, {hi}]"));
        }
        if self.model == Arch::Conv {
            let fixed = lo == hi && [2.0, 3.0, 4.0].contains(&lo);
            if !fixed {
                p.push(format!(
                    "scale_range: conv models need a fixed integer scale s_min == s_max in {{2, 3, 4}}, got [{lo}, {hi}]"
                ));
            } else if self.tile_hr % lo as usize != 0 {
                p.push(format!("tile_hr: {} is not a multiple of the conv scale {lo}", self.tile_hr));
            }
        }
        if hi.is_finite() && hi >= 1.0 && lr_side(self.tile_hr, hi) < MIN_LR_SIDE {
            p.push(format!(
                "tile_hr: {} at scale {hi} leaves an LR tile under {MIN_LR_SIDE}px",
                self.tile_hr
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            p.push(format!("lambda: must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            p.push(format!("sigma: must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            p.push(format!("lr: must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                p.push(format!("{name}: must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0) {
            p.push(format!("eps: must be positive, got {}", self.eps));
        }
        if self.batch == 0 {
            p.push("batch: must be at least 1".into());
        }
        if self.eval_every == Some(0) {
            p.push("eval_every: must be at least 1".into());
        }
        if let Some(s) = self.val_scale {
            if !(s >= 1.0 && s.is_finite()) {
                p.push(format!("val_scale: must be >= 1, got {s}"));
            }
        }
        if self.d == 0 {
            p.push("d: must be positive".into());
        }
        if self.model == Arch::Coord && (self.mlp_layers == 0 || (self.mlp_layers > 1 && self.hidden == 0)) {
            p.push("mlp_layers/hidden: the MLP needs at least one layer and positive width".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            config(format!("invalid training config:\n  {}", p.join("\n  ")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// One training image and its denoised target.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub id: String,
    pub hr: ImageGrid,
    pub denoised: ImageGrid,
}

/// Loads `D_σ(x)` from the dataset's cache, computing and storing it on a
/// miss.
pub fn denoised_target(dataset_dir: &Path, id: &str, img: &ImageGrid, spec: &DenoiserSpec) -> Result<ImageGrid> {
    let path = spec.cache_path(dataset_dir, id);
    if path.exists() {
        let cached = ImageGrid::read_ft1(&path)?;
        if cached.dims() == img.dims() {
            return Ok(cached);
        }
    }
    let d = denoise(img, spec)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("ft1.tmp");
    d.write_ft1(&tmp)?;
    fs::rename(&tmp, &path)?;
    Ok(d)
}

pub struct TrainData {
    pub train: Vec<TrainItem>,
    pub val: Vec<(String, ImageGrid)>,
}

pub fn prepare_data(manifest: &DatasetManifest, dataset_dir: &Path, cfg: &TrainConfig) -> Result<TrainData> {
    let spec = cfg.denoiser_spec();
    let train: Vec<TrainItem> = manifest
        .split(Split::Train)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|it| {
            let id = item_id(it);
            let hr = ImageGrid::load(&dataset_dir.join(&it.path))?;
            let denoised = denoised_target(dataset_dir, &id, &hr, &spec)?;
            Ok(TrainItem { id, hr, denoised })
        })
        .collect::<Result<_>>()?;
    if train.is_empty() {
        return usage("the manifest has no training items");
    }
    let val = load_split(manifest, dataset_dir, Split::Val)?;
    Ok(TrainData { train, val })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub lr: ImageGrid,
    pub hr: ImageGrid,
    pub denoised: ImageGrid,
    pub scale: f64,
}

/// HR-side output dims for a tile at `scale`.
fn tile_out(cfg: &TrainConfig, scale: f64) -> usize {
    match cfg.model {
        Arch::Coord => cfg.tile_hr,
        Arch::Conv => lr_side(cfg.tile_hr, scale) * scale as usize,
    }
}

/// Draws `cfg.batch` random tiles. Images smaller than the tile are
/// skipped and redrawn; 100 consecutive misses is an error.
pub fn sample_batch(items: &[TrainItem], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Sample>> {
    if items.is_empty() {
        return usage("cannot sample from an empty training split");
    }
    let [lo, hi] = cfg.scale_range;
    let t = cfg.tile_hr;
    let mut out = Vec::with_capacity(cfg.batch);
    let mut misses = 0;
    while out.len() < cfg.batch {
        let item = &items[rng.random_range(0..items.len())];
        let scale = if lo < hi { rng.random_range(lo..hi) } else { lo };
        let (h, w) = item.hr.dims();
        if t > h || t > w {
            misses += 1;
            if misses >= MAX_TILE_DRAWS {
                return usage(format!(
                    "no training image fits a {t}x{t} tile after {MAX_TILE_DRAWS} draws"
                ));
            }
            continue;
        }
        misses = 0;
        let y0 = rng.random_range(0..=h - t);
        let x0 = rng.random_range(0..=w - t);
        let side = tile_out(cfg, scale);
        let hr = item.hr.crop(y0, x0, side, side)?;
        let denoised = item.denoised.crop(y0, x0, side, side)?;
        let (lr, _) = make_lr_pair(&hr, scale)?;
        out.push(Sample {
            lr,
            hr,
            denoised,
            scale,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub total: f32,
    pub consistency: f32,
    pub denoise: f32,
}

/// Records `‖x̂ − x‖₁ + λ‖x̂ − D_σ(x)‖²` (both as means) on `tape`;
/// returns the total node and the three values.
pub fn record_loss(tape: &mut Tape, pred: Var, hr: &ImageGrid, dn: &ImageGrid, lambda: f32) -> Result<(Var, LossParts)> {
    let shape = tape.value(pred).shape().to_vec();
    let want = [1, 1, hr.height(), hr.width()];
    if shape != want || hr.dims() != dn.dims() {
        return usage(format!(
            "loss shapes differ: prediction {shape:?}, target {:?}, denoised {:?}",
            hr.dims(),
            dn.dims()
        ));
    }
    let lc = tape.l1_mean(pred, &hr.to_tensor())?;
    let ld = tape.mse_mean(pred, &dn.to_tensor())?;
    let weighted = tape.scale(ld, lambda)?;
    let total = tape.add(lc, weighted)?;
    let v = |tape: &Tape, x: Var| tape.value(x).data()[0];
    let parts = LossParts {
        total: v(tape, total),
        consistency: v(tape, lc),
        denoise: v(tape, ld),
    };
    Ok((total, parts))
}

pub fn loss(pred: &ImageGrid, hr: &ImageGrid, dn: &ImageGrid, lambda: f32) -> Result<LossParts> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.to_tensor());
    Ok(record_loss(&mut tape, p, hr, dn, lambda)?.1)
}

/// Mean-over-batch gradients for every parameter tensor, plus the mean loss.
/// Items are differentiated independently and summed in batch order.
pub fn batch_gradients(model: &Model, batch: &[Sample], lambda: f32) -> Result<(Vec<Tensor>, LossParts)> {
    let inv = 1.0 / batch.len() as f32;
    let per_item: Vec<(Vec<Tensor>, LossParts)> = batch
        .par_iter()
        .map(|s| {
            let mut tape = Tape::new();
            let vars = model.params.register(&mut tape, true);
            let pred = model.forward(&mut tape, &vars, &s.lr, s.hr.dims())?;
            let (total, parts) = record_loss(&mut tape, pred, &s.hr, &s.denoised, lambda)?;
            let scaled = tape.scale(total, inv)?;
            let mut grads = tape.backward(scaled)?;
            let g = vars
                .iter()
                .zip(model.params.tensors())
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            Ok((g, parts))
        })
        .collect::<Result<_>>()?;
    let mut iter = per_item.into_iter();
    let (mut sum, first) = iter.next().expect("non-empty batch");
    let mut parts = LossParts {
        total: first.total * inv,
        consistency: first.consistency * inv,
        denoise: first.denoise * inv,
    };
    for (g, p) in iter {
        for (acc, gi) in sum.iter_mut().zip(g) {
            for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                *a += b;
            }
        }
        parts.total += p.total * inv;
        parts.consistency += p.consistency * inv;
        parts.denoise += p.denoise * inv;
    }
    Ok((sum, parts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub train_loss: f32,
    pub val_psnr: f64,
    pub val_vif: f64,
    pub wall_ms: u64,
}

pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("step,train_loss,val_psnr,val_vif,wall_ms\n");
    for p in curve {
        let _ = writeln!(s, "{},{},{},{},{}", p.step, p.train_loss, p.val_psnr, p.val_vif, p.wall_ms);
    }
    s
}

/// Parses a curve written by [`curve_csv`].
pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    let text = fs::read_to_string(path)?;
    let bad = |line: &str| Error::Config(format!("{}: malformed curve line `{line}`", path.display()));
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(line));
            }
            Ok(CurvePoint {
                step: f[0].parse().map_err(|_| bad(line))?,
                train_loss: f[1].parse().map_err(|_| bad(line))?,
                val_psnr: f[2].parse().map_err(|_| bad(line))?,
                val_vif: f[3].parse().map_err(|_| bad(line))?,
                wall_ms: f[4].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

/// Steps after which validation runs.
pub fn eval_steps(total: u64, every: Option<u64>) -> Vec<u64> {
    let mut steps: Vec<u64> = match every {
        Some(e) => (1..).map(|k| k * e).take_while(|&s| s < total).collect(),
        None => {
            let mut v = vec![];
            let mut decade = 1u64;
            'outer: loop {
                for m in [1, 2, 5] {
                    let s = m * decade;
                    if s >= total {
                        break 'outer;
                    }
                    v.push(s);
                }
                decade *= 10;
            }
            v
        }
    };
    if total > 0 {
        steps.push(total);
    }
    steps
}

pub fn checkpoint_path(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join(format!("step_{step:06}"))
}

pub fn best_checkpoint_path(run_dir: &Path) -> PathBuf {
    run_dir.join(CHECKPOINT_DIR).join("best")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub step: u64,
    pub val_psnr: f64,
    pub val_vif: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<CurvePoint>,
    pub best: Option<BestRecord>,
}

/// Runs exactly `T` Adam steps from a seeded initialization, validating on
/// the schedule from [`eval_steps`]. Writes `curve.csv`, a checkpoint per
/// validation, `checkpoints/best` and `best.json` under `run_dir`.
///
/// A non-finite loss or gradient stops the run with the parameters from
/// before the failing step saved as `checkpoints/last-good`.
pub fn train(cfg: &TrainConfig, data: &TrainData, run_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.val.is_empty() && cfg.total_steps() > 0 {
        return usage("the manifest has no validation items");
    }
    fs::create_dir_all(run_dir.join(CHECKPOINT_DIR))?;
    fs::write(run_dir.join(RESOLVED_CONFIG_FILE), cfg.to_json()?)?;

    let mut model = Model::new(cfg.model_config(), cfg.seed)?;
    model.save(&checkpoint_path(run_dir, 0), 0, cfg.seed)?;
    let mut adam = AdamState::new(model.params.tensors());
    let adam_cfg = cfg.adam();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let total = cfg.total_steps();
    let schedule = eval_steps(total, cfg.eval_every);
    let mut next_eval = schedule.iter().copied().peekable();
    let mut curve = Vec::new();
    let mut timing = String::from("step,wall_ms\n");
    let mut best: Option<BestRecord> = None;
    let started = Instant::now();
    fs::write(run_dir.join(CURVE_FILE), curve_csv(&curve))?;

    for step in 1..=total {
        let batch = sample_batch(&data.train, cfg, &mut rng)?;
        let outcome = batch_gradients(&model, &batch, cfg.lambda).and_then(|(grads, parts)| {
            if !parts.total.is_finite() {
                return Err(Error::NonFiniteLoss { step: step as usize });
            }
            let names = model.params.names().to_vec();
            adam_step(model.params.tensors_mut(), &names, &grads, &mut adam, &adam_cfg)?;
            Ok(parts)
        });
        let parts = match outcome {
            Ok(p) => p,
            Err(e @ (Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. })) => {
                model.save(&run_dir.join(CHECKPOINT_DIR).join("last-good"), step - 1, cfg.seed)?;
                return Err(match e {
                    Error::NonFiniteLoss { .. } => e,
                    _ => Error::NonFiniteLoss { step: step as usize },
                });
            }
            Err(e) => return Err(e),
        };
        if next_eval.peek() == Some(&step) {
            next_eval.next();
            let report = evaluate_images(Some(&model), &data.val, cfg.val_scale(), false)?;
            let elapsed = started.elapsed().as_millis() as u64;
            let point = CurvePoint {
                step,
                train_loss: parts.total,
                val_psnr: report.mean.psnr_db,
                val_vif: report.mean.vif,
                wall_ms: if cfg.record_wall_ms { elapsed } else { 0 },
            };
            let _ = writeln!(timing, "{step},{elapsed}");
            model.save(&checkpoint_path(run_dir, step), step, cfg.seed)?;
            if best.as_ref().is_none_or(|b| point.val_psnr > b.val_psnr) {
                model.save(&best_checkpoint_path(run_dir), step, cfg.seed)?;
                best = Some(BestRecord {
                    step,
                    val_psnr: point.val_psnr,
                    val_vif: point.val_vif,
                });
                let mut s = serde_json::to_string_pretty(&best)?;
                s.push('\n');
                fs::write(run_dir.join(BEST_FILE), s)?;
            }
            curve.push(point);
            fs::write(run_dir.join(CURVE_FILE), curve_csv(&curve))?;
            fs::write(run_dir.join(TIMING_FILE), &timing)?;
        }
    }
    Ok(TrainOutcome { model, curve, best })
}

/// Full-image inference clamped to `[0, 1]`.
pub fn infer(model: &Model, x: &ImageGrid, target_dims: (usize, usize)) -> Result<ImageGrid> {
    if let Some(s) = model.fixed_scale() {
        let want = (x.height() * s, x.width() * s);
        if target_dims != want {
            return usage(format!(
                "conv checkpoint is fixed at {s}x: {}x{} input gives {}x{}, not {}x{}",
                x.height(),
                x.width(),
                want.0,
                want.1,
                target_dims.0,
                target_dims.1
            ));
        }
    }
    Ok(model.predict(x, target_dims)?.clamp01())
}

/// Trains one run per λ under `out_dir/lambda_<λ>` and writes a combined
/// `sweep.csv` (`lambda,step,train_loss,val_psnr,val_vif`).
pub fn lambda_sweep(cfg: &TrainConfig, lambdas: &[f32], data: &TrainData, out_dir: &Path) -> Result<Vec<(f32, TrainOutcome)>> {
    if lambdas.is_empty() {
        return usage("a sweep needs at least one lambda");
    }
    let mut runs = Vec::with_capacity(lambdas.len());
    let mut csv = String::from("lambda,step,train_loss,val_psnr,val_vif\n");
    for &lambda in lambdas {
        let run_cfg = TrainConfig { lambda, ..cfg.clone() };
        let outcome = train(&run_cfg, data, &out_dir.join(format!("lambda_{lambda}")))?;
        for p in &outcome.curve {
            let _ = writeln!(csv, "{lambda},{},{},{},{}", p.step, p.train_loss, p.val_psnr, p.val_vif);
        }
        runs.push((lambda, outcome));
    }
    fs::write(out_dir.join("sweep.csv"), csv)?;
    Ok(runs)
}
