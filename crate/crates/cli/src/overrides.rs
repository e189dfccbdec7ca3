//! Merging command-line flags into a training config. Values present in the
//! config file win; a conflicting flag is reported and ignored.

use crate::{CmdResult, Failure};
use clap::Args;
use coordsr::trainer::TrainConfig;
use serde_json::{json, Map, Value};
use std::path::{Path, PathBuf};

#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// Dataset directory holding manifest.json.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// coord or conv.
    #[arg(long)]
    pub model: Option<String>,
    /// Latent feature width.
    #[arg(long)]
    pub d: Option<usize>,
    /// Encoder residual blocks.
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub mlp_layers: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Decode with the four-neighbour ensemble and relative coordinates.
    #[arg(long)]
    pub liif_mode: bool,
    /// Training scale range, e.g. `--scale-range 1 2`.
    #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
    pub scale_range: Option<Vec<f64>>,
    /// Weight of the denoiser term.
    #[arg(long)]
    pub lambda: Option<f32>,
    /// Noise level handed to the denoiser.
    #[arg(long)]
    pub sigma: Option<f32>,
    /// block-dct, gaussian or identity.
    #[arg(long)]
    pub denoiser: Option<String>,
    /// Training step budget T.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub tile_hr: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Validate every N steps instead of the log-spaced schedule.
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub val_scale: Option<f64>,
    /// Record real elapsed times in curve.csv.
    #[arg(long)]
    pub record_wall_ms: bool,
}

impl TrainFlags {
    /// (config key, flag name, value) for every flag that was given.
    fn given(&self) -> Vec<(&'static str, &'static str, Value)> {
        let mut out = vec![];
        let mut push = |key, flag, v: Option<Value>| {
            if let Some(v) = v {
                out.push((key, flag, v));
            }
        };
        push("dataset", "--dataset", self.dataset.as_ref().map(|p| json!(p)));
        push("model", "--model", self.model.as_ref().map(|v| json!(v)));
        push("d", "--d", self.d.map(|v| json!(v)));
        push("blocks", "--blocks", self.blocks.map(|v| json!(v)));
        push("mlp_layers", "--mlp-layers", self.mlp_layers.map(|v| json!(v)));
        push("hidden", "--hidden", self.hidden.map(|v| json!(v)));
        push("liif_mode", "--liif-mode", self.liif_mode.then(|| json!(true)));
        push("scale_range", "--scale-range", self.scale_range.as_ref().map(|v| json!(v)));
        push("lambda", "--lambda", self.lambda.map(|v| json!(v)));
        push("sigma", "--sigma", self.sigma.map(|v| json!(v)));
        push("denoiser", "--denoiser", self.denoiser.as_ref().map(|v| json!(v)));
        push("steps", "--steps", self.steps.map(|v| json!(v)));
        push("lr", "--lr", self.lr.map(|v| json!(v)));
        push("tile_hr", "--tile-hr", self.tile_hr.map(|v| json!(v)));
        push("batch", "--batch", self.batch.map(|v| json!(v)));
        push("seed", "--seed", self.seed.map(|v| json!(v)));
        push("eval_every", "--eval-every", self.eval_every.map(|v| json!(v)));
        push("val_scale", "--val-scale", self.val_scale.map(|v| json!(v)));
        push("record_wall_ms", "--record-wall-ms", self.record_wall_ms.then(|| json!(true)));
        out
    }
}

/// Merges `flags` into the config file (if any), warning on conflicts, and
/// validates the result. The dataset path is made absolute so the resolved
/// config stays usable from any working directory.
pub fn resolve(config: Option<&Path>, flags: &TrainFlags) -> CmdResult<TrainConfig> {
    let mut base = match config {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_slice(&bytes) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Failure::Usage(format!("{}: config must be a JSON object", path.display()))),
                Err(e) => return Err(Failure::Usage(format!("{}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    merge(&mut base, flags, config);
    let mut cfg: TrainConfig =
        serde_json::from_value(Value::Object(base)).map_err(|e| Failure::Usage(format!("invalid config: {e}")))?;
    cfg.validate()?;
    let Some(dataset) = cfg.dataset.take() else {
        return Err(Failure::Usage("no dataset: pass --dataset or set `dataset` in the config".into()));
    };
    cfg.dataset = Some(std::path::absolute(&dataset)?);
    Ok(cfg)
}

fn merge(base: &mut Map<String, Value>, flags: &TrainFlags, config: Option<&Path>) {
    for (key, flag, value) in flags.given() {
        // The step budget may be spelled `T` in config files.
        let existing = base.get(key).or_else(|| if key == "steps" { base.get("T") } else { None });
        match existing {
            Some(v) if *v != value && !numerically_equal(v, &value) => eprintln!(
                "warning: {} sets `{key}` to {v}; ignoring {flag} {value}",
                config.map(|p| p.display().to_string()).unwrap_or_default()
            ),
            Some(_) => {}
            None => {
                base.insert(key.to_string(), value);
            }
        }
    }
}

fn numerically_equal(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-6 * x.abs().max(y.abs()),
        _ => false,
    }
}
