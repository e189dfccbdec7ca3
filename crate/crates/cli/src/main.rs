use clap::{Parser, Subcommand};
use coordsr::metrics::evaluate;
use coordsr::models::Model;
use coordsr::mri_sim::{ingest_dir, simulate_dataset, synthetic_coils, DatasetManifest, PhantomKind, PhantomSpec, Split, MANIFEST_FILE};
use coordsr::trainer::{infer, lambda_sweep, prepare_data, read_curve, train, TrainConfig, CURVE_FILE};
use coordsr::ImageGrid;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

mod export;
mod overrides;

/// Scale-agnostic super-resolution for MR-like images.
#[derive(Parser)]
#[command(name = "coordsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a noisy phantom dataset (FT1 images plus manifest.json).
    Simulate {
        /// Phantom family: shepp-logan, texture or edges.
        #[arg(long, value_parser = parse::<PhantomKind>)]
        kind: PhantomKind,
        /// Image side length in pixels.
        #[arg(long, default_value_t = 128)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// k-space noise std as a fraction of the image side.
        #[arg(long, default_value_t = 0.03)]
        sigma_k: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of synthetic receive coils; 0 simulates a single uniform coil.
        #[arg(long, default_value_t = 0)]
        coils: usize,
        /// Coil sensitivity width as a fraction of the image side.
        #[arg(long, default_value_t = 0.5)]
        coil_smoothness: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a directory of PNG/FT1 images into a dataset.
    Ingest {
        #[arg(long)]
        src: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes curve.csv, checkpoints/ and resolved-config.json.
    Train {
        /// JSON training config. Its values win over flags.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: overrides::TrainFlags,
    },
    /// Train one run per lambda and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated lambda values.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f32>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        flags: overrides::TrainFlags,
    },
    /// Score a checkpoint on a dataset split; writes CSV plus a JSON twin.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the one recorded with the run.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = parse::<Split>)]
        split: Split,
        #[arg(long)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
        /// Add the bicubic baseline rows.
        #[arg(long)]
        with_bicubic: bool,
    },
    /// Super-resolve one image.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// PNG or FT1 input.
        #[arg(long)]
        input: PathBuf,
        /// Upsampling factor; output side is round(side * scale).
        #[arg(long, conflicts_with = "size", required_unless_present = "size")]
        scale: Option<f64>,
        /// Exact output size as HEIGHTxWIDTH.
        #[arg(long, value_parser = parse_size)]
        size: Option<(usize, usize)>,
        /// PNG (8-bit) or FT1 output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print or write a run's validation curve.
    Curve {
        /// Run directory containing curve.csv.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export blinded reader-study pairs from two checkpoints.
    ExportStudy(export::ExportArgs),
}

fn parse<T: std::str::FromStr<Err = coordsr::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: coordsr::Error| e.to_string())
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HEIGHTxWIDTH")?;
    let side = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v}: {e}"));
    Ok((side(h)?, side(w)?))
}

/// A failed command: usage problems exit 2, everything else 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<coordsr::Error> for Failure {
    fn from(e: coordsr::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

fn load_manifest(dir: &Path) -> CmdResult<DatasetManifest> {
    Ok(DatasetManifest::load(&dir.join(MANIFEST_FILE))?)
}

fn load_checkpoint(dir: &Path) -> CmdResult<Model> {
    Model::load(dir)
        .map(|(m, _)| m)
        .map_err(|e| Failure::Runtime(format!("cannot load checkpoint {}: {e}", dir.display())))
}

/// The dataset a checkpoint was trained on, read from the run's
/// resolved config (a checkpoint sits two levels below its run).
pub fn dataset_for(checkpoint: &Path, explicit: Option<&Path>) -> CmdResult<PathBuf> {
    if let Some(d) = explicit {
        return Ok(d.to_path_buf());
    }
    for dir in checkpoint.ancestors().take(4) {
        let resolved = dir.join(coordsr::trainer::RESOLVED_CONFIG_FILE);
        if resolved.is_file() {
            if let Some(d) = TrainConfig::load(&resolved)?.dataset {
                return Ok(d);
            }
        }
    }
    Err(Failure::Usage(format!(
        "no dataset recorded for {}; pass --dataset",
        checkpoint.display()
    )))
}

/// Output size for upsampling an `h × w` input by `scale`.
pub fn upscaled_dims(model: &Model, (h, w): (usize, usize), scale: f64) -> CmdResult<(usize, usize)> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Failure::Usage(format!("scale {scale} must be positive")));
    }
    if let Some(s) = model.fixed_scale() {
        if (scale - s as f64).abs() > 1e-9 {
            return Err(Failure::Usage(format!("conv checkpoint is fixed at {s}x, cannot upsample by {scale}")));
        }
    }
    let side = |n: usize| ((n as f64 * scale).round() as usize).max(1);
    Ok((side(h), side(w)))
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Simulate { kind, n, count, sigma_k, seed, coils, coil_smoothness, out } => {
            let coils = if coils == 0 { vec![] } else { synthetic_coils(coils, n, n, coil_smoothness)? };
            let m = simulate_dataset(&PhantomSpec { kind, n, count, sigma_k, seed, coils }, &out)?;
            println!(
                "wrote {} images to {} (train {}, val {}, test {})",
                m.items.len(),
                out.display(),
                m.count(Split::Train),
                m.count(Split::Val),
                m.count(Split::Test)
            );
        }
        Command::Ingest { src, seed, out } => {
            let m = ingest_dir(&src, seed, &out)?;
            println!("ingested {} images into {}", m.items.len(), out.display());
        }
        Command::Train { config, out, flags } => {
            let cfg = overrides::resolve(config.as_deref(), &flags)?;
            let dataset = cfg.dataset.clone().expect("resolve requires a dataset");
            let data = prepare_data(&load_manifest(&dataset)?, &dataset, &cfg)?;
            let outcome = train(&cfg, &data, &out)?;
            match outcome.best {
                Some(b) => println!(
                    "trained {} steps; best val PSNR {:.3} dB at step {}",
                    cfg.total_steps(),
                    b.val_psnr,
                    b.step
                ),
                None => println!("trained {} steps", cfg.total_steps()),
            }
        }
        Command::Sweep { config, lambdas, out, flags } => {
            let cfg = overrides::resolve(config.as_deref(), &flags)?;
            let dataset = cfg.dataset.clone().expect("resolve requires a dataset");
            let data = prepare_data(&load_manifest(&dataset)?, &dataset, &cfg)?;
            for (lambda, o) in lambda_sweep(&cfg, &lambdas, &data, &out)? {
                if let Some(b) = o.best {
                    println!("lambda {lambda}: best val PSNR {:.3} dB at step {}", b.val_psnr, b.step);
                }
            }
        }
        Command::Eval { checkpoint, dataset, split, scale, out, with_bicubic } => {
            let model = load_checkpoint(&checkpoint)?;
            let dataset = dataset_for(&checkpoint, dataset.as_deref())?;
            let report = evaluate(Some(&model), &load_manifest(&dataset)?, &dataset, split, scale, with_bicubic)?;
            if let Some(parent) = out.parent() {
                std::fs::create_dir_all(parent)?;
            }
            report.write(&out)?;
            print!("{}", report.to_csv());
        }
        Command::Infer { checkpoint, input, scale, size, out } => {
            let model = load_checkpoint(&checkpoint)?;
            let x = ImageGrid::load(&input)?;
            let dims = match (size, scale) {
                (Some(d), _) => d,
                (None, Some(s)) => upscaled_dims(&model, x.dims(), s)?,
                (None, None) => unreachable!("clap requires one of --scale/--size"),
            };
            let y = infer(&model, &x, dims)?;
            match out.extension().and_then(|e| e.to_str()) {
                Some("ft1") => y.write_ft1(&out)?,
                Some("png") | Some("PNG") => y.write_png(&out)?,
                _ => return Err(Failure::Usage(format!("{}: output must be .png or .ft1", out.display()))),
            }
            println!("wrote {}x{} image to {}", dims.0, dims.1, out.display());
        }
        Command::Curve { run, format, out } => {
            let curve = read_curve(&run.join(CURVE_FILE))?;
            let text = if format == "json" {
                let rows: Vec<_> = curve
                    .iter()
                    .map(|p| {
                        serde_json::json!({
                            "step": p.step,
                            "train_loss": p.train_loss,
                            "val_psnr": p.val_psnr,
                            "val_vif": p.val_vif,
                            "wall_ms": p.wall_ms,
                        })
                    })
                    .collect();
                serde_json::to_string_pretty(&rows).expect("curve rows serialize") + "\n"
            } else {
                coordsr::trainer::curve_csv(&curve)
            };
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
        }
        Command::ExportStudy(args) => export::run(args)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
