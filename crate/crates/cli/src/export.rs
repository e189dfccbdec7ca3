//! Reader-study export: both methods super-resolve each ground-truth image
//! directly (no downsampling), and the two results become one blinded pair.
//!
//! Layout under `--out`:
//!
//! ```text
//! served/study.json          descriptor, no method labels
//! served/pairs/pair_000_a.png
//! served/pairs/pair_000_b.png
//! key.json                   sealed: which method produced a and b
//! ```

use crate::{dataset_for, load_checkpoint, load_manifest, upscaled_dims, CmdResult, Failure};
use clap::Args;
use coordsr::metrics::load_split;
use coordsr::models::Model;
use coordsr::mri_sim::Split;
use coordsr::trainer::infer;
use coordsr_study::{Anchors, KeyEntry, PairEntry, StudyDescriptor, StudyKey, DESCRIPTOR_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

pub const SERVED_DIR: &str = "served";
pub const KEY_FILE: &str = "key.json";

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint_a: PathBuf,
    #[arg(long)]
    pub checkpoint_b: PathBuf,
    /// Label recorded in the key for method A; defaults to the checkpoint path.
    #[arg(long)]
    pub label_a: Option<String>,
    #[arg(long)]
    pub label_b: Option<String>,
    /// Dataset directory; defaults to the one recorded with checkpoint A's run.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "test", value_parser = crate::parse::<Split>)]
    pub split: Split,
    #[arg(long, default_value_t = 2.0)]
    pub scale: f64,
    /// Seeds the per-pair A/B assignment and the served study's session shuffles.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub study_id: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Slot assignment per pair: `true` puts method B's image in slot `a`.
pub fn swaps(n: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_bool(0.5)).collect()
}

fn label(explicit: Option<String>, checkpoint: &Path) -> String {
    explicit.unwrap_or_else(|| {
        std::path::absolute(checkpoint).unwrap_or_else(|_| checkpoint.into()).display().to_string()
    })
}

pub fn run(args: ExportArgs) -> CmdResult {
    let model_a = load_checkpoint(&args.checkpoint_a)?;
    let model_b = load_checkpoint(&args.checkpoint_b)?;
    let dataset = dataset_for(&args.checkpoint_a, args.dataset.as_deref())?;
    let items = load_split(&load_manifest(&dataset)?, &dataset, args.split)?;
    if items.is_empty() {
        return Err(Failure::Usage(format!("the {:?} split is empty", args.split)));
    }
    if args.out.exists() && std::fs::read_dir(&args.out)?.next().is_some() {
        return Err(Failure::Usage(format!("{} exists and is not empty", args.out.display())));
    }
    let name = args.out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "study".into());
    let staging = args.out.with_file_name(format!(".{name}.partial"));
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }

    let labels = (label(args.label_a.clone(), &args.checkpoint_a), label(args.label_b.clone(), &args.checkpoint_b));
    let written = write_study(&args, &model_a, &model_b, labels, &items, &staging);
    match written {
        Ok(n) => {
            if args.out.exists() {
                std::fs::remove_dir(&args.out)?;
            }
            std::fs::rename(&staging, &args.out)?;
            println!("exported {n} pairs to {}", args.out.display());
            Ok(())
        }
        Err(Failure::Usage(m) | Failure::Runtime(m)) => {
            let _ = std::fs::remove_dir_all(&staging);
            Err(Failure::Runtime(m))
        }
    }
}

fn write_study(
    args: &ExportArgs,
    model_a: &Model,
    model_b: &Model,
    (label_a, label_b): (String, String),
    items: &[(String, coordsr::ImageGrid)],
    dir: &Path,
) -> CmdResult<usize> {
    let pairs_dir = dir.join(SERVED_DIR).join("pairs");
    std::fs::create_dir_all(&pairs_dir)?;
    let study_id = args.study_id.clone().unwrap_or_else(|| format!("study-{}", args.seed));
    let mut pairs = vec![];
    let mut key = vec![];
    for (i, ((item, gt), swap)) in items.iter().zip(swaps(items.len(), args.seed)).enumerate() {
        let pair_id = format!("pair_{i:03}");
        let out_a = infer(model_a, gt, upscaled_dims(model_a, gt.dims(), args.scale)?)?;
        let out_b = infer(model_b, gt, upscaled_dims(model_b, gt.dims(), args.scale)?)?;
        if out_a.dims() != out_b.dims() {
            return Err(Failure::Usage(format!(
                "methods disagree on output size for {item}: {:?} vs {:?}",
                out_a.dims(),
                out_b.dims()
            )));
        }
        let (slot_a, slot_b, key_a, key_b) = if swap {
            (&out_b, &out_a, &label_b, &label_a)
        } else {
            (&out_a, &out_b, &label_a, &label_b)
        };
        let rel_a = format!("pairs/{pair_id}_a.png");
        let rel_b = format!("pairs/{pair_id}_b.png");
        slot_a.write_png(&dir.join(SERVED_DIR).join(&rel_a))?;
        slot_b.write_png(&dir.join(SERVED_DIR).join(&rel_b))?;
        pairs.push(PairEntry { pair_id: pair_id.clone(), a: rel_a, b: rel_b });
        key.push(KeyEntry { pair_id, item: item.clone(), a: key_a.clone(), b: key_b.clone() });
    }
    let n = pairs.len();
    let desc = StudyDescriptor { study_id: study_id.clone(), seed: args.seed, anchors: Anchors::default(), pairs };
    let key = StudyKey { study_id, method_a: label_a, method_b: label_b, pairs: key };
    std::fs::write(dir.join(SERVED_DIR).join(DESCRIPTOR_FILE), pretty(&desc))?;
    std::fs::write(dir.join(KEY_FILE), pretty(&key))?;
    Ok(n)
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("study files serialize") + "\n"
}
