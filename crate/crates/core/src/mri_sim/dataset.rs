//! Dataset manifests and deterministic train/val/test splits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{simulate_measurement, CoilMap};
use super::phantom::{make_phantom, PhantomKind};
use crate::error::{config, Result};
use crate::image::ImageGrid;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MIN_ITEMS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => config(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    /// Relative to the manifest's directory.
    pub path: String,
    pub group: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SourceKind {
    Phantom { phantom: PhantomKind, n: usize },
    Ingested { from: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub items: Vec<ManifestItem>,
    pub seed: u64,
    pub sigma_k: f32,
    pub source: SourceKind,
}

/// An unsplit dataset entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub path: String,
    pub group: String,
}

/// Shuffles groups by `seed` and fills validation, then test, with whole
/// groups up to 10% of the item count each (at least one group apiece);
/// everything else trains. Singleton groups give exact
/// 80/10/10 counts up to rounding, and no group ever spans two splits.
pub fn split_items(items: &[Candidate], seed: u64) -> Result<Vec<ManifestItem>> {
    if items.len() < MIN_ITEMS {
        return config(format!(
            "need at least {MIN_ITEMS} items for an 80/10/10 split, got {}",
            items.len()
        ));
    }
    let mut groups: BTreeMap<&str, Vec<&Candidate>> = BTreeMap::new();
    for it in items {
        groups.entry(it.group.as_str()).or_default().push(it);
    }
    let mut order: Vec<&str> = groups.keys().copied().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let target = ((items.len() as f64) * 0.1).round().max(1.0) as usize;
    let (mut n_val, mut n_test) = (0usize, 0usize);
    let mut assigned: BTreeMap<&str, Split> = BTreeMap::new();
    for g in &order {
        let size = groups[g].len();
        let split = if n_val == 0 || n_val + size <= target {
            n_val += size;
            Split::Val
        } else if n_test == 0 || n_test + size <= target {
            n_test += size;
            Split::Test
        } else {
            Split::Train
        };
        assigned.insert(g, split);
    }
    let mut out: Vec<ManifestItem> = items
        .iter()
        .map(|c| ManifestItem {
            path: c.path.clone(),
            group: c.group.clone(),
            split: assigned[c.group.as_str()],
        })
        .collect();
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(move |i| i.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// Stable per-item stem (the file name without extension).
pub fn item_id(item: &ManifestItem) -> String {
    Path::new(&item.path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| item.path.clone())
}

#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub n: usize,
    pub count: usize,
    pub sigma_k: f32,
    pub seed: u64,
    pub coils: Vec<CoilMap>,
}

/// Generates `count` noisy phantoms into `out_dir` as FT1 files plus a
/// manifest. Item `i` uses phantom seed `seed ^ i` and noise seed
/// `seed ^ i ^ 0x9e37…`, so items are independent of generation order.
pub fn simulate_dataset(spec: &PhantomSpec, out_dir: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(out_dir.join("images"))?;
    let mut candidates = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let item_seed = spec.seed ^ i as u64;
        let clean = make_phantom(spec.kind, spec.n, item_seed)?;
        let noisy = simulate_measurement(&clean, &spec.coils, spec.sigma_k, item_seed ^ 0x9e37_79b9_7f4a_7c15)?;
        let rel = format!("images/{}_{i:04}.ft1", spec.kind);
        noisy.write_ft1(&out_dir.join(&rel))?;
        candidates.push(Candidate {
            group: format!("{}_{i:04}", spec.kind),
            path: rel,
        });
    }
    let manifest = DatasetManifest {
        items: split_items(&candidates, spec.seed)?,
        seed: spec.seed,
        sigma_k: spec.sigma_k,
        source: SourceKind::Phantom {
            phantom: spec.kind,
            n: spec.n,
        },
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Converts every PNG/FT1 under `src_dir` into normalized FT1 files in
/// `out_dir`. Files inside a subdirectory share that subdirectory as their
/// group (e.g. slices of one volume); top-level files are their own group.
pub fn ingest_dir(src_dir: &Path, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    let mut found: Vec<(PathBuf, String)> = Vec::new();
    collect_images(src_dir, src_dir, &mut found)?;
    found.sort();
    fs::create_dir_all(out_dir.join("images"))?;
    let mut candidates = Vec::with_capacity(found.len());
    for (i, (path, group)) in found.iter().enumerate() {
        let img = ImageGrid::load(path)?.clamp01();
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let rel = format!("images/{i:04}_{stem}.ft1");
        img.write_ft1(&out_dir.join(&rel))?;
        candidates.push(Candidate {
            path: rel,
            group: group.clone(),
        });
    }
    let manifest = DatasetManifest {
        items: split_items(&candidates, seed)?,
        seed,
        sigma_k: 0.0,
        source: SourceKind::Ingested {
            from: src_dir.display().to_string(),
        },
    };
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn collect_images(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, String)>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            collect_images(root, &p, out)?;
            continue;
        }
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !matches!(ext, "png" | "PNG" | "ft1") {
            continue;
        }
        let group = match p.parent().and_then(|d| d.strip_prefix(root).ok()) {
            Some(rel) if !rel.as_os_str().is_empty() => rel.to_string_lossy().into_owned(),
            _ => p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
        };
        out.push((p, group));
    }
    Ok(())
}
