use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const BIN: &str = env!("CARGO_BIN_EXE_coordsr");
const STUDY_BIN: &str = env!("CARGO_BIN_EXE_coordsr-study");

const TOY: &str = r#"{"d": 8, "blocks": 1, "mlp_layers": 3, "hidden": 16, "batch": 2, "tile_hr": 32,
 "lr": 0.001, "T": 20, "eval_every": 10, "seed": 3}"#;

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().expect("spawn coordsr")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let out = run(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A dataset plus two toy runs shared by the tests below.
struct Fixture {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        std::fs::write(dir.join("toy.json"), TOY).unwrap();
        ok(&["simulate", "--kind", "texture", "--n", "64", "--count", "40", "--seed", "3", "--out", "ds"], &dir);
        ok(&["train", "--config", "toy.json", "--dataset", "ds", "--out", "run_a"], &dir);
        ok(&["train", "--config", "toy.json", "--dataset", "ds", "--out", "run_b", "--lambda", "10"], &dir);
        Fixture { _tmp: tmp, dir }
    })
}

fn tree_files(root: &Path) -> Vec<PathBuf> {
    let mut out = vec![];
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn simulate_writes_split_manifest_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&["simulate", "--kind", "texture", "--n", "128", "--count", "20", "--seed", "7", "--out", out], tmp.path());
    }
    let files = tree_files(&tmp.path().join("a"));
    assert_eq!(files.iter().filter(|p| p.extension().is_some_and(|e| e == "ft1")).count(), 20);
    for f in &files {
        let twin = tmp.path().join("b").join(f.strip_prefix(tmp.path().join("a")).unwrap());
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(twin).unwrap(), "{}", f.display());
    }
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(tmp.path().join("a/manifest.json")).unwrap()).unwrap();
    let count = |s: &str| m["items"].as_array().unwrap().iter().filter(|i| i["split"] == s).count();
    assert_eq!((count("train"), count("val"), count("test")), (16, 2, 2));
}

#[test]
fn bad_flags_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["simulate", "--kind", "bogus", "--out", "x"][..],
        &["simulate", "--kind", "texture"],
        &["train"],
        &["eval", "--checkpoint", "c", "--scale", "two", "--out", "r.csv"],
        &["no-such-command"],
    ] {
        assert_eq!(run(args, tmp.path()).status.code(), Some(2), "{args:?}");
    }
    assert_eq!(run(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn train_is_reproducible_and_writes_run_files() {
    let f = fixture();
    ok(&["train", "--config", "toy.json", "--dataset", "ds", "--out", "run_a2"], &f.dir);
    for file in ["curve.csv", "resolved-config.json", "best.json"] {
        assert_eq!(
            std::fs::read(f.dir.join("run_a").join(file)).unwrap(),
            std::fs::read(f.dir.join("run_a2").join(file)).unwrap(),
            "{file}"
        );
    }
    assert!(f.dir.join("run_a/checkpoints/step_000000").is_dir());
    assert!(f.dir.join("run_a/checkpoints/best").is_dir());
    let resolved: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.dir.join("run_b/resolved-config.json")).unwrap()).unwrap();
    assert_eq!(resolved["lambda"], 10.0);
    assert!(Path::new(resolved["dataset"].as_str().unwrap()).is_absolute());
}

#[test]
fn config_wins_over_flags_with_a_warning() {
    let f = fixture();
    let out = ok(&["train", "--config", "toy.json", "--dataset", "ds", "--out", "run_w", "--seed", "9", "--steps", "4"], &f.dir);
    let err = stderr(&out);
    assert!(err.contains("warning") && err.contains("--seed"), "{err}");
    assert!(err.contains("--steps"), "{err}");
    let resolved: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.dir.join("run_w/resolved-config.json")).unwrap()).unwrap();
    assert_eq!((resolved["seed"].as_u64(), resolved["steps"].as_u64()), (Some(3), Some(20)));
}

#[test]
fn invalid_configs_exit_two_naming_the_field() {
    let f = fixture();
    let out = run(&["train", "--dataset", "ds", "--out", "run_c", "--model", "conv", "--scale-range", "1.5", "2"], &f.dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("scale_range"), "{}", stderr(&out));
    assert!(!f.dir.join("run_c").exists());

    std::fs::write(f.dir.join("bad.json"), r#"{"lamda": 1.0}"#).unwrap();
    let out = run(&["train", "--config", "bad.json", "--dataset", "ds", "--out", "run_bad"], &f.dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lamda"));

    let out = run(&["train", "--out", "run_nods", "--steps", "1"], &f.dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dataset"));
}

#[test]
fn eval_reports_with_bicubic_row() {
    let f = fixture();
    ok(&["eval", "--checkpoint", "run_a/checkpoints/best", "--scale", "2", "--out", "eval/report.csv", "--with-bicubic"], &f.dir);
    let csv = std::fs::read_to_string(f.dir.join("eval/report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "item,psnr_db,vif");
    // four test items, the mean, the bicubic mean
    assert_eq!(lines.len(), 7);
    assert!(lines[5].starts_with("mean,") && lines[6].starts_with("bicubic,"));
    assert!(f.dir.join("eval/report.json").is_file());

    ok(&["eval", "--checkpoint", "run_a/checkpoints/best", "--scale", "3", "--split", "val", "--out", "eval/val.csv"], &f.dir);
    let csv = std::fs::read_to_string(f.dir.join("eval/val.csv")).unwrap();
    assert!(!csv.contains("bicubic"));
}

#[test]
fn eval_of_missing_checkpoint_exits_one() {
    let f = fixture();
    let out = run(&["eval", "--checkpoint", "run_a/checkpoints/nope", "--dataset", "ds", "--scale", "2", "--out", "x.csv"], &f.dir);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infer_honours_scale_and_size() {
    let f = fixture();
    let input = "ds/images/texture_0000.ft1";
    ok(&["infer", "--checkpoint", "run_a/checkpoints/best", "--input", input, "--scale", "2.5", "--out", "up.ft1"], &f.dir);
    let img = coordsr::ImageGrid::load(&f.dir.join("up.ft1")).unwrap();
    assert_eq!(img.dims(), (160, 160));
    ok(&["infer", "--checkpoint", "run_a/checkpoints/best", "--input", input, "--size", "70x50", "--out", "up.png"], &f.dir);
    assert_eq!(coordsr::ImageGrid::load(&f.dir.join("up.png")).unwrap().dims(), (70, 50));
    let out = run(&["infer", "--checkpoint", "run_a/checkpoints/best", "--input", input, "--scale", "2", "--out", "x.bmp"], &f.dir);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn curve_exports_csv_and_json() {
    let f = fixture();
    let out = ok(&["curve", "--run", "run_a"], &f.dir);
    assert_eq!(out.stdout, std::fs::read(f.dir.join("run_a/curve.csv")).unwrap());
    let out = ok(&["curve", "--run", "run_a", "--format", "json"], &f.dir);
    let rows: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().iter().map(|r| r["step"].as_u64().unwrap()).collect::<Vec<_>>(), [10, 20]);
}

#[test]
fn sweep_writes_one_run_per_lambda() {
    let f = fixture();
    ok(&["sweep", "--config", "toy.json", "--dataset", "ds", "--lambdas", "0,10", "--out", "sweep"], &f.dir);
    let csv = std::fs::read_to_string(f.dir.join("sweep/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(f.dir.join("sweep/lambda_0/curve.csv").is_file());
    assert!(f.dir.join("sweep/lambda_10/curve.csv").is_file());
}

const LABEL_A: &str = "method-alpha";
const LABEL_B: &str = "method-beta";

fn export(out: &str, seed: &str, split: &str) -> Output {
    let f = fixture();
    #[rustfmt::skip]
    let args = [
        "export-study", "--checkpoint-a", "run_a/checkpoints/best", "--checkpoint-b", "run_b/checkpoints/best",
        "--label-a", LABEL_A, "--label-b", LABEL_B, "--split", split, "--scale", "2", "--seed", seed, "--out", out,
    ];
    run(&args, &f.dir)
}

#[test]
fn export_study_pairs_and_key() {
    let f = fixture();
    assert!(export("study_test", "11", "test").status.success());
    let root = f.dir.join("study_test");
    let key: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("key.json")).unwrap()).unwrap();
    let desc: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("served/study.json")).unwrap()).unwrap();
    assert_eq!(key["pairs"].as_array().unwrap().len(), 4);
    assert_eq!(desc["pairs"].as_array().unwrap().len(), 4);
    for p in desc["pairs"].as_array().unwrap() {
        for slot in ["a", "b"] {
            let img = coordsr::ImageGrid::load(&root.join("served").join(p[slot].as_str().unwrap())).unwrap();
            assert_eq!(img.dims(), (128, 128));
        }
    }
}

#[test]
fn export_study_ab_sequence_is_pinned() {
    let f = fixture();
    assert!(export("study_train", "11", "train").status.success());
    let key: serde_json::Value =
        serde_json::from_slice(&std::fs::read(f.dir.join("study_train/key.json")).unwrap()).unwrap();
    let seq: String = key["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| if e["a"] == LABEL_B { '1' } else { '0' })
        .collect();
    // 1 = method B in slot a. Generated once from seed 11 and pinned.
    assert_eq!(seq, "11101011011011011110110111110110");
    let ones = seq.matches('1').count();
    // Two-sided 99.9% binomial interval for 32 fair draws.
    assert!((6..=26).contains(&ones), "{ones}/32");
}

#[test]
fn export_study_served_tree_is_blind() {
    let f = fixture();
    assert!(export("study_blind", "5", "train").status.success());
    let served = f.dir.join("study_blind/served");
    for file in tree_files(&served) {
        let name = file.strip_prefix(&served).unwrap().to_string_lossy().into_owned();
        let bytes = std::fs::read(&file).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        for label in [LABEL_A, LABEL_B, "alpha", "beta", "run_a", "run_b"] {
            assert!(!name.contains(label), "{name}");
            assert!(!text.contains(label), "{name} mentions {label}");
        }
    }
    let key = std::fs::read_to_string(f.dir.join("study_blind/key.json")).unwrap();
    assert!(key.contains(LABEL_A) && key.contains(LABEL_B));
}

#[test]
fn export_study_failure_leaves_nothing_behind() {
    let f = fixture();
    ok(
        &["train", "--dataset", "ds", "--out", "run_conv", "--model", "conv", "--scale-range", "2", "2", "--d", "8",
          "--blocks", "1", "--tile-hr", "32", "--batch", "1", "--steps", "2"],
        &f.dir,
    );
    #[rustfmt::skip]
    let out = run(&[
        "export-study", "--checkpoint-a", "run_a/checkpoints/best", "--checkpoint-b", "run_conv/checkpoints/step_000002",
        "--split", "test", "--scale", "3", "--seed", "1", "--out", "study_fail",
    ], &f.dir);
    // A 2x conv checkpoint cannot produce a 3x pair.
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(!f.dir.join("study_fail").exists());
    assert!(!f.dir.join(".study_fail.partial").exists());
}

#[test]
fn export_study_refuses_non_empty_output() {
    let f = fixture();
    std::fs::create_dir_all(f.dir.join("occupied")).unwrap();
    std::fs::write(f.dir.join("occupied/keep.txt"), "x").unwrap();
    assert_eq!(export("occupied", "1", "test").status.code(), Some(2));
    assert_eq!(std::fs::read_to_string(f.dir.join("occupied/keep.txt")).unwrap(), "x");
}

#[test]
fn study_server_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let help = Command::new(STUDY_BIN).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&help.stdout);
    for flag in ["--port", "--study-dir", "--key-file", "--log-dir", "--ui-dir"] {
        assert!(text.contains(flag), "{flag}");
    }
    let out = Command::new(STUDY_BIN)
        .args(["--port", "0", "--study-dir"])
        .arg(tmp.path().join("missing"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
