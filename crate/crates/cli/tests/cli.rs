use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ifnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "status {:?}\n{}", out.status, String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, scenes: &str, seed: &str, range: &str) -> Output {
    ifnet(&["gen-data", "--out", s(dir), "--scenes", scenes, "--size", "64x64", "--count-range", range, "--seed", seed])
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn gen_data_is_deterministic_and_honours_the_count_range() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok_json(&gen(&a, "4", "7", "5:5"));
    ok_json(&gen(&b, "4", "7", "5:5"));
    assert_eq!(files(&a), files(&b));

    let ann: Value = serde_json::from_slice(&fs::read(a.join("annotations.json")).unwrap()).unwrap();
    let records = ann.as_array().unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r["points"].as_array().unwrap().len() == 5));

    let manifest: Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["input_hash"].as_str().unwrap().len(), 64);

    let c = tmp.path().join("c");
    ok_json(&gen(&c, "4", "8", "5:5"));
    assert_ne!(files(&a), files(&c));
}

#[test]
fn zero_scenes_give_an_empty_annotation_list() {
    let tmp = tempfile::tempdir().unwrap();
    ok_json(&gen(tmp.path(), "0", "0", "1:3"));
    let ann: Value = serde_json::from_slice(&fs::read(tmp.path().join("annotations.json")).unwrap()).unwrap();
    assert_eq!(ann, Value::Array(vec![]));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = gen(&blocker.join("sub"), "1", "0", "1:2");
    assert_eq!(out.status.code(), Some(2));
}

fn dmap_sum(path: &Path) -> f64 {
    let b = fs::read(path).unwrap();
    assert_eq!(&b[..4], b"DMAP");
    b[12..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).sum()
}

#[test]
fn make_gt_conserves_counts_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok_json(&gen(&data, "3", "1", "2:9"));
    let gt = tmp.path().join("gt");
    let run = |out: &PathBuf, sigma: &str| ok_json(&ifnet(&["make-gt", "--data", s(&data), "--sigma", sigma, "--out", s(out)]));
    let summary = run(&gt, "4");
    let first = files(&gt);
    run(&gt, "4");
    assert_eq!(files(&gt), first);

    for img in summary["images"].as_array().unwrap() {
        let stem = img["image"].as_str().unwrap().trim_end_matches(".png");
        let count = img["count"].as_f64().unwrap();
        for scale in ["d1", "d4", "d8"] {
            let sum = dmap_sum(&gt.join(format!("{stem}.{scale}.dmap")));
            assert!((sum - count).abs() <= 1e-3 * count.max(1.0), "{stem} {scale}: {sum} vs {count}");
        }
        assert!(gt.join(format!("{stem}.m4.dmap")).exists());
    }

    let wide = tmp.path().join("wide");
    run(&wide, "2");
    let name = "scene_0000.d1.dmap";
    assert_ne!(fs::read(gt.join(name)).unwrap(), fs::read(wide.join(name)).unwrap());
    assert!((dmap_sum(&gt.join(name)) - dmap_sum(&wide.join(name))).abs() < 1e-3);
}

#[test]
fn missing_annotations_are_data_errors_naming_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok_json(&gen(&data, "2", "1", "2:4"));
    fs::copy(data.join("scene_0000.png"), data.join("stray.png")).unwrap();
    let out = ifnet(&["make-gt", "--data", s(&data), "--out", s(&tmp.path().join("gt"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stray.png"));

    fs::remove_file(data.join("annotations.json")).unwrap();
    let out = ifnet(&["make-gt", "--data", s(&data), "--out", s(&tmp.path().join("gt"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("annotations.json"));
}

#[test]
fn oracle_evaluation_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok_json(&gen(&data, "3", "2", "3:8"));
    let v = ok_json(&ifnet(&["eval", "--data", s(&data), "--oracle"]));
    // Counts are annotation counts; the maps only sum to them in f32.
    assert!(v["report"]["mae"].as_f64().unwrap() < 1e-6);
    assert_eq!(v["report"]["psnr"], 99.0);
    assert!((v["report"]["ssim"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["manifest"]["command"], "eval");
}

#[test]
fn train_eval_and_infer_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok_json(&gen(&data, "3", "3", "3:8"));
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "preset = tiny\nepochs = 2 # quick\nbatch = 2\n").unwrap();
    let run = tmp.path().join("run");
    let t = ok_json(&ifnet(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&run)]));
    assert_eq!(t["epochs"], 2);
    for f in ["model.ifnw", "history.csv", "config.txt", "manifest.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let csv = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "epoch,lr,loss_total,loss_I,loss_C,loss_S");
    assert_eq!(csv.lines().count(), 3);

    let ckpt = run.join("model.ifnw");
    let e = ok_json(&ifnet(&["eval", "--data", s(&data), "--ckpt", s(&ckpt)]));
    let first = &e["images"][0];
    assert_eq!(first["image"], "scene_0000.png");

    let dmap = tmp.path().join("pred.dmap");
    let i = ok_json(&ifnet(&["infer", "--image", s(&data.join("scene_0000.png")), "--ckpt", s(&ckpt), "--out", s(&dmap)]));
    assert_eq!(i["count"], first["score"]["pred_count"]);
    assert!((dmap_sum(&dmap) - i["count"].as_f64().unwrap()).abs() < 1e-3);
    assert!(tmp.path().join("pred.dmap.manifest.json").exists());
}

#[test]
fn corrupt_checkpoints_exit_with_code_4() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    ok_json(&gen(&data, "1", "4", "1:2"));
    let ckpt = tmp.path().join("bad.ifnw");
    fs::write(&ckpt, b"NOPE\0\0\0\0").unwrap();
    let out = ifnet(&["infer", "--image", s(&data.join("scene_0000.png")), "--ckpt", s(&ckpt), "--out", s(&tmp.path().join("o.dmap"))]);
    assert_eq!(out.status.code(), Some(4));
    let out = ifnet(&["eval", "--data", s(&data), "--ckpt", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "preset = tiny\nlearning_rate = 1\n").unwrap();
    let out = ifnet(&["gradcheck", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn gradcheck_passes_on_the_tiny_config() {
    let v = ok_json(&ifnet(&["gradcheck"]));
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-3);
    assert_eq!(v["pass"], true);

    // A huge step makes the check fail and the command exit as a numerical failure.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.cfg");
    fs::write(&cfg, "preset = tiny\nblock_count = 1\n").unwrap();
    let out = ifnet(&["gradcheck", "--config", s(&cfg), "--eps", "0.5"]);
    assert_eq!(out.status.code(), Some(5));
}
