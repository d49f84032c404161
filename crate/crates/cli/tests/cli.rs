use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn owleye(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_owleye"))
        .args(args)
        .env("OWLEYE_LOG", "warn")
        .output()
        .expect("run owleye")
}

fn ok(args: &[&str]) -> Output {
    let out = owleye(args);
    assert!(
        out.status.success(),
        "owleye {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn lines(out: &Output) -> Vec<Value> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, apps: &str) {
    ok(&["synth", "--apps", apps, "--seed", "3", "--out", p(dir)]);
}

#[test]
fn augment_is_deterministic_and_follows_mix() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    synth(&src, "10");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        ok(&["augment", "--input", p(&src), "--seed", "11", "--out", p(out)]);
    }
    let ma = fs::read_to_string(a.join("manifest.jsonl")).unwrap();
    assert_eq!(ma, fs::read_to_string(b.join("manifest.jsonl")).unwrap());
    let mut names: Vec<_> = fs::read_dir(a.join("images"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 20);
    for n in &names {
        let bytes_a = fs::read(a.join("images").join(n)).unwrap();
        assert_eq!(bytes_a, fs::read(b.join("images").join(n)).unwrap(), "{n:?}");
    }

    let rows: Vec<Value> = ma.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let count = |cat: &str| rows.iter().filter(|r| r["category"] == cat).count();
    assert_eq!(count("component_occlusion"), 1);
    assert_eq!(count("text_overlap"), 3);
    assert_eq!(count("missing_image"), 3);
    assert_eq!(count("null_value"), 3);
    assert_eq!(rows.iter().filter(|r| r["label"] == "clean").count(), 10);
}

#[test]
fn dedup_drops_repeated_path() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    synth(&src, "3");
    let mut text = String::new();
    for (i, app) in [0, 1, 2, 0].iter().enumerate() {
        text.push_str(&format!(
            "{{\"path\":\"src/app{app:04}_s00.png\",\"source_id\":\"row{i}\",\"label\":\"clean\"}}\n"
        ));
    }
    let manifest = tmp.path().join("m.jsonl");
    fs::write(&manifest, text).unwrap();
    let out_dir = tmp.path().join("out");
    // Synthetic screens share most ORB bits, so only a near-1 threshold
    // separates them; the repeated path must go regardless.
    let out = ok(&["dedup", "--manifest", p(&manifest), "--threshold", "0.999", "--out", p(&out_dir)]);
    let decisions = lines(&out);
    assert_eq!(decisions.len(), 4);
    let dropped: Vec<_> = decisions.iter().filter(|d| d["kept"] == false).collect();
    assert_eq!(dropped.len(), 1);
    assert_eq!(dropped[0]["max_sim"].as_f64(), Some(1.0));
    let kept = fs::read_to_string(out_dir.join("manifest.dedup.jsonl")).unwrap();
    assert_eq!(kept.lines().count(), 3);
}

#[test]
fn eval_counts_prints_table() {
    let out = ok(&["eval", "--counts", "679,119,121,0"]);
    let report = &lines(&out)[0];
    let p = report["precision"].as_f64().unwrap();
    let r = report["recall"].as_f64().unwrap();
    assert!((p - 679.0 / 798.0).abs() < 1e-12);
    assert!((r - 679.0 / 800.0).abs() < 1e-12);
    let table = String::from_utf8(out.stderr).unwrap();
    assert!(table.contains("Overall"), "{table}");
    assert!(table.contains("0.851"), "{table}");
}

#[test]
fn train_detect_localize_round() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    synth(&src, "4");
    let aug = tmp.path().join("aug");
    ok(&["augment", "--input", p(&src), "--out", p(&aug)]);
    let model_dir = tmp.path().join("model");
    let out = ok(&[
        "train",
        "--train",
        p(&aug.join("manifest.jsonl")),
        "--epochs",
        "2",
        "--batch-size",
        "4",
        "--out",
        p(&model_dir),
    ]);
    assert_eq!(lines(&out).len(), 2);
    let ckpt = model_dir.join("model.owl");
    assert!(ckpt.exists());

    let images = aug.join("images");
    let out = ok(&["detect", "--checkpoint", p(&ckpt), "--input", p(&images)]);
    let rows = lines(&out);
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let pb = r["p_buggy"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&pb));
        assert_eq!(r["label"] == "buggy", pb >= 0.5);
    }

    let heat = tmp.path().join("heat");
    let out = ok(&[
        "localize", "--checkpoint", p(&ckpt), "--input", p(&src), "--alpha", "0", "--out", p(&heat),
    ]);
    let rows = lines(&out);
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let input = image_pixels(Path::new(r["path"].as_str().unwrap()));
        let overlay = image_pixels(Path::new(r["heatmap"].as_str().unwrap()));
        assert_eq!(input, overlay, "alpha 0 must leave the screenshot unchanged");
    }

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = ok(&["detect", "--checkpoint", p(&ckpt), "--input", p(&empty)]);
    assert!(out.stdout.is_empty());
}

fn image_pixels(path: &Path) -> Vec<u8> {
    owleye::imaging::load_image(path).unwrap().as_raw().to_vec()
}

#[test]
fn exit_codes() {
    assert_eq!(owleye(&["--help"]).status.code(), Some(0));
    assert_eq!(owleye(&["--version"]).status.code(), Some(0));
    assert_eq!(owleye(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(owleye(&["dedup", "--manifest", "x.jsonl", "--threshold", "1.5"]).status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"dedup_threshold": 1}"#).unwrap();
    fs::write(tmp.path().join("bad.json"), "{nope").unwrap();
    assert_eq!(owleye(&["--config", p(&tmp.path().join("bad.json")), "eval", "--counts", "1,0,0,1"]).status.code(), Some(1));
    assert_eq!(owleye(&["--config", p(&cfg), "eval", "--counts", "1,0,0,1"]).status.code(), Some(0));

    let missing = tmp.path().join("missing.jsonl");
    assert_eq!(owleye(&["dedup", "--manifest", p(&missing)]).status.code(), Some(2));
    let garbage = tmp.path().join("garbage.owl");
    fs::write(&garbage, b"not a model").unwrap();
    assert_eq!(owleye(&["detect", "--checkpoint", p(&garbage), "--input", p(tmp.path())]).status.code(), Some(2));
}
