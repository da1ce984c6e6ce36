use std::path::Path;
use std::process::{Command, Output};

use cerhv::pipeline::{save_gray, Manifest, Split};
use image::{GrayImage, Luma};
use serde_json::Value;

fn cerhv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cerhv"))
        .args(args)
        .env("CERHV_DETERMINISTIC", "1")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = cerhv(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().unwrap()).unwrap()
}

fn code(args: &[&str]) -> i32 {
    cerhv(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["train", "--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["synth"]), 1);
    assert_eq!(code(&["--set", "nonsense", "synth", "--out", "/tmp/x"]), 1);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert_eq!(code(&["--set", "no.such.key=1", "synth", "--out", p(&out)]), 1);
}

#[test]
fn synth_train_score_eval_clean_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let s = ok(&["--seed", "3", "synth", "--out", p(&data), "--count", "60", "--noise-rate", "0.1"]);
    assert_eq!(s["samples"], 60);
    // per-category rounding: 0.02 * 60 rounds to 1 in each of five categories
    assert_eq!(s["injected"], 5);
    let manifest = data.join("manifest.jsonl");
    let resolved: Value = serde_json::from_str(&std::fs::read_to_string(data.join("config.resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 3);
    // existing output is protected
    assert_eq!(code(&["synth", "--out", p(&data), "--count", "60"]), 2);

    let again = dir.path().join("again");
    ok(&["--seed", "3", "synth", "--out", p(&again), "--count", "60", "--noise-rate", "0.1"]);
    assert_eq!(
        std::fs::read_to_string(&manifest).unwrap().lines().count(),
        std::fs::read_to_string(again.join("manifest.jsonl")).unwrap().lines().count()
    );
    assert_eq!(
        Manifest::load(&manifest).unwrap().entries,
        Manifest::load(again.join("manifest.jsonl")).unwrap().entries
    );

    let model = dir.path().join("model");
    let t = ok(&["train", "--manifest", p(&manifest), "--out", p(&model), "--max-epochs", "2", "--patience", "1"]);
    assert!(t["t_conv"].as_u64().unwrap() <= 2);
    for f in ["checkpoint.bin", "preprocess.json", "history.json", "config.resolved.json"] {
        assert!(model.join(f).exists(), "{f}");
    }
    let ckpt = model.join("checkpoint.bin");

    let scores = dir.path().join("scores");
    let sc = ok(&["score", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--out", p(&scores), "--tau", "0.25"]);
    assert_eq!(sc["scored"], 60);
    let report = std::fs::read_to_string(scores.join("scores.jsonl")).unwrap();
    let records: Vec<Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 60);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["rank"], i + 1);
        assert_eq!(r["flagged"], r["cer"].as_f64().unwrap() > 0.25);
    }
    let flagged: Vec<String> = serde_json::from_str(&std::fs::read_to_string(scores.join("flagged.json")).unwrap()).unwrap();
    assert_eq!(flagged.len(), sc["flagged"].as_u64().unwrap() as usize);

    let ev = ok(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&manifest), "--split", "test"]);
    let n_test = Manifest::load(&manifest).unwrap().split_count(Split::Test);
    assert_eq!(ev["samples"], n_test);
    assert!(ev["mean_cer"].as_f64().unwrap() >= 0.0);

    let source = Manifest::load(&manifest).unwrap();
    let first = &source.entries[0].id;
    let second = &source.entries[1].id;
    let log = dir.path().join("verdicts.jsonl");
    std::fs::write(
        &log,
        format!(
            "{{\"sample_id\":\"{first}\",\"category\":\"irrelevant\",\"action\":\"remove\",\"reviewer\":\"a\",\"timestamp\":0}}\n\
             {{\"sample_id\":\"{second}\",\"category\":\"transcription\",\"action\":\"relabel\",\"corrected_text\":\"{}\",\"reviewer\":\"a\",\"timestamp\":0}}\n",
            source.alphabet.symbols()[0]
        ),
    )
    .unwrap();
    let cleaned = dir.path().join("clean").join("cleaned.jsonl");
    std::fs::create_dir_all(cleaned.parent().unwrap()).unwrap();
    let c = ok(&["clean", "--manifest", p(&manifest), "--verdicts", p(&log), "--out", p(&cleaned)]);
    assert_eq!(c["summary"]["removed"], 1);
    assert_eq!(c["summary"]["relabeled"], 1);
    let out = Manifest::load(&cleaned).unwrap();
    assert_eq!(out.len(), 59);
    assert!(out.get(first).is_none());
    out.load_image(out.get(second).unwrap()).unwrap();

    // an out-of-alphabet correction is a data error
    std::fs::write(
        &log,
        format!("{{\"sample_id\":\"{first}\",\"category\":\"transcription\",\"action\":\"relabel\",\"corrected_text\":\"ZZ\",\"reviewer\":\"a\",\"timestamp\":0}}\n"),
    )
    .unwrap();
    assert_eq!(code(&["clean", "--manifest", p(&manifest), "--verdicts", p(&log), "--out", p(&cleaned)]), 2);
}

#[test]
fn train_without_validation_split_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", p(&data), "--count", "30"]);
    let manifest = data.join("manifest.jsonl");
    let mut m = Manifest::load(&manifest).unwrap();
    for e in &mut m.entries {
        e.split = Split::Train;
    }
    m.save(&manifest).unwrap();
    assert_eq!(code(&["train", "--manifest", p(&manifest), "--out", p(&dir.path().join("m"))]), 2);
    assert_eq!(code(&["eval", "--checkpoint", "/no/such/checkpoint.bin", "--manifest", p(&manifest)]), 3);
}

#[test]
fn split_rejects_nothing_on_a_clean_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", p(&data), "--count", "200"]);
    let out = data.join("resplit.jsonl");
    let s = ok(&["--seed", "5", "split", "--manifest", p(&data.join("manifest.jsonl")), "--out", p(&out)]);
    assert!(s["audit"]["violations"].as_array().unwrap().is_empty());
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.len(), 200);
    assert_eq!(s["pages"]["val"], 2);
    m.load_image(&m.entries[0]).unwrap();
}

#[test]
fn crop_lines_writes_one_image_per_mask() {
    let dir = tempfile::tempdir().unwrap();
    let mut page = GrayImage::from_pixel(100, 60, Luma([240]));
    let mut masks = Vec::new();
    for (k, y) in [10u32, 35].into_iter().enumerate() {
        let mut mask = GrayImage::new(100, 60);
        for x in 10..90 {
            for dy in 0..8 {
                page.put_pixel(x, y + dy, Luma([20]));
                mask.put_pixel(x, y + dy, Luma([255]));
            }
        }
        let path = dir.path().join(format!("mask{k}.png"));
        save_gray(&mask, &path).unwrap();
        masks.push(path);
    }
    let page_path = dir.path().join("page.png");
    save_gray(&page, &page_path).unwrap();
    let out = dir.path().join("lines");
    let r = ok(&["crop-lines", "--page", p(&page_path), "--mask", p(&masks[0]), "--mask", p(&masks[1]), "--out", p(&out)]);
    let lines = r["lines"].as_array().unwrap();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["width"], 90);
    assert_eq!(lines[0]["height"], 18);
    assert!(out.join("page_001.png").exists());
    let empty = dir.path().join("empty.png");
    save_gray(&GrayImage::new(100, 60), &empty).unwrap();
    assert_eq!(code(&["crop-lines", "--page", p(&page_path), "--mask", p(&empty), "--out", p(&out)]), 2);
}
