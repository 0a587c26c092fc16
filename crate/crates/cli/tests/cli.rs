use std::path::Path;
use std::process::{Command, Output};

use fpclass_core::checkpoint::load_model;
use fpclass_core::evaluation::{parse_confusion_csv, penetration_rate_avg};
use sha2::{Digest, Sha256};

fn fpclass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpclass"))
        .args(args)
        .env_remove("FPCLASS_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fpclass(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, fingers: usize, impressions: usize, quality: &str, seed: u64) {
    ok(&[
        "generate",
        "--fingers",
        &fingers.to_string(),
        "--impressions",
        &impressions.to_string(),
        "--quality",
        quality,
        "--size",
        "desk",
        "--seed",
        &seed.to_string(),
        "--out",
        s(dir),
    ]);
}

fn dir_digest(dir: &Path) -> [u8; 32] {
    let mut files: Vec<_> = walk(dir);
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&f).unwrap());
    }
    h.finalize().into()
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no {key} in\n{report}"))
}

#[test]
fn generate_writes_manifest_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a, 12, 3, "vq", 5);
    generate(&b, 12, 3, "vq", 5);
    let manifest = std::fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 36);
    assert_eq!(std::fs::read_dir(a.join("images")).unwrap().count(), 36);
    assert_eq!(dir_digest(&a), dir_digest(&b));
    let c = tmp.path().join("c");
    generate(&c, 12, 3, "vq", 6);
    assert_ne!(dir_digest(&a), dir_digest(&c));
}

#[test]
fn natural_histogram_follows_priors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(&[
        "generate",
        "--fingers",
        "200",
        "--size",
        "desk",
        "--no-perturbation",
        "--seed",
        "1",
        "--out",
        s(tmp.path()),
    ]);
    // Largest-remainder quotas of 200 fingers over 3.7/33.8/31.7/2.9/27.9 %.
    for (code, n) in [("A", 7), ("L", 68), ("R", 63), ("T", 6), ("W", 56)] {
        let line = out.lines().find(|l| l.trim_start().starts_with(code)).unwrap();
        assert_eq!(line.split_whitespace().nth(1).unwrap(), n.to_string(), "{out}");
    }
}

#[test]
fn invalid_preset_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fpclass(&[
        "generate",
        "--fingers",
        "2",
        "--quality",
        "ultra",
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 20, 2, "hq", 3);
    let model = tmp.path().join("m.fpc");
    let out = ok(&[
        "train",
        "--data",
        s(&data),
        "--scale",
        "0.25",
        "--iters",
        "12",
        "--batch",
        "8",
        "--out",
        s(&model),
    ]);
    // No --seed: a seed is drawn, printed and stored.
    let seed: u64 = value(&out, "seed")
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let (_, meta) = load_model(&model).unwrap();
    assert_eq!(meta.seed, seed);
    assert_eq!(meta.iterations, 12);
    let loss = std::fs::read_to_string(tmp.path().join("m.fpc.loss.csv")).unwrap();
    assert!(loss.starts_with("iteration,learning_rate,loss\n"));
    assert_eq!(loss.lines().count(), 13);

    let prefix = tmp.path().join("report");
    let text = ok(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--out",
        s(&prefix),
    ]);
    assert_eq!(
        std::fs::read_to_string(tmp.path().join("report.txt")).unwrap(),
        text
    );
    let csv = std::fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    assert!(csv.starts_with("key,value\n"));
    let block = text.split("confusion:\n").nth(1).unwrap();
    let m = parse_confusion_csv(block).unwrap();
    assert_eq!(m.total(), 40);
    let expected = penetration_rate_avg(&m.class_stats().unwrap()).unwrap();
    assert_eq!(value(&text, "penetration_rate"), format!("{expected:.6}"));
    assert_eq!(value(&text, "rejection_rate"), "0.000000");

    // Everything but the runtime lines is reproducible.
    let again = ok(&["eval", "--model", s(&model), "--data", s(&data)]);
    let strip = |t: &str| {
        t.lines()
            .filter(|l| !l.starts_with("runtime."))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&text), strip(&again));

    let bytes = std::fs::read(&model).unwrap();
    let cut = tmp.path().join("cut.fpc");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    let out = fpclass(&["eval", "--model", s(&cut), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("truncated weight blob"));
}

#[test]
fn missing_and_empty_inputs_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fpclass(&["eval", "--cv", "5", "--data", s(&tmp.path().join("absent"))]);
    assert_eq!(out.status.code(), Some(1));

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    std::fs::write(
        empty.join("manifest.csv"),
        "finger_id,impression_id,class,quality,path\n",
    )
    .unwrap();
    let prefix = tmp.path().join("r");
    let out = fpclass(&["eval", "--cv", "5", "--data", s(&empty), "--out", s(&prefix)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!tmp.path().join("r.txt").exists());
}

#[test]
fn corrupt_manifest_names_line() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 3, 1, "hq", 1);
    let m = data.join("manifest.csv");
    let mut text = std::fs::read_to_string(&m).unwrap();
    text.push_str("4,1,Z,hq,images/x.pgm\n");
    std::fs::write(&m, text).unwrap();
    let out = fpclass(&[
        "train",
        "--data",
        s(&data),
        "--iters",
        "1",
        "--out",
        s(&tmp.path().join("m")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.csv:5"));
}

#[test]
fn robustness_knn_reports_rejection_and_settings() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 30, 3, "default", 8);
    let feats = tmp.path().join("f.csv");
    let out = ok(&[
        "robustness",
        "--data",
        s(&data),
        "--classifier",
        "knn",
        "--seed",
        "4",
        "--features-csv",
        s(&feats),
    ]);
    for key in [
        "rejection_rate",
        "seed",
        "quality",
        "classifier",
        "relabeled",
        "robustness_accuracy",
    ] {
        value(&out, key);
    }
    assert_eq!(value(&out, "quality"), "default");
    assert_eq!(value(&out, "seed"), "4");
    let f = std::fs::read_to_string(&feats).unwrap();
    assert!(f.starts_with("finger_id,impression_id,label,rejected,f0,"));
    assert_eq!(f.lines().count(), 1 + 90);
}

#[test]
fn robustness_cnn_keeps_labels_when_templates_are_learned() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 16, 2, "hq", 2);
    let out = ok(&[
        "robustness",
        "--data",
        s(&data),
        "--scale",
        "0.25",
        "--iters",
        "150",
        "--batch",
        "16",
        "--seed",
        "2",
    ]);
    assert_eq!(value(&out, "relabeled"), "0 fingers changed");
    assert_eq!(value(&out, "topology"), "proposed");
}

#[test]
fn single_impression_robustness_is_protocol_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    generate(&data, 4, 1, "hq", 2);
    let out = fpclass(&[
        "robustness",
        "--data",
        s(&data),
        "--classifier",
        "knn",
        "--seed",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_cap_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fpclass"))
        .args([
            "generate",
            "--fingers",
            "2",
            "--size",
            "desk",
            "--seed",
            "1",
            "--out",
            s(tmp.path()),
        ])
        .env("FPCLASS_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_fpclass"))
        .args(["generate", "--fingers", "2", "--out", s(tmp.path())])
        .env("FPCLASS_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
