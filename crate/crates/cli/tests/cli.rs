use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SYNTH: &str = r#"{"train_counts": [6, 4, 3], "test_per_class": 2, "image_side": 16, "cell_side": 4}"#;
const TRAIN: &str = r#"{
    "image_side": 16, "d_z": 4, "epochs": 2, "steps_per_epoch": 1, "batch_size": 4,
    "true_unit_count": 4,
    "network": {"generator_hidden": [8], "critic_hidden": [8]}
}"#;
const SURROGATE: &str = r#"{"hidden": [8, 4], "epochs": 2}"#;

fn repgan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repgan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Value {
    let out = repgan(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "one summary line expected: {stdout}");
    serde_json::from_str(stdout.trim()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Relative path to bytes for every file under `dir` with one of `exts`.
fn files(dir: &Path, exts: &[&str]) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().and_then(|x| x.to_str()).is_some_and(|x| exts.contains(&x)) {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn unknown_flag_exits_2_and_names_it() {
    let out = repgan(&["synth", "--out", "x", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus-flag"));
}

#[test]
fn help_exits_0() {
    let out = repgan(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("bench"));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write(dir.path(), "typo.json", r#"{"imge_side": 64}"#);
    let out = repgan(&["synth", "--config", s(&typo), "--out", s(&dir.path().join("a"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("imge_side"));

    let out = repgan(&["synth", "--profile", "nosuch", "--out", s(&dir.path().join("b"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("profile"));

    let out = repgan(&["bench", "--variant", "no-such", "--out", s(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("variants"));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = repgan(&[
        "analyze",
        "--input",
        s(&dir.path().join("absent.pgm")),
        "--out",
        s(&dir.path().join("a")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("a/run.log").exists());
}

#[test]
fn analyze_recovers_the_unit_count_of_a_clean_tiling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "synth.json",
        r#"{"train_counts": [2, 2, 2], "test_per_class": 1}"#,
    );
    let data = dir.path().join("data");
    let summary = ok(&["synth", "--config", s(&cfg), "--out", s(&data)]);
    assert_eq!(summary["unit_count"], 8);
    let manifest: Value = serde_json::from_str(
        fs::read_to_string(data.join("train.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    let image = data.join(manifest["path"].as_str().unwrap());
    let out = dir.path().join("analysis");
    let summary = ok(&["analyze", "--input", s(&image), "--out", s(&out)]);
    assert_eq!((summary["p_h"].as_u64(), summary["p_w"].as_u64()), (Some(8), Some(8)));
    assert_eq!(summary["valid"], true);
    for name in ["report.json", "spectrum.pgm", "cell.pgm", "reconstruction.pgm", "resolved-config.json", "run.log"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}

#[test]
fn pipeline_end_to_end_and_rerun_from_resolved_config_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth_cfg = write(d, "synth.json", SYNTH);
    let train_cfg = write(d, "train.json", TRAIN);
    let eval_cfg = write(d, "eval.json", &format!(r#"{{"surrogate": {SURROGATE}, "splits": 2}}"#));
    let aug_cfg = write(
        d,
        "augment.json",
        &format!(
            r#"{{"augment": {{"threshold_mode": "absolute", "alpha_conf": 1e-9, "min_pool": 8}}, "surrogate": {SURROGATE}}}"#
        ),
    );

    for run in ["1", "2"] {
        let r = d.join(run);
        let resolved = |sub: &str| -> PathBuf {
            if run == "1" {
                PathBuf::new()
            } else {
                d.join("1").join(sub).join("resolved-config.json")
            }
        };
        let pick = |sub: &str, first: &Path| -> String {
            if run == "1" {
                s(first).to_string()
            } else {
                s(&resolved(sub)).to_string()
            }
        };

        let data = r.join("data");
        ok(&["synth", "--config", &pick("data", &synth_cfg), "--out", s(&data)]);
        let train = r.join("train");
        let summary = ok(&["--progress", "train", "--config", &pick("train", &train_cfg), "--data", s(&data), "--out", s(&train)]);
        assert_eq!(summary["command"], "train");
        let gen = r.join("gen");
        let gen_args = if run == "1" {
            vec!["generate".to_string(), "--per-class".into(), "3".into()]
        } else {
            vec!["generate".to_string(), "--config".into(), pick("gen", &synth_cfg)]
        };
        let mut args: Vec<&str> = gen_args.iter().map(String::as_str).collect();
        let ck = train.join("checkpoint.json");
        args.extend(["--checkpoint", s(&ck), "--out", s(&gen)]);
        let summary = ok(&args);
        assert_eq!(summary["samples"], 9);

        let eval_dir = r.join("eval");
        fs::create_dir_all(&eval_dir).unwrap();
        let summary = ok(&[
            "eval", "--config", &pick("eval", &eval_cfg), "--real", s(&data), "--generated", s(&gen),
            "--out", s(&eval_dir.join("ablation.csv")),
        ]);
        assert!(summary["topofid"].as_f64().unwrap().is_finite());

        let aug = r.join("aug");
        let summary = ok(&[
            "augment", "--config", &pick("aug", &aug_cfg), "--generator", s(&ck), "--data", s(&data),
            "--out", s(&aug),
        ]);
        let added: Vec<u64> = summary["per_class"].as_array().unwrap().iter().map(|c| c["added"].as_u64().unwrap()).collect();
        assert_eq!(added, vec![0, 2, 3]);
        for name in ["acceptance-report.json", "comparison.json", "comparison.txt", "surrogate-augmented.json", "train.jsonl", "test.jsonl"] {
            assert!(aug.join(name).exists(), "{name} missing");
        }
    }

    for sub in ["data", "train", "gen", "eval", "aug"] {
        let a = files(&d.join("1").join(sub), &["pgm", "csv", "txt"]);
        let b = files(&d.join("2").join(sub), &["pgm", "csv", "txt"]);
        assert!(!a.is_empty(), "{sub} produced no artifacts");
        assert_eq!(a.len(), b.len(), "{sub}");
        for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
            assert_eq!(pa, pb);
            assert!(ba == bb, "{sub}/{} differs between runs", pa.display());
        }
    }
}

#[test]
fn tiny_bench_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bench.json",
        &format!(
            r#"{{
                "data": {SYNTH},
                "train": {TRAIN},
                "surrogate": {SURROGATE},
                "augment": {{"threshold_mode": "absolute", "alpha_conf": 1e-9, "min_pool": 8}},
                "structure_samples_per_class": 2,
                "is_splits": 2
            }}"#
        ),
    );
    let out = dir.path().join("bench");
    let summary = ok(&[
        "bench", "--config", s(&cfg), "--seeds", "1", "--variant", "full,no-fft", "--save-checkpoints", "--out", s(&out),
    ]);
    assert!(summary["median"]["full"]["topofid"].as_f64().is_some());
    let ablation = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(ablation.lines().count(), 3);
    assert!(ablation.starts_with("variant,TopoFID,IS_mean,IS_std"));
    assert_eq!(fs::read_to_string(out.join("augmentation.csv")).unwrap().lines().count(), 3);
    for name in ["structure.csv", "augmentation-table.txt", "bench-report.json", "runs/full_s0/metrics.csv", "runs/no-fft_s0/checkpoint.json", "runs/surrogate_s0.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}
