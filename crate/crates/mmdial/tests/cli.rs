mod common;

use common::{fixture, fixture_build_args, mmdial, planted_truth, write_instances};
use mmdial_core::corpus::write_images;
use mmdial_core::jsonl::read_json;
use serde_json::Value;

fn s(p: &std::path::Path) -> String {
    p.display().to_string()
}

#[test]
fn empty_dialogue_file_is_an_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("out");
    let mut args = fixture_build_args(&out, 5, 0.2);
    // swap the three corpora for the empty file
    let pos = args.iter().position(|a| a == "--dialogues").unwrap();
    args.drain(pos..pos + 6);
    args.insert(pos, format!("daily={}", s(&empty)));
    args.insert(pos, "--dialogues".into());
    let err = mmdial(&args).unwrap_err();
    assert!(err.contains("no dialogues"), "{err}");
    assert!(!out.exists());
}

#[test]
fn build_argument_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut args = fixture_build_args(&out, 5, 0.2);
    let pos = args.iter().position(|a| a.starts_with("sentence=")).unwrap();
    args[pos] = args[pos].replacen("sentence=", "audio=", 1);
    assert!(mmdial(&args).unwrap_err().contains("unknown embedding role"));

    let args = fixture_build_args(&out, 0, 0.2);
    assert!(mmdial(&args).is_err());

    let bad = ["build", "--dialogues", "nopath", "--images", "x=y", "--embeddings", "image=z", "--out", "o"];
    assert!(mmdial(&bad).unwrap_err().contains("<name>=<path>"));
    assert!(!out.exists());
}

#[test]
fn build_json_summary_reports_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let mut args = fixture_build_args(&out, 5, 0.2);
    args.push("--json".into());
    let summary: Value = serde_json::from_str(&mmdial(&args).unwrap()).unwrap();
    let oracle: Value = read_json(&common::fixtures().join("oracle_counts.json")).unwrap();
    assert_eq!(summary["instances"], oracle["build"]["instances"]);
    assert_eq!(summary["candidates"], oracle["candidates"]);
    assert_eq!(summary["per_combination"], oracle["build"]["per_combination"]);
    for f in ["instances.jsonl", "audit.jsonl", "candidates.jsonl"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn stats_on_empty_instances_is_zeroed() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("i.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = dir.path().join("stats.json");
    mmdial(&["stats", "--instances", &s(&empty), "--out", &s(&out)]).unwrap();
    let v: Value = read_json(&out).unwrap();
    for split in ["train", "valid", "test"] {
        let row = v["splits"][split].as_object().unwrap();
        assert!(row.values().all(|x| x.as_f64() == Some(0.0)), "{split}: {row:?}");
    }
}

#[test]
fn filter_at_minus_one_keeps_everything_and_reference_prints_counts() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b");
    mmdial(&fixture_build_args(&b, 5, 0.2)).unwrap();
    let inst = s(&b.join("instances.jsonl"));
    let all = dir.path().join("all.jsonl");
    let text = mmdial(&["filter", "--instances", &inst, "--default-threshold", "-1", "--out", &s(&all)]).unwrap();
    assert!(text.starts_with("kept 8049/8049"), "{text}");
    assert_eq!(std::fs::read(&all).unwrap(), std::fs::read(b.join("instances.jsonl")).unwrap());

    let kept = dir.path().join("kept.jsonl");
    let text = mmdial(&["filter", "--instances", &inst, "--thresholds", "reference", "--out", &s(&kept)]).unwrap();
    let oracle: Value = read_json(&common::fixtures().join("oracle_counts.json")).unwrap();
    for (combo, k) in oracle["reference_filter"]["per_combination"].as_object().unwrap() {
        let line = text.lines().find(|l| l.trim_start().starts_with(combo.as_str())).unwrap();
        assert!(line.contains(&format!("kept {k}/")), "{line}");
    }

    assert!(mmdial(&["filter", "--instances", &inst, "--out", &s(&kept)])
        .unwrap_err()
        .contains("no thresholds"));
}

#[test]
fn calibrate_needs_annotations_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("i.jsonl");
    std::fs::write(&inst, "").unwrap();
    let out = dir.path().join("t.json");
    let missing = dir.path().join("nope.csv");
    let err = mmdial(&[
        "calibrate", "--instances", &s(&inst), "--annotations", &s(&missing), "--seed", "1", "--out", &s(&out),
    ])
    .unwrap_err();
    assert!(err.contains("nope.csv"), "{err}");
    assert!(!out.exists());

    let err = mmdial(&["calibrate", "--instances", &s(&inst), "--annotations", &s(&missing), "--out", &s(&out)])
        .unwrap_err();
    assert!(err.contains("--seed"), "{err}");
}

#[test]
fn eval_planted_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let (insts, imgs) = planted_truth(120);
    let inst = dir.path().join("i.jsonl");
    let img = dir.path().join("coco.jsonl");
    write_instances(&inst, &insts);
    write_images(&img, &imgs).unwrap();
    let out = dir.path().join("eval.json");
    let dump = dir.path().join("dump.jsonl");
    mmdial(&[
        "eval", "--instances", &s(&inst), "--images", &format!("coco={}", s(&img)), "--task", "current",
        "--seed", "3", "--out", &s(&out), "--dump", &s(&dump),
    ])
    .unwrap();
    let report: Value = read_json(&out).unwrap();
    assert_eq!(report["r_at_1"], 1.0);
    assert_eq!(report["n"], 120);
    assert_eq!(report["candidates"], 100);
    assert_eq!(std::fs::read_to_string(&dump).unwrap().lines().count(), 120);
}

#[test]
fn sample_writes_300_per_combination() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b");
    mmdial(&fixture_build_args(&b, 5, 0.2)).unwrap();
    let out = dir.path().join("sample.jsonl");
    let seg = dir.path().join("segments.json");
    let text = mmdial(&[
        "--json", "sample", "--instances", &s(&b.join("instances.jsonl")), "--seed", "17", "--out", &s(&out),
        "--segments", &s(&seg),
    ])
    .unwrap();
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["sampled"], 1800);
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 1800);
    assert_eq!(std::fs::read(&seg).unwrap(), std::fs::read(fixture("e2e_segments.json")).unwrap());
}
