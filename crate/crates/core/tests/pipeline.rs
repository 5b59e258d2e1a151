//! Build, calibrate and filter the bundled fixture and compare with the
//! values `fixtures/oracle.py` computed independently.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use mmdial_core::builder::{build_dataset, compute_stats, BuildOutput, BuildParams};
use mmdial_core::calibrate::{
    calibrate, filter_instances, read_annotations, sample_all, SegmentSample, ThresholdReport,
    Thresholds,
};
use mmdial_core::corpus::{load_dialogues, load_embeddings, load_images};
use mmdial_core::jsonl::{read_json, write_json};
use mmdial_core::preprocess::{is_question, StopList};
use mmdial_core::{Dialogue, ImageRecord};
use serde_json::Value;

// Frozen from oracle_counts.json.
const INSTANCES: usize = 8049;
const PER_SPLIT: [(&str, usize); 3] = [("train", 3982), ("valid", 599), ("test", 3468)];
const REFERENCE_KEPT: usize = 5419;
const CALIBRATED_KEPT: usize = 5079;
const TOPK: usize = 5;
const FLOOR: f64 = 0.2;
const SEED: u64 = 17;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn oracle() -> Value {
    read_json(&fixtures().join("oracle_counts.json")).unwrap()
}

struct Fixture {
    dialogues: Vec<Dialogue>,
    images: Vec<ImageRecord>,
    built: BuildOutput,
}

fn build() -> Fixture {
    let f = fixtures();
    let dialogues: Vec<Dialogue> = ["daily", "persona", "empathetic"]
        .iter()
        .flat_map(|s| load_dialogues(&f.join(format!("dialogues_{s}.jsonl")), s, None).unwrap())
        .collect();
    let images: Vec<ImageRecord> = ["coco", "flickr"]
        .iter()
        .flat_map(|s| load_images(&f.join(format!("images_{s}.jsonl")), s).unwrap())
        .collect();
    let image_store = load_embeddings(&f.join("image_embeddings.bin"), None).unwrap();
    let sentence_store = load_embeddings(&f.join("sentence_embeddings.jsonl"), None).unwrap();
    let built = build_dataset(
        &dialogues,
        &images,
        &image_store,
        &sentence_store,
        &StopList::default(),
        BuildParams {
            topk: TOPK,
            floor: FLOOR,
        },
    )
    .unwrap();
    Fixture {
        dialogues,
        images,
        built,
    }
}

#[test]
fn instance_counts_match_oracle() {
    let fx = build();
    let o = oracle();
    assert_eq!(o["build"]["instances"], INSTANCES);
    assert_eq!(fx.built.instances.len(), INSTANCES);
    let mut per_split: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_combo: BTreeMap<String, usize> = BTreeMap::new();
    for i in &fx.built.instances {
        *per_split.entry(i.split.to_string()).or_default() += 1;
        *per_combo.entry(i.combination().to_string()).or_default() += 1;
    }
    for (s, n) in PER_SPLIT {
        assert_eq!(per_split[s], n);
        assert_eq!(o["build"]["per_split"][s], n);
    }
    for (c, n) in &per_combo {
        assert_eq!(o["build"]["per_combination"][c], *n, "{c}");
    }
}

/// Multiplicity per candidate equals min(k, images of the same source and
/// split at or above the floor), counted here with a plain scan.
#[test]
fn multiplicity_equals_independent_match_count() {
    let fx = build();
    let f = fixtures();
    let raw_images = load_embeddings(&f.join("image_embeddings.bin"), None).unwrap();
    let raw_sentences = load_embeddings(&f.join("sentence_embeddings.jsonl"), None).unwrap();
    let split_of: HashMap<&str, _> = fx
        .dialogues
        .iter()
        .map(|d| (d.dialogue_id.as_str(), d.split))
        .collect();

    let mut observed: HashMap<(String, usize, String), usize> = HashMap::new();
    for i in &fx.built.instances {
        *observed
            .entry((i.dialogue_id.clone(), i.turn_index(), i.image_source.clone()))
            .or_default() += 1;
    }

    let mut expected_total = 0;
    for c in fx.built.candidates.iter().take(120) {
        let q = raw_sentences.get(&c.key()).unwrap();
        for source in ["coco", "flickr"] {
            let qualifying = fx
                .images
                .iter()
                .filter(|img| img.source == source && img.split == split_of[c.dialogue_id.as_str()])
                .filter(|img| {
                    let v = raw_images.get(&img.image_id).unwrap();
                    let dot: f64 = q.iter().zip(v).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                    let nq = q.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
                    let nv = v.iter().map(|a| f64::from(*a).powi(2)).sum::<f64>().sqrt();
                    dot / (nq * nv) >= FLOOR
                })
                .count();
            let want = qualifying.min(TOPK);
            expected_total += want;
            let got = observed
                .get(&(c.dialogue_id.clone(), c.turn_index, source.to_owned()))
                .copied()
                .unwrap_or(0);
            assert_eq!(got, want, "{} via {source}", c.key());
        }
    }
    assert!(expected_total > 0);
}

#[test]
fn structural_invariants_hold_on_fixture() {
    let fx = build();
    for i in &fx.built.instances {
        assert!(!is_question(&i.target), "{}", i.instance_id);
        assert!(!i.context.is_empty(), "{}", i.instance_id);
        assert!(!i.image_id.is_empty());
        assert!(f64::from(i.similarity) >= FLOOR - 1e-6);
    }
    let stats = compute_stats(&fx.built.instances, &fx.dialogues);
    let total: usize = stats.splits.values().map(|s| s.instances).sum();
    assert_eq!(total, INSTANCES);
}

#[test]
fn reference_filter_matches_oracle() {
    let fx = build();
    let kept = filter_instances(&fx.built.instances, &Thresholds::reference()).unwrap();
    assert_eq!(oracle()["reference_filter"]["kept"], REFERENCE_KEPT);
    assert_eq!(kept.len(), REFERENCE_KEPT);
}

#[test]
fn seed_17_sample_is_the_committed_one() {
    let fx = build();
    let committed: Vec<SegmentSample> = read_json(&fixtures().join("e2e_segments.json")).unwrap();
    assert_eq!(sample_all(&fx.built.instances, SEED).unwrap(), committed);
}

#[test]
fn calibration_matches_oracle() {
    let fx = build();
    let annotations = read_annotations(&fixtures().join("annotations_synthetic.csv")).unwrap();
    let o = oracle();
    assert_eq!(o["annotations"]["rows"], annotations.len());
    let report = calibrate(&fx.built.instances, &annotations, SEED).unwrap();
    let want = &o["calibrated"]["combinations"];
    for (combo, got) in &report.combinations {
        let w = &want[combo.as_str()];
        for (name, value) in [("q1", got.q1), ("q2", got.q2), ("q3", got.q3), ("chosen", got.chosen)] {
            let expected = w[name].as_f64().unwrap();
            assert!((value.unwrap() - expected).abs() <= 1e-9, "{combo} {name}");
        }
        assert_eq!(w["kept"], got.kept, "{combo}");
        assert_eq!(w["total"], got.total, "{combo}");
    }
    // the report must survive the file round trip bit for bit
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("thresholds.json");
    write_json(&path, &report).unwrap();
    let reread: ThresholdReport = read_json(&path).unwrap();
    assert_eq!(reread, report);

    let kept = filter_instances(&fx.built.instances, &Thresholds::from_report(&reread)).unwrap();
    assert_eq!(o["calibrated"]["kept"], CALIBRATED_KEPT);
    assert_eq!(kept.len(), CALIBRATED_KEPT);
}
