//! Loader and preprocessing checks against the bundled fixture and the counts
//! produced by `fixtures/oracle.py`.

use std::path::{Path, PathBuf};

use mmdial_core::corpus::{load_dialogues, load_embeddings, load_images};
use mmdial_core::preprocess::{extract_candidates, is_question, StopList};
use mmdial_core::{Dialogue, EmbeddingStore, Split, Turn};
use serde_json::Value;

const DIALOGUE_SOURCES: [&str; 3] = ["daily", "persona", "empathetic"];
// Frozen from oracle_counts.json.
const DIALOGUES_PER_SOURCE: usize = 50;
const TURNS: [(&str, usize); 3] = [("daily", 447), ("persona", 455), ("empathetic", 443)];
const IMAGES: [(&str, usize); 2] = [("coco", 200), ("flickr", 120)];
const CANDIDATES: usize = 871;
const QUESTION_TURNS: usize = 287;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn oracle() -> Value {
    let text = std::fs::read_to_string(fixtures().join("oracle_counts.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn all_dialogues() -> Vec<Dialogue> {
    DIALOGUE_SOURCES
        .iter()
        .flat_map(|s| load_dialogues(&fixtures().join(format!("dialogues_{s}.jsonl")), s, None).unwrap())
        .collect()
}

/// Minimal independent reader for the packed format.
fn read_packed_raw(path: &Path) -> (usize, Vec<(String, Vec<f32>)>) {
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(&bytes[..4], b"EMB1");
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let mut pos = 8;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let n = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        let id = String::from_utf8(bytes[pos..pos + n].to_vec()).unwrap();
        pos += n;
        let v = bytes[pos..pos + 4 * dim]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 4 * dim;
        out.push((id, v));
    }
    (dim, out)
}

#[test]
fn oracle_file_agrees_with_frozen_counts() {
    let o = oracle();
    for (s, n) in TURNS {
        assert_eq!(o["turns"][s], n);
        assert_eq!(o["dialogues"][s], DIALOGUES_PER_SOURCE);
    }
    for (s, n) in IMAGES {
        assert_eq!(o["images"][s], n);
    }
    assert_eq!(o["candidates"], CANDIDATES);
    assert_eq!(o["question_turns"], QUESTION_TURNS);
}

#[test]
fn dialogue_and_turn_counts_match_oracle() {
    for (source, turns) in TURNS {
        let d = load_dialogues(&fixtures().join(format!("dialogues_{source}.jsonl")), source, None)
            .unwrap();
        assert_eq!(d.len(), DIALOGUES_PER_SOURCE, "{source}");
        assert_eq!(d.iter().map(|x| x.turns.len()).sum::<usize>(), turns, "{source}");
    }
    let test_only = load_dialogues(&fixtures().join("dialogues_daily.jsonl"), "daily", Some(Split::Test))
        .unwrap();
    assert_eq!(test_only.len(), 20);
}

#[test]
fn caption_counts_match_oracle() {
    for (source, n) in IMAGES {
        let imgs = load_images(&fixtures().join(format!("images_{source}.jsonl")), source).unwrap();
        assert_eq!(imgs.len(), n, "{source}");
        assert!(imgs.iter().all(|i| !i.caption.is_empty()));
    }
}

#[test]
fn candidates_and_questions_match_oracle() {
    let stop = StopList::default();
    let dialogues = all_dialogues();
    let candidates: usize = dialogues.iter().map(|d| extract_candidates(d, &stop).len()).sum();
    assert_eq!(candidates, CANDIDATES);
    let questions = dialogues
        .iter()
        .flat_map(|d| &d.turns)
        .filter(|t| is_question(&t.text))
        .count();
    assert_eq!(questions, QUESTION_TURNS);
}

#[test]
fn loaded_norms_are_unit() {
    let store = load_embeddings(&fixtures().join("embeddings_1000x64.bin"), Some(64)).unwrap();
    assert_eq!(store.len(), 1000);
    assert!(store.is_normalized());
    for (id, v) in store.iter() {
        let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-6, "{id}: {norm}");
    }
}

#[test]
fn loaded_vectors_are_the_raw_vectors_rescaled() {
    let path = fixtures().join("embeddings_1000x64.bin");
    let (dim, raw) = read_packed_raw(&path);
    let store = load_embeddings(&path, None).unwrap();
    assert_eq!(store.dimension(), dim);
    assert_eq!(store.ids(), raw.iter().map(|(id, _)| id.clone()).collect::<Vec<_>>());
    for (id, v) in &raw {
        let n = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
        for (a, &b) in store.get(id).unwrap().iter().zip(v) {
            assert!((f64::from(*a) - f64::from(b) / n).abs() < 1e-7);
        }
    }
}

#[test]
fn packed_writer_reproduces_python_bytes() {
    for name in ["image_embeddings.bin", "embeddings_1000x64.bin"] {
        let path = fixtures().join(name);
        let (dim, raw) = read_packed_raw(&path);
        let store = EmbeddingStore::from_entries(dim, raw, false).unwrap();
        assert_eq!(store.to_packed_bytes().unwrap(), std::fs::read(&path).unwrap(), "{name}");
    }
}

#[test]
fn text_and_packed_forms_load_the_same_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let packed = load_embeddings(&fixtures().join("image_embeddings.bin"), None).unwrap();
    let text_path = dir.path().join("images.jsonl");
    packed.write_jsonl(&text_path).unwrap();
    let again = load_embeddings(&text_path, Some(packed.dimension())).unwrap();
    assert_eq!(again.ids(), packed.ids());
    assert_eq!(again.as_flat(), packed.as_flat());
}

/// Every dialogue has 8 turns; turns 2 and 5 are questions, so exactly a
/// quarter of all turns are excluded as questions.
#[test]
fn quarter_question_corpus_excludes_exactly_a_quarter() {
    let dialogues: Vec<Dialogue> = (0..40)
        .map(|d| Dialogue {
            dialogue_id: format!("q{d}"),
            source: "synthetic".into(),
            split: Split::Train,
            turns: (0..8)
                .map(|t| Turn {
                    speaker_index: t % 2,
                    text: if t == 2 || t == 5 {
                        format!("Did you see the red kite number {t}?")
                    } else {
                        format!("The red kite flew over hill {t}.")
                    },
                })
                .collect(),
        })
        .collect();
    let stop = StopList::default();
    let total: usize = dialogues.iter().map(|d| d.turns.len()).sum();
    let questions = dialogues
        .iter()
        .flat_map(|d| &d.turns)
        .filter(|t| is_question(&t.text))
        .count();
    assert_eq!(questions * 4, total);
    let candidates: usize = dialogues.iter().map(|d| extract_candidates(d, &stop).len()).sum();
    // first turns and questions are the only exclusions
    assert_eq!(candidates, total - questions - dialogues.len());
}
