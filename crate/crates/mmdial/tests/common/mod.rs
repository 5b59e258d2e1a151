//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use mmdial_core::jsonl::write_jsonl;
use mmdial_core::{ImageRecord, Instance, Split, Turn};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture(name: &str) -> String {
    fixtures().join(name).display().to_string()
}

/// Runs the binary; `Ok(stdout)` on success, `Err(stderr)` otherwise.
pub fn mmdial<S: AsRef<str>>(args: &[S]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mmdial"))
        .args(args.iter().map(AsRef::as_ref))
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

/// `build` arguments for the bundled fixture.
pub fn fixture_build_args(out: &Path, topk: usize, floor: f64) -> Vec<String> {
    let mut args = vec!["build".to_owned()];
    for s in ["daily", "persona", "empathetic"] {
        args.push("--dialogues".into());
        args.push(format!("{s}={}", fixture(&format!("dialogues_{s}.jsonl"))));
    }
    for s in ["coco", "flickr"] {
        args.push("--images".into());
        args.push(format!("{s}={}", fixture(&format!("images_{s}.jsonl"))));
    }
    args.extend([
        "--embeddings".into(),
        format!("image={}", fixture("image_embeddings.bin")),
        "--embeddings".into(),
        format!("sentence={}", fixture("sentence_embeddings.jsonl")),
        "--topk".into(),
        topk.to_string(),
        format!("--floor={floor}"),
        "--out".into(),
        out.display().to_string(),
    ]);
    args
}

pub fn instance(
    k: usize,
    combo: (&str, &str),
    split: Split,
    context: &[&str],
    target: &str,
    next: Option<&str>,
    similarity: f32,
) -> Instance {
    let dialogue_id = format!("{}-{k:05}", combo.0);
    let image_id = format!("{}_{k:05}", combo.1);
    Instance {
        instance_id: format!("{dialogue_id}#{}#{image_id}", context.len()),
        dialogue_id,
        dialogue_source: combo.0.into(),
        image_source: combo.1.into(),
        split,
        context: context
            .iter()
            .enumerate()
            .map(|(i, t)| Turn {
                speaker_index: (i % 2) as u32,
                text: (*t).into(),
            })
            .collect(),
        target: target.into(),
        image_id,
        similarity,
        next: next.map(str::to_owned),
    }
}

pub fn image(k: usize, source: &str, split: Split, caption: &str) -> ImageRecord {
    ImageRecord {
        image_id: format!("{source}_{k:05}"),
        source: source.into(),
        split,
        caption: caption.into(),
    }
}

/// Instances whose ground truth repeats its image caption and context.
pub fn planted_truth(n: usize) -> (Vec<Instance>, Vec<ImageRecord>) {
    let insts = (0..n)
        .map(|k| {
            let ctx = format!("context words u{k} v{k}");
            let target = format!("caption t{k} z{k} {ctx}");
            instance(k, ("daily", "coco"), Split::Test, &[ctx.as_str()], &target, None, 0.9)
        })
        .collect();
    let imgs = (0..n)
        .map(|k| image(k, "coco", Split::Test, &format!("caption t{k} z{k}")))
        .collect();
    (insts, imgs)
}

pub fn write_instances(path: &Path, instances: &[Instance]) {
    write_jsonl(path, instances).unwrap();
}
