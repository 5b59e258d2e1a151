//! File-level wrappers around the pipeline stages.
//!
//! Every command loads and validates all inputs before writing anything, and
//! every output goes through a temp file and rename.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mmdial_core::builder::{build_dataset, compute_stats, BuildParams};
use mmdial_core::calibrate::{
    calibrate, correlations, filter_counts, filter_instances, read_annotations, sample_all,
    ThresholdReport, Thresholds,
};
use mmdial_core::corpus::{load_dialogues, load_embeddings, load_images};
use mmdial_core::evalharness::evaluate;
use mmdial_core::jsonl::{read_json, read_jsonl, write_json, write_jsonl};
use mmdial_core::preprocess::StopList;
use mmdial_core::simsearch::AuditRecord;
use mmdial_core::{Dialogue, EmbeddingStore, ImageRecord, Instance};
use serde_json::{json, Value};

use crate::cli::{BuildArgs, CalibrateArgs, EvalArgs, FilterArgs, SampleArgs, StatsArgs};

pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const CANDIDATES_FILE: &str = "candidates.jsonl";

/// What a command reports: a JSON summary and its human rendering.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Value,
    pub text: String,
}

pub fn read_instances(path: &Path) -> Result<Vec<Instance>> {
    Ok(read_jsonl::<Instance>(path)?
        .into_iter()
        .map(|(_, i)| i)
        .collect())
}

fn load_all_dialogues(specs: &[(String, PathBuf)]) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for (source, path) in specs {
        out.extend(load_dialogues(path, source, None)?);
    }
    Ok(out)
}

fn load_all_images(specs: &[(String, PathBuf)]) -> Result<Vec<ImageRecord>> {
    let mut out = Vec::new();
    for (source, path) in specs {
        out.extend(load_images(path, source)?);
    }
    Ok(out)
}

fn merge_store(slot: &mut Option<EmbeddingStore>, path: &Path) -> Result<()> {
    let store = load_embeddings(path, slot.as_ref().map(EmbeddingStore::dimension))?;
    match slot {
        Some(s) => s.extend_from(&store)?,
        None => *slot = Some(store),
    }
    Ok(())
}

fn count_lines(title: &str, counts: &BTreeMap<String, usize>) -> String {
    let mut s = format!("{title}\n");
    for (k, v) in counts {
        let _ = writeln!(s, "  {k:<20} {v}");
    }
    s
}

pub fn build(args: &BuildArgs) -> Result<Outcome> {
    let dialogues = load_all_dialogues(&args.dialogues)?;
    if dialogues.is_empty() {
        bail!("no dialogues loaded");
    }
    let images = load_all_images(&args.images)?;
    if images.is_empty() {
        bail!("no images loaded");
    }
    let (mut image_store, mut sentence_store) = (None, None);
    for (role, path) in &args.embeddings {
        match role.as_str() {
            "image" => merge_store(&mut image_store, path)?,
            "sentence" => merge_store(&mut sentence_store, path)?,
            other => bail!("unknown embedding role `{other}` (expected image or sentence)"),
        }
    }
    let image_store = image_store.context("missing --embeddings image=<path>")?;
    let sentence_store = sentence_store.context("missing --embeddings sentence=<path>")?;
    let stoplist = match &args.stopwords {
        Some(p) => StopList::from_file(p)?,
        None => StopList::default(),
    };

    let params = BuildParams {
        topk: args.topk as usize,
        floor: args.floor,
    };
    let built = build_dataset(
        &dialogues,
        &images,
        &image_store,
        &sentence_store,
        &stoplist,
        params,
    )?;

    let audit: Vec<AuditRecord> = built
        .results
        .iter()
        .map(|(src, r)| AuditRecord::from_result(r, Some(src)))
        .collect();
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_jsonl(&args.out.join(CANDIDATES_FILE), &built.candidates)?;
    write_jsonl(&args.out.join(AUDIT_FILE), &audit)?;
    write_jsonl(&args.out.join(INSTANCES_FILE), &built.instances)?;

    let mut per_split = BTreeMap::new();
    let mut per_combination = BTreeMap::new();
    for i in &built.instances {
        *per_split.entry(i.split.to_string()).or_insert(0usize) += 1;
        *per_combination.entry(i.combination().to_string()).or_insert(0usize) += 1;
    }
    let text = format!(
        "{} dialogues, {} candidates, {} instances\n{}{}",
        dialogues.len(),
        built.candidates.len(),
        built.instances.len(),
        count_lines("per split:", &per_split),
        count_lines("per combination:", &per_combination),
    );
    Ok(Outcome {
        summary: json!({
            "dialogues": dialogues.len(),
            "candidates": built.candidates.len(),
            "instances": built.instances.len(),
            "per_split": per_split,
            "per_combination": per_combination,
            "topk": params.topk,
            "floor": params.floor,
        }),
        text,
    })
}

pub fn sample(args: &SampleArgs) -> Result<Outcome> {
    let instances = read_instances(&args.instances)?;
    let samples = sample_all(&instances, args.seed)?;
    if samples.is_empty() {
        bail!("no combination has enough instances to sample");
    }
    let by_id: BTreeMap<&str, &Instance> = instances
        .iter()
        .map(|i| (i.instance_id.as_str(), i))
        .collect();
    let picked: Vec<&Instance> = samples
        .iter()
        .flat_map(|s| s.sampled_ids())
        .map(|id| by_id[id])
        .collect();
    let counts: BTreeMap<String, usize> = samples
        .iter()
        .map(|s| (s.combination.clone(), s.sampled_ids().count()))
        .collect();

    if let Some(path) = &args.segments {
        write_json(path, &samples)?;
    }
    write_jsonl(&args.out, &picked)?;
    Ok(Outcome {
        summary: json!({ "sampled": picked.len(), "per_combination": counts, "seed": args.seed }),
        text: format!(
            "{} instances sampled (seed {})\n{}",
            picked.len(),
            args.seed,
            count_lines("per combination:", &counts)
        ),
    })
}

pub fn calibrate_cmd(args: &CalibrateArgs) -> Result<Outcome> {
    let instances = read_instances(&args.instances)?;
    let annotations = read_annotations(&args.annotations)
        .with_context(|| format!("reading annotations {}", args.annotations.display()))?;
    let report = calibrate(&instances, &annotations, args.seed)?;
    let corr = match &args.correlations {
        Some(_) => Some(correlations(&instances, &annotations)?),
        None => None,
    };

    if let (Some(path), Some(c)) = (&args.correlations, &corr) {
        write_json(path, c)?;
    }
    write_json(&args.out, &report)?;

    let mut text = format!("{} annotations over {} instances\n", annotations.len(), instances.len());
    let mut rows = BTreeMap::new();
    for (combo, t) in &report.combinations {
        let chosen = t
            .chosen
            .map_or_else(|| "uncalibrated".to_owned(), |v| format!("{v:.4}"));
        let _ = writeln!(text, "  {combo:<20} {chosen:<12} kept {}/{}", t.kept, t.total);
        rows.insert(
            combo.clone(),
            json!({ "chosen": t.chosen, "kept": t.kept, "total": t.total }),
        );
    }
    Ok(Outcome {
        summary: json!({ "annotations": annotations.len(), "combinations": rows, "seed": args.seed }),
        text,
    })
}

/// Loads `--thresholds` (a report path or `reference`) plus `--default-threshold`.
pub fn load_thresholds(spec: Option<&str>, default: Option<f64>) -> Result<Thresholds> {
    let mut t = match spec {
        Some("reference") => Thresholds::reference(),
        Some(path) => {
            let report: ThresholdReport = read_json(Path::new(path))?;
            Thresholds::from_report(&report)
        }
        None => Thresholds::default(),
    };
    if let Some(d) = default {
        if !d.is_finite() {
            bail!("default threshold must be finite");
        }
        t.default = Some(d);
    }
    if t.by_combination.is_empty() && t.default.is_none() {
        bail!("no thresholds given (use --thresholds and/or --default-threshold)");
    }
    Ok(t)
}

pub fn filter(args: &FilterArgs) -> Result<Outcome> {
    let thresholds = load_thresholds(args.thresholds.as_deref(), args.default_threshold)?;
    let instances = read_instances(&args.instances)?;
    let kept = filter_instances(&instances, &thresholds)?;
    write_jsonl(&args.out, &kept)?;

    let counts = filter_counts(&instances, &kept);
    let mut text = format!("kept {}/{}\n", kept.len(), instances.len());
    let mut rows = BTreeMap::new();
    for (combo, (k, n)) in &counts {
        let t = thresholds.get(combo)?;
        let _ = writeln!(text, "  {combo:<20} > {t:<8} kept {k}/{n}");
        rows.insert(combo.clone(), json!({ "threshold": t, "kept": k, "total": n }));
    }
    Ok(Outcome {
        summary: json!({ "kept": kept.len(), "total": instances.len(), "per_combination": rows }),
        text,
    })
}

pub fn stats(args: &StatsArgs) -> Result<Outcome> {
    let instances = read_instances(&args.instances)?;
    let dialogues = load_all_dialogues(&args.dialogues)?;
    let stats = compute_stats(&instances, &dialogues);
    if let Some(path) = &args.out {
        write_json(path, &stats)?;
    }
    let mut text = String::new();
    for (split, s) in &stats.splits {
        let _ = writeln!(
            text,
            "{:<6} instances {:<7} dialogues {:<6} images {:<6} targets {:<6} turns/dialogue {:.2} chars/turn {:.2}",
            split.as_str(),
            s.instances,
            s.unique_dialogues,
            s.unique_images,
            s.unique_targets,
            s.avg_dialogue_turns,
            s.avg_sentence_chars
        );
    }
    Ok(Outcome {
        summary: serde_json::to_value(&stats)?,
        text,
    })
}

pub fn eval(args: &EvalArgs) -> Result<Outcome> {
    let instances = read_instances(&args.instances)?;
    let images = load_all_images(&args.images)?;
    let (report, outcomes) = evaluate(
        &instances,
        args.split,
        &images,
        args.task,
        args.seed,
        args.candidates,
    )?;
    if let Some(path) = &args.dump {
        write_jsonl(path, &outcomes)?;
    }
    write_json(&args.out, &report)?;
    Ok(Outcome {
        summary: serde_json::to_value(&report)?,
        text: format!(
            "{} task, {} split, n={} ({} candidates)\n  R@1 {:.4}  R@5 {:.4}  mean rank {:.4}  MRR {:.4}\n",
            report.task,
            report.split,
            report.n,
            report.candidates,
            report.r_at_1,
            report.r_at_5,
            report.mean_rank,
            report.mrr
        ),
    })
}
