//! Text-to-image replacement: top-k matches become image-mixed dialogue
//! instances, one image per instance.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, EmbeddingStore, ImageRecord, Split, Turn};
use crate::error::{Error, Result};
use crate::preprocess::{extract_candidates, CandidateSentence, StopList};
use crate::simsearch::{topk_batch, TopKResult};

/// A (dialogue source, image source) pair, written `dialogue+image`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Combination {
    pub dialogue_source: String,
    pub image_source: String,
}

impl Combination {
    pub fn new(dialogue_source: impl Into<String>, image_source: impl Into<String>) -> Self {
        Self {
            dialogue_source: dialogue_source.into(),
            image_source: image_source.into(),
        }
    }
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.dialogue_source, self.image_source)
    }
}

impl FromStr for Combination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('+') {
            Some((d, i)) if !d.is_empty() && !i.is_empty() => Ok(Self::new(d, i)),
            _ => Err(Error::InvalidArgument(format!(
                "combination `{s}` must look like `<dialogue source>+<image source>`"
            ))),
        }
    }
}

/// One image-mixed dialogue. `context` holds every turn before the replaced
/// one; `next` is the turn after it, absent when the target was the last turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub dialogue_id: String,
    pub dialogue_source: String,
    pub image_source: String,
    pub split: Split,
    pub context: Vec<Turn>,
    pub target: String,
    pub image_id: String,
    pub similarity: f32,
    pub next: Option<String>,
}

impl Instance {
    /// Position of the replaced turn in the source dialogue.
    pub fn turn_index(&self) -> usize {
        self.context.len()
    }

    pub fn combination(&self) -> Combination {
        Combination::new(&self.dialogue_source, &self.image_source)
    }
}

pub fn instance_id(dialogue_id: &str, turn_index: usize, image_id: &str) -> String {
    format!("{dialogue_id}#{turn_index}#{image_id}")
}

/// Expands every match of every result into its own instance. Output follows
/// the order of `topk_results`, then match rank.
pub fn build_instances(
    dialogues: &[Dialogue],
    candidates: &[CandidateSentence],
    topk_results: &[TopKResult],
    images: &[ImageRecord],
) -> Result<Vec<Instance>> {
    let dialogue_by_id: HashMap<&str, &Dialogue> =
        dialogues.iter().map(|d| (d.dialogue_id.as_str(), d)).collect();
    let candidate_by_key: HashMap<String, &CandidateSentence> =
        candidates.iter().map(|c| (c.key(), c)).collect();
    let image_by_id: HashMap<&str, &ImageRecord> =
        images.iter().map(|i| (i.image_id.as_str(), i)).collect();

    let nested: Vec<Vec<Instance>> = topk_results
        .par_iter()
        .map(|result| {
            let cand = candidate_by_key.get(&result.query_id).ok_or_else(|| Error::Unknown {
                kind: "candidate",
                id: result.query_id.clone(),
            })?;
            let dialogue = dialogue_by_id.get(cand.dialogue_id.as_str()).ok_or_else(|| {
                Error::Unknown {
                    kind: "dialogue",
                    id: cand.dialogue_id.clone(),
                }
            })?;
            let t = cand.turn_index;
            if t == 0 || t >= dialogue.turns.len() {
                return Err(Error::InvalidArgument(format!(
                    "candidate `{}` has turn index {t} outside 1..{}",
                    result.query_id,
                    dialogue.turns.len()
                )));
            }
            let context = dialogue.turns[..t].to_vec();
            let next = dialogue.turns.get(t + 1).map(|turn| turn.text.clone());
            result
                .matches
                .iter()
                .map(|m| {
                    let image = image_by_id.get(m.image_id.as_str()).ok_or_else(|| {
                        Error::Unknown {
                            kind: "image",
                            id: m.image_id.clone(),
                        }
                    })?;
                    Ok(Instance {
                        instance_id: instance_id(&dialogue.dialogue_id, t, &image.image_id),
                        dialogue_id: dialogue.dialogue_id.clone(),
                        dialogue_source: dialogue.source.clone(),
                        image_source: image.source.clone(),
                        split: dialogue.split,
                        context: context.clone(),
                        target: dialogue.turns[t].text.clone(),
                        image_id: image.image_id.clone(),
                        similarity: m.similarity as f32,
                        next: next.clone(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let instances: Vec<Instance> = nested.into_iter().flatten().collect();
    let mut seen = HashSet::with_capacity(instances.len());
    for inst in &instances {
        if !seen.insert(inst.instance_id.as_str()) {
            return Err(Error::DuplicateId(inst.instance_id.clone()));
        }
    }
    Ok(instances)
}

/// Everything produced by one replacement run.
#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub candidates: Vec<CandidateSentence>,
    /// `(image source, result)` in candidate order, image sources sorted.
    pub results: Vec<(String, TopKResult)>,
    pub instances: Vec<Instance>,
}

#[derive(Debug, Clone, Copy)]
pub struct BuildParams {
    pub topk: usize,
    pub floor: f64,
}

/// Runs candidate extraction, per-(image source, split) top-k search and
/// instance expansion.
///
/// Each candidate is matched separately against every image source, using
/// only images from the dialogue's own split.
pub fn build_dataset(
    dialogues: &[Dialogue],
    images: &[ImageRecord],
    image_store: &EmbeddingStore,
    sentence_store: &EmbeddingStore,
    stoplist: &StopList,
    params: BuildParams,
) -> Result<BuildOutput> {
    if params.topk == 0 {
        return Err(Error::InvalidArgument("topk must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    for d in dialogues {
        if !seen.insert(d.dialogue_id.as_str()) {
            return Err(Error::DuplicateId(d.dialogue_id.clone()));
        }
    }
    let mut seen = HashSet::new();
    for i in images {
        if !seen.insert(i.image_id.as_str()) {
            return Err(Error::DuplicateId(i.image_id.clone()));
        }
    }
    if image_store.dimension() != sentence_store.dimension() {
        return Err(Error::DimensionMismatch {
            id: "sentence embeddings".into(),
            expected: image_store.dimension(),
            found: sentence_store.dimension(),
        });
    }

    let split_of: HashMap<&str, Split> = dialogues
        .iter()
        .map(|d| (d.dialogue_id.as_str(), d.split))
        .collect();
    let candidates: Vec<CandidateSentence> = dialogues
        .par_iter()
        .flat_map_iter(|d| extract_candidates(d, stoplist))
        .collect();

    let mut groups: BTreeMap<(String, Split), Vec<&str>> = BTreeMap::new();
    for img in images {
        groups
            .entry((img.source.clone(), img.split))
            .or_default()
            .push(img.image_id.as_str());
    }

    // (candidate index, image source) -> result
    let mut by_candidate: BTreeMap<(usize, String), TopKResult> = BTreeMap::new();
    for ((source, split), ids) in &groups {
        let store = image_store.restrict(ids)?;
        let members: Vec<usize> = candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| split_of[c.dialogue_id.as_str()] == *split)
            .map(|(i, _)| i)
            .collect();
        let queries = members
            .iter()
            .map(|&i| {
                let key = candidates[i].key();
                let v = sentence_store
                    .get(&key)
                    .ok_or_else(|| Error::MissingEmbedding(key.clone()))?;
                Ok((key, v))
            })
            .collect::<Result<Vec<(String, &[f32])>>>()?;
        let results = topk_batch(&queries, &store, params.topk, params.floor)?;
        for (&i, r) in members.iter().zip(results) {
            by_candidate.insert((i, source.clone()), r);
        }
    }

    let results: Vec<(String, TopKResult)> = by_candidate
        .into_iter()
        .map(|((_, source), r)| (source, r))
        .collect();
    let plain: Vec<TopKResult> = results.iter().map(|(_, r)| r.clone()).collect();
    let instances = build_instances(dialogues, &candidates, &plain, images)?;
    Ok(BuildOutput {
        candidates,
        results,
        instances,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub instances: usize,
    pub avg_dialogue_turns: f64,
    pub avg_sentence_chars: f64,
    pub unique_images: usize,
    pub unique_dialogues: usize,
    pub unique_targets: usize,
    pub avg_images_per_dialogue: f64,
    pub avg_targets_per_dialogue: f64,
}

/// Per-split statistics; all three splits are always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub splits: BTreeMap<Split, SplitStats>,
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Dataset statistics. Turn counts and sentence lengths come from `dialogues`
/// when the dialogue is known; otherwise from the turns visible in its
/// instances (context, target and next).
pub fn compute_stats(instances: &[Instance], dialogues: &[Dialogue]) -> DatasetStats {
    let known: HashMap<&str, &Dialogue> =
        dialogues.iter().map(|d| (d.dialogue_id.as_str(), d)).collect();

    let mut splits = BTreeMap::new();
    for split in Split::ALL {
        let insts: Vec<&Instance> = instances.iter().filter(|i| i.split == split).collect();
        let mut images = HashSet::new();
        let mut dialogue_images = HashSet::new();
        let mut targets = HashSet::new();
        // dialogue id -> observed turn texts by index
        let mut observed: BTreeMap<&str, BTreeMap<usize, &str>> = BTreeMap::new();
        for inst in &insts {
            images.insert(inst.image_id.as_str());
            dialogue_images.insert((inst.dialogue_id.as_str(), inst.image_id.as_str()));
            let t = inst.turn_index();
            targets.insert((inst.dialogue_id.as_str(), t));
            let turns = observed.entry(inst.dialogue_id.as_str()).or_default();
            for (i, turn) in inst.context.iter().enumerate() {
                turns.insert(i, turn.text.as_str());
            }
            turns.insert(t, inst.target.as_str());
            if let Some(next) = &inst.next {
                turns.insert(t + 1, next.as_str());
            }
        }

        let mut turn_total = 0usize;
        let mut char_total = 0usize;
        for (id, seen) in &observed {
            match known.get(id) {
                Some(d) => {
                    turn_total += d.turns.len();
                    char_total += d.turns.iter().map(|t| t.text.chars().count()).sum::<usize>();
                }
                None => {
                    turn_total += seen.len();
                    char_total += seen.values().map(|t| t.chars().count()).sum::<usize>();
                }
            }
        }
        let n_dialogues = observed.len();
        splits.insert(
            split,
            SplitStats {
                instances: insts.len(),
                avg_dialogue_turns: mean(turn_total as f64, n_dialogues),
                avg_sentence_chars: mean(char_total as f64, turn_total),
                unique_images: images.len(),
                unique_dialogues: n_dialogues,
                unique_targets: targets.len(),
                avg_images_per_dialogue: mean(dialogue_images.len() as f64, n_dialogues),
                avg_targets_per_dialogue: mean(targets.len() as f64, n_dialogues),
            },
        );
    }
    DatasetStats { splits }
}

/// Distinct combinations present, sorted.
pub fn combinations(instances: &[Instance]) -> BTreeSet<Combination> {
    instances.iter().map(Instance::combination).collect()
}
