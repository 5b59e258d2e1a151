//! Current/next sentence retrieval tasks and the tf-idf baseline.
//!
//! Each example pairs a query (the image caption followed by up to three
//! preceding turns) with 100 candidate sentences: the ground truth plus 99
//! distractors drawn from the other ground truths of the same split and task.
//! Candidates are scored by tf-idf cosine against the query.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::builder::Instance;
use crate::corpus::{ImageRecord, Split};
use crate::error::{Error, Result};
use crate::preprocess::tokenize;

pub const DEFAULT_CANDIDATES: usize = 100;
pub const CONTEXT_TURNS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Retrieve the sentence the image replaced.
    Current,
    /// Retrieve the sentence following the image.
    Next,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Current => "current",
            Task::Next => "next",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Task::Current),
            "next" => Ok(Task::Next),
            other => Err(Error::InvalidArgument(format!(
                "unknown task `{other}` (expected current or next)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    /// Index of the sentence in the task's pool.
    pub id: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExample {
    pub task: Task,
    pub instance_id: String,
    pub caption: String,
    /// Last (at most three) context turns, oldest first.
    pub query_context: Vec<String>,
    pub ground_truth: String,
    pub ground_truth_id: usize,
    pub candidates: Vec<Candidate>,
}

impl TaskExample {
    /// Caption tokens followed by context tokens.
    pub fn query_tokens(&self) -> Vec<String> {
        let mut toks = tokenize(&self.caption);
        for turn in &self.query_context {
            toks.extend(tokenize(turn));
        }
        toks
    }
}

/// Examples for one split and task, plus the distinct ground-truth pool the
/// distractors and idf statistics come from.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub task: Task,
    pub split: Split,
    pub pool: Vec<String>,
    pub examples: Vec<TaskExample>,
}

fn ground_truth(inst: &Instance, task: Task) -> Option<&str> {
    match task {
        Task::Current => Some(inst.target.as_str()),
        Task::Next => inst.next.as_deref(),
    }
}

/// Builds one example per eligible instance of `split`. The pool holds the
/// distinct ground truths in first-appearance order; distractors are drawn
/// from it without replacement, never repeating the example's own sentence.
pub fn make_tasks(
    instances: &[Instance],
    split: Split,
    images: &[ImageRecord],
    task: Task,
    seed: u64,
    n_candidates: usize,
) -> Result<TaskSet> {
    if n_candidates == 0 {
        return Err(Error::InvalidArgument("need at least one candidate".into()));
    }
    let captions: HashMap<&str, &str> = images
        .iter()
        .map(|i| (i.image_id.as_str(), i.caption.as_str()))
        .collect();
    let eligible: Vec<(&Instance, &str)> = instances
        .iter()
        .filter(|i| i.split == split)
        .filter_map(|i| ground_truth(i, task).map(|gt| (i, gt)))
        .collect();

    let mut pool: Vec<String> = Vec::new();
    let mut pool_index: HashMap<&str, usize> = HashMap::new();
    for (_, gt) in &eligible {
        if !pool_index.contains_key(gt) {
            pool_index.insert(gt, pool.len());
            pool.push((*gt).to_owned());
        }
    }
    if pool.len() < n_candidates {
        return Err(Error::PoolTooSmall {
            split: split.to_string(),
            available: pool.len(),
            needed: n_candidates,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(eligible.len());
    for (inst, gt) in &eligible {
        let caption = captions.get(inst.image_id.as_str()).ok_or_else(|| Error::Unknown {
            kind: "image",
            id: inst.image_id.clone(),
        })?;
        let own = pool_index[gt];
        let mut ids: Vec<usize> =
            rand::seq::index::sample(&mut rng, pool.len() - 1, n_candidates - 1)
                .into_iter()
                .map(|i| if i >= own { i + 1 } else { i })
                .collect();
        ids.push(own);
        ids.shuffle(&mut rng);
        let skip = inst.context.len().saturating_sub(CONTEXT_TURNS);
        examples.push(TaskExample {
            task,
            instance_id: inst.instance_id.clone(),
            caption: (*caption).to_owned(),
            query_context: inst.context[skip..].iter().map(|t| t.text.clone()).collect(),
            ground_truth: (*gt).to_owned(),
            ground_truth_id: own,
            candidates: ids
                .into_iter()
                .map(|id| Candidate {
                    id,
                    text: pool[id].clone(),
                })
                .collect(),
        });
    }
    Ok(TaskSet {
        task,
        split,
        pool,
        examples,
    })
}

/// Sparse tf-idf vector sorted by term.
#[derive(Debug, Clone, PartialEq)]
struct SparseVec {
    terms: Vec<(String, f64)>,
    norm: f64,
}

impl SparseVec {
    fn dot(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.terms.len() && j < other.terms.len() {
            match self.terms[i].0.cmp(&other.terms[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.terms[i].1 * other.terms[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    fn cosine(&self, other: &SparseVec) -> f64 {
        if self.norm == 0.0 || other.norm == 0.0 {
            0.0
        } else {
            self.dot(other) / (self.norm * other.norm)
        }
    }
}

/// Document frequencies over an idf corpus; `tf` is the raw count and
/// `idf = ln((N + 1) / (df + 1)) + 1`.
#[derive(Debug, Clone)]
pub struct TfIdf {
    n_docs: usize,
    df: HashMap<String, usize>,
}

impl TfIdf {
    pub fn fit<S: AsRef<str>>(corpus: &[S]) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            let mut terms = tokenize(doc.as_ref());
            terms.sort_unstable();
            terms.dedup();
            for t in terms {
                *df.entry(t).or_default() += 1;
            }
        }
        Self {
            n_docs: corpus.len(),
            df,
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0);
        ((self.n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
    }

    fn vectorize(&self, tokens: &[String]) -> SparseVec {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        let terms: Vec<(String, f64)> = counts
            .into_iter()
            .map(|(t, c)| (t.to_owned(), c as f64 * self.idf(t)))
            .collect();
        let norm = terms.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        SparseVec { terms, norm }
    }

    /// Term weights of `text`, sorted by term.
    pub fn weights(&self, text: &str) -> Vec<(String, f64)> {
        self.vectorize(&tokenize(text)).terms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub id: usize,
    pub score: f64,
}

/// Scores candidates of a task set against precomputed pool vectors.
pub struct TfIdfRanker {
    model: TfIdf,
    pool_vectors: Vec<SparseVec>,
}

impl TfIdfRanker {
    pub fn new<S: AsRef<str>>(pool: &[S]) -> Self {
        let model = TfIdf::fit(pool);
        let pool_vectors = pool
            .iter()
            .map(|s| model.vectorize(&tokenize(s.as_ref())))
            .collect();
        Self {
            model,
            pool_vectors,
        }
    }

    /// Candidates by descending cosine, ties by ascending id.
    pub fn rank(&self, example: &TaskExample) -> Vec<RankedCandidate> {
        let query = self.model.vectorize(&example.query_tokens());
        let mut ranked: Vec<RankedCandidate> = example
            .candidates
            .iter()
            .map(|c| {
                let score = match self.pool_vectors.get(c.id) {
                    Some(v) => query.cosine(v),
                    None => query.cosine(&self.model.vectorize(&tokenize(&c.text))),
                };
                RankedCandidate { id: c.id, score }
            })
            .collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        ranked
    }
}

/// One-off ranking of a single example with idf fitted on `idf_corpus`.
pub fn tfidf_rank<S: AsRef<str>>(example: &TaskExample, idf_corpus: &[S]) -> Vec<RankedCandidate> {
    TfIdfRanker::new(idf_corpus).rank(example)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub mean_rank: f64,
    pub mrr: f64,
}

/// Recall@1, recall@5, mean rank and mean reciprocal rank of 1-based ranks.
pub fn score(ranks: &[usize]) -> Result<EvalMetrics> {
    if ranks.is_empty() {
        return Err(Error::InvalidArgument("no ranks to score".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::InvalidArgument("ranks are 1-based".into()));
    }
    let n = ranks.len() as f64;
    let within = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(EvalMetrics {
        n: ranks.len(),
        r_at_1: within(1),
        r_at_5: within(5),
        mean_rank: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleOutcome {
    pub instance_id: String,
    pub ground_truth_id: usize,
    pub rank: usize,
    pub top5: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub split: Split,
    pub n: usize,
    pub candidates: usize,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub mean_rank: f64,
    pub mrr: f64,
    pub seed: u64,
    pub distractor_pool: String,
}

/// Ranks every example of a task set (in parallel, order preserved).
pub fn run_baseline(set: &TaskSet) -> Vec<ExampleOutcome> {
    let ranker = TfIdfRanker::new(&set.pool);
    set.examples
        .par_iter()
        .map(|ex| {
            let ranked = ranker.rank(ex);
            let rank = ranked
                .iter()
                .position(|c| c.id == ex.ground_truth_id)
                .expect("ground truth is always a candidate")
                + 1;
            ExampleOutcome {
                instance_id: ex.instance_id.clone(),
                ground_truth_id: ex.ground_truth_id,
                rank,
                top5: ranked.iter().take(5).map(|c| c.id).collect(),
            }
        })
        .collect()
}

/// `make_tasks` + tf-idf ranking + metrics.
pub fn evaluate(
    instances: &[Instance],
    split: Split,
    images: &[ImageRecord],
    task: Task,
    seed: u64,
    n_candidates: usize,
) -> Result<(EvalReport, Vec<ExampleOutcome>)> {
    let set = make_tasks(instances, split, images, task, seed, n_candidates)?;
    let outcomes = run_baseline(&set);
    let ranks: Vec<usize> = outcomes.iter().map(|o| o.rank).collect();
    let m = score(&ranks)?;
    Ok((
        EvalReport {
            task,
            split,
            n: m.n,
            candidates: n_candidates,
            r_at_1: m.r_at_1,
            r_at_5: m.r_at_5,
            mean_rank: m.mean_rank,
            mrr: m.mrr,
            seed,
            distractor_pool: "distinct ground-truth sentences of the same split and task".into(),
        },
        outcomes,
    ))
}
