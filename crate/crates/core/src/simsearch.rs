//! Exact top-k cosine search between sentence and image embeddings.
//!
//! Similarities are accumulated in `f64`. [`topk_batch`] blocks the work over
//! queries and images and runs query blocks on the rayon pool, but every
//! similarity is produced by the same [`cosine_unchecked`] routine as the
//! single-query scan, so its output is bitwise identical to
//! [`topk_bruteforce`] regardless of thread count or block sizes.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{l2_norm, EmbeddingStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub image_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKResult {
    pub query_id: String,
    pub matches: Vec<Match>,
}

/// One line of the similarity audit dump. Similarities are rounded to `f32`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_source: Option<String>,
    pub matches: Vec<AuditMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditMatch {
    pub image_id: String,
    pub sim: f32,
}

impl AuditRecord {
    pub fn from_result(result: &TopKResult, image_source: Option<&str>) -> Self {
        Self {
            query_id: result.query_id.clone(),
            image_source: image_source.map(str::to_owned),
            matches: result
                .matches
                .iter()
                .map(|m| AuditMatch {
                    image_id: m.image_id.clone(),
                    sim: m.similarity as f32,
                })
                .collect(),
        }
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// `dot(a, b) / (‖a‖ ‖b‖)` with the norms supplied by the caller.
#[inline]
fn cosine_unchecked(a: &[f32], a_norm: f64, b: &[f32], b_norm: f64) -> f64 {
    dot(a, b) / (a_norm * b_norm)
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            id: "cosine operand".into(),
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine operand".into()));
    }
    Ok(cosine_unchecked(a, na, b, nb))
}

/// `(similarity desc, image_id asc)`.
fn rank_order(a_sim: f64, a_id: &str, b_sim: f64, b_id: &str) -> Ordering {
    b_sim
        .partial_cmp(&a_sim)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a_id.cmp(b_id))
}

fn check_query(query_id: &str, query: &[f32], store: &EmbeddingStore) -> Result<f64> {
    if query.len() != store.dimension() {
        return Err(Error::DimensionMismatch {
            id: query_id.to_owned(),
            expected: store.dimension(),
            found: query.len(),
        });
    }
    if query.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(query_id.to_owned()));
    }
    let norm = l2_norm(query);
    if norm == 0.0 {
        return Err(Error::ZeroNorm(query_id.to_owned()));
    }
    Ok(norm)
}

fn check_params(store: &EmbeddingStore, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if store.is_empty() {
        return Err(Error::InvalidArgument("image store is empty".into()));
    }
    Ok(())
}

/// Linear scan: score every image, keep those at or above `floor`, sort, truncate.
pub fn topk_bruteforce(
    query_id: &str,
    query: &[f32],
    store: &EmbeddingStore,
    k: usize,
    floor: f64,
) -> Result<TopKResult> {
    check_params(store, k)?;
    let q_norm = check_query(query_id, query, store)?;
    let mut scored: Vec<(f64, usize)> = (0..store.len())
        .map(|pos| {
            let v = store.vector(pos);
            (cosine_unchecked(query, q_norm, v, l2_norm(v)), pos)
        })
        .filter(|&(s, _)| s >= floor)
        .collect();
    scored.sort_by(|a, b| rank_order(a.0, store.id(a.1), b.0, store.id(b.1)));
    scored.truncate(k);
    Ok(TopKResult {
        query_id: query_id.to_owned(),
        matches: scored
            .into_iter()
            .map(|(similarity, pos)| Match {
                image_id: store.id(pos).to_owned(),
                similarity,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    /// Queries handled together by one rayon task.
    pub query_block: usize,
    /// Images scanned per pass over a query block.
    pub image_block: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            query_block: 32,
            image_block: 512,
        }
    }
}

/// Bounded best-k list kept sorted by [`rank_order`].
struct Best<'s> {
    k: usize,
    store: &'s EmbeddingStore,
    items: Vec<(f64, usize)>,
}

impl<'s> Best<'s> {
    fn new(k: usize, store: &'s EmbeddingStore) -> Self {
        Self {
            k,
            store,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, sim: f64, pos: usize) {
        let id = self.store.id(pos);
        if self.items.len() == self.k {
            let &(worst_sim, worst_pos) = self.items.last().expect("k >= 1");
            if rank_order(sim, id, worst_sim, self.store.id(worst_pos)) != Ordering::Less {
                return;
            }
        }
        let at = self
            .items
            .partition_point(|&(s, p)| rank_order(s, self.store.id(p), sim, id) == Ordering::Less);
        self.items.insert(at, (sim, pos));
        self.items.truncate(self.k);
    }

    fn into_matches(self) -> Vec<Match> {
        self.items
            .into_iter()
            .map(|(similarity, pos)| Match {
                image_id: self.store.id(pos).to_owned(),
                similarity,
            })
            .collect()
    }
}

pub fn topk_batch<Q, V>(
    queries: &[(Q, V)],
    store: &EmbeddingStore,
    k: usize,
    floor: f64,
) -> Result<Vec<TopKResult>>
where
    Q: AsRef<str> + Sync,
    V: AsRef<[f32]> + Sync,
{
    topk_batch_with(queries, store, k, floor, BatchOptions::default())
}

/// Blocked, data-parallel top-k over many queries; results in input order.
pub fn topk_batch_with<Q, V>(
    queries: &[(Q, V)],
    store: &EmbeddingStore,
    k: usize,
    floor: f64,
    opts: BatchOptions,
) -> Result<Vec<TopKResult>>
where
    Q: AsRef<str> + Sync,
    V: AsRef<[f32]> + Sync,
{
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    check_params(store, k)?;
    if opts.query_block == 0 || opts.image_block == 0 {
        return Err(Error::InvalidArgument("block sizes must be positive".into()));
    }
    let query_norms = queries
        .iter()
        .map(|(id, v)| check_query(id.as_ref(), v.as_ref(), store))
        .collect::<Result<Vec<f64>>>()?;
    let image_norms: Vec<f64> = (0..store.len()).map(|p| l2_norm(store.vector(p))).collect();
    let n_images = store.len();

    let per_block: Vec<Vec<TopKResult>> = queries
        .par_chunks(opts.query_block)
        .zip(query_norms.par_chunks(opts.query_block))
        .map(|(block, norms)| {
            let mut best: Vec<Best<'_>> = block.iter().map(|_| Best::new(k, store)).collect();
            for start in (0..n_images).step_by(opts.image_block) {
                let end = (start + opts.image_block).min(n_images);
                for (((_, q), &q_norm), best) in block.iter().zip(norms).zip(best.iter_mut()) {
                    let q = q.as_ref();
                    for (pos, &v_norm) in image_norms.iter().enumerate().take(end).skip(start) {
                        let s = cosine_unchecked(q, q_norm, store.vector(pos), v_norm);
                        if s >= floor {
                            best.offer(s, pos);
                        }
                    }
                }
            }
            block
                .iter()
                .zip(best)
                .map(|((id, _), best)| TopKResult {
                    query_id: id.as_ref().to_owned(),
                    matches: best.into_matches(),
                })
                .collect()
        })
        .collect();
    Ok(per_block.into_iter().flatten().collect())
}
