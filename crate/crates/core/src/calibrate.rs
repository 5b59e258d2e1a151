//! Annotation-driven threshold calibration.
//!
//! Instances of each (dialogue source, image source) combination are sorted by
//! similarity and cut into ten equal-count segments; up to thirty instances per
//! segment are sampled for human scoring. The mean score per segment, plotted
//! against the segment's mean similarity, gives one curve per question. Each
//! curve is interpolated at the median score (2 for Q1/Q2, 3 for Q3) and the
//! largest of the three similarities becomes the combination's threshold.
//! Filtering keeps instances whose similarity strictly exceeds it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{Combination, Instance};
use crate::error::{Error, Result};

pub const SEGMENTS: usize = 10;
pub const SAMPLES_PER_SEGMENT: usize = 30;

/// Median scores a segment must reach for Q1, Q2 and Q3.
pub const TARGET_SCORES: [f64; 3] = [2.0, 2.0, 3.0];

pub const ANNOTATION_HEADER: [&str; 6] = ["instance_id", "annotator_id", "q1", "q2", "q3", "q4"];

/// Reference thresholds for the six source combinations of the original
/// dataset (similarities from a VSRN-style matcher).
pub const REFERENCE_THRESHOLDS: [(&str, f64); 6] = [
    ("persona+coco", 0.546),
    ("persona+flickr", 0.509),
    ("daily+coco", 0.555),
    ("daily+flickr", 0.619),
    ("empathetic+coco", 0.623),
    ("empathetic+flickr", 0.516),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub instance_id: String,
    pub annotator_id: String,
    pub q1: u8,
    pub q2: u8,
    pub q3: u8,
    pub q4: Option<u8>,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidAnnotation {
            instance_id: self.instance_id.clone(),
            annotator_id: self.annotator_id.clone(),
            message,
        };
        if self.instance_id.is_empty() || self.annotator_id.is_empty() {
            return Err(bad("instance_id and annotator_id are required".into()));
        }
        for (name, value, max) in [("q1", self.q1, 3), ("q2", self.q2, 3), ("q3", self.q3, 5)] {
            if !(1..=max).contains(&value) {
                return Err(bad(format!("{name}={value} outside 1..={max}")));
            }
        }
        if let Some(q4) = self.q4 {
            if !(1..=4).contains(&q4) {
                return Err(bad(format!("q4={q4} outside 1..=4")));
            }
        }
        Ok(())
    }

    pub fn scores(&self) -> [f64; 3] {
        [self.q1, self.q2, self.q3].map(f64::from)
    }
}

/// Reads an annotation CSV, checking ranges and `(instance, annotator)` uniqueness.
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    parse_annotations(file)
}

pub fn parse_annotations<R: std::io::Read>(reader: R) -> Result<Vec<AnnotationRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let header: Vec<&str> = header
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}'))
        .collect();
    if header != ANNOTATION_HEADER {
        return Err(Error::InvalidArgument(format!(
            "annotation header must be `{}`, found `{}`",
            ANNOTATION_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.deserialize::<AnnotationRecord>() {
        let rec = rec?;
        rec.validate()?;
        if !seen.insert((rec.instance_id.clone(), rec.annotator_id.clone())) {
            return Err(Error::DuplicateId(format!(
                "{} / {}",
                rec.instance_id, rec.annotator_id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn annotations_to_csv(records: &[AnnotationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(ANNOTATION_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv flush: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Smallest and largest similarity among all members of the segment.
    pub lower: f64,
    pub upper: f64,
    pub population: usize,
    pub sampled: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSample {
    pub combination: String,
    pub seed: u64,
    pub segments: Vec<Segment>,
}

impl SegmentSample {
    pub fn sampled_ids(&self) -> impl Iterator<Item = &str> {
        self.segments
            .iter()
            .flat_map(|s| s.sampled.iter().map(String::as_str))
    }
}

/// Splits one combination's instances into ten equal-count similarity segments
/// (the first `n % 10` segments take one extra) and samples up to thirty ids
/// from each without replacement.
pub fn sample_for_annotation(instances: &[&Instance], seed: u64) -> Result<SegmentSample> {
    if instances.len() < SEGMENTS {
        return Err(Error::InvalidArgument(format!(
            "need at least {SEGMENTS} instances to segment, found {}",
            instances.len()
        )));
    }
    let combination = instances[0].combination();
    if let Some(other) = instances.iter().find(|i| i.combination() != combination) {
        return Err(Error::InvalidArgument(format!(
            "mixed combinations `{combination}` and `{}`",
            other.combination()
        )));
    }
    let mut sorted: Vec<&Instance> = instances.to_vec();
    sorted.sort_by(|a, b| {
        a.similarity
            .total_cmp(&b.similarity)
            .then_with(|| a.instance_id.cmp(&b.instance_id))
    });

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = sorted.len() / SEGMENTS;
    let extra = sorted.len() % SEGMENTS;
    let mut segments = Vec::with_capacity(SEGMENTS);
    let mut start = 0;
    for s in 0..SEGMENTS {
        let len = base + usize::from(s < extra);
        let members = &sorted[start..start + len];
        start += len;
        let mut picks =
            rand::seq::index::sample(&mut rng, len, len.min(SAMPLES_PER_SEGMENT)).into_vec();
        picks.sort_unstable();
        segments.push(Segment {
            lower: f64::from(members[0].similarity),
            upper: f64::from(members[len - 1].similarity),
            population: len,
            sampled: picks
                .into_iter()
                .map(|p| members[p].instance_id.clone())
                .collect(),
        });
    }
    Ok(SegmentSample {
        combination: combination.to_string(),
        seed,
        segments,
    })
}

fn group_by_combination(instances: &[Instance]) -> BTreeMap<Combination, Vec<&Instance>> {
    let mut groups: BTreeMap<Combination, Vec<&Instance>> = BTreeMap::new();
    for inst in instances {
        groups.entry(inst.combination()).or_default().push(inst);
    }
    groups
}

/// Samples every combination that has at least ten instances, in combination order.
pub fn sample_all(instances: &[Instance], seed: u64) -> Result<Vec<SegmentSample>> {
    group_by_combination(instances)
        .values()
        .filter(|g| g.len() >= SEGMENTS)
        .map(|g| sample_for_annotation(g, seed))
        .collect()
}

/// Average ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("need at least two observations".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite observation".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::UndefinedCorrelation("first input is constant"));
    }
    if syy == 0.0 {
        return Err(Error::UndefinedCorrelation("second input is constant"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Similarity at which a piecewise-linear score curve reaches `target`.
///
/// Candidates are the first point (when it already meets the target) and
/// every rising crossing `y_i < target <= y_{i+1}`; the largest candidate
/// wins. `None` when the curve never reaches the target.
pub fn interpolate_threshold(curve: &[(f64, f64)], target: f64) -> Result<Option<f64>> {
    if curve.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "curve needs at least 2 points, found {}",
            curve.len()
        )));
    }
    if curve.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::InvalidArgument("curve must be sorted by similarity".into()));
    }
    for w in curve.windows(2).rev() {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if y0 < target && target <= y1 {
            return Ok(Some(x0 + (target - y0) / (y1 - y0) * (x1 - x0)));
        }
    }
    Ok((curve[0].1 >= target).then_some(curve[0].0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CombinationThresholds {
    #[serde(default)]
    pub q1: Option<f64>,
    #[serde(default)]
    pub q2: Option<f64>,
    #[serde(default)]
    pub q3: Option<f64>,
    #[serde(default)]
    pub chosen: Option<f64>,
    #[serde(default)]
    pub curve_q1: Vec<[f64; 2]>,
    #[serde(default)]
    pub curve_q2: Vec<[f64; 2]>,
    #[serde(default)]
    pub curve_q3: Vec<[f64; 2]>,
    #[serde(default)]
    pub kept: usize,
    #[serde(default)]
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub combinations: BTreeMap<String, CombinationThresholds>,
    #[serde(default)]
    pub seed: u64,
}

/// Builds per-question curves and thresholds for every combination present in
/// `instances`. Combinations with fewer than ten instances, or whose curves
/// never reach their targets, get `chosen = None`.
pub fn calibrate(
    instances: &[Instance],
    annotations: &[AnnotationRecord],
    seed: u64,
) -> Result<ThresholdReport> {
    let by_id: HashMap<&str, &Instance> = instances
        .iter()
        .map(|i| (i.instance_id.as_str(), i))
        .collect();
    let scores = mean_scores(&by_id, annotations)?;

    let mut combinations = BTreeMap::new();
    for (combo, members) in group_by_combination(instances) {
        let mut entry = CombinationThresholds {
            total: members.len(),
            ..Default::default()
        };
        if members.len() >= SEGMENTS {
            let sample = sample_for_annotation(&members, seed)?;
            let mut curves: [Vec<[f64; 2]>; 3] = Default::default();
            for seg in &sample.segments {
                let rated: Vec<&str> = seg
                    .sampled
                    .iter()
                    .map(String::as_str)
                    .filter(|id| scores.contains_key(id))
                    .collect();
                if rated.is_empty() {
                    continue;
                }
                let n = rated.len() as f64;
                let x = rated
                    .iter()
                    .map(|id| f64::from(by_id[id].similarity))
                    .sum::<f64>()
                    / n;
                for (q, curve) in curves.iter_mut().enumerate() {
                    let y = rated.iter().map(|id| scores[id][q]).sum::<f64>() / n;
                    curve.push([x, y]);
                }
            }
            let mut per_question = [None; 3];
            for (q, curve) in curves.iter().enumerate() {
                if curve.len() >= 2 {
                    let pts: Vec<(f64, f64)> = curve.iter().map(|p| (p[0], p[1])).collect();
                    per_question[q] = interpolate_threshold(&pts, TARGET_SCORES[q])?;
                }
            }
            entry.q1 = per_question[0];
            entry.q2 = per_question[1];
            entry.q3 = per_question[2];
            entry.chosen = per_question.iter().flatten().copied().reduce(f64::max);
            let [c1, c2, c3] = curves;
            entry.curve_q1 = c1;
            entry.curve_q2 = c2;
            entry.curve_q3 = c3;
        }
        if let Some(t) = entry.chosen {
            entry.kept = members
                .iter()
                .filter(|i| f64::from(i.similarity) > t)
                .count();
        }
        combinations.insert(combo.to_string(), entry);
    }
    Ok(ThresholdReport { combinations, seed })
}

/// Per-instance mean Q1..Q3 over annotators. Rejects unknown instances.
fn mean_scores<'a>(
    by_id: &HashMap<&str, &Instance>,
    annotations: &'a [AnnotationRecord],
) -> Result<HashMap<&'a str, [f64; 3]>> {
    let mut sums: HashMap<&str, ([f64; 3], usize)> = HashMap::new();
    let mut seen = HashSet::new();
    for rec in annotations {
        rec.validate()?;
        if !by_id.contains_key(rec.instance_id.as_str()) {
            return Err(Error::Unknown {
                kind: "instance",
                id: rec.instance_id.clone(),
            });
        }
        if !seen.insert((rec.instance_id.as_str(), rec.annotator_id.as_str())) {
            return Err(Error::DuplicateId(format!(
                "{} / {}",
                rec.instance_id, rec.annotator_id
            )));
        }
        let e = sums.entry(rec.instance_id.as_str()).or_insert(([0.0; 3], 0));
        for (acc, s) in e.0.iter_mut().zip(rec.scores()) {
            *acc += s;
        }
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(id, (s, n))| (id, s.map(|v| v / n as f64)))
        .collect())
}

pub const CORRELATION_LABELS: [&str; 4] = ["similarity", "q1", "q2", "q3"];

/// Symmetric Spearman matrix over similarity and the three question scores.
/// Cells are `None` where the correlation is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub n: usize,
    pub rho: [[Option<f64>; 4]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub labels: [String; 4],
    /// All annotated instances pooled across combinations.
    pub pooled: CorrelationMatrix,
    pub per_combination: BTreeMap<String, CorrelationMatrix>,
    /// Cell-wise mean of the per-combination matrices (defined cells only).
    pub mean_of_combinations: [[Option<f64>; 4]; 4],
}

fn correlation_matrix(rows: &[[f64; 4]]) -> CorrelationMatrix {
    let cols: Vec<Vec<f64>> = (0..4).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    let mut rho = [[None; 4]; 4];
    for a in 0..4 {
        for b in a..4 {
            let v = if a == b {
                (rows.len() >= 2).then_some(1.0)
            } else {
                spearman_rho(&cols[a], &cols[b]).ok()
            };
            rho[a][b] = v;
            rho[b][a] = v;
        }
    }
    CorrelationMatrix { n: rows.len(), rho }
}

/// Spearman correlations between similarity and per-instance mean scores.
pub fn correlations(
    instances: &[Instance],
    annotations: &[AnnotationRecord],
) -> Result<CorrelationReport> {
    let by_id: HashMap<&str, &Instance> = instances
        .iter()
        .map(|i| (i.instance_id.as_str(), i))
        .collect();
    let scores = mean_scores(&by_id, annotations)?;

    let mut pooled = Vec::new();
    let mut grouped: BTreeMap<String, Vec<[f64; 4]>> = BTreeMap::new();
    // walk instances (not the hash map) so row order is deterministic
    for inst in instances {
        if let Some(s) = scores.get(inst.instance_id.as_str()) {
            let row = [f64::from(inst.similarity), s[0], s[1], s[2]];
            pooled.push(row);
            grouped
                .entry(inst.combination().to_string())
                .or_default()
                .push(row);
        }
    }
    let per_combination: BTreeMap<String, CorrelationMatrix> = grouped
        .iter()
        .map(|(k, rows)| (k.clone(), correlation_matrix(rows)))
        .collect();
    let mut mean_of_combinations = [[None; 4]; 4];
    for (a, row) in mean_of_combinations.iter_mut().enumerate() {
        for (b, cell) in row.iter_mut().enumerate() {
            let vals: Vec<f64> = per_combination.values().filter_map(|m| m.rho[a][b]).collect();
            if !vals.is_empty() {
                *cell = Some(vals.iter().sum::<f64>() / vals.len() as f64);
            }
        }
    }
    Ok(CorrelationReport {
        labels: CORRELATION_LABELS.map(str::to_owned),
        pooled: correlation_matrix(&pooled),
        per_combination,
        mean_of_combinations,
    })
}

/// Combination thresholds with an optional fallback.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Thresholds {
    pub by_combination: BTreeMap<String, f64>,
    pub default: Option<f64>,
}

impl Thresholds {
    pub fn new(by_combination: BTreeMap<String, f64>, default: Option<f64>) -> Self {
        Self {
            by_combination,
            default,
        }
    }

    /// Chosen thresholds of a report; uncalibrated combinations are left out.
    pub fn from_report(report: &ThresholdReport) -> Self {
        Self::new(
            report
                .combinations
                .iter()
                .filter_map(|(k, v)| v.chosen.map(|t| (k.clone(), t)))
                .collect(),
            None,
        )
    }

    pub fn reference() -> Self {
        Self::new(
            REFERENCE_THRESHOLDS
                .iter()
                .map(|&(k, v)| (k.to_owned(), v))
                .collect(),
            None,
        )
    }

    pub fn uniform(threshold: f64) -> Self {
        Self::new(BTreeMap::new(), Some(threshold))
    }

    pub fn get(&self, combination: &str) -> Result<f64> {
        self.by_combination
            .get(combination)
            .copied()
            .or(self.default)
            .ok_or_else(|| Error::MissingThreshold(combination.to_owned()))
    }

    /// A threshold report holding only `chosen` values, loadable by `filter`.
    pub fn to_report(&self) -> ThresholdReport {
        ThresholdReport {
            combinations: self
                .by_combination
                .iter()
                .map(|(k, &t)| {
                    (
                        k.clone(),
                        CombinationThresholds {
                            chosen: Some(t),
                            ..Default::default()
                        },
                    )
                })
                .collect(),
            seed: 0,
        }
    }
}

/// Keeps instances whose similarity strictly exceeds their combination's
/// threshold, in input order.
pub fn filter_instances(instances: &[Instance], thresholds: &Thresholds) -> Result<Vec<Instance>> {
    let mut cache: HashMap<Combination, f64> = HashMap::new();
    let mut out = Vec::new();
    for inst in instances {
        let combo = inst.combination();
        let t = match cache.get(&combo) {
            Some(&t) => t,
            None => {
                let t = thresholds.get(&combo.to_string())?;
                cache.insert(combo, t);
                t
            }
        };
        if f64::from(inst.similarity) > t {
            out.push(inst.clone());
        }
    }
    Ok(out)
}

/// `(kept, total)` per combination for a filtering run.
pub fn filter_counts(
    before: &[Instance],
    after: &[Instance],
) -> BTreeMap<String, (usize, usize)> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for i in before {
        counts.entry(i.combination().to_string()).or_default().1 += 1;
    }
    for i in after {
        counts.entry(i.combination().to_string()).or_default().0 += 1;
    }
    counts
}
