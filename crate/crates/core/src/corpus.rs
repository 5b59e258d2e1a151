//! Dialogue corpora, caption collections and embedding stores.
//!
//! On-disk formats:
//!
//! * dialogues: one JSON object per line,
//!   `{"dialogue_id", "source", "split", "turns": [{"speaker", "text"}, ...]}`
//! * images: one JSON object per line, `{"image_id", "source", "split", "caption"}`
//! * embeddings, text form: `{"id", "vector": [...]}` per line
//! * embeddings, packed form: `EMB1`, `u32` LE dimension, then per record a
//!   `u16` LE id length, the UTF-8 id bytes and `d` LE `f32` values, no padding.
//!
//! Embeddings are L2-normalized when loaded, so cosine similarity reduces to a
//! dot product downstream.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

/// Tolerance on `|‖v‖ - 1|` for a store flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!(
                "unknown split `{other}` (expected train, valid or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    #[serde(rename = "speaker")]
    pub speaker_index: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub source: String,
    pub split: Split,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: String| Error::InvalidDialogue {
            id: self.dialogue_id.clone(),
            message,
        };
        if self.dialogue_id.is_empty() {
            return Err(invalid("empty dialogue_id".into()));
        }
        if self.turns.len() < 2 {
            return Err(invalid(format!(
                "needs at least 2 turns, found {}",
                self.turns.len()
            )));
        }
        if let Some(pos) = self.turns.iter().position(|t| t.text.trim().is_empty()) {
            return Err(invalid(format!("turn {pos} has empty text")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub source: String,
    pub split: Split,
    pub caption: String,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<()> {
        let invalid = |message: &str| Error::InvalidImage {
            id: self.image_id.clone(),
            message: message.to_owned(),
        };
        if self.image_id.is_empty() {
            return Err(invalid("empty image_id"));
        }
        if self.caption.trim().is_empty() {
            return Err(invalid("empty caption"));
        }
        Ok(())
    }
}

fn check_source(id: &str, expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::SourceMismatch {
            id: id.to_owned(),
            expected: expected.to_owned(),
            found: found.to_owned(),
        });
    }
    Ok(())
}

/// Loads a dialogue file. Every record must carry `source`; when `split` is
/// given, records of other splits are skipped. File order is preserved.
pub fn load_dialogues(path: &Path, source: &str, split: Option<Split>) -> Result<Vec<Dialogue>> {
    let records: Vec<(usize, Dialogue)> = jsonl::read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (_, dialogue) in records {
        check_source(&dialogue.dialogue_id, source, &dialogue.source)?;
        dialogue.validate()?;
        if !seen.insert(dialogue.dialogue_id.clone()) {
            return Err(Error::DuplicateId(dialogue.dialogue_id));
        }
        if split.is_none_or(|s| s == dialogue.split) {
            out.push(dialogue);
        }
    }
    Ok(out)
}

pub fn load_images(path: &Path, source: &str) -> Result<Vec<ImageRecord>> {
    let records: Vec<(usize, ImageRecord)> = jsonl::read_jsonl(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for (_, image) in records {
        check_source(&image.image_id, source, &image.source)?;
        image.validate()?;
        if !seen.insert(image.image_id.clone()) {
            return Err(Error::DuplicateId(image.image_id));
        }
        out.push(image);
    }
    Ok(out)
}

pub fn write_dialogues(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    jsonl::write_jsonl(path, dialogues)
}

pub fn write_images(path: &Path, images: &[ImageRecord]) -> Result<()> {
    jsonl::write_jsonl(path, images)
}

/// Dense vectors addressed by id, stored contiguously as `f32` in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
    normalized: bool,
}

impl EmbeddingStore {
    pub fn new(dim: usize, normalized: bool) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
            normalized,
        })
    }

    /// Builds a store from `(id, vector)` pairs. With `normalize`, each vector
    /// is scaled to unit L2 norm (computed in `f64`).
    pub fn from_entries<I>(dim: usize, entries: I, normalize: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f32>)>,
    {
        let mut store = Self::new(dim, normalize)?;
        for (id, v) in entries {
            store.insert(id, &v)?;
        }
        Ok(store)
    }

    /// Validates and appends one vector, normalizing it if the store is normalized.
    pub fn insert(&mut self, id: String, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                id,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(id));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        let norm = l2_norm(vector);
        if norm == 0.0 {
            return Err(Error::ZeroNorm(id));
        }
        if self.normalized {
            self.data
                .extend(vector.iter().map(|&x| (f64::from(x) / norm) as f32));
        } else {
            self.data.extend_from_slice(vector);
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }

    pub fn vector(&self, pos: usize) -> &[f32] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    /// Row-major backing buffer, `len() * dimension()` values.
    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|p| self.vector(p))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.ids
            .iter()
            .zip(self.data.chunks_exact(self.dim))
            .map(|(id, v)| (id.as_str(), v))
    }

    /// A new store holding only `ids`, in the order given. Vectors are copied
    /// verbatim (no renormalization).
    pub fn restrict<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let mut out = Self::new(self.dim, self.normalized)?;
        for id in ids {
            let id = id.as_ref();
            let pos = self.position(id).ok_or_else(|| Error::MissingEmbedding(id.to_owned()))?;
            if out.index.contains_key(id) {
                return Err(Error::DuplicateId(id.to_owned()));
            }
            out.data.extend_from_slice(self.vector(pos));
            out.index.insert(id.to_owned(), out.ids.len());
            out.ids.push(id.to_owned());
        }
        Ok(out)
    }

    /// Merges `other` into `self`; dimensions must agree and ids stay unique.
    pub fn extend_from(&mut self, other: &EmbeddingStore) -> Result<()> {
        if other.dim != self.dim {
            let id = other.ids.first().cloned().unwrap_or_default();
            return Err(Error::DimensionMismatch {
                id,
                expected: self.dim,
                found: other.dim,
            });
        }
        for (id, v) in other.iter() {
            if self.index.contains_key(id) {
                return Err(Error::DuplicateId(id.to_owned()));
            }
            self.data.extend_from_slice(v);
            self.index.insert(id.to_owned(), self.ids.len());
            self.ids.push(id.to_owned());
        }
        Ok(())
    }

    pub fn to_packed_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(8 + self.data.len() * 4 + self.ids.len() * 16);
        buf.extend_from_slice(EMBEDDING_MAGIC);
        let dim = u32::try_from(self.dim)
            .map_err(|_| Error::InvalidArgument("dimension exceeds u32".into()))?;
        buf.extend_from_slice(&dim.to_le_bytes());
        for (id, v) in self.iter() {
            let len = u16::try_from(id.len()).map_err(|_| {
                Error::InvalidArgument(format!("id `{id}` longer than 65535 bytes"))
            })?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(id.as_bytes());
            for x in v {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn write_packed(&self, path: &Path) -> Result<()> {
        jsonl::write_atomic(path, &self.to_packed_bytes()?)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let records: Vec<EmbeddingLine> = self
            .iter()
            .map(|(id, v)| EmbeddingLine {
                id: id.to_owned(),
                vector: v.to_vec(),
            })
            .collect();
        jsonl::write_jsonl(path, &records)
    }
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingLine {
    id: String,
    vector: Vec<f32>,
}

/// Loads an embedding file, auto-detecting the packed form by its magic bytes.
/// Vectors are L2-normalized; `expect_dim`, when given, must match the file.
pub fn load_embeddings(path: &Path, expect_dim: Option<usize>) -> Result<EmbeddingStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let store = if bytes.starts_with(EMBEDDING_MAGIC) {
        parse_packed(path, &bytes)?
    } else {
        parse_text(path)?
    };
    if let Some(expected) = expect_dim {
        if store.dimension() != expected {
            return Err(Error::DimensionMismatch {
                id: path.display().to_string(),
                expected,
                found: store.dimension(),
            });
        }
    }
    Ok(store)
}

fn parse_text(path: &Path) -> Result<EmbeddingStore> {
    let mut store: Option<EmbeddingStore> = None;
    for (line_no, line) in jsonl::read_lines(path)? {
        // Values are parsed as f64 so that out-of-range numbers surface as
        // non-finite f32 components rather than a parse error.
        #[derive(Deserialize)]
        struct Raw {
            id: String,
            vector: Vec<f64>,
        }
        let raw: Raw = serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, e))?;
        let vector: Vec<f32> = raw.vector.iter().map(|&x| x as f32).collect();
        let store = match &mut store {
            Some(s) => s,
            None => store.insert(EmbeddingStore::new(vector.len(), true).map_err(|_| {
                Error::parse(path, line_no, format!("vector `{}` is empty", raw.id))
            })?),
        };
        store.insert(raw.id, &vector)?;
    }
    store.ok_or_else(|| Error::parse(path, 0, "no embeddings found"))
}

fn parse_packed(path: &Path, bytes: &[u8]) -> Result<EmbeddingStore> {
    let mut cursor = Cursor { bytes, pos: EMBEDDING_MAGIC.len() };
    let truncated = |record: usize| Error::parse(path, record, "truncated embedding record");
    let dim = cursor.u32().ok_or_else(|| truncated(0))? as usize;
    let mut store = EmbeddingStore::new(dim, true)
        .map_err(|_| Error::parse(path, 0, "dimension must be positive"))?;
    let mut vector = vec![0f32; dim];
    let mut record = 0;
    while !cursor.at_end() {
        record += 1;
        let len = cursor.u16().ok_or_else(|| truncated(record))? as usize;
        let id_bytes = cursor.take(len).ok_or_else(|| truncated(record))?;
        let id = std::str::from_utf8(id_bytes)
            .map_err(|e| Error::parse(path, record, format!("id is not UTF-8: {e}")))?
            .to_owned();
        for slot in vector.iter_mut() {
            *slot = cursor.f32().ok_or_else(|| truncated(record))?;
        }
        store.insert(id, &vector)?;
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
