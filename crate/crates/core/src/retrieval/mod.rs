//! Exact cosine nearest-neighbour retrieval over unit-norm embeddings and
//! the ranking metrics R@k, MRR and MR.
//!
//! Candidates are ordered by ascending cosine distance (see
//! [`cosine_distance`]); ties go to the lower insertion index.

mod store;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

pub use store::{load_store, read_store, save_store, sidecar_path, write_store, STORE_VERSION};

use crate::error::{Error, Result};
use crate::model::{Embedding, Modality, EMBEDDING_DIM};

/// Norm drift beyond which an embedding is re-normalized on index build.
pub const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub piece_id: String,
    pub offset: usize,
    pub modality: Modality,
}

/// Immutable row-major embedding matrix with per-row metadata. Entry ids are
/// insertion indices.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    data: Vec<f32>,
    meta: Vec<EntryMeta>,
}

pub fn build_index(entries: impl IntoIterator<Item = (Embedding, EntryMeta)>) -> Result<EmbeddingIndex> {
    let mut data = Vec::new();
    let mut meta = Vec::new();
    for (i, (e, m)) in entries.into_iter().enumerate() {
        if e.dim() != EMBEDDING_DIM {
            return Err(Error::arg(format!("entry {i} has dimension {}, expected {EMBEDDING_DIM}", e.dim())));
        }
        let norm = e.norm();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            warn!("entry {i} has norm {norm:.6}; re-normalizing");
            data.extend_from_slice(Embedding::from_f32(e.as_slice())?.as_slice());
        } else {
            data.extend_from_slice(e.as_slice());
        }
        meta.push(m);
    }
    if meta.is_empty() {
        return Err(Error::arg("cannot build an empty index"));
    }
    Ok(EmbeddingIndex { dim: EMBEDDING_DIM, data, meta })
}

/// `1 - dot(a, b)` for unit vectors, accumulated in f64 and clamped at 0.
/// Bitwise-identical inputs get exactly 0, which single-precision storage
/// would otherwise miss by a few ulps.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    if dot > 1.0 - 1e-6 && a == b {
        return 0.0;
    }
    (1.0 - dot).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    pub distance: f64,
}

fn order(a: &Candidate, b: &Candidate) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id))
}

/// Top-k prefix of the full ranking for one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub candidates: Vec<Candidate>,
}

impl RankedResult {
    pub fn ids(&self) -> Vec<usize> {
        self.candidates.iter().map(|c| c.id).collect()
    }

    /// 1-based position of `id` within the returned prefix.
    pub fn rank_of(&self, id: usize) -> Option<usize> {
        self.candidates.iter().position(|c| c.id == id).map(|p| p + 1)
    }
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn meta(&self, id: usize) -> &EntryMeta {
        &self.meta[id]
    }

    pub fn metas(&self) -> &[EntryMeta] {
        &self.meta
    }

    pub fn row(&self, id: usize) -> &[f32] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn embedding(&self, id: usize) -> Embedding {
        Embedding::from_raw(self.row(id).to_vec())
    }

    pub fn raw_data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn from_raw_parts(dim: usize, data: Vec<f32>, meta: Vec<EntryMeta>) -> Self {
        Self { dim, data, meta }
    }

    fn check_query(&self, q: &Embedding) -> Result<()> {
        if q.dim() != self.dim {
            return Err(Error::arg(format!("query dimension {} does not match index dimension {}", q.dim(), self.dim)));
        }
        Ok(())
    }

    pub fn distances(&self, q: &Embedding) -> Result<Vec<f64>> {
        self.check_query(q)?;
        let qs = q.as_slice();
        Ok(self.data.chunks_exact(self.dim).map(|row| cosine_distance(row, qs)).collect())
    }

    /// Exact top-k. `k` larger than the index is clamped.
    pub fn query(&self, q: &Embedding, k: usize) -> Result<RankedResult> {
        if k == 0 {
            return Err(Error::arg("k must be at least 1"));
        }
        let k = if k > self.len() {
            warn!("k = {k} exceeds index size {}; clamping", self.len());
            self.len()
        } else {
            k
        };
        let mut all: Vec<Candidate> =
            self.distances(q)?.into_iter().enumerate().map(|(id, distance)| Candidate { id, distance }).collect();
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, order);
            all.truncate(k);
        }
        all.sort_by(order);
        Ok(RankedResult { candidates: all })
    }

    /// 1-based rank `target` would receive in the full ranking for `q`.
    pub fn rank_of_target(&self, q: &Embedding, target: usize) -> Result<usize> {
        if target >= self.len() {
            return Err(Error::arg(format!("target {target} out of range")));
        }
        let d = self.distances(q)?;
        let t = Candidate { id: target, distance: d[target] };
        Ok(1 + d
            .iter()
            .enumerate()
            .filter(|&(id, &distance)| order(&Candidate { id, distance }, &t) == Ordering::Less)
            .count())
    }
}

pub fn query(index: &EmbeddingIndex, q: &Embedding, k: usize) -> Result<RankedResult> {
    index.query(q, k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "audio2sheet")]
    AudioToSheet,
    #[serde(rename = "sheet2audio")]
    SheetToAudio,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::AudioToSheet, Direction::SheetToAudio];

    pub fn query_modality(self) -> Modality {
        match self {
            Direction::AudioToSheet => Modality::Audio,
            Direction::SheetToAudio => Modality::Sheet,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AudioToSheet => "audio2sheet",
            Direction::SheetToAudio => "sheet2audio",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio2sheet" | "a2s" => Ok(Direction::AudioToSheet),
            "sheet2audio" | "s2a" => Ok(Direction::SheetToAudio),
            _ => Err(Error::arg(format!("unknown direction '{s}'"))),
        }
    }
}

/// Ranks of the matching partner when `sheet[i]` and `audio[i]` form pair i.
pub fn paired_ranks(sheet: &[Embedding], audio: &[Embedding], direction: Direction) -> Result<Vec<usize>> {
    if sheet.len() != audio.len() {
        return Err(Error::arg("sheet and audio embedding counts differ"));
    }
    let (queries, candidates) = match direction {
        Direction::AudioToSheet => (audio, sheet),
        Direction::SheetToAudio => (sheet, audio),
    };
    let cand_mod = direction.query_modality();
    let index = build_index(candidates.iter().enumerate().map(|(i, e)| {
        (e.clone(), EntryMeta { piece_id: String::new(), offset: i, modality: other(cand_mod) })
    }))?;
    queries.iter().enumerate().map(|(i, q)| index.rank_of_target(q, i)).collect()
}

fn other(m: Modality) -> Modality {
    match m {
        Modality::Sheet => Modality::Audio,
        Modality::Audio => Modality::Sheet,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub r1: f64,
    pub r5: f64,
    pub r25: f64,
    pub mrr: f64,
    pub mr: usize,
    pub n: usize,
}

impl RetrievalMetrics {
    /// `R@1 / R@5 / R@25 / MRR / MR` with recalls in percent.
    pub fn table_row(&self) -> String {
        format!(
            "{:.2} / {:.2} / {:.2} / {:.2} / {}",
            self.r1 * 100.0,
            self.r5 * 100.0,
            self.r25 * 100.0,
            self.mrr,
            self.mr
        )
    }
}

impl fmt::Display for RetrievalMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table_row())
    }
}

pub fn evaluate(ranks: &[usize]) -> Result<RetrievalMetrics> {
    if ranks.is_empty() {
        return Err(Error::arg("no ranks to evaluate"));
    }
    if ranks.contains(&0) {
        return Err(Error::arg("ranks are 1-based"));
    }
    let n = ranks.len();
    let recall = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    Ok(RetrievalMetrics { r1: recall(1), r5: recall(5), r25: recall(25), mrr, mr: sorted[(n - 1) / 2], n })
}
