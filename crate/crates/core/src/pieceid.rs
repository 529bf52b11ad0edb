//! Whole-document piece identification from snippet embedding sequences.
//!
//! Two strategies: every query snippet votes for the piece of its nearest
//! sheet snippet, or each piece's sequence is aligned to the query sequence
//! with dynamic time warping and pieces are ranked by alignment cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Embedding, Modality};
use crate::retrieval::{build_index, cosine_distance, EntryMeta};

/// Embeddings of one document in offset order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSequence {
    pub piece_id: String,
    pub offsets: Vec<usize>,
    pub embeddings: Vec<Embedding>,
}

impl EmbeddingSequence {
    pub fn new(piece_id: impl Into<String>, items: Vec<(usize, Embedding)>) -> Result<Self> {
        let piece_id = piece_id.into();
        if items.is_empty() {
            return Err(Error::arg(format!("sequence for '{piece_id}' is empty")));
        }
        if items.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::arg(format!("offsets of '{piece_id}' must be strictly increasing")));
        }
        let (offsets, embeddings) = items.into_iter().unzip();
        Ok(Self { piece_id, offsets, embeddings })
    }

    /// Offsets `0, 1, 2, ...`.
    pub fn from_embeddings(piece_id: impl Into<String>, embeddings: Vec<Embedding>) -> Result<Self> {
        Self::new(piece_id, embeddings.into_iter().enumerate().collect())
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PieceCollection {
    pieces: Vec<EmbeddingSequence>,
}

impl PieceCollection {
    pub fn new(pieces: Vec<EmbeddingSequence>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::arg("empty piece collection"));
        }
        let mut ids: Vec<&str> = pieces.iter().map(|p| p.piece_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::arg("piece ids must be unique"));
        }
        Ok(Self { pieces })
    }

    pub fn pieces(&self) -> &[EmbeddingSequence] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vote,
    Dtw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub piece_id: String,
    pub score: f64,
}

/// Pieces ordered best first: by votes descending or by cost ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentificationResult {
    pub method: Method,
    pub query_id: String,
    pub ranking: Vec<Scored>,
    /// 1-based rank of the query's own piece, if it is in the collection.
    pub rank_of_truth: Option<usize>,
}

fn finish(method: Method, query: &EmbeddingSequence, mut scored: Vec<(usize, Scored)>) -> IdentificationResult {
    match method {
        Method::Vote => scored.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0))),
        Method::Dtw => scored.sort_by(|a, b| a.1.score.total_cmp(&b.1.score).then(a.0.cmp(&b.0))),
    }
    let ranking: Vec<Scored> = scored.into_iter().map(|(_, s)| s).collect();
    let rank_of_truth = ranking.iter().position(|s| s.piece_id == query.piece_id).map(|p| p + 1);
    IdentificationResult { method, query_id: query.piece_id.clone(), ranking, rank_of_truth }
}

pub fn identify_vote(query: &EmbeddingSequence, collection: &PieceCollection) -> Result<IdentificationResult> {
    if query.is_empty() {
        return Err(Error::arg("empty query"));
    }
    let mut owner = Vec::new();
    let index = build_index(collection.pieces.iter().enumerate().flat_map(|(pi, p)| {
        owner.extend(std::iter::repeat_n(pi, p.len()));
        p.embeddings.iter().zip(&p.offsets).map(|(e, &offset)| {
            (e.clone(), EntryMeta { piece_id: p.piece_id.clone(), offset, modality: Modality::Sheet })
        })
    }))?;
    let mut votes = vec![0usize; collection.len()];
    for q in &query.embeddings {
        let best = index.query(q, 1)?.candidates[0].id;
        votes[owner[best]] += 1;
    }
    let scored = collection
        .pieces
        .iter()
        .zip(votes)
        .enumerate()
        .map(|(i, (p, v))| (i, Scored { piece_id: p.piece_id.clone(), score: v as f64 }))
        .collect();
    Ok(finish(Method::Vote, query, scored))
}

/// Optimal warping cost and the length of the path attaining it. Among
/// equal-cost paths the shortest is taken.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DtwAlignment {
    pub cost: f64,
    pub path_len: usize,
}

impl DtwAlignment {
    pub fn value(&self, normalize: bool) -> f64 {
        if normalize {
            self.cost / self.path_len as f64
        } else {
            self.cost
        }
    }
}

fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if a.0 < b.0 || (a.0 == b.0 && a.1 <= b.1) {
        a
    } else {
        b
    }
}

/// Full-matrix DTW with steps (1,0), (0,1), (1,1), anchored at both corners.
pub fn dtw_full(a: &[Embedding], b: &[Embedding]) -> Result<DtwAlignment> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("DTW needs non-empty sequences"));
    }
    let (m, n) = (a.len(), b.len());
    let mut d = vec![(f64::INFINITY, 0usize); m * n];
    for i in 0..m {
        for j in 0..n {
            let c = cosine_distance(a[i].as_slice(), b[j].as_slice());
            let prev = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut p = (f64::INFINITY, usize::MAX);
                if i > 0 && j > 0 {
                    p = better(p, d[(i - 1) * n + j - 1]);
                }
                if i > 0 {
                    p = better(p, d[(i - 1) * n + j]);
                }
                if j > 0 {
                    p = better(p, d[i * n + j - 1]);
                }
                p
            };
            d[i * n + j] = (prev.0 + c, prev.1 + 1);
        }
    }
    let (cost, path_len) = d[m * n - 1];
    Ok(DtwAlignment { cost, path_len })
}

/// Same recursion as [`dtw_full`] keeping only two rows.
pub fn dtw_rolling(a: &[Embedding], b: &[Embedding]) -> Result<DtwAlignment> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::arg("DTW needs non-empty sequences"));
    }
    let n = b.len();
    let mut prev = vec![(f64::INFINITY, usize::MAX); n];
    let mut cur = vec![(f64::INFINITY, usize::MAX); n];
    for (i, ai) in a.iter().enumerate() {
        for j in 0..n {
            let c = cosine_distance(ai.as_slice(), b[j].as_slice());
            let p = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                let mut p = (f64::INFINITY, usize::MAX);
                if i > 0 && j > 0 {
                    p = better(p, prev[j - 1]);
                }
                if i > 0 {
                    p = better(p, prev[j]);
                }
                if j > 0 {
                    p = better(p, cur[j - 1]);
                }
                p
            };
            cur[j] = (p.0 + c, p.1.wrapping_add(1));
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (cost, path_len) = prev[n - 1];
    Ok(DtwAlignment { cost, path_len })
}

pub fn dtw_cost(a: &EmbeddingSequence, b: &EmbeddingSequence, normalize: bool) -> Result<f64> {
    Ok(dtw_rolling(&a.embeddings, &b.embeddings)?.value(normalize))
}

pub fn identify_dtw(query: &EmbeddingSequence, collection: &PieceCollection, normalize: bool) -> Result<IdentificationResult> {
    if query.is_empty() {
        return Err(Error::arg("empty query"));
    }
    let scored = collection
        .pieces
        .iter()
        .enumerate()
        .map(|(i, p)| Ok((i, Scored { piece_id: p.piece_id.clone(), score: dtw_cost(query, p, normalize)? })))
        .collect::<Result<Vec<_>>>()?;
    Ok(finish(Method::Dtw, query, scored))
}
