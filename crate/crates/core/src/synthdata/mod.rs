//! Synthetic aligned score/performance generation.
//!
//! A [`SymbolicPiece`] is rendered twice: into a toy engraved page and into
//! a toy magnitude spectrogram. Both renderings come from the same note list,
//! so every note has an exact (page coordinate, onset frame) correspondence,
//! which is what snippet-pair extraction relies on.

mod io;
mod piece;
mod render;
mod snippets;
mod tempo;

use serde::{Deserialize, Serialize};

pub use io::{read_dataset, read_piece, write_dataset, write_piece};
pub use piece::{generate_piece, NoteEvent, SymbolicPiece};
pub use render::{
    render_aligned_piece, AlignedPiece, AlignmentEntry, Layout, Performance, RenderConfig, RenderedScore, BACKGROUND,
    PAGE_HEIGHT, PAGE_WIDTH,
};
pub use snippets::{
    audio_excerpt, extract_snippet_pairs, segment_columns, segment_document, sheet_crop, snippet_pair, Context,
    Document, Provenance, Segment, SnippetPair, LONG_FRAMES, SHEET_HEIGHT, SHEET_WIDTH, SHORT_FRAMES,
};
pub use tempo::TempoCurve;

use crate::error::Result;
use crate::rng;

/// Tempo-curve sampling ranges. `global` scales the whole performance,
/// `local` adds a multiplicative deviation at each control point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TempoSpec {
    pub global: (f64, f64),
    pub local: (f64, f64),
    pub spacing_beats: f64,
}

impl TempoSpec {
    pub fn steady() -> Self {
        Self { global: (1.0, 1.0), local: (1.0, 1.0), spacing_beats: 8.0 }
    }

    pub fn is_steady(&self) -> bool {
        self.global == (1.0, 1.0) && self.local == (1.0, 1.0)
    }

    pub fn sample(&self, seed: u64, length_beats: f64) -> TempoCurve {
        if self.is_steady() {
            return TempoCurve::constant(1.0).expect("unit multiplier is valid");
        }
        TempoCurve::random(&mut rng::rng(seed), length_beats, self.spacing_beats, self.global, self.local)
    }
}

impl Default for TempoSpec {
    fn default() -> Self {
        Self { global: (0.6, 1.7), local: (0.8, 1.25), spacing_beats: 8.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub n_pieces: usize,
    pub notes_per_piece: usize,
    pub pitch_low: i32,
    pub pitch_high: i32,
    pub tempo: TempoSpec,
    pub render: RenderConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_pieces: 20,
            notes_per_piece: 24,
            pitch_low: 55,
            pitch_high: 85,
            tempo: TempoSpec::default(),
            render: RenderConfig::default(),
        }
    }
}

/// Generates `cfg.n_pieces` aligned pieces. Piece `i` is named `piece_{i:04}`
/// and depends only on `(seed, i)`.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Vec<AlignedPiece>> {
    (0..cfg.n_pieces).map(|i| generate_aligned(cfg, seed, i)).collect()
}

pub fn generate_aligned(cfg: &DatasetConfig, seed: u64, index: usize) -> Result<AlignedPiece> {
    let piece_seed = rng::derive_path(seed, &[index as u64, 0]);
    let piece = generate_piece(piece_seed, cfg.notes_per_piece, (cfg.pitch_low, cfg.pitch_high))?
        .with_id(format!("piece_{index:04}"));
    let tempo = cfg.tempo.sample(rng::derive_path(seed, &[index as u64, 1]), piece.end_beats());
    render_aligned_piece(&piece, &tempo, &cfg.render)
}
