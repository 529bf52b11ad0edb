use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use super::render::{AlignedPiece, Performance, RenderedScore, BACKGROUND};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const SHEET_HEIGHT: usize = 160;
pub const SHEET_WIDTH: usize = 180;
pub const SHORT_FRAMES: usize = 42;
pub const LONG_FRAMES: usize = 4 * SHORT_FRAMES;

/// Audio context length for snippet excerpts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    Short,
    Long,
}

impl Context {
    pub fn frames(self) -> usize {
        match self {
            Context::Short => SHORT_FRAMES,
            Context::Long => LONG_FRAMES,
        }
    }

    pub fn from_frames(frames: usize) -> Option<Self> {
        match frames {
            SHORT_FRAMES => Some(Context::Short),
            LONG_FRAMES => Some(Context::Long),
            _ => None,
        }
    }
}

/// Where a snippet's content came from. Corrupted tiers are only ever built
/// for evaluation pools.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Clean,
    Partial,
    Noisy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnippetPair {
    pub sheet: Grid,
    pub audio: Grid,
    pub piece_id: String,
    pub anchor_note_index: usize,
    pub provenance: Provenance,
}

/// Copies `src[r0.., c0..]` into a `rows x cols` grid, filling out-of-range
/// cells with `pad`.
pub(crate) fn padded_crop(src: &Grid, r0: isize, c0: isize, rows: usize, cols: usize, pad: f32) -> Grid {
    let mut out = Array2::from_elem((rows, cols), pad);
    let (h, w) = src.dim();
    let ra = r0.max(0);
    let rb = (r0 + rows as isize).min(h as isize);
    let ca = c0.max(0);
    let cb = (c0 + cols as isize).min(w as isize);
    if ra < rb && ca < cb {
        out.slice_mut(s![(ra - r0) as usize..(rb - r0) as usize, (ca - c0) as usize..(cb - c0) as usize])
            .assign(&src.slice(s![ra as usize..rb as usize, ca as usize..cb as usize]));
    }
    out
}

pub fn sheet_crop(score: &RenderedScore, note_index: usize) -> Grid {
    let cy = score.layout.system_center_y(score.note_system[note_index]);
    let cx = score.note_x[note_index];
    padded_crop(
        &score.image,
        cy.round() as isize - (SHEET_HEIGHT / 2) as isize,
        cx.round() as isize - (SHEET_WIDTH / 2) as isize,
        SHEET_HEIGHT,
        SHEET_WIDTH,
        BACKGROUND,
    )
}

pub fn audio_excerpt(perf: &Performance, center_frame: usize, context: Context) -> Grid {
    let c = context.frames();
    padded_crop(
        &perf.spectrogram,
        0,
        center_frame as isize - (c / 2) as isize,
        perf.spectrogram.nrows(),
        c,
        0.0,
    )
}

/// Rebuilds the pair anchored on one note.
pub fn snippet_pair(ap: &AlignedPiece, note_index: usize, context: Context) -> SnippetPair {
    SnippetPair {
        sheet: sheet_crop(&ap.score, note_index),
        audio: audio_excerpt(&ap.performance, ap.alignment[note_index].onset_frame, context),
        piece_id: ap.piece.piece_id.clone(),
        anchor_note_index: note_index,
        provenance: Provenance::Clean,
    }
}

/// One matching (sheet crop, audio excerpt) pair per note.
pub fn extract_snippet_pairs(ap: &AlignedPiece, context: Context) -> Vec<SnippetPair> {
    (0..ap.alignment.len()).map(|i| snippet_pair(ap, i, context)).collect()
}

/// A fixed-width window cut from a document, with its column offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub offset: usize,
    pub grid: Grid,
}

/// Documents that can be cut into a sequence of snippets.
pub enum Document<'a> {
    Performance(&'a Performance),
    Score(&'a RenderedScore),
}

impl RenderedScore {
    /// The used staff systems laid end to end as one strip of height
    /// [`SHEET_HEIGHT`], in reading order.
    pub fn unrolled_strip(&self) -> Grid {
        let sys_w = self.layout.system_width().round() as usize;
        let widths: Vec<usize> = (0..self.systems_used)
            .map(|s| {
                if s + 1 == self.systems_used {
                    (self.last_system_extent.round() as usize).clamp(1, sys_w)
                } else {
                    sys_w
                }
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut strip = Array2::from_elem((SHEET_HEIGHT, total), BACKGROUND);
        let mut at = 0;
        for (s, &w) in widths.iter().enumerate() {
            let cy = self.layout.system_center_y(s).round() as isize;
            let crop = padded_crop(
                &self.image,
                cy - (SHEET_HEIGHT / 2) as isize,
                self.layout.margin_left.round() as isize,
                SHEET_HEIGHT,
                w,
                BACKGROUND,
            );
            strip.slice_mut(s![.., at..at + w]).assign(&crop);
            at += w;
        }
        strip
    }
}

/// Slides a `window`-column frame over `src` with step `hop`. A source
/// shorter than the window yields one padded snippet.
pub fn segment_columns(src: &Grid, window: usize, hop: usize, pad: f32) -> Result<Vec<Segment>> {
    if window < 1 || hop < 1 {
        return Err(Error::arg("window and hop must be at least 1"));
    }
    let len = src.ncols();
    let rows = src.nrows();
    if len < window {
        return Ok(vec![Segment { offset: 0, grid: padded_crop(src, 0, 0, rows, window, pad) }]);
    }
    let count = (len - window) / hop + 1;
    Ok((0..count)
        .map(|k| {
            let offset = k * hop;
            Segment { offset, grid: src.slice(s![.., offset..offset + window]).to_owned() }
        })
        .collect())
}

pub fn segment_document(doc: Document<'_>, window: usize, hop: usize) -> Result<Vec<Segment>> {
    match doc {
        Document::Performance(p) => segment_columns(&p.spectrogram, window, hop, 0.0),
        Document::Score(s) => segment_columns(&s.unrolled_strip(), window, hop, BACKGROUND),
    }
}
