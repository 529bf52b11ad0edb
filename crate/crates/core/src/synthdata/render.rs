//! Toy engraving and toy spectrogram synthesis with exact note-level
//! alignment between the two.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::piece::SymbolicPiece;
use super::tempo::TempoCurve;
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const PAGE_HEIGHT: usize = 1181;
pub const PAGE_WIDTH: usize = 835;
pub const BACKGROUND: f32 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub page_height: usize,
    pub page_width: usize,
    pub pages: usize,
    pub margin_left: f64,
    pub margin_right: f64,
    pub first_system_y: f64,
    pub system_spacing: f64,
    pub bottom_margin: f64,
    /// Horizontal space taken by a one-beat note.
    pub px_per_beat: f64,
    /// A note of `d` beats takes `px_per_beat * d^spacing_exponent` pixels;
    /// below 1, long notes get proportionally less room, as in engraving.
    pub spacing_exponent: f64,
    pub px_per_semitone: f64,
    /// Pitch drawn on the middle staff line.
    pub center_pitch: f64,
    pub staff_line_spacing: f64,
    pub head_rx: f64,
    pub head_ry: f64,
    pub beats_per_bar: usize,
    pub n_bins: usize,
    /// Pitch (semitones) at the center of bin 0; bins are one semitone apart.
    pub lowest_bin_pitch: f64,
    pub frame_rate: f64,
    pub harmonics: usize,
    pub decay_seconds: f64,
    pub release_seconds: f64,
    pub tail_seconds: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            page_height: PAGE_HEIGHT,
            page_width: PAGE_WIDTH,
            pages: 1,
            margin_left: 40.0,
            margin_right: 40.0,
            first_system_y: 90.0,
            system_spacing: 160.0,
            bottom_margin: 80.0,
            px_per_beat: 20.0,
            spacing_exponent: 0.5,
            px_per_semitone: 4.0,
            center_pitch: 70.0,
            staff_line_spacing: 8.0,
            head_rx: 5.0,
            head_ry: 3.5,
            beats_per_bar: 4,
            n_bins: 64,
            lowest_bin_pitch: 48.0,
            frame_rate: 20.0,
            harmonics: 4,
            decay_seconds: 0.8,
            release_seconds: 0.1,
            tail_seconds: 1.0,
        }
    }
}

impl RenderConfig {
    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }
}

/// Staff-system geometry derived from a [`RenderConfig`]. Horizontal
/// positions are expressed as graphical offsets: pixels along the systems
/// laid end to end.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    system_width: f64,
    pub systems_per_page: usize,
    /// Gap between the left margin and the first note head of a system.
    pub lead: f64,
    pub margin_left: f64,
    pub page_height: usize,
    pub first_system_y: f64,
    pub system_spacing: f64,
    pub pages: usize,
}

impl Layout {
    fn new(cfg: &RenderConfig) -> Self {
        let usable_w = cfg.page_width as f64 - cfg.margin_left - cfg.margin_right;
        let last_center = cfg.page_height as f64 - cfg.bottom_margin;
        let systems_per_page =
            (((last_center - cfg.first_system_y) / cfg.system_spacing).floor() as usize + 1).max(1);
        Self {
            system_width: usable_w.floor().max(1.0),
            systems_per_page,
            lead: 0.25 * cfg.px_per_beat,
            margin_left: cfg.margin_left,
            page_height: cfg.page_height,
            first_system_y: cfg.first_system_y,
            system_spacing: cfg.system_spacing,
            pages: cfg.pages,
        }
    }

    pub fn capacity(&self) -> f64 {
        self.system_width * (self.systems_per_page * self.pages) as f64
    }

    pub fn system_width(&self) -> f64 {
        self.system_width
    }

    pub fn system_center_y(&self, system: usize) -> f64 {
        let page = system / self.systems_per_page;
        let local = system % self.systems_per_page;
        (page * self.page_height) as f64 + self.first_system_y + local as f64 * self.system_spacing
    }

    /// System index and page x coordinate of a graphical offset.
    pub fn position(&self, g: f64) -> (usize, f64) {
        let system = (g / self.system_width).floor() as usize;
        let local = g - system as f64 * self.system_width;
        (system, self.margin_left + self.lead + local)
    }
}

/// Graphical offsets of each note onset and of the piece end.
pub(crate) fn note_offsets(piece: &SymbolicPiece, cfg: &RenderConfig) -> (Vec<f64>, f64) {
    let space = |beats: f64| cfg.px_per_beat * beats.max(0.0).powf(cfg.spacing_exponent);
    let mut g = 0.0;
    let mut offsets = Vec::with_capacity(piece.notes.len());
    for (i, n) in piece.notes.iter().enumerate() {
        offsets.push(g);
        let next = piece.notes.get(i + 1).map_or(n.onset_beats + n.duration_beats, |m| m.onset_beats);
        g += space(next - n.onset_beats);
    }
    (offsets, g)
}

/// Graphical offset of an arbitrary beat, interpolated between onsets.
fn offset_at_beat(piece: &SymbolicPiece, offsets: &[f64], end: f64, beat: f64) -> f64 {
    let notes = &piece.notes;
    let i = notes.iter().rposition(|n| n.onset_beats <= beat).unwrap_or(0);
    let (b0, g0) = (notes[i].onset_beats, offsets[i]);
    let (b1, g1) = match notes.get(i + 1) {
        Some(n) => (n.onset_beats, offsets[i + 1]),
        None => (piece.end_beats(), end),
    };
    if b1 <= b0 {
        return g0;
    }
    g0 + (g1 - g0) * ((beat - b0) / (b1 - b0)).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedScore {
    pub image: Grid,
    pub note_x: Vec<f64>,
    pub note_y: Vec<f64>,
    pub note_system: Vec<usize>,
    pub layout: Layout,
    /// Number of staff systems carrying notes.
    pub systems_used: usize,
    /// Width of used content on the last system, measured from the left margin.
    pub last_system_extent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Performance {
    /// `n_bins x n_frames` magnitudes.
    pub spectrogram: Grid,
    pub frame_rate: f64,
    pub note_onset_frame: Vec<usize>,
}

impl Performance {
    pub fn n_frames(&self) -> usize {
        self.spectrogram.ncols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentEntry {
    pub note_index: usize,
    pub x: f64,
    pub y: f64,
    pub onset_frame: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPiece {
    pub piece: SymbolicPiece,
    pub tempo: TempoCurve,
    pub config: RenderConfig,
    pub score: RenderedScore,
    pub performance: Performance,
    pub alignment: Vec<AlignmentEntry>,
}

/// Renders a piece into a score page and a spectrogram whose note positions
/// are linked one-to-one through the returned alignment.
pub fn render_aligned_piece(piece: &SymbolicPiece, tempo: &TempoCurve, cfg: &RenderConfig) -> Result<AlignedPiece> {
    piece.validate()?;
    let score = render_score(piece, cfg)?;
    let performance = render_performance(piece, tempo, cfg);
    let alignment = (0..piece.notes.len())
        .map(|i| AlignmentEntry {
            note_index: i,
            x: score.note_x[i],
            y: score.note_y[i],
            onset_frame: performance.note_onset_frame[i],
        })
        .collect();
    Ok(AlignedPiece {
        piece: piece.clone(),
        tempo: tempo.clone(),
        config: cfg.clone(),
        score,
        performance,
        alignment,
    })
}

/// Note coordinates and system bookkeeping without rasterizing the page.
pub(crate) fn score_geometry(piece: &SymbolicPiece, cfg: &RenderConfig) -> Result<(Layout, Vec<(usize, f64, f64)>, usize, f64)> {
    let layout = cfg.layout();
    let (offsets, end) = note_offsets(piece, cfg);
    let last = *offsets.last().expect("validated pieces have notes");
    if last >= layout.capacity() {
        return Err(Error::Capacity(format!(
            "piece '{}' needs {last:.0} px of staff but {} page(s) hold {:.0}",
            piece.piece_id,
            cfg.pages,
            layout.capacity()
        )));
    }
    let heads: Vec<(usize, f64, f64)> = piece
        .notes
        .iter()
        .zip(&offsets)
        .map(|(n, &g)| {
            let (sys, x) = layout.position(g);
            let y = layout.system_center_y(sys) - (n.pitch as f64 - cfg.center_pitch) * cfg.px_per_semitone;
            (sys, x, y)
        })
        .collect();
    let (last_sys, _) = layout.position(last);
    let end_local = (end - last_sys as f64 * layout.system_width()).min(layout.system_width());
    Ok((layout, heads, last_sys + 1, end_local))
}

fn render_score(piece: &SymbolicPiece, cfg: &RenderConfig) -> Result<RenderedScore> {
    let (layout, heads, systems_used, last_extent) = score_geometry(piece, cfg)?;
    let height = cfg.page_height * cfg.pages;
    let mut img = Array2::from_elem((height, cfg.page_width), BACKGROUND);
    let sys_w = layout.system_width();
    let half = 2.0 * cfg.staff_line_spacing;
    for s in 0..systems_used {
        let cy = layout.system_center_y(s);
        let x0 = cfg.margin_left;
        let x1 = if s + 1 == systems_used { x0 + last_extent } else { x0 + sys_w };
        for k in -2..=2 {
            let y = (cy + k as f64 * cfg.staff_line_spacing).round() as isize;
            hline(&mut img, y, x0, x1, 0.0);
        }
        vline(&mut img, x0.round() as isize, cy - half, cy + half, 0.3);
    }
    let (offsets, end) = note_offsets(piece, cfg);
    let mut bar = cfg.beats_per_bar as f64;
    while cfg.beats_per_bar > 0 && bar < piece.end_beats() - 1e-9 {
        // Bar lines sit just before the first note of the bar.
        let (sys, x) = layout.position(offset_at_beat(piece, &offsets, end, bar));
        let cy = layout.system_center_y(sys);
        vline(&mut img, (x - layout.lead).round() as isize, cy - half, cy + half, 0.3);
        bar += cfg.beats_per_bar as f64;
    }
    let mut note_x = Vec::with_capacity(heads.len());
    let mut note_y = Vec::with_capacity(heads.len());
    let mut note_system = Vec::with_capacity(heads.len());
    for (note, &(sys, x, y)) in piece.notes.iter().zip(&heads) {
        let hollow = note.duration_beats >= 2.0;
        ellipse(&mut img, x, y, cfg.head_rx, cfg.head_ry, hollow);
        note_x.push(x);
        note_y.push(y);
        note_system.push(sys);
    }
    Ok(RenderedScore {
        image: img,
        note_x,
        note_y,
        note_system,
        layout,
        systems_used,
        last_system_extent: last_extent,
    })
}

fn hline(img: &mut Grid, y: isize, x0: f64, x1: f64, v: f32) {
    if y < 0 || y as usize >= img.nrows() {
        return;
    }
    let (a, b) = (x0.round().max(0.0) as usize, (x1.round() as usize).min(img.ncols()));
    for x in a..b {
        let p = &mut img[[y as usize, x]];
        *p = p.min(v);
    }
}

fn vline(img: &mut Grid, x: isize, y0: f64, y1: f64, v: f32) {
    if x < 0 || x as usize >= img.ncols() {
        return;
    }
    let (a, b) = (y0.round().max(0.0) as usize, (y1.round() as usize + 1).min(img.nrows()));
    for y in a..b {
        let p = &mut img[[y, x as usize]];
        *p = p.min(v);
    }
}

fn ellipse(img: &mut Grid, cx: f64, cy: f64, rx: f64, ry: f64, hollow: bool) {
    let (h, w) = img.dim();
    let y0 = (cy - ry - 1.0).floor().max(0.0) as usize;
    let y1 = ((cy + ry + 1.0).ceil() as usize).min(h - 1);
    let x0 = (cx - rx - 1.0).floor().max(0.0) as usize;
    let x1 = ((cx + rx + 1.0).ceil() as usize).min(w - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = (x as f64 - cx) / rx;
            let dy = (y as f64 - cy) / ry;
            let r = (dx * dx + dy * dy).sqrt();
            let ink = if hollow { r <= 1.0 && r >= 0.55 } else { r <= 1.0 };
            if ink {
                img[[y, x]] = 0.0;
            }
        }
    }
}

fn render_performance(piece: &SymbolicPiece, tempo: &TempoCurve, cfg: &RenderConfig) -> Performance {
    let fr = cfg.frame_rate;
    let bpm = piece.base_tempo_bpm;
    let timed: Vec<(f64, f64)> = piece
        .notes
        .iter()
        .map(|n| {
            let on = tempo.seconds_at(n.onset_beats, bpm);
            let off = tempo.seconds_at(n.onset_beats + n.duration_beats, bpm);
            (on, off)
        })
        .collect();
    let end_s = timed.iter().map(|t| t.1).fold(0.0, f64::max);
    let n_frames = ((end_s + cfg.tail_seconds) * fr).ceil() as usize + 1;
    let mut spec = Array2::<f32>::zeros((cfg.n_bins, n_frames));
    let mut onsets = Vec::with_capacity(timed.len());
    for (note, &(on_s, off_s)) in piece.notes.iter().zip(&timed) {
        let on = (on_s * fr).round() as usize;
        let off = ((off_s * fr).round() as usize).max(on + 1);
        onsets.push(on);
        let release_end = (off + (4.0 * cfg.release_seconds * fr).ceil() as usize).min(n_frames);
        for h in 1..=cfg.harmonics {
            let amp = 1.0 / h as f64;
            let bin_pos = note.pitch as f64 + 12.0 * (h as f64).log2() - cfg.lowest_bin_pitch;
            let lo = (bin_pos - 2.0).floor().max(0.0) as usize;
            let hi = ((bin_pos + 2.0).ceil() as usize).min(cfg.n_bins.saturating_sub(1));
            if bin_pos < -2.0 || lo > hi {
                continue;
            }
            for t in on..release_end {
                let dt = (t - on) as f64 / fr;
                let mut env = (-dt / cfg.decay_seconds).exp();
                if t >= off {
                    let held = ((off - on) as f64 / fr / cfg.decay_seconds).exp().recip();
                    env = held * (-((t - off) as f64 / fr) / cfg.release_seconds).exp();
                }
                for b in lo..=hi {
                    let d = b as f64 - bin_pos;
                    let spread = (-0.5 * d * d / 0.25).exp();
                    spec[[b, t]] += (amp * env * spread) as f32;
                }
            }
        }
    }
    Performance { spectrogram: spec, frame_rate: fr, note_onset_frame: onsets }
}
