use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One note of a symbolic piece. Beat positions are multiples of a quarter
/// beat, so they are exact in binary floating point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: i32,
    pub onset_beats: f64,
    pub duration_beats: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolicPiece {
    pub piece_id: String,
    pub notes: Vec<NoteEvent>,
    pub base_tempo_bpm: f64,
}

/// Inter-onset step choices in beats and their draw weights.
const IOI_STEPS: [(f64, f64); 3] = [(0.5, 0.3), (1.0, 0.5), (2.0, 0.2)];
/// Per-piece factor on all steps: some pieces move in short note values,
/// others in long ones.
const RHYTHM_SCALES: [f64; 3] = [0.5, 1.0, 2.0];
const MAX_PITCH_STEP: i32 = 4;
/// Phrase length range in notes, and the chance that a phrase restates an
/// earlier one verbatim.
const PHRASE_LEN: (usize, usize) = (4, 8);
const REPEAT_PROB: f64 = 0.5;

impl SymbolicPiece {
    pub fn new(piece_id: impl Into<String>, notes: Vec<NoteEvent>, base_tempo_bpm: f64) -> Result<Self> {
        let p = Self { piece_id: piece_id.into(), notes, base_tempo_bpm };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.notes.is_empty() {
            return Err(Error::arg("piece has no notes"));
        }
        if !(self.base_tempo_bpm > 0.0 && self.base_tempo_bpm.is_finite()) {
            return Err(Error::arg("base tempo must be positive"));
        }
        let mut prev = 0.0;
        for (i, n) in self.notes.iter().enumerate() {
            if !(n.duration_beats > 0.0) {
                return Err(Error::arg(format!("note {i} has non-positive duration")));
            }
            if n.onset_beats < prev || n.onset_beats < 0.0 {
                return Err(Error::arg(format!("note {i} onset out of order")));
            }
            prev = n.onset_beats;
        }
        Ok(())
    }

    /// Beat position where the last sounding note ends.
    pub fn end_beats(&self) -> f64 {
        self.notes
            .iter()
            .map(|n| n.onset_beats + n.duration_beats)
            .fold(0.0, f64::max)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.piece_id = id.into();
        self
    }
}

/// Draws a random monophonic piece. Pitches follow a bounded random walk in
/// the half-open range `[low, high)`; onsets advance by steps drawn from
/// {0.5, 1, 2} beats times a per-piece scale from {0.5, 1, 2}, and each note
/// lasts until the next onset. Notes come in phrases of 4 to 8; about half
/// the phrases restate an earlier phrase exactly, as real pieces do.
pub fn generate_piece(seed: u64, n_notes: usize, pitch_range: (i32, i32)) -> Result<SymbolicPiece> {
    let (low, high) = pitch_range;
    if n_notes < 1 {
        return Err(Error::arg("n_notes must be at least 1"));
    }
    if low >= high {
        return Err(Error::arg(format!("empty pitch range [{low}, {high})")));
    }
    let mut rng = rng::rng(seed);
    let base_tempo_bpm = rng.gen_range(100.0..140.0f64).round();
    let scale = RHYTHM_SCALES[rng.gen_range(0..RHYTHM_SCALES.len())];
    let total_w: f64 = IOI_STEPS.iter().map(|s| s.1).sum();
    let mut pitch = rng.gen_range(low..high);
    // (pitch, ioi) per note; phrases are either fresh or copies of earlier ones.
    let mut seq: Vec<(i32, f64)> = Vec::with_capacity(n_notes);
    let mut phrases: Vec<(usize, usize)> = Vec::new();
    while seq.len() < n_notes {
        let len = rng.gen_range(PHRASE_LEN.0..=PHRASE_LEN.1);
        let start = seq.len();
        if !phrases.is_empty() && rng.gen_bool(REPEAT_PROB) {
            let (from, plen) = phrases[rng.gen_range(0..phrases.len())];
            seq.extend_from_within(from..from + plen);
        } else {
            for _ in 0..len {
                let mut u = rng.gen::<f64>() * total_w;
                let mut ioi = IOI_STEPS[IOI_STEPS.len() - 1].0 * scale;
                for &(step, w) in &IOI_STEPS {
                    if u < w {
                        ioi = step * scale;
                        break;
                    }
                    u -= w;
                }
                seq.push((pitch, ioi));
                let step = rng.gen_range(-MAX_PITCH_STEP..=MAX_PITCH_STEP);
                pitch = reflect(pitch + step, low, high - 1);
            }
        }
        phrases.push((start, seq.len() - start));
    }
    seq.truncate(n_notes);
    let mut onset = 0.0;
    let notes = seq
        .into_iter()
        .map(|(pitch, ioi)| {
            let n = NoteEvent { pitch, onset_beats: onset, duration_beats: ioi };
            onset += ioi;
            n
        })
        .collect();
    SymbolicPiece::new(format!("s{seed}"), notes, base_tempo_bpm)
}

fn reflect(p: i32, lo: i32, hi: i32) -> i32 {
    if hi <= lo {
        return lo;
    }
    let mut p = p;
    while p < lo || p > hi {
        if p < lo {
            p = 2 * lo - p;
        }
        if p > hi {
            p = 2 * hi - p;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_note_in_unit_range() {
        let p = generate_piece(7, 1, (60, 61)).unwrap();
        assert_eq!(p.notes.len(), 1);
        assert_eq!(p.notes[0].pitch, 60);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_piece(7, 50, (55, 85)).unwrap();
        let b = generate_piece(7, 50, (55, 85)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_differ() {
        let a = serde_json::to_string(&generate_piece(7, 50, (55, 85)).unwrap().notes).unwrap();
        let b = serde_json::to_string(&generate_piece(8, 50, (55, 85)).unwrap().notes).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(generate_piece(1, 0, (60, 70)), Err(Error::Argument(_))));
        assert!(matches!(generate_piece(1, 5, (70, 70)), Err(Error::Argument(_))));
    }

    #[test]
    fn steps_follow_one_scale_per_piece_and_pitches_in_range() {
        let mut scales = std::collections::BTreeSet::new();
        for seed in 0..20 {
            let p = generate_piece(seed, 80, (55, 85)).unwrap();
            let steps: Vec<f64> = p.notes.windows(2).map(|w| w[1].onset_beats - w[0].onset_beats).collect();
            let scale = RHYTHM_SCALES
                .iter()
                .find(|&&s| steps.iter().all(|d| [0.5 * s, s, 2.0 * s].contains(d)))
                .expect("steps come from a single scale");
            scales.insert((scale * 4.0) as i32);
            assert!(p.notes.iter().all(|n| (55..85).contains(&n.pitch)));
            assert!(p.notes.iter().all(|n| (n.onset_beats * 4.0).fract() == 0.0));
        }
        assert_eq!(scales.len(), RHYTHM_SCALES.len());
    }

    #[test]
    fn pieces_restate_earlier_phrases() {
        let repeats = (0..20)
            .filter(|&seed| {
                let p = generate_piece(seed, 40, (55, 85)).unwrap();
                let key: Vec<(i32, i64)> =
                    p.notes.iter().map(|n| (n.pitch, (n.duration_beats * 4.0) as i64)).collect();
                let windows: Vec<&[(i32, i64)]> = key.windows(4).collect();
                (0..windows.len()).any(|i| windows[i + 1..].contains(&windows[i]))
            })
            .count();
        assert!(repeats >= 15, "{repeats} of 20 pieces repeat a phrase");
    }
}
