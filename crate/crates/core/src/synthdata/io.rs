//! On-disk dataset layout: one directory per piece holding
//! `piece.json`, `score.npyish`, `perf.npyish` and `alignment.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::piece::SymbolicPiece;
use super::render::{score_geometry, AlignedPiece, AlignmentEntry, Performance, RenderConfig, RenderedScore};
use super::tempo::TempoCurve;
use crate::error::{Error, Result};
use crate::grid::{load_grid, save_grid};

#[derive(Serialize, Deserialize)]
struct PieceFile {
    piece: SymbolicPiece,
    tempo: TempoCurve,
    render: RenderConfig,
}

pub fn write_piece(root: &Path, ap: &AlignedPiece) -> Result<()> {
    let dir = root.join(&ap.piece.piece_id);
    fs::create_dir_all(&dir)?;
    let meta = PieceFile { piece: ap.piece.clone(), tempo: ap.tempo.clone(), render: ap.config.clone() };
    fs::write(dir.join("piece.json"), serde_json::to_vec_pretty(&meta)?)?;
    save_grid(dir.join("score.npyish"), &ap.score.image)?;
    save_grid(dir.join("perf.npyish"), &ap.performance.spectrogram)?;
    fs::write(dir.join("alignment.json"), serde_json::to_vec_pretty(&ap.alignment)?)?;
    Ok(())
}

pub fn write_dataset(root: &Path, pieces: &[AlignedPiece]) -> Result<()> {
    fs::create_dir_all(root)?;
    for ap in pieces {
        write_piece(root, ap)?;
    }
    Ok(())
}

pub fn read_piece(dir: &Path) -> Result<AlignedPiece> {
    let meta: PieceFile = serde_json::from_slice(&fs::read(dir.join("piece.json"))?)?;
    meta.piece.validate()?;
    let image = load_grid(dir.join("score.npyish"))?;
    let spectrogram = load_grid(dir.join("perf.npyish"))?;
    let alignment: Vec<AlignmentEntry> = serde_json::from_slice(&fs::read(dir.join("alignment.json"))?)?;
    if alignment.len() != meta.piece.notes.len() {
        return Err(Error::format(format!(
            "{}: alignment has {} entries for {} notes",
            dir.display(),
            alignment.len(),
            meta.piece.notes.len()
        )));
    }
    let (layout, heads, systems_used, last_extent) = score_geometry(&meta.piece, &meta.render)?;
    let score = RenderedScore {
        image,
        note_x: alignment.iter().map(|a| a.x).collect(),
        note_y: alignment.iter().map(|a| a.y).collect(),
        note_system: heads.iter().map(|h| h.0).collect(),
        layout,
        systems_used,
        last_system_extent: last_extent,
    };
    let performance = Performance {
        spectrogram,
        frame_rate: meta.render.frame_rate,
        note_onset_frame: alignment.iter().map(|a| a.onset_frame).collect(),
    };
    Ok(AlignedPiece { piece: meta.piece, tempo: meta.tempo, config: meta.render, score, performance, alignment })
}

/// Reads every piece directory under `root`, sorted by directory name.
pub fn read_dataset(root: &Path) -> Result<Vec<AlignedPiece>> {
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join("piece.json").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_piece(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_dataset, DatasetConfig};

    #[test]
    fn dataset_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig { n_pieces: 3, notes_per_piece: 12, ..DatasetConfig::default() };
        let pieces = generate_dataset(&cfg, 5).unwrap();
        write_dataset(tmp.path(), &pieces).unwrap();
        for ap in &pieces {
            for f in ["piece.json", "score.npyish", "perf.npyish", "alignment.json"] {
                assert!(tmp.path().join(&ap.piece.piece_id).join(f).is_file());
            }
        }
        let back = read_dataset(tmp.path()).unwrap();
        assert_eq!(back, pieces);
    }
}
