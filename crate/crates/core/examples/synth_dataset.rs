//! Generates a few aligned pieces, writes them to disk and prints where each
//! note sits on the page and in the spectrogram.
//!
//! cargo run --example synth_dataset -- [out_dir]

use audiosheet::synthdata::{generate_dataset, read_dataset, write_dataset, DatasetConfig};

fn main() -> audiosheet::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "synth_out".into());
    let cfg = DatasetConfig { n_pieces: 3, notes_per_piece: 12, ..DatasetConfig::default() };
    let pieces = generate_dataset(&cfg, 42)?;
    write_dataset(out.as_ref(), &pieces)?;
    for ap in &read_dataset(out.as_ref())? {
        let (h, w) = ap.score.image.dim();
        println!(
            "{}: {} notes, page {h}x{w}, {} frames at {} fps",
            ap.piece.piece_id,
            ap.piece.notes.len(),
            ap.performance.n_frames(),
            ap.performance.frame_rate
        );
        for a in ap.alignment.iter().take(4) {
            println!("  note {:>2}: x {:>6.1} y {:>6.1} -> frame {}", a.note_index, a.x, a.y, a.onset_frame);
        }
    }
    println!("wrote {} pieces to {out}", pieces.len());
    Ok(())
}
