//! Piece identification with a trained model: every test piece's sheet is
//! stored as a sequence of snippet embeddings, and fresh performances are
//! identified by snippet voting and by DTW.

use audiosheet::harness::{audio_sequences, sheet_sequences};
use audiosheet::model::{ArchConfig, Variant};
use audiosheet::pieceid::{identify_dtw, identify_vote, PieceCollection};
use audiosheet::retrieval::evaluate;
use audiosheet::synthdata::{extract_snippet_pairs, generate_dataset, render_aligned_piece, Context, DatasetConfig};
use audiosheet::training::{train_paired, TrainConfig};

fn main() -> audiosheet::Result<()> {
    let data = DatasetConfig { n_pieces: 30, ..DatasetConfig::default() };
    let pieces = generate_dataset(&data, 8)?;
    let (train, test) = pieces.split_at(20);
    let pairs: Vec<_> = train.iter().flat_map(|ap| extract_snippet_pairs(ap, Context::Short)).collect();
    let arch = ArchConfig::for_variant("bl2-short".parse::<Variant>()?);
    let (params, _) = train_paired(&pairs, &arch, &TrainConfig { epochs: 6, seed: 8, ..TrainConfig::default() })?;

    let collection = PieceCollection::new(sheet_sequences(&params, test, 30)?)?;
    let performances = test
        .iter()
        .enumerate()
        .map(|(i, ap)| render_aligned_piece(&ap.piece, &data.tempo.sample(1000 + i as u64, ap.piece.end_beats()), &ap.config))
        .collect::<audiosheet::Result<Vec<_>>>()?;
    let queries = audio_sequences(&params, &performances, 8)?;
    let (mut vote, mut dtw) = (Vec::new(), Vec::new());
    for q in &queries {
        let v = identify_vote(q, &collection)?;
        let d = identify_dtw(q, &collection, true)?;
        println!("{}: vote rank {:?}, dtw rank {:?}", q.piece_id, v.rank_of_truth, d.rank_of_truth);
        vote.extend(v.rank_of_truth);
        dtw.extend(d.rank_of_truth);
    }
    println!("vote MRR {:.3}, DTW MRR {:.3}", evaluate(&vote)?.mrr, evaluate(&dtw)?.mrr);
    Ok(())
}
