//! Trains a short-context model on a handful of pieces and reports retrieval
//! on held-out pieces in both directions.
//!
//! cargo run --example train_small -- [epochs]

use audiosheet::model::{ArchConfig, Variant};
use audiosheet::retrieval::{evaluate, paired_ranks, Direction};
use audiosheet::synthdata::{extract_snippet_pairs, generate_dataset, Context, DatasetConfig};
use audiosheet::training::{encode_pairs, train_paired, TrainConfig};

fn main() -> audiosheet::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let pieces = generate_dataset(&DatasetConfig { n_pieces: 24, ..DatasetConfig::default() }, 1)?;
    let (train, test) = pieces.split_at(18);
    let pairs: Vec<_> = train.iter().flat_map(|ap| extract_snippet_pairs(ap, Context::Short)).collect();
    let arch = ArchConfig::for_variant("bl2-short".parse::<Variant>()?);
    let cfg = TrainConfig { epochs, seed: 1, ..TrainConfig::default() };
    let (params, hist) = train_paired(&pairs, &arch, &cfg)?;
    for e in &hist.epochs {
        println!("epoch {:>2}: loss {:.4} val MRR {:.3}", e.epoch, e.loss, e.val_mrr.unwrap_or(f64::NAN));
    }
    let held: Vec<_> = test.iter().flat_map(|ap| extract_snippet_pairs(ap, Context::Short)).collect();
    let refs: Vec<_> = held.iter().collect();
    let (sheet, audio) = encode_pairs(&params, &refs)?;
    for d in Direction::BOTH {
        println!("{d}: R@1 / R@5 / R@25 / MRR / MR = {}", evaluate(&paired_ranks(&sheet, &audio, d)?)?);
    }
    Ok(())
}
