//! Trains a long-context attention model briefly and prints the learned frame
//! weighting of a few excerpts next to their energy profile.

use audiosheet::model::{ArchConfig, Encoder, Variant};
use audiosheet::synthdata::{extract_snippet_pairs, generate_dataset, Context, DatasetConfig};
use audiosheet::training::{train_paired, TrainConfig};

fn main() -> audiosheet::Result<()> {
    let arch = ArchConfig::for_variant("bl2-long-at".parse::<Variant>()?);
    let pieces = generate_dataset(&DatasetConfig { n_pieces: 10, ..DatasetConfig::default() }, 3)?;
    let pairs: Vec<_> = pieces.iter().flat_map(|ap| extract_snippet_pairs(ap, Context::Long)).collect();
    let (params, _) = train_paired(&pairs, &arch, &TrainConfig { epochs: 4, seed: 3, ..TrainConfig::default() })?;
    let enc = Encoder::new(&params)?;
    let excerpts: Vec<_> = pairs.iter().step_by(40).map(|p| &p.audio).collect();
    let masks = enc.masks(&excerpts)?;
    for (x, m) in excerpts.iter().zip(&masks) {
        let bins = 12;
        let width = m.len() / bins;
        let weight: Vec<String> =
            m.0.chunks(width).map(|c| format!("{:.2}", c.iter().sum::<f32>())).collect();
        let energy: Vec<f32> = x.columns().into_iter().map(|c| c.sum()).collect();
        let total: f32 = energy.iter().sum();
        let share: Vec<String> =
            energy.chunks(width).map(|c| format!("{:.2}", c.iter().sum::<f32>() / total.max(1e-9))).collect();
        println!("mask   {}  (sum {:.6})", weight.join(" "), m.sum());
        println!("energy {}", share.join(" "));
    }
    Ok(())
}
