//! Applies the sheet and audio augmentation presets to one snippet pair and
//! reports how far each output moves from the clean input.

use audiosheet::augment::{augment_audio, augment_sheet, AudioAugConfig, SheetAugConfig};
use audiosheet::grid::Grid;
use audiosheet::synthdata::{generate_dataset, snippet_pair, Context, DatasetConfig};

fn rms_diff(a: &Grid, b: &Grid) -> f32 {
    ((a - b).mapv(|v| v * v).mean().unwrap_or(0.0)).sqrt()
}

fn main() -> audiosheet::Result<()> {
    let ap = generate_dataset(&DatasetConfig { n_pieces: 1, ..DatasetConfig::default() }, 5)?.remove(0);
    let pair = snippet_pair(&ap, 6, Context::Short);
    for (name, s, a) in [
        ("pretraining", SheetAugConfig::pretraining(), AudioAugConfig::pretraining()),
        ("heavy", SheetAugConfig::heavy(), AudioAugConfig::heavy()),
    ] {
        for seed in 0..3 {
            let sheet = augment_sheet(&pair.sheet, &s, seed);
            let audio = augment_audio(&pair.audio, &a, seed);
            println!(
                "{name:<11} seed {seed}: sheet rms change {:.3}, audio rms change {:.3}",
                rms_diff(&sheet, &pair.sheet),
                rms_diff(&audio, &pair.audio)
            );
        }
    }
    assert_eq!(augment_sheet(&pair.sheet, &SheetAugConfig::heavy(), 9), augment_sheet(&pair.sheet, &SheetAugConfig::heavy(), 9));
    println!("augmentations are pure functions of (input, config, seed)");
    Ok(())
}
