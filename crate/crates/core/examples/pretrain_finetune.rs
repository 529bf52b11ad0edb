//! Self-supervised pretraining of the sheet pathway on unlabeled snippets,
//! followed by paired finetuning from the pretrained encoder.

use audiosheet::augment::SheetAugConfig;
use audiosheet::model::{ArchConfig, Variant};
use audiosheet::synthdata::{extract_snippet_pairs, generate_dataset, Context, DatasetConfig};
use audiosheet::training::{finetune, pretrain_selfsup, Regime, TrainConfig};

fn main() -> audiosheet::Result<()> {
    let arch = ArchConfig::for_variant("bl2-short".parse::<Variant>()?);
    let unlabeled: Vec<_> = generate_dataset(&DatasetConfig { n_pieces: 6, ..DatasetConfig::default() }, 100)?
        .iter()
        .flat_map(|ap| extract_snippet_pairs(ap, Context::Short))
        .map(|p| p.sheet)
        .collect();
    let pre_cfg = TrainConfig { epochs: 3, seed: 2, ..TrainConfig::pretraining(Regime::PretrainSheet) };
    let (encoder, hist) = pretrain_selfsup(&unlabeled, &arch, &pre_cfg, &SheetAugConfig::pretraining())?;
    println!("pretraining NT-Xent per epoch: {:?}", hist.losses().iter().map(|l| format!("{l:.3}")).collect::<Vec<_>>());

    let pairs: Vec<_> = generate_dataset(&DatasetConfig { n_pieces: 10, ..DatasetConfig::default() }, 1)?
        .iter()
        .flat_map(|ap| extract_snippet_pairs(ap, Context::Short))
        .collect();
    let cfg = TrainConfig { epochs: 3, seed: 2, ..TrainConfig::default() };
    let (_, tuned) = finetune(Some(&encoder), None, &pairs, &arch, &cfg)?;
    println!(
        "finetune: validation MRR at start {:.3}, best {:.3}",
        tuned.initial_val_mrr.unwrap_or(f64::NAN),
        tuned.best_val_mrr().unwrap_or(f64::NAN)
    );
    Ok(())
}
