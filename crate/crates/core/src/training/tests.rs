use super::*;
use crate::augment::{AudioAugConfig, SheetAugConfig};
use crate::model::{init_params, ArchConfig, HeadKind, Variant};
use crate::synthdata::{extract_snippet_pairs, generate_dataset, Context, DatasetConfig};

fn tiny_arch(context: Context) -> ArchConfig {
    ArchConfig { base_channels: 4, hidden: 16, ..ArchConfig::for_variant(Variant::new(HeadKind::Dense, context, false)) }
}

fn pairs(n_pieces: usize, notes: usize, context: Context) -> Vec<SnippetPair> {
    let cfg = DatasetConfig { n_pieces, notes_per_piece: notes, ..DatasetConfig::default() };
    generate_dataset(&cfg, 7).unwrap().iter().flat_map(|ap| extract_snippet_pairs(ap, context)).collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, val_fraction: 0.25, ..TrainConfig::default() }
}

#[test]
fn split_is_disjoint_by_piece() {
    let ps = pairs(6, 6, Context::Short);
    let (tr, va) = split_by_piece(&ps, 0.34, 3).unwrap();
    assert_eq!(tr.len() + va.len(), ps.len());
    assert!(!va.is_empty() && !tr.is_empty());
    for &i in &va {
        assert!(tr.iter().all(|&j| ps[j].piece_id != ps[i].piece_id));
    }
    assert!(split_by_piece(&[], 0.2, 0).is_err());
    assert!(split_by_piece(&ps[..3], 0.2, 0).is_err(), "one piece cannot be split");
}

#[test]
fn zero_learning_rate_leaves_params_at_init() {
    let ps = pairs(4, 6, Context::Short);
    let arch = tiny_arch(Context::Short);
    let cfg = TrainConfig { lr: 0.0, ..quick(1) };
    let (p, h) = train_paired(&ps, &arch, &cfg).unwrap();
    assert_eq!(p.store, init_params(&arch, cfg.seed).unwrap().store);
    assert_eq!(h.epochs.len(), 1);
}

#[test]
fn training_is_deterministic_and_finetune_reduces_to_paired() {
    let ps = pairs(4, 6, Context::Short);
    let arch = tiny_arch(Context::Short);
    let cfg = quick(2);
    let (p1, h1) = train_paired(&ps, &arch, &cfg).unwrap();
    let (p2, h2) = train_paired(&ps, &arch, &cfg).unwrap();
    assert_eq!(h1.losses(), h2.losses());
    assert_eq!(p1.store, p2.store);
    let (p3, h3) = finetune(None, None, &ps, &arch, &TrainConfig { regime: Regime::Finetune, ..cfg }).unwrap();
    assert_eq!(p3.store, p1.store);
    assert_eq!(h3.losses(), h1.losses());
    assert_eq!(h3.regime, Regime::Finetune);
    let mut buf = Vec::new();
    h3.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.contains("\"regime\":\"finetune\"")));
}

#[test]
fn paired_training_reduces_loss() {
    let ps = pairs(2, 8, Context::Short);
    let arch = tiny_arch(Context::Short);
    let cfg = TrainConfig { epochs: 25, batch_size: 16, val_fraction: 0.0, ..TrainConfig::default() };
    let (_, h) = train_paired(&ps, &arch, &cfg).unwrap();
    let l = h.losses();
    assert!(l.last().unwrap() < &(0.5 * l[0]), "{l:?}");
}

#[test]
fn audio_context_must_match_architecture() {
    let ps = pairs(3, 5, Context::Short);
    assert!(matches!(train_paired(&ps, &tiny_arch(Context::Long), &quick(1)), Err(Error::Config(_))));
}

#[test]
fn pretraining_exports_a_loadable_encoder() {
    let ps = pairs(2, 8, Context::Short);
    let arch = tiny_arch(Context::Short);
    let sheets: Vec<_> = ps.iter().map(|p| p.sheet.clone()).collect();
    let audios: Vec<_> = ps.iter().map(|p| p.audio.clone()).collect();
    let cfg = TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::pretraining(Regime::PretrainSheet) };
    let (se, _) = pretrain_selfsup(&sheets, &arch, &cfg, &SheetAugConfig::pretraining()).unwrap();
    let cfg = TrainConfig { regime: Regime::PretrainAudio, ..cfg };
    let (ae, _) = pretrain_selfsup(&audios, &arch, &cfg, &AudioAugConfig::pretraining()).unwrap();
    assert!(se.tensors.iter().all(|(n, _)| n.starts_with("sheet.") && !n.contains("proj")));
    assert!(ae.tensors.iter().any(|(n, _)| n == "audio.fc.w"));
    let mut p = init_params(&arch, 0).unwrap();
    se.load_into(&mut p).unwrap();
    ae.load_into(&mut p).unwrap();
    let id = p.store.by_name("sheet.conv0.w").unwrap();
    assert_eq!(p.store.get(id), &se.tensors[0].1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sheet.enc");
    se.save(&path).unwrap();
    assert_eq!(PretrainedEncoder::load(&path).unwrap(), se);

    let other = ArchConfig { hidden: 32, ..arch.clone() };
    let mut q = init_params(&other, 0).unwrap();
    assert!(matches!(se.load_into(&mut q), Err(Error::Config(_))));
    let bad = TrainConfig { regime: Regime::Paired, ..cfg };
    assert!(pretrain_selfsup(&audios, &arch, &bad, &AudioAugConfig::pretraining()).is_err());
}

#[test]
fn pretraining_without_augmentation_has_perfect_positives() {
    let ps = pairs(2, 8, Context::Short);
    let sheets: Vec<_> = ps.iter().map(|p| p.sheet.clone()).collect();
    let aug = SheetAugConfig::disabled();
    let (a, b) = crate::augment::make_positive_pair(&sheets[0], &aug, 1);
    assert_eq!(a, b);
}

#[test]
fn pretrained_weights_change_initial_validation() {
    let ps = pairs(4, 24, Context::Short);
    let arch = tiny_arch(Context::Short);
    let sheets: Vec<_> = ps.iter().map(|p| p.sheet.clone()).collect();
    let pcfg = TrainConfig { epochs: 1, batch_size: 8, ..TrainConfig::pretraining(Regime::PretrainSheet) };
    let (se, _) = pretrain_selfsup(&sheets, &arch, &pcfg, &SheetAugConfig::pretraining()).unwrap();
    let cfg = TrainConfig { regime: Regime::Finetune, ..quick(1) };
    let (_, h0) = finetune(None, None, &ps, &arch, &cfg).unwrap();
    let (_, h1) = finetune(Some(&se), None, &ps, &arch, &cfg).unwrap();
    assert_ne!(h0.initial_val_mrr, h1.initial_val_mrr, "{:?}", h0.initial_val_mrr);
}
