use std::time::Instant;

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;

use super::{split_by_piece, EpochRecord, PretrainedEncoder, Regime, TrainConfig, TrainHistory};
use crate::augment::{augment_audio, augment_sheet};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::losses::pairwise_ranking_loss_grad;
use crate::model::{
    audio_batch, init_params, sheet_batch, ArchConfig, Embedding, Encoder, MaskMode, ModelParams, Network,
};
use crate::nn::{Adam, ParamStore};
use crate::retrieval::{evaluate, paired_ranks, Direction};
use crate::rng;
use crate::synthdata::SnippetPair;

/// Sheet and audio embeddings for every pair, in order.
pub fn encode_pairs(params: &ModelParams, pairs: &[&SnippetPair]) -> Result<(Vec<Embedding>, Vec<Embedding>)> {
    let enc = Encoder::new(params)?;
    let sheets: Vec<&Grid> = pairs.iter().map(|p| &p.sheet).collect();
    let audios: Vec<&Grid> = pairs.iter().map(|p| &p.audio).collect();
    Ok((enc.sheets(&sheets)?, enc.audios(&audios, params.arch.attention)?))
}

/// Audio-to-sheet MRR over `pairs`, each pair's partner being its target.
pub fn validation_mrr(params: &ModelParams, pairs: &[&SnippetPair]) -> Result<f64> {
    let (s, a) = encode_pairs(params, pairs)?;
    Ok(evaluate(&paired_ranks(&s, &a, Direction::AudioToSheet)?)?.mrr)
}

fn check_pairs(arch: &ArchConfig, pairs: &[&SnippetPair]) -> Result<()> {
    let want = arch.audio_input_hw();
    if let Some(p) = pairs.iter().find(|p| p.audio.dim() != want) {
        return Err(Error::config(format!(
            "pair from {} has audio {:?}, architecture expects {:?}",
            p.piece_id,
            p.audio.dim(),
            want
        )));
    }
    Ok(())
}

/// Paired training with a piece-level train/validation split.
pub fn train_paired(pairs: &[SnippetPair], arch: &ArchConfig, cfg: &TrainConfig) -> Result<(ModelParams, TrainHistory)> {
    finetune(None, None, pairs, arch, &TrainConfig { regime: Regime::Paired, ..cfg.clone() })
}

/// Paired training starting from pretrained pathway encoders, where given.
/// With neither encoder this is exactly [`train_paired`] apart from the
/// regime tag.
pub fn finetune(
    sheet: Option<&PretrainedEncoder>,
    audio: Option<&PretrainedEncoder>,
    pairs: &[SnippetPair],
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    let (tr, va) = split_by_piece(pairs, cfg.val_fraction, cfg.seed)?;
    if tr.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let train: Vec<&SnippetPair> = tr.iter().map(|&i| &pairs[i]).collect();
    let val: Vec<&SnippetPair> = va.iter().map(|&i| &pairs[i]).collect();
    let mut params = init_params(arch, cfg.seed)?;
    for enc in [sheet, audio].into_iter().flatten() {
        enc.load_into(&mut params)?;
    }
    train_on_split(params, &train, &val, cfg)
}

/// The training loop proper. Returns the best-validation parameters, or the
/// final ones when `val` is empty.
pub fn train_on_split(
    mut params: ModelParams,
    train: &[&SnippetPair],
    val: &[&SnippetPair],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    let arch = params.arch.clone();
    check_pairs(&arch, train)?;
    check_pairs(&arch, val)?;
    if train.len() < 2 {
        return Err(Error::config("need at least two training pairs"));
    }
    let net = params.network()?;
    let mode = if arch.attention { MaskMode::Learned } else { MaskMode::None };
    let mut opt = Adam::new(&params.store, cfg.lr);
    let mut hist = TrainHistory::new(cfg.regime);
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    if !val.is_empty() {
        let m = validation_mrr(&params, val)?;
        hist.initial_val_mrr = Some(m);
        best = Some((m, params.store.clone()));
    }
    let mut since_best = 0;
    let mut since_decay = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut rng::rng_at(cfg.seed, &[1, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let l = step(&net, &mut params.store, &mut opt, train, chunk, cfg, epoch, mode)?;
            loss_sum += l;
            batches += 1;
        }
        let val_mrr = if val.is_empty() { None } else { Some(validation_mrr(&params, val)?) };
        let record = EpochRecord {
            epoch,
            loss: loss_sum / batches.max(1) as f64,
            val_mrr,
            lr: opt.lr,
            seconds: t0.elapsed().as_secs_f64(),
        };
        info!("{} epoch {epoch}: loss {:.4} val_mrr {:?}", cfg.regime.tag(), record.loss, record.val_mrr);
        hist.epochs.push(record);
        let Some(m) = val_mrr else { continue };
        if best.as_ref().is_none_or(|(b, _)| m > *b) {
            best = Some((m, params.store.clone()));
            hist.best_epoch = Some(epoch);
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_decay >= cfg.plateau_patience {
                opt.lr *= cfg.lr_decay;
                since_decay = 0;
            }
            if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    if let Some((_, store)) = best {
        params.store = store;
    }
    Ok((params, hist))
}

#[allow(clippy::too_many_arguments)]
fn step(
    net: &Network,
    store: &mut ParamStore<f32>,
    opt: &mut Adam<f32>,
    train: &[&SnippetPair],
    idx: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    mode: MaskMode<'_, f32>,
) -> Result<f64> {
    let aug = &cfg.augment;
    let (mut sheets, mut audios) = (Vec::with_capacity(idx.len()), Vec::with_capacity(idx.len()));
    for &i in idx {
        let seed = rng::derive_path(cfg.seed, &[2, epoch as u64, i as u64]);
        sheets.push(augment_sheet(&train[i].sheet, &aug.sheet, rng::derive_seed(seed, 0)));
        audios.push(augment_audio(&train[i].audio, &aug.audio, rng::derive_seed(seed, 1)));
    }
    let sr: Vec<&Grid> = sheets.iter().collect();
    let ar: Vec<&Grid> = audios.iter().collect();
    let xs = sheet_batch::<f32>(&sr, net.sheet.input_hw, net.arch.sheet_downsample)?;
    let xa = audio_batch::<f32>(&ar, net.audio.input_hw)?;
    let (zs, ts) = net.sheet_forward(store, &xs)?;
    let (za, ta) = net.audio_forward(store, &xa, mode)?;
    let (l1, ga1, gs1) = pairwise_ranking_loss_grad(&za, &zs, cfg.margin)?;
    let (l2, gs2, ga2) = pairwise_ranking_loss_grad(&zs, &za, cfg.margin)?;
    let half = 0.5f32;
    let dza: Array2<f32> = (&ga1 + &ga2) * half;
    let dzs: Array2<f32> = (&gs1 + &gs2) * half;
    let mut grads = store.zeros_like();
    net.sheet_backward(store, &ts, &dzs, &mut grads);
    net.audio_backward(store, &ta, &dza, &mut grads);
    opt.step(store, &grads);
    Ok(0.5 * (l1.value + l2.value))
}
