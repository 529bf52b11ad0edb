//! Training regimes: supervised paired training, per-pathway contrastive
//! pretraining, and finetuning from pretrained pathways.
//!
//! All randomness (split, batch order, augmentation draws, init) derives
//! from `TrainConfig::seed`, so a run is a pure function of its inputs.

mod paired;
mod pretrain;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use paired::{encode_pairs, finetune, train_on_split, train_paired, validation_mrr};
pub use pretrain::{pretrain_selfsup, PretrainedEncoder};

use crate::augment::{AudioAugConfig, SheetAugConfig};
use crate::error::{Error, Result};
use crate::losses::{Reduction, DEFAULT_MARGIN, DEFAULT_TAU};
use crate::rng;
use crate::synthdata::SnippetPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Paired,
    PretrainSheet,
    PretrainAudio,
    Finetune,
}

impl Regime {
    pub fn tag(self) -> &'static str {
        match self {
            Regime::Paired => "paired",
            Regime::PretrainSheet => "pretrain_sheet",
            Regime::PretrainAudio => "pretrain_audio",
            Regime::Finetune => "finetune",
        }
    }
}

/// Augmentation applied to training pairs in the supervised regimes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairAugConfig {
    pub sheet: SheetAugConfig,
    pub audio: AudioAugConfig,
}

impl PairAugConfig {
    pub fn disabled() -> Self {
        Self { sheet: SheetAugConfig::disabled(), audio: AudioAugConfig::disabled() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub regime: Regime,
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Learning-rate factor applied after `plateau_patience` epochs without
    /// a validation improvement.
    pub lr_decay: f64,
    pub plateau_patience: usize,
    /// Stop after this many epochs without improvement; 0 disables.
    pub early_stop_patience: usize,
    pub margin: f64,
    pub tau: f64,
    pub reduction: Reduction,
    /// Share of pieces held out for validation.
    pub val_fraction: f64,
    pub augment: PairAugConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Paired,
            seed: 0,
            batch_size: 32,
            epochs: 30,
            lr: 1e-3,
            lr_decay: 0.5,
            plateau_patience: 5,
            early_stop_patience: 10,
            margin: DEFAULT_MARGIN,
            tau: DEFAULT_TAU,
            reduction: Reduction::Mean,
            val_fraction: 0.2,
            augment: PairAugConfig::disabled(),
        }
    }
}

impl TrainConfig {
    pub fn pretraining(modality_regime: Regime) -> Self {
        Self { regime: modality_regime, batch_size: 64, epochs: 20, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        // Paired batches need a negative; pretraining batches yield 2N >= 4 views.
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be non-negative"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay must be in (0, 1]"));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config("tau must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must be in [0, 1)"));
        }
        self.augment.sheet.validate()?;
        self.augment.audio.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_mrr: Option<f64>,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub regime: Regime,
    pub epochs: Vec<EpochRecord>,
    /// Validation MRR of the starting parameters, before any update.
    pub initial_val_mrr: Option<f64>,
    pub best_epoch: Option<usize>,
    pub checkpoint: Option<String>,
}

impl TrainHistory {
    pub fn new(regime: Regime) -> Self {
        Self { regime, epochs: Vec::new(), initial_val_mrr: None, best_epoch: None, checkpoint: None }
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn best_val_mrr(&self) -> Option<f64> {
        self.epochs.iter().filter_map(|e| e.val_mrr).fold(None, |a, b| Some(a.map_or(b, |a: f64| a.max(b))))
    }

    /// One JSON object per epoch, each tagged with the regime.
    pub fn write_jsonl<W: Write>(&self, w: &mut W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            regime: &'static str,
            #[serde(flatten)]
            record: &'a EpochRecord,
        }
        for record in &self.epochs {
            serde_json::to_writer(&mut *w, &Line { regime: self.regime.tag(), record })?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Splits pairs into train and validation sets by piece. At least one piece
/// goes to each side when `val_fraction > 0`.
pub fn split_by_piece(pairs: &[SnippetPair], val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if pairs.is_empty() {
        return Err(Error::config("empty dataset"));
    }
    let mut pieces: Vec<&str> =
        pairs.iter().map(|p| p.piece_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    if val_fraction == 0.0 {
        return Ok(((0..pairs.len()).collect(), Vec::new()));
    }
    if pieces.len() < 2 {
        return Err(Error::config("a train/validation split needs at least two pieces"));
    }
    pieces.shuffle(&mut rng::rng_at(seed, &[0x5911]));
    let n_val = ((pieces.len() as f64 * val_fraction).round() as usize).clamp(1, pieces.len() - 1);
    let val: BTreeSet<&str> = pieces[..n_val].iter().copied().collect();
    let (mut tr, mut va) = (Vec::new(), Vec::new());
    for (i, p) in pairs.iter().enumerate() {
        if val.contains(p.piece_id.as_str()) {
            va.push(i);
        } else {
            tr.push(i);
        }
    }
    Ok((tr, va))
}

#[cfg(test)]
mod tests;
