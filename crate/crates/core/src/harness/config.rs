//! Experiment configuration. Files are TOML; `dump_config` writes every key
//! as a flat dotted assignment so a dump can be edited line by line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AudioAugConfig, SheetAugConfig};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, HeadKind, Variant};
use crate::synthdata::{Context, DatasetConfig, RenderConfig, TempoSpec};
use crate::training::{Regime, TrainConfig};

/// The five rows of the context/attention comparison.
pub const TABLE1_VARIANTS: [Variant; 5] = [
    Variant::new(HeadKind::Pooled, Context::Short, false),
    Variant::new(HeadKind::Dense, Context::Short, false),
    Variant::new(HeadKind::Dense, Context::Long, false),
    Variant::new(HeadKind::Dense, Context::Short, true),
    Variant::new(HeadKind::Dense, Context::Long, true),
];

/// Piece counts and rendering shared by every study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_pieces: usize,
    pub test_pieces: usize,
    pub notes_per_piece: usize,
    pub pitch_low: i32,
    pub pitch_high: i32,
    pub tempo: TempoSpec,
    pub render: RenderConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        let base = DatasetConfig::default();
        Self {
            train_pieces: 200,
            test_pieces: 50,
            notes_per_piece: 25,
            pitch_low: base.pitch_low,
            pitch_high: base.pitch_high,
            tempo: base.tempo,
            render: RenderConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn dataset(&self, n_pieces: usize, tempo: &TempoSpec) -> DatasetConfig {
        DatasetConfig {
            n_pieces,
            notes_per_piece: self.notes_per_piece,
            pitch_low: self.pitch_low,
            pitch_high: self.pitch_high,
            tempo: tempo.clone(),
            render: self.render.clone(),
        }
    }

    pub fn test_snippets(&self) -> usize {
        self.test_pieces * self.notes_per_piece
    }
}

/// Model settings applied on top of each variant's defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub blocks: usize,
    pub hidden: usize,
    pub attention_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = ArchConfig::default();
        Self { base_channels: a.base_channels, blocks: a.blocks, hidden: a.hidden, attention_gain: a.attention_gain }
    }
}

impl ModelConfig {
    pub fn arch(&self, v: Variant) -> ArchConfig {
        ArchConfig {
            base_channels: self.base_channels,
            blocks: self.blocks,
            hidden: self.hidden,
            attention_gain: self.attention_gain,
            ..ArchConfig::for_variant(v)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Config {
    pub variants: Vec<Variant>,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self { variants: TABLE1_VARIANTS.to_vec() }
    }
}

/// Evaluation-time corruption for the three tiers: tier I is clean, tier II
/// corrupts sheets only, tier III corrupts both modalities and re-renders the
/// test performances with `noisy_tempo`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TierConfig {
    pub sheet: SheetAugConfig,
    pub audio: AudioAugConfig,
    pub noisy_tempo: TempoSpec,
}

impl Default for TierConfig {
    fn default() -> Self {
        Self {
            sheet: SheetAugConfig::heavy(),
            audio: AudioAugConfig::heavy(),
            noisy_tempo: TempoSpec { global: (0.5, 2.0), local: (0.7, 1.4), spacing_beats: 4.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainStudyConfig {
    pub variant: Variant,
    /// Pieces rendered only to harvest unlabeled snippets.
    pub unlabeled_pieces: usize,
    pub train: TrainConfig,
    pub sheet_aug: SheetAugConfig,
    pub audio_aug: AudioAugConfig,
    pub tiers: TierConfig,
}

impl Default for PretrainStudyConfig {
    fn default() -> Self {
        Self {
            variant: TABLE1_VARIANTS[1],
            unlabeled_pieces: 120,
            train: TrainConfig::pretraining(Regime::PretrainSheet),
            sheet_aug: SheetAugConfig::pretraining(),
            audio_aug: AudioAugConfig::pretraining(),
            tiers: TierConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PieceIdConfig {
    pub variant: Variant,
    pub sheet_hop: usize,
    pub audio_hop: usize,
    pub normalize: bool,
    /// Tempo ranges for re-rendering the query performances.
    pub query_tempo: TempoSpec,
}

impl Default for PieceIdConfig {
    fn default() -> Self {
        Self {
            variant: TABLE1_VARIANTS[1],
            sheet_hop: 30,
            audio_hop: 8,
            normalize: true,
            query_tempo: TempoSpec { global: (0.5, 2.0), local: (0.7, 1.4), spacing_beats: 4.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Test snippets kept as retrieval candidates.
    pub pool_size: usize,
    /// Load checkpoints from `out/checkpoints` instead of training.
    pub no_train: bool,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub table1: Table1Config,
    pub pretraining: PretrainStudyConfig,
    pub pieceid: PieceIdConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("runs"),
            pool_size: 1000,
            no_train: false,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig { epochs: 10, ..TrainConfig::default() },
            table1: Table1Config::default(),
            pretraining: PretrainStudyConfig::default(),
            pieceid: PieceIdConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data.train_pieces < 2 {
            return Err(Error::config("data.train_pieces must be at least 2"));
        }
        if self.data.test_pieces == 0 || self.data.notes_per_piece == 0 {
            return Err(Error::config("data.test_pieces and data.notes_per_piece must be positive"));
        }
        if self.pool_size == 0 || self.pool_size > self.data.test_snippets() {
            return Err(Error::config(format!(
                "pool_size {} must be in 1..={} (test pieces x notes per piece)",
                self.pool_size,
                self.data.test_snippets()
            )));
        }
        if self.table1.variants.is_empty() {
            return Err(Error::config("table1.variants is empty"));
        }
        for v in self.table1.variants.iter().chain([&self.pretraining.variant, &self.pieceid.variant]) {
            self.model.arch(*v).validate()?;
        }
        if self.pieceid.sheet_hop == 0 || self.pieceid.audio_hop == 0 {
            return Err(Error::config("pieceid hops must be positive"));
        }
        self.train.validate()?;
        self.pretraining.train.validate()?;
        self.pretraining.sheet_aug.validate()?;
        self.pretraining.audio_aug.validate()?;
        self.pretraining.tiers.sheet.validate()?;
        self.pretraining.tiers.audio.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn dump(&self) -> Result<String> {
        let value = toml::Value::try_from(self).map_err(|e| Error::config(format!("config: {e}")))?;
        let mut out = String::new();
        flatten("", &value, &mut out);
        Ok(out)
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut String) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        other => {
            let _ = writeln!(out, "{prefix} = {other}");
        }
    }
}
