//! Stochastic augmentation for both modalities.
//!
//! The same transform menus serve two purposes: generating positive pairs
//! for contrastive pretraining, and building corrupted evaluation tiers.
//! Every transform is a pure function of `(input, config, seed)`.

mod audio;
mod noise;
mod sheet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use audio::{augment_audio, AudioAugConfig, MaskAug, ShiftFramesAug, ToggleAug, EQ_BANDS};
pub use noise::{perlin, smooth_field};
pub use sheet::{augment_sheet, ElasticAug, PerlinAug, SheetAugConfig, ShiftAug};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::{self, Rng};

/// A transform with a real-valued parameter drawn uniformly from `range`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RangeAug {
    pub enabled: bool,
    pub p: f64,
    pub range: (f64, f64),
}

impl RangeAug {
    pub fn on(p: f64, range: (f64, f64)) -> Self {
        Self { enabled: true, p, range }
    }

    pub fn off(neutral: f64) -> Self {
        Self { enabled: false, p: 1.0, range: (neutral, neutral) }
    }

    fn validate(&self, name: &str) -> Result<()> {
        check_p(name, self.p)?;
        check_range(name, self.range)
    }
}

impl Default for RangeAug {
    fn default() -> Self {
        Self::off(0.0)
    }
}

fn check_p(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("{name}: probability {p} outside [0, 1]")))
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo <= hi && lo.is_finite() && hi.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name}: empty range ({lo}, {hi})")))
    }
}

fn fires(rng: &mut Rng, p: f64) -> bool {
    p >= 1.0 || rng.gen::<f64>() < p
}

fn draw(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// A per-modality augmentation menu.
pub trait Augment {
    fn apply(&self, x: &Grid, seed: u64) -> Grid;
}

impl Augment for SheetAugConfig {
    fn apply(&self, x: &Grid, seed: u64) -> Grid {
        augment_sheet(x, self, seed)
    }
}

impl Augment for AudioAugConfig {
    fn apply(&self, x: &Grid, seed: u64) -> Grid {
        augment_audio(x, self, seed)
    }
}

/// Two independently augmented views of one sample, drawn from decorrelated
/// sub-seeds of `seed`.
pub fn make_positive_pair<A: Augment + ?Sized>(sample: &Grid, cfg: &A, seed: u64) -> (Grid, Grid) {
    (
        cfg.apply(sample, rng::derive_seed(seed, 0)),
        cfg.apply(sample, rng::derive_seed(seed, 1)),
    )
}
