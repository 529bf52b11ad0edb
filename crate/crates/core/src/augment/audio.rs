use ndarray::{s, Array2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_p, check_range, draw, fires, RangeAug};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng;

pub const EQ_BANDS: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftFramesAug {
    pub enabled: bool,
    pub p: f64,
    pub frames: (i32, i32),
}

impl Default for ShiftFramesAug {
    fn default() -> Self {
        Self { enabled: false, p: 1.0, frames: (0, 0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToggleAug {
    pub enabled: bool,
    pub p: f64,
}

impl Default for ToggleAug {
    fn default() -> Self {
        Self { enabled: false, p: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskAug {
    pub enabled: bool,
    pub p: f64,
    pub width: (usize, usize),
    /// Start index range; `None` draws uniformly over valid starts.
    pub offset: Option<(usize, usize)>,
}

impl Default for MaskAug {
    fn default() -> Self {
        Self { enabled: false, p: 1.0, width: (0, 0), offset: None }
    }
}

/// Spectrogram augmentation menu.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioAugConfig {
    pub time_shift: ShiftFramesAug,
    pub polarity: ToggleAug,
    /// Additive Gaussian noise standard deviation range (output re-rectified).
    pub gaussian: RangeAug,
    pub gain_db: RangeAug,
    pub time_mask: MaskAug,
    pub freq_mask: MaskAug,
    /// Playback-rate range; > 1 compresses time.
    pub time_stretch: RangeAug,
    /// Per-band gain range in dB for the 7-band equalizer.
    pub eq7: RangeAug,
}

impl AudioAugConfig {
    pub fn disabled() -> Self {
        Self {
            time_shift: ShiftFramesAug::default(),
            polarity: ToggleAug::default(),
            gaussian: RangeAug::off(0.0),
            gain_db: RangeAug::off(0.0),
            time_mask: MaskAug::default(),
            freq_mask: MaskAug::default(),
            time_stretch: RangeAug::off(1.0),
            eq7: RangeAug::off(0.0),
        }
    }

    pub fn pretraining() -> Self {
        Self {
            time_shift: ShiftFramesAug { enabled: true, p: 0.5, frames: (-4, 4) },
            polarity: ToggleAug { enabled: true, p: 0.5 },
            gaussian: RangeAug::on(0.5, (0.01, 0.08)),
            gain_db: RangeAug::on(0.5, (-6.0, 6.0)),
            time_mask: MaskAug { enabled: true, p: 0.5, width: (2, 8), offset: None },
            freq_mask: MaskAug { enabled: true, p: 0.5, width: (2, 8), offset: None },
            time_stretch: RangeAug::on(0.5, (0.8, 1.25)),
            eq7: RangeAug::on(0.5, (-6.0, 6.0)),
        }
    }

    /// Strong corruption emulating real recordings.
    pub fn heavy() -> Self {
        Self {
            time_shift: ShiftFramesAug { enabled: true, p: 1.0, frames: (-3, 3) },
            polarity: ToggleAug { enabled: true, p: 0.5 },
            gaussian: RangeAug::on(1.0, (0.03, 0.08)),
            gain_db: RangeAug::on(1.0, (-6.0, 6.0)),
            time_mask: MaskAug { enabled: true, p: 0.5, width: (2, 6), offset: None },
            freq_mask: MaskAug { enabled: true, p: 0.5, width: (2, 6), offset: None },
            time_stretch: RangeAug::off(1.0),
            eq7: RangeAug::on(1.0, (-6.0, 6.0)),
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.time_shift.enabled
            || self.polarity.enabled
            || self.gaussian.enabled
            || self.gain_db.enabled
            || self.time_mask.enabled
            || self.freq_mask.enabled
            || self.time_stretch.enabled
            || self.eq7.enabled
    }

    pub fn validate(&self) -> Result<()> {
        check_p("time_shift", self.time_shift.p)?;
        check_range("time_shift.frames", (self.time_shift.frames.0 as f64, self.time_shift.frames.1 as f64))?;
        check_p("polarity", self.polarity.p)?;
        for (name, r) in [
            ("gaussian", &self.gaussian),
            ("gain_db", &self.gain_db),
            ("time_stretch", &self.time_stretch),
            ("eq7", &self.eq7),
        ] {
            r.validate(name)?;
        }
        if self.time_stretch.range.0 <= 0.0 {
            return Err(Error::config("time stretch rate must be positive"));
        }
        for (name, m) in [("time_mask", &self.time_mask), ("freq_mask", &self.freq_mask)] {
            check_p(name, m.p)?;
            check_range(name, (m.width.0 as f64, m.width.1 as f64))?;
        }
        Ok(())
    }

    /// Checks the mask widths against concrete excerpt dimensions.
    pub fn validate_for(&self, bins: usize, frames: usize) -> Result<()> {
        self.validate()?;
        if self.time_mask.enabled && self.time_mask.width.1 >= frames {
            return Err(Error::config("time mask must be narrower than the excerpt"));
        }
        if self.freq_mask.enabled && self.freq_mask.width.1 >= bins {
            return Err(Error::config("frequency mask must be narrower than the excerpt"));
        }
        Ok(())
    }
}

impl Default for AudioAugConfig {
    fn default() -> Self {
        Self::pretraining()
    }
}

pub fn augment_audio(excerpt: &Grid, cfg: &AudioAugConfig, seed: u64) -> Grid {
    if !cfg.any_enabled() {
        return excerpt.clone();
    }
    let (bins, frames) = excerpt.dim();
    let sub = |k: u64| rng::rng_at(seed, &[k]);
    let mut x = excerpt.mapv(f64::from);

    let mut r = sub(0);
    if cfg.time_stretch.enabled && fires(&mut r, cfg.time_stretch.p) {
        x = time_stretch(&x, draw(&mut r, cfg.time_stretch.range));
    }
    let mut r = sub(1);
    if cfg.time_shift.enabled && fires(&mut r, cfg.time_shift.p) {
        let (lo, hi) = cfg.time_shift.frames;
        let k = if hi > lo { r.gen_range(lo..=hi) } else { lo };
        x = time_shift(&x, k as isize);
    }
    let mut r = sub(2);
    if cfg.eq7.enabled && fires(&mut r, cfg.eq7.p) {
        let gains: Vec<f64> = (0..EQ_BANDS).map(|_| draw(&mut r, cfg.eq7.range)).collect();
        equalize(&mut x, &gains);
    }
    let mut r = sub(3);
    if cfg.gain_db.enabled && fires(&mut r, cfg.gain_db.p) {
        let factor = 10f64.powf(draw(&mut r, cfg.gain_db.range) / 20.0);
        x.mapv_inplace(|v| v * factor);
    }
    let mut r = sub(4);
    if cfg.polarity.enabled && fires(&mut r, cfg.polarity.p) {
        invert_polarity(&mut x);
    }
    let mut r = sub(5);
    if cfg.gaussian.enabled && fires(&mut r, cfg.gaussian.p) {
        let sigma = draw(&mut r, cfg.gaussian.range);
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("finite sigma");
            x.mapv_inplace(|v| (v + n.sample(&mut r)).max(0.0));
        }
    }
    let mut r = sub(6);
    if cfg.time_mask.enabled && fires(&mut r, cfg.time_mask.p) {
        let (off, w) = mask_span(&mut r, &cfg.time_mask, frames);
        x.slice_mut(s![.., off..off + w]).fill(0.0);
    }
    let mut r = sub(7);
    if cfg.freq_mask.enabled && fires(&mut r, cfg.freq_mask.p) {
        let (off, w) = mask_span(&mut r, &cfg.freq_mask, bins);
        x.slice_mut(s![off..off + w, ..]).fill(0.0);
    }
    x.mapv(|v| v.max(0.0) as f32)
}

fn mask_span(r: &mut rng::Rng, m: &MaskAug, len: usize) -> (usize, usize) {
    let max_w = len.saturating_sub(1);
    let w = if m.width.1 > m.width.0 { r.gen_range(m.width.0..=m.width.1) } else { m.width.0 }.min(max_w);
    let last_start = len - w;
    let off = match m.offset {
        Some((lo, hi)) if hi > lo => r.gen_range(lo..=hi),
        Some((lo, _)) => lo,
        None => r.gen_range(0..=last_start),
    };
    (off.min(last_start), w)
}

/// Resamples along time around the excerpt center by linear interpolation,
/// keeping the frame count.
pub(crate) fn time_stretch(x: &Array2<f64>, rate: f64) -> Array2<f64> {
    let (bins, frames) = x.dim();
    let c = (frames as f64 - 1.0) / 2.0;
    let mut out = Array2::zeros((bins, frames));
    for j in 0..frames {
        let t = (j as f64 - c) * rate + c;
        if t < 0.0 || t > (frames - 1) as f64 {
            continue;
        }
        let t0 = t.floor() as usize;
        let f = t - t0 as f64;
        let t1 = (t0 + 1).min(frames - 1);
        for b in 0..bins {
            out[[b, j]] = x[[b, t0]] * (1.0 - f) + x[[b, t1]] * f;
        }
    }
    out
}

fn time_shift(x: &Array2<f64>, k: isize) -> Array2<f64> {
    let frames = x.ncols() as isize;
    let mut out = Array2::zeros(x.raw_dim());
    for j in 0..frames {
        let src = j - k;
        if (0..frames).contains(&src) {
            out.column_mut(j as usize).assign(&x.column(src as usize));
        }
    }
    out
}

fn equalize(x: &mut Array2<f64>, gains_db: &[f64]) {
    let bins = x.nrows();
    for (b, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
        let band = (b * gains_db.len() / bins).min(gains_db.len() - 1);
        let g = 10f64.powf(gains_db[band] / 20.0);
        row.mapv_inplace(|v| v * g);
    }
}

/// Sign flip of the mean-removed excerpt followed by rectification about the
/// mean: cells at or above the mean are unchanged, cells below are mirrored.
fn invert_polarity(x: &mut Array2<f64>) {
    let m = x.mean().unwrap_or(0.0);
    x.mapv_inplace(|v| m + (-(v - m)).abs());
}
