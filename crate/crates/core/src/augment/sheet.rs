use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::noise::{perlin, smooth_field};
use super::{check_p, check_range, draw, fires, RangeAug};
use crate::error::Result;
use crate::grid::Grid;
use crate::rng;
use crate::synthdata::BACKGROUND;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShiftAug {
    pub enabled: bool,
    pub p: f64,
    /// Column shift range in pixels (positive moves content right).
    pub dx: (i32, i32),
    /// Row shift range in pixels (positive moves content down).
    pub dy: (i32, i32),
}

impl Default for ShiftAug {
    fn default() -> Self {
        Self { enabled: false, p: 1.0, dx: (0, 0), dy: (0, 0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerlinAug {
    pub enabled: bool,
    pub p: f64,
    pub octaves: (usize, usize),
    pub amplitude: (f64, f64),
    pub base_cell: f64,
}

impl Default for PerlinAug {
    fn default() -> Self {
        Self { enabled: false, p: 1.0, octaves: (2, 4), amplitude: (0.0, 0.0), base_cell: 32.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticAug {
    pub enabled: bool,
    pub p: f64,
    /// Standard deviation of the displacement field in pixels.
    pub sigma_disp: f64,
    /// Gaussian smoothing scale of the field in pixels.
    pub smooth: f64,
}

impl ElasticAug {
    pub fn small() -> Self {
        Self { enabled: true, p: 1.0, sigma_disp: 2.0, smooth: 8.0 }
    }

    pub fn large() -> Self {
        Self { enabled: true, p: 1.0, sigma_disp: 8.0, smooth: 24.0 }
    }
}

impl Default for ElasticAug {
    fn default() -> Self {
        Self { enabled: false, ..Self::small() }
    }
}

/// Sheet-snippet augmentation menu. Each transform has an enable flag, an
/// application probability and its parameter ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SheetAugConfig {
    pub shift: ShiftAug,
    /// Scale factor range.
    pub resize: RangeAug,
    /// Rotation range in degrees.
    pub rotation: RangeAug,
    /// Additive Gaussian noise standard deviation range.
    pub gaussian: RangeAug,
    pub perlin: PerlinAug,
    pub elastic_small: ElasticAug,
    pub elastic_large: ElasticAug,
}

impl SheetAugConfig {
    pub fn disabled() -> Self {
        Self {
            shift: ShiftAug::default(),
            resize: RangeAug::off(1.0),
            rotation: RangeAug::off(0.0),
            gaussian: RangeAug::off(0.0),
            perlin: PerlinAug::default(),
            elastic_small: ElasticAug::default(),
            elastic_large: ElasticAug::default(),
        }
    }

    /// Moderate preset used to build positive pairs for pretraining.
    pub fn pretraining() -> Self {
        Self {
            shift: ShiftAug { enabled: true, p: 0.5, dx: (-12, 12), dy: (-8, 8) },
            resize: RangeAug::on(0.5, (0.9, 1.1)),
            rotation: RangeAug::on(0.5, (-3.0, 3.0)),
            gaussian: RangeAug::on(0.5, (0.02, 0.15)),
            perlin: PerlinAug { enabled: true, p: 0.5, octaves: (2, 4), amplitude: (0.1, 0.4), base_cell: 32.0 },
            elastic_small: ElasticAug { p: 0.5, ..ElasticAug::small() },
            elastic_large: ElasticAug { p: 0.2, ..ElasticAug::large() },
        }
    }

    /// Strong corruption emulating scanned pages.
    pub fn heavy() -> Self {
        Self {
            shift: ShiftAug { enabled: true, p: 1.0, dx: (-10, 10), dy: (-6, 6) },
            resize: RangeAug::on(1.0, (0.9, 1.1)),
            rotation: RangeAug::on(1.0, (-3.0, 3.0)),
            gaussian: RangeAug::on(1.0, (0.05, 0.15)),
            perlin: PerlinAug { enabled: true, p: 1.0, octaves: (2, 4), amplitude: (0.2, 0.4), base_cell: 32.0 },
            elastic_small: ElasticAug::small(),
            elastic_large: ElasticAug { p: 0.5, ..ElasticAug::large() },
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.shift.enabled
            || self.resize.enabled
            || self.rotation.enabled
            || self.gaussian.enabled
            || self.perlin.enabled
            || self.elastic_small.enabled
            || self.elastic_large.enabled
    }

    pub fn validate(&self) -> Result<()> {
        check_p("shift", self.shift.p)?;
        check_range("shift.dx", (self.shift.dx.0 as f64, self.shift.dx.1 as f64))?;
        check_range("shift.dy", (self.shift.dy.0 as f64, self.shift.dy.1 as f64))?;
        for (name, r) in [("resize", &self.resize), ("rotation", &self.rotation), ("gaussian", &self.gaussian)] {
            r.validate(name)?;
        }
        if self.resize.range.0 <= 0.0 {
            return Err(crate::Error::config("resize scale must be positive"));
        }
        check_p("perlin", self.perlin.p)?;
        check_range("perlin.amplitude", self.perlin.amplitude)?;
        check_range("perlin.octaves", (self.perlin.octaves.0 as f64, self.perlin.octaves.1 as f64))?;
        for (name, e) in [("elastic_small", &self.elastic_small), ("elastic_large", &self.elastic_large)] {
            check_p(name, e.p)?;
            if e.sigma_disp < 0.0 || e.smooth < 0.0 {
                return Err(crate::Error::config(format!("{name}: negative parameter")));
            }
        }
        Ok(())
    }
}

impl Default for SheetAugConfig {
    fn default() -> Self {
        Self::pretraining()
    }
}

/// Applies the enabled sheet transforms. Geometric transforms resample the
/// input once (filling uncovered area with background); noise follows; the
/// result is clamped to [0, 1].
pub fn augment_sheet(snippet: &Grid, cfg: &SheetAugConfig, seed: u64) -> Grid {
    if !cfg.any_enabled() {
        return snippet.clone();
    }
    let (h, w) = snippet.dim();
    let sub = |k: u64| rng::rng_at(seed, &[k]);

    let (mut dx, mut dy) = (0.0, 0.0);
    let mut r = sub(0);
    if cfg.shift.enabled && fires(&mut r, cfg.shift.p) {
        dx = draw_int(&mut r, cfg.shift.dx) as f64;
        dy = draw_int(&mut r, cfg.shift.dy) as f64;
    }
    let mut r = sub(1);
    let scale = if cfg.resize.enabled && fires(&mut r, cfg.resize.p) { draw(&mut r, cfg.resize.range) } else { 1.0 };
    let mut r = sub(2);
    let angle = if cfg.rotation.enabled && fires(&mut r, cfg.rotation.p) {
        draw(&mut r, cfg.rotation.range).to_radians()
    } else {
        0.0
    };
    let mut field: Option<(Array2<f64>, Array2<f64>)> = None;
    for (k, e) in [(3, &cfg.elastic_small), (4, &cfg.elastic_large)] {
        let mut r = sub(k);
        if e.enabled && fires(&mut r, e.p) {
            let fy = smooth_field(&mut r, h, w, e.smooth, e.sigma_disp);
            let fx = smooth_field(&mut r, h, w, e.smooth, e.sigma_disp);
            field = Some(match field {
                None => (fy, fx),
                Some((ay, ax)) => (ay + fy, ax + fx),
            });
        }
    }

    let geometric = dx != 0.0 || dy != 0.0 || scale != 1.0 || angle != 0.0 || field.is_some();
    let mut out: Array2<f64> = if geometric {
        let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let (sin, cos) = angle.sin_cos();
        Array2::from_shape_fn((h, w), |(row, col)| {
            let py = row as f64 - cy - dy;
            let px = col as f64 - cx - dx;
            // inverse rotation, then inverse scale
            let mut sy = (cos * py - sin * px) / scale + cy;
            let mut sx = (sin * py + cos * px) / scale + cx;
            if let Some((fy, fx)) = &field {
                sy += fy[[row, col]];
                sx += fx[[row, col]];
            }
            bilinear(snippet, sy, sx)
        })
    } else {
        snippet.mapv(f64::from)
    };

    let mut r = sub(5);
    if cfg.gaussian.enabled && fires(&mut r, cfg.gaussian.p) {
        let sigma = draw(&mut r, cfg.gaussian.range);
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("finite sigma");
            out.mapv_inplace(|v| v + n.sample(&mut r));
        }
    }
    let mut r = sub(6);
    if cfg.perlin.enabled && fires(&mut r, cfg.perlin.p) {
        let amp = draw(&mut r, cfg.perlin.amplitude);
        let octaves = draw_int(&mut r, (cfg.perlin.octaves.0 as i32, cfg.perlin.octaves.1 as i32)).max(1) as usize;
        let noise = perlin(&mut r, h, w, cfg.perlin.base_cell, octaves, 0.5);
        out.zip_mut_with(&noise, |v, n| *v += amp * n);
    }
    out.mapv(|v| v.clamp(0.0, 1.0) as f32)
}

fn draw_int(rng: &mut rng::Rng, (lo, hi): (i32, i32)) -> i32 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

fn bilinear(src: &Grid, y: f64, x: f64) -> f64 {
    let (h, w) = src.dim();
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let px = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            BACKGROUND as f64
        } else {
            src[[yy as usize, xx as usize]] as f64
        }
    };
    let top = if fx == 0.0 { px(y0, x0) } else { px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1.0) * fx };
    if fy == 0.0 {
        return top;
    }
    let bot = if fx == 0.0 { px(y0 + 1.0, x0) } else { px(y0 + 1.0, x0) * (1.0 - fx) + px(y0 + 1.0, x0 + 1.0) * fx };
    top * (1.0 - fy) + bot * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{SHEET_HEIGHT, SHEET_WIDTH};

    fn random_sheet(seed: u64) -> Grid {
        let mut r = rng::rng(seed);
        Array2::from_shape_fn((SHEET_HEIGHT, SHEET_WIDTH), |_| r.gen::<f32>())
    }

    #[test]
    fn disabled_is_identity() {
        let x = random_sheet(1);
        assert_eq!(augment_sheet(&x, &SheetAugConfig::disabled(), 9), x);
    }

    #[test]
    fn deterministic_noise() {
        let x = random_sheet(2);
        let cfg = SheetAugConfig { gaussian: RangeAug::on(1.0, (0.1, 0.1)), ..SheetAugConfig::disabled() };
        let a = augment_sheet(&x, &cfg, 4);
        assert_eq!(a, augment_sheet(&x, &cfg, 4));
        assert_ne!(a, x);
    }

    #[test]
    fn integer_shift_moves_pixel() {
        let mut x = Array2::<f32>::zeros((SHEET_HEIGHT, SHEET_WIDTH));
        x[[40, 60]] = 1.0;
        let cfg = SheetAugConfig {
            shift: ShiftAug { enabled: true, p: 1.0, dx: (5, 5), dy: (0, 0) },
            ..SheetAugConfig::disabled()
        };
        let y = augment_sheet(&x, &cfg, 0);
        assert_eq!(y[[40, 65]], 1.0);
        assert_eq!(y[[40, 60]], 0.0);
        for r in 0..SHEET_HEIGHT {
            for c in 0..5 {
                assert_eq!(y[[r, c]], BACKGROUND);
            }
            for c in 5..SHEET_WIDTH {
                assert_eq!(y[[r, c]], x[[r, c - 5]]);
            }
        }
    }

    #[test]
    fn full_menu_preserves_shape_and_range() {
        let x = random_sheet(3);
        for seed in 0..5 {
            let y = augment_sheet(&x, &SheetAugConfig::heavy(), seed);
            assert_eq!(y.dim(), x.dim());
            assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn validation() {
        assert!(SheetAugConfig::pretraining().validate().is_ok());
        let mut bad = SheetAugConfig::heavy();
        bad.rotation.range = (3.0, -3.0);
        assert!(bad.validate().is_err());
        let mut bad = SheetAugConfig::heavy();
        bad.gaussian.p = 1.5;
        assert!(bad.validate().is_err());
    }
}
