use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MIN_MULTIPLIER: f64 = 0.5;
pub const MAX_MULTIPLIER: f64 = 2.0;

/// Piecewise-linear tempo multiplier over beat position. The effective
/// tempo at beat `b` is `base_bpm * multiplier(b)`; beyond the last control
/// point the multiplier stays constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TempoCurve {
    points: Vec<(f64, f64)>,
}

impl TempoCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() || points[0].0 != 0.0 {
            return Err(Error::arg("tempo curve must start at beat 0"));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::arg("tempo control points must be strictly increasing"));
            }
        }
        if points
            .iter()
            .any(|&(_, m)| !(MIN_MULTIPLIER..=MAX_MULTIPLIER).contains(&m))
        {
            return Err(Error::arg("tempo multiplier outside [0.5, 2.0]"));
        }
        Ok(Self { points })
    }

    pub fn constant(multiplier: f64) -> Result<Self> {
        Self::new(vec![(0.0, multiplier)])
    }

    /// Random curve: a global multiplier drawn from `global` and local
    /// deviations drawn from `local` (multiplicative) every `spacing` beats.
    pub fn random(rng: &mut Rng, length_beats: f64, spacing: f64, global: (f64, f64), local: (f64, f64)) -> Self {
        let g = sample(rng, global);
        let mut points = Vec::new();
        let mut b = 0.0;
        loop {
            let m = (g * sample(rng, local)).clamp(MIN_MULTIPLIER, MAX_MULTIPLIER);
            points.push((b, m));
            if b >= length_beats {
                break;
            }
            b += spacing;
        }
        Self { points }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn multiplier(&self, beat: f64) -> f64 {
        let pts = &self.points;
        match pts.iter().rposition(|&(b, _)| b <= beat) {
            None => pts[0].1,
            Some(i) if i + 1 == pts.len() => pts[i].1,
            Some(i) => {
                let (b0, m0) = pts[i];
                let (b1, m1) = pts[i + 1];
                m0 + (m1 - m0) * (beat - b0) / (b1 - b0)
            }
        }
    }

    /// Elapsed seconds from beat 0 to `beat`, integrating 60 / (bpm * m(b))
    /// exactly over each linear segment.
    pub fn seconds_at(&self, beat: f64, base_bpm: f64) -> f64 {
        let spb = 60.0 / base_bpm;
        let pts = &self.points;
        let mut total = 0.0;
        for i in 0..pts.len() {
            let (b0, m0) = pts[i];
            if beat <= b0 {
                break;
            }
            let seg_end = if i + 1 < pts.len() { pts[i + 1].0.min(beat) } else { beat };
            let m_end = self.multiplier(seg_end);
            let len = seg_end - b0;
            total += if i + 1 == pts.len() || (m_end - m0).abs() < 1e-12 {
                len / m0
            } else {
                let slope = (m_end - m0) / len;
                (m_end / m0).ln() / slope
            };
        }
        total * spb
    }
}

fn sample(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_curve_is_linear_time() {
        let c = TempoCurve::constant(1.0).unwrap();
        assert_relative_eq!(c.seconds_at(8.0, 120.0), 4.0);
        let fast = TempoCurve::constant(2.0).unwrap();
        assert_relative_eq!(fast.seconds_at(8.0, 120.0), 2.0);
    }

    #[test]
    fn linear_ramp_matches_quadrature() {
        let c = TempoCurve::new(vec![(0.0, 0.6), (10.0, 1.8), (14.0, 1.0)]).unwrap();
        let n = 200_000;
        let end = 17.0;
        let h = end / n as f64;
        // midpoint rule on 60 / (bpm * m)
        let q: f64 = (0..n).map(|i| 0.5 / c.multiplier((i as f64 + 0.5) * h) * h).sum();
        assert_relative_eq!(c.seconds_at(end, 120.0), q, max_relative = 1e-8);
    }

    #[test]
    fn rejects_bad_curves() {
        assert!(TempoCurve::new(vec![]).is_err());
        assert!(TempoCurve::new(vec![(1.0, 1.0)]).is_err());
        assert!(TempoCurve::new(vec![(0.0, 2.5)]).is_err());
        assert!(TempoCurve::new(vec![(0.0, 1.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn time_is_monotone() {
        let mut r = crate::rng::rng(3);
        let c = TempoCurve::random(&mut r, 40.0, 4.0, (0.5, 2.0), (0.7, 1.4));
        let mut prev = -1.0;
        for i in 0..200 {
            let t = c.seconds_at(i as f64 * 0.25, 100.0);
            assert!(t > prev);
            prev = t;
        }
    }
}
