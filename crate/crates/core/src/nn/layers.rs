use ndarray::{Array, Array2, Array4, Axis, Dimension, Zip};

use super::store::{ParamId, ParamStore};
use super::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvSpec {
    /// Square kernel, same stride on both axes, "same"-style padding.
    pub fn square(c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        Self { c_in, c_out, kh: k, kw: k, sh: stride, sw: stride, ph: k / 2, pw: k / 2 }
    }

    /// Kernel spanning only the time (column) axis.
    pub fn temporal(c_in: usize, c_out: usize, k: usize) -> Self {
        Self { c_in, c_out, kh: 1, kw: k, sh: 1, sw: 1, ph: 0, pw: k / 2 }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.ph - self.kh) / self.sh + 1, (w + 2 * self.pw - self.kw) / self.sw + 1)
    }

    pub fn fan_in(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
}

/// 2-D convolution lowered to a matrix product over unfolded patches.
/// Weights are stored as `c_out x (c_in * kh * kw)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub w: ParamId,
    pub b: ParamId,
}

pub struct ConvCache<F> {
    cols: Array2<F>,
    in_dim: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl Conv2d {
    pub fn forward<F: Scalar>(&self, ps: &ParamStore<F>, x: &Array4<F>) -> (Array4<F>, ConvCache<F>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.spec.c_in, "conv input channels");
        let (ho, wo) = self.spec.out_hw(h, w);
        let cols = im2col(x, &self.spec, ho, wo);
        let y2 = ps.get(self.w).dot(&cols);
        let bias = ps.get(self.b);
        let mut y = y2
            .into_shape_with_order((self.spec.c_out, n, ho, wo))
            .expect("contiguous product")
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned();
        for mut img in y.outer_iter_mut() {
            for (mut ch, &bv) in img.outer_iter_mut().zip(bias.iter()) {
                ch.mapv_inplace(|v| v + bv);
            }
        }
        (y, ConvCache { cols, in_dim: (n, c, h, w), out_hw: (ho, wo) })
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// `want_dx` is set.
    pub fn backward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        cache: &ConvCache<F>,
        dy: &Array4<F>,
        grads: &mut ParamStore<F>,
        want_dx: bool,
    ) -> Option<Array4<F>> {
        let (n, _, _, _) = cache.in_dim;
        let (ho, wo) = cache.out_hw;
        let dy2 = dy
            .view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((self.spec.c_out, n * ho * wo))
            .expect("contiguous gradient");
        {
            let gw = grads.get_mut(self.w);
            ndarray::linalg::general_mat_mul(F::one(), &dy2, &cache.cols.t(), F::one(), gw);
        }
        {
            let gb = grads.get_mut(self.b);
            for (g, row) in gb.iter_mut().zip(dy2.outer_iter()) {
                *g += row.sum();
            }
        }
        if !want_dx {
            return None;
        }
        let dcols = ps.get(self.w).t().dot(&dy2);
        Some(col2im(&dcols, &self.spec, cache.in_dim, ho, wo))
    }
}

fn im2col<F: Scalar>(x: &Array4<F>, s: &ConvSpec, ho: usize, wo: usize) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let ncols = n * ho * wo;
    let mut cols = Array2::<F>::zeros((c * s.kh * s.kw, ncols));
    let cs = cols.as_slice_mut().unwrap();
    for ci in 0..c {
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let row = (ci * s.kh + ki) * s.kw + kj;
                let dst_row = &mut cs[row * ncols..(row + 1) * ncols];
                for ni in 0..n {
                    let base = (ni * c + ci) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * s.sh + ki) as isize - s.ph as isize;
                        let dst = &mut dst_row[(ni * ho + oy) * wo..(ni * ho + oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &xs[base + iy as usize * w..base + (iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s.sw + kj) as isize - s.pw as isize;
                            if ix >= 0 && (ix as usize) < w {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<F: Scalar>(
    dcols: &Array2<F>,
    s: &ConvSpec,
    (n, c, h, w): (usize, usize, usize, usize),
    ho: usize,
    wo: usize,
) -> Array4<F> {
    let mut dx = Array4::<F>::zeros((n, c, h, w));
    let dxs = dx.as_slice_mut().unwrap();
    let dcols = dcols.as_standard_layout();
    let ds = dcols.as_slice().unwrap();
    let ncols = n * ho * wo;
    for ci in 0..c {
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let row = (ci * s.kh + ki) * s.kw + kj;
                let src_row = &ds[row * ncols..(row + 1) * ncols];
                for ni in 0..n {
                    let base = (ni * c + ci) * h * w;
                    for oy in 0..ho {
                        let iy = (oy * s.sh + ki) as isize - s.ph as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &src_row[(ni * ho + oy) * wo..(ni * ho + oy + 1) * wo];
                        let dst = &mut dxs[base + iy as usize * w..base + (iy as usize + 1) * w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * s.sw + kj) as isize - s.pw as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Fully connected layer, `y = x W^T + b`, weights `n_out x n_in`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn forward<F: Scalar>(&self, ps: &ParamStore<F>, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&ps.get(self.w).t());
        y += &ps.get(self.b).row(0);
        y
    }

    pub fn backward<F: Scalar>(
        &self,
        ps: &ParamStore<F>,
        x: &Array2<F>,
        dy: &Array2<F>,
        grads: &mut ParamStore<F>,
        want_dx: bool,
    ) -> Option<Array2<F>> {
        ndarray::linalg::general_mat_mul(F::one(), &dy.t(), x, F::one(), grads.get_mut(self.w));
        {
            let gb = grads.get_mut(self.b);
            let s = dy.sum_axis(Axis(0));
            gb.row_mut(0).zip_mut_with(&s, |g, v| *g += *v);
        }
        want_dx.then(|| dy.dot(ps.get(self.w)))
    }
}

/// Exponential linear unit with unit scale.
pub fn elu<F: Scalar, D: Dimension>(x: &Array<F, D>) -> Array<F, D> {
    x.mapv(|v| if v > F::zero() { v } else { v.exp() - F::one() })
}

/// Gradient through [`elu`] given its output `y`.
pub fn elu_backward<F: Scalar, D: Dimension>(y: &Array<F, D>, dy: &Array<F, D>) -> Array<F, D> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(y).for_each(|d, &yv| {
        if yv <= F::zero() {
            *d *= yv + F::one();
        }
    });
    dx
}

/// Row-wise L2 normalization; returns normalized rows and the row norms.
pub fn l2_normalize_rows<F: Scalar>(x: &Array2<F>) -> (Array2<F>, Vec<F>) {
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in y.outer_iter_mut() {
        let n = row.iter().map(|v| *v * *v).sum::<F>().sqrt();
        let d = if n > F::zero() { n } else { F::one() };
        row.mapv_inplace(|v| v / d);
        norms.push(d);
    }
    (y, norms)
}

pub fn l2_normalize_rows_backward<F: Scalar>(y: &Array2<F>, norms: &[F], dy: &Array2<F>) -> Array2<F> {
    let mut dx = dy.clone();
    for ((mut d, yr), &n) in dx.outer_iter_mut().zip(y.outer_iter()).zip(norms) {
        let proj = d.dot(&yr);
        Zip::from(&mut d).and(&yr).for_each(|dv, &yv| *dv = (*dv - yv * proj) / n);
    }
    dx
}

pub const RMS_EPS: f64 = 1e-8;

/// Scales each sample (outer index) to unit root-mean-square.
pub fn rms_normalize<F: Scalar>(x: &Array4<F>) -> (Array4<F>, Vec<F>) {
    let mut y = x.clone();
    let eps2 = lit::<F>(RMS_EPS * RMS_EPS);
    let mut scales = Vec::with_capacity(x.dim().0);
    for mut s in y.outer_iter_mut() {
        let n = lit::<F>(s.len() as f64);
        let ms = s.iter().map(|v| *v * *v).sum::<F>() / n;
        let scale = (ms + eps2).sqrt();
        s.mapv_inplace(|v| v / scale);
        scales.push(scale);
    }
    (y, scales)
}

pub fn rms_normalize_backward<F: Scalar>(y: &Array4<F>, scales: &[F], dy: &Array4<F>) -> Array4<F> {
    let mut dx = dy.clone();
    for ((mut d, ys), &s) in dx.outer_iter_mut().zip(y.outer_iter()).zip(scales) {
        let n = lit::<F>(ys.len() as f64);
        let gy = Zip::from(&d).and(&ys).fold(F::zero(), |acc, &a, &b| acc + a * b) / n;
        Zip::from(&mut d).and(&ys).for_each(|dv, &yv| *dv = (*dv - yv * gy) / s);
    }
    dx
}

pub fn softmax_rows<F: Scalar>(x: &Array2<F>) -> Array2<F> {
    let mut y = x.clone();
    for mut row in y.outer_iter_mut() {
        let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    y
}

pub fn softmax_rows_backward<F: Scalar>(y: &Array2<F>, dy: &Array2<F>) -> Array2<F> {
    let mut dx = dy.clone();
    for (mut d, yr) in dx.outer_iter_mut().zip(y.outer_iter()) {
        let dot = d.dot(&yr);
        Zip::from(&mut d).and(&yr).for_each(|dv, &yv| *dv = yv * (*dv - dot));
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn rand4(seed: u64, d: (usize, usize, usize, usize)) -> Array4<f64> {
        let mut r = rng::rng(seed);
        Array4::from_shape_fn(d, |_| r.gen_range(-1.0..1.0))
    }

    fn naive_conv(x: &Array4<f64>, w: &Array2<f64>, b: &Array2<f64>, s: &ConvSpec) -> Array4<f64> {
        let (n, c, h, wd) = x.dim();
        let (ho, wo) = s.out_hw(h, wd);
        Array4::from_shape_fn((n, s.c_out, ho, wo), |(ni, co, oy, ox)| {
            let mut acc = b[[0, co]];
            for ci in 0..c {
                for ki in 0..s.kh {
                    for kj in 0..s.kw {
                        let iy = (oy * s.sh + ki) as isize - s.ph as isize;
                        let ix = (ox * s.sw + kj) as isize - s.pw as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                            acc += w[[co, (ci * s.kh + ki) * s.kw + kj]] * x[[ni, ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
            acc
        })
    }

    fn conv_fixture(spec: ConvSpec, seed: u64) -> (Conv2d, ParamStore<f64>) {
        let mut r = rng::rng(seed);
        let mut ps = ParamStore::new();
        let w = ps.push("w", Array2::from_shape_fn((spec.c_out, spec.fan_in()), |_| r.gen_range(-1.0..1.0)));
        let b = ps.push("b", Array2::from_shape_fn((1, spec.c_out), |_| r.gen_range(-1.0..1.0)));
        (Conv2d { spec, w, b }, ps)
    }

    #[test]
    fn conv_matches_direct_sum() {
        for (i, spec) in [ConvSpec::square(2, 3, 3, 2), ConvSpec::square(3, 2, 3, 1), ConvSpec::temporal(1, 4, 5)]
            .into_iter()
            .enumerate()
        {
            let (conv, ps) = conv_fixture(spec, i as u64);
            let x = rand4(10 + i as u64, (2, spec.c_in, 7, 9));
            let (y, _) = conv.forward(&ps, &x);
            let expect = naive_conv(&x, ps.get(conv.w), ps.get(conv.b), &spec);
            assert_eq!(y.dim(), expect.dim());
            for (a, b) in y.iter().zip(expect.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let spec = ConvSpec::square(2, 3, 3, 2);
        let (conv, ps) = conv_fixture(spec, 5);
        let x = rand4(6, (2, 2, 6, 7));
        let probe = rand4(7, {
            let (ho, wo) = spec.out_hw(6, 7);
            (2, 3, ho, wo)
        });
        let loss = |ps: &ParamStore<f64>, x: &Array4<f64>| (&conv.forward(ps, x).0 * &probe).sum();
        let (_, cache) = conv.forward(&ps, &x);
        let mut grads = ps.zeros_like();
        let dx = conv.backward(&ps, &cache, &probe, &mut grads, true).unwrap();
        let h = 1e-6;
        for id in [conv.w, conv.b] {
            for k in 0..ps.get(id).len() {
                let mut p = ps.clone();
                p.get_mut(id).as_slice_mut().unwrap()[k] += h;
                let mut m = ps.clone();
                m.get_mut(id).as_slice_mut().unwrap()[k] -= h;
                let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
                let an = grads.get(id).as_slice().unwrap()[k];
                assert!((fd - an).abs() < 1e-7 * (1.0 + fd.abs()), "{fd} vs {an}");
            }
        }
        for k in [0, 13, 40, 83] {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[k] += h;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[k] -= h;
            let fd = (loss(&ps, &xp) - loss(&ps, &xm)) / (2.0 * h);
            assert!((fd - dx.as_slice().unwrap()[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn normalizers_backward_match_finite_differences() {
        let x = rand4(8, (2, 1, 3, 4));
        let probe = rand4(9, (2, 1, 3, 4));
        let f = |x: &Array4<f64>| (&rms_normalize(x).0 * &probe).sum();
        let (y, s) = rms_normalize(&x);
        let dx = rms_normalize_backward(&y, &s, &probe);
        let h = 1e-6;
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[k] += h;
            let mut xm = x.clone();
            xm.as_slice_mut().unwrap()[k] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - dx.as_slice().unwrap()[k]).abs() < 1e-7);
        }

        let mut r = rng::rng(3);
        let x2 = Array2::from_shape_fn((3, 5), |_| r.gen_range(-1.0..1.0));
        let p2 = Array2::from_shape_fn((3, 5), |_| r.gen_range(-1.0..1.0));
        let checks: [(&dyn Fn(&Array2<f64>) -> f64, Array2<f64>); 2] = [
            (&|x: &Array2<f64>| (&l2_normalize_rows(x).0 * &p2).sum(), {
                let (y, n) = l2_normalize_rows(&x2);
                l2_normalize_rows_backward(&y, &n, &p2)
            }),
            (&|x: &Array2<f64>| (&softmax_rows(x) * &p2).sum(), softmax_rows_backward(&softmax_rows(&x2), &p2)),
        ];
        for (f, an) in checks.iter() {
            for k in 0..x2.len() {
                let mut xp = x2.clone();
                xp.as_slice_mut().unwrap()[k] += h;
                let mut xm = x2.clone();
                xm.as_slice_mut().unwrap()[k] -= h;
                let fd = (f(&xp) - f(&xm)) / (2.0 * h);
                assert!((fd - an.as_slice().unwrap()[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn softmax_of_constants_is_uniform() {
        let y = softmax_rows(&Array2::<f64>::zeros((1, 168)));
        assert!(y.iter().all(|v| *v == 1.0 / 168.0));
    }
}
