use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;

/// Multi-octave 2-D gradient-lattice (Perlin) noise over a `rows x cols`
/// grid. The coarsest lattice cell is `base_cell` pixels; each further
/// octave halves the cell and scales amplitude by `persistence`. Output is
/// normalized so its peak magnitude is at most 1.
pub fn perlin(rng: &mut Rng, rows: usize, cols: usize, base_cell: f64, octaves: usize, persistence: f64) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((rows, cols));
    let mut amp = 1.0;
    let mut total_amp = 0.0;
    let mut cell = base_cell;
    for _ in 0..octaves {
        let gy = (rows as f64 / cell).ceil() as usize + 2;
        let gx = (cols as f64 / cell).ceil() as usize + 2;
        let grads: Vec<(f64, f64)> = (0..gy * gx)
            .map(|_| {
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                (a.cos(), a.sin())
            })
            .collect();
        let oy = rng.gen::<f64>();
        let ox = rng.gen::<f64>();
        let xs: Vec<(usize, f64, f64)> = (0..cols)
            .map(|c| {
                let x = c as f64 / cell + ox;
                let x0 = x.floor();
                (x0 as usize, x - x0, fade(x - x0))
            })
            .collect();
        let buf = out.as_slice_mut().expect("standard layout");
        for (r, line) in buf.chunks_exact_mut(cols).enumerate() {
            let y = r as f64 / cell + oy;
            let y0 = y.floor() as usize;
            let fy = y - y0 as f64;
            let sy = fade(fy);
            let (g0, g1) = (&grads[y0 * gx..(y0 + 1) * gx], &grads[(y0 + 1) * gx..(y0 + 2) * gx]);
            for (v, &(x0, fx, sx)) in line.iter_mut().zip(&xs) {
                let dot = |g: (f64, f64), dy: f64, dx: f64| g.0 * dy + g.1 * dx;
                let n00 = dot(g0[x0], fy, fx);
                let n01 = dot(g0[x0 + 1], fy, fx - 1.0);
                let n10 = dot(g1[x0], fy - 1.0, fx);
                let n11 = dot(g1[x0 + 1], fy - 1.0, fx - 1.0);
                let top = n00 + sx * (n01 - n00);
                let bot = n10 + sx * (n11 - n10);
                *v += amp * (top + sy * (bot - top));
            }
        }
        total_amp += amp;
        amp *= persistence;
        cell = (cell / 2.0).max(1.0);
    }
    // single-octave gradient noise is bounded by sqrt(2)/2
    out.mapv_inplace(|v| v / (total_amp * std::f64::consts::FRAC_1_SQRT_2));
    out
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Gaussian-smoothed white noise with standard deviation `sigma_out`.
/// Smoothing with scale `smooth` uses three successive box blurs per axis,
/// which approximates a Gaussian kernel of that standard deviation. Wide
/// kernels are applied on a grid coarser by up to `smooth / 4` and
/// bilinearly upsampled; the result is smooth at that scale either way.
pub fn smooth_field(rng: &mut Rng, rows: usize, cols: usize, smooth: f64, sigma_out: f64) -> Array2<f64> {
    let step = ((smooth / 4.0).floor() as usize).max(1);
    let (cr, cc) = (rows.div_ceil(step) + 1, cols.div_ceil(step) + 1);
    let mut f: Vec<f64> = (0..cr * cc).map(|_| StandardNormal.sample(rng)).collect();
    let radius = box_radius(smooth / step as f64);
    let mut t = vec![0.0; cr * cc];
    let mut scratch = Vec::new();
    for _ in 0..3 {
        for row in f.chunks_exact_mut(cc) {
            box_blur_1d(row, radius, &mut scratch);
        }
        transpose(&f, cr, cc, &mut t);
        for col in t.chunks_exact_mut(cr) {
            box_blur_1d(col, radius, &mut scratch);
        }
        transpose(&t, cc, cr, &mut f);
    }
    let xs: Vec<(usize, f64)> = (0..cols)
        .map(|c| {
            let x = c as f64 / step as f64;
            (x.floor() as usize, x - x.floor())
        })
        .collect();
    let mut out = Array2::<f64>::zeros((rows, cols));
    let buf = out.as_slice_mut().expect("standard layout");
    for (r, line) in buf.chunks_exact_mut(cols).enumerate() {
        let y = r as f64 / step as f64;
        let (y0, fy) = (y.floor() as usize, y - y.floor());
        let (a, b) = (&f[y0 * cc..(y0 + 1) * cc], &f[(y0 + 1) * cc..(y0 + 2) * cc]);
        for (v, &(x0, fx)) in line.iter_mut().zip(&xs) {
            let top = a[x0] + fx * (a[x0 + 1] - a[x0]);
            let bot = b[x0] + fx * (b[x0 + 1] - b[x0]);
            *v = top + fy * (bot - top);
        }
    }
    let n = out.len() as f64;
    let mean = out.sum() / n;
    let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let scale = if var > 0.0 { sigma_out / var.sqrt() } else { 0.0 };
    out.mapv_inplace(|v| (v - mean) * scale);
    out
}

fn transpose(src: &[f64], rows: usize, cols: usize, dst: &mut [f64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Box radius whose three-fold convolution matches a Gaussian of std `sigma`.
fn box_radius(sigma: f64) -> usize {
    // variance of a width-w box is (w^2 - 1) / 12, three passes triple it
    let w = (4.0 * sigma * sigma + 1.0).sqrt();
    ((w - 1.0) / 2.0).round().max(0.0) as usize
}

fn box_blur_1d(line: &mut [f64], radius: usize, scratch: &mut Vec<f64>) {
    let n = line.len();
    if radius == 0 || n == 0 {
        return;
    }
    scratch.clear();
    scratch.extend_from_slice(line);
    // clamp-to-edge boundary
    let at = |i: isize| scratch[i.clamp(0, n as isize - 1) as usize];
    let r = radius as isize;
    let mut acc: f64 = (-r..=r).map(at).sum();
    let w = (2 * radius + 1) as f64;
    for i in 0..n as isize {
        line[i as usize] = acc / w;
        acc += at(i + r + 1) - at(i - r);
    }
}
