//! Central finite-difference checks against analytic gradients.

use rand::seq::index::sample;
use rand::Rng as _;

use super::ParamStore;
use crate::rng;

#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    pub sampled: usize,
    pub max_rel_err: f64,
    /// (analytic, numeric) at the worst sampled entry.
    pub worst: (f64, f64),
}

/// Relative error with an absolute floor so that entries whose true gradient
/// is numerically zero do not blow up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// For every tensor in `ps`, samples up to `per_tensor` entries and compares
/// the analytic gradient from `loss_grad` with a central difference of step
/// `eps` on `loss`.
pub fn check_gradients<L, G>(
    ps: &ParamStore<f64>,
    loss: L,
    loss_grad: G,
    per_tensor: usize,
    eps: f64,
    seed: u64,
) -> Vec<TensorCheck>
where
    L: Fn(&ParamStore<f64>) -> f64,
    G: Fn(&ParamStore<f64>) -> ParamStore<f64>,
{
    let analytic = loss_grad(ps);
    let mut work = ps.clone();
    let mut out = Vec::new();
    for (ti, id) in ps.ids().enumerate() {
        let len = ps.get(id).len();
        let mut r = rng::rng(rng::derive_seed(seed, ti as u64));
        let idx = sample(&mut r, len, per_tensor.min(len));
        let mut check = TensorCheck { name: ps.name(id).to_string(), sampled: idx.len(), max_rel_err: 0.0, worst: (0.0, 0.0) };
        for k in idx.iter() {
            let orig = ps.get(id).as_slice().expect("standard layout")[k];
            work.get_mut(id).as_slice_mut().unwrap()[k] = orig + eps;
            let up = loss(&work);
            work.get_mut(id).as_slice_mut().unwrap()[k] = orig - eps;
            let down = loss(&work);
            work.get_mut(id).as_slice_mut().unwrap()[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(id).as_slice().unwrap()[k];
            let e = rel_err(a, numeric);
            if e >= check.max_rel_err {
                check.max_rel_err = e;
                check.worst = (a, numeric);
            }
        }
        out.push(check);
    }
    out
}

/// Adds uniform noise in `[-scale, scale]` to every entry, so zero-initialized
/// tensors do not mask gradient paths during a check.
pub fn jitter(ps: &mut ParamStore<f64>, scale: f64, seed: u64) {
    let mut r = rng::rng(seed);
    for (_, t) in ps.iter_mut() {
        t.mapv_inplace(|v| v + r.gen_range(-scale..=scale));
    }
}
