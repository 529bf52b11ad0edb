//! Training objectives: the in-batch pairwise ranking (hinge) loss used for
//! supervised cross-modal training and NT-Xent for self-supervised
//! pretraining.
//!
//! Both losses normalize their inputs, so they accept raw vectors; for
//! unit-norm inputs cosine similarity is exactly the dot product. The `_grad`
//! variants also return gradients with respect to the inputs.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{l2_normalize_rows, l2_normalize_rows_backward, lit, Scalar};

pub const DEFAULT_MARGIN: f64 = 0.7;
pub const DEFAULT_TAU: f64 = 0.5;

/// Scalar loss plus its per-term breakdown (per anchor for the ranking loss,
/// per view for NT-Xent).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub terms: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    #[default]
    Mean,
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::arg("cosine similarity of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn check_rows<F: Scalar>(x: &Array2<F>) -> Result<()> {
    for row in x.outer_iter() {
        if row.iter().all(|v| *v == F::zero()) {
            return Err(Error::arg("zero vector in batch"));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("non-finite value in batch"));
        }
    }
    Ok(())
}

/// Cosine similarity of every row of `a` with every row of `b`.
pub fn similarity_matrix<F: Scalar>(a: &Array2<F>, b: &Array2<F>) -> Result<Array2<F>> {
    if a.ncols() != b.ncols() {
        return Err(Error::arg("dimension mismatch"));
    }
    check_rows(a)?;
    check_rows(b)?;
    let (ua, _) = l2_normalize_rows(a);
    let (ub, _) = l2_normalize_rows(b);
    Ok(ua.dot(&ub.t()))
}

pub fn pairwise_ranking_loss<F: Scalar>(anchors: &Array2<F>, positives: &Array2<F>, margin: f64) -> Result<LossValue> {
    pairwise_ranking_loss_grad(anchors, positives, margin).map(|(l, _, _)| l)
}

/// In-batch hinge loss: `anchors[i]` matches `positives[i]`, every other
/// row of `positives` is a negative for it. Summed over (i, j != i) and
/// divided by N.
pub fn pairwise_ranking_loss_grad<F: Scalar>(
    anchors: &Array2<F>,
    positives: &Array2<F>,
    margin: f64,
) -> Result<(LossValue, Array2<F>, Array2<F>)> {
    let n = anchors.nrows();
    if n < 2 {
        return Err(Error::arg("ranking loss needs at least two pairs"));
    }
    if positives.dim() != anchors.dim() {
        return Err(Error::arg("anchors and positives must have the same shape"));
    }
    check_rows(anchors)?;
    check_rows(positives)?;
    let (ua, na) = l2_normalize_rows(anchors);
    let (up, np) = l2_normalize_rows(positives);
    let s = ua.dot(&up.t());
    let inv_n = 1.0 / n as f64;
    let mut ds = Array2::<F>::zeros((n, n));
    let mut terms = vec![0.0; n];
    for i in 0..n {
        let pos = s[[i, i]].to_f64().unwrap();
        for j in (0..n).filter(|&j| j != i) {
            let h = margin - pos + s[[i, j]].to_f64().unwrap();
            if h > 0.0 {
                terms[i] += h;
                ds[[i, j]] += lit::<F>(inv_n);
                ds[[i, i]] -= lit::<F>(inv_n);
            }
        }
    }
    let value = terms.iter().sum::<f64>() * inv_n;
    let dua = ds.dot(&up);
    let dup = ds.t().dot(&ua);
    let ga = l2_normalize_rows_backward(&ua, &na, &dua);
    let gp = l2_normalize_rows_backward(&up, &np, &dup);
    Ok((LossValue { value, terms }, ga, gp))
}

/// Pairing for a batch laid out as `[view_a(0..n), view_b(0..n)]`.
pub fn paired_views(n: usize) -> Vec<usize> {
    (0..2 * n).map(|i| if i < n { i + n } else { i - n }).collect()
}

fn check_pairing(pairing: &[usize], m: usize) -> Result<()> {
    if pairing.len() != m {
        return Err(Error::arg("pairing length must equal the number of views"));
    }
    for (i, &j) in pairing.iter().enumerate() {
        if j >= m || j == i || pairing[j] != i {
            return Err(Error::arg("pairing must be a fixed-point-free involution"));
        }
    }
    Ok(())
}

pub fn nt_xent_loss<F: Scalar>(views: &Array2<F>, pairing: &[usize], tau: f64, reduction: Reduction) -> Result<LossValue> {
    nt_xent_loss_grad(views, pairing, tau, reduction).map(|(l, _)| l)
}

/// Normalized-temperature cross-entropy over 2N views. For each view i with
/// partner p(i) the term is
/// `-log( exp(s(i,p(i))/tau) / sum_{v != i} exp(s(i,v)/tau) )`.
/// `Sum` adds all 2N terms, `Mean` divides by 2N.
pub fn nt_xent_loss_grad<F: Scalar>(
    views: &Array2<F>,
    pairing: &[usize],
    tau: f64,
    reduction: Reduction,
) -> Result<(LossValue, Array2<F>)> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::arg("tau must be positive"));
    }
    let m = views.nrows();
    if m < 2 || m % 2 != 0 {
        return Err(Error::arg("NT-Xent needs an even number of views"));
    }
    check_pairing(pairing, m)?;
    check_rows(views)?;
    let (u, norms) = l2_normalize_rows(views);
    let s = u.dot(&u.t());
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / m as f64,
    };
    let mut g = Array2::<F>::zeros((m, m));
    let mut terms = Vec::with_capacity(m);
    let mut logits = vec![0.0f64; m];
    for i in 0..m {
        let mut mx = f64::NEG_INFINITY;
        for v in 0..m {
            logits[v] = s[[i, v]].to_f64().unwrap() / tau;
            if v != i {
                mx = mx.max(logits[v]);
            }
        }
        let z: f64 = (0..m).filter(|&v| v != i).map(|v| (logits[v] - mx).exp()).sum();
        let lse = mx + z.ln();
        let j = pairing[i];
        terms.push(lse - logits[j]);
        for v in (0..m).filter(|&v| v != i) {
            let p = (logits[v] - lse).exp();
            let ind = if v == j { 1.0 } else { 0.0 };
            g[[i, v]] = lit::<F>(scale * (p - ind) / tau);
        }
    }
    let value = terms.iter().sum::<f64>() * scale;
    let du = (&g + &g.t()).dot(&u);
    Ok((LossValue { value, terms }, l2_normalize_rows_backward(&u, &norms, &du)))
}
