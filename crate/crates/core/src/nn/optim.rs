use super::{lit, ParamStore, Scalar};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: ParamStore<F>,
    v: ParamStore<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: &ParamStore<F>, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &ParamStore<F>) {
        self.t += 1;
        let (b1, b2) = (lit::<F>(self.beta1), lit::<F>(self.beta2));
        let (one_b1, one_b2) = (F::one() - b1, F::one() - b2);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = lit::<F>(self.lr * c2.sqrt() / c1);
        let eps = lit::<F>(self.eps * c2.sqrt());
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.get(id);
            let m = self.m.get_mut(id);
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| *m = b1 * *m + one_b1 * g);
            let v = self.v.get_mut(id);
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| *v = b2 * *v + one_b2 * g * g);
            let (m, v) = (self.m.get(id), self.v.get(id));
            ndarray::Zip::from(params.get_mut(id)).and(m).and(v).for_each(|p, &m, &v| *p -= step * m / (v.sqrt() + eps));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.push("w", array![[1.0, -2.0, 0.5]]);
        let mut g = ps.zeros_like();
        g.get_mut(id).assign(&array![[3.0, -0.1, 0.0]]);
        let mut opt = Adam::new(&ps, 0.01);
        opt.step(&mut ps, &g);
        let w = ps.get(id);
        assert!((w[[0, 0]] - 0.99).abs() < 1e-6);
        assert!((w[[0, 1]] + 1.99).abs() < 1e-6);
        assert_eq!(w[[0, 2]], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut ps = ParamStore::<f64>::new();
        let id = ps.push("w", array![[5.0, -3.0]]);
        let mut opt = Adam::new(&ps, 0.1);
        for _ in 0..500 {
            let mut g = ps.zeros_like();
            g.get_mut(id).assign(&(ps.get(id) * 2.0));
            opt.step(&mut ps, &g);
        }
        assert!(ps.get(id).iter().all(|v| v.abs() < 1e-2));
    }
}
