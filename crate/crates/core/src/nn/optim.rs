//! Adam with decoupled weight decay, and global-norm gradient clipping.

use ndarray::{Array2, Zip};

use super::params::ParamStore;
use super::{lit, shape_err, OptimHyper, Result, Scalar};

#[derive(Debug, Clone, Default)]
pub struct Adam<T> {
    m: ParamStore<T>,
    v: ParamStore<T>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new() -> Self {
        Self {
            m: ParamStore::new(),
            v: ParamStore::new(),
            t: 0,
        }
    }

    /// Number of steps taken.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter that has an entry in `grads`; parameters
    /// without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>, hyper: &OptimHyper) -> Result<()> {
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2) = (hyper.beta1, hyper.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let decay: T = lit(1.0 - hyper.lr * hyper.weight_decay);
        let (b1t, b2t): (T, T) = (lit(b1), lit(b2));
        let (one_b1, one_b2): (T, T) = (lit(1.0 - b1), lit(1.0 - b2));
        let (lr, eps): (T, T) = (lit(hyper.lr), lit(hyper.eps));
        let (bc1, bc2): (T, T) = (lit(bc1), lit(bc2));
        for (name, grad) in grads.iter() {
            let Some(theta) = params.get_mut(name) else {
                return Err(shape_err("optimiser parameter", name, "missing"));
            };
            if theta.dim() != grad.dim() {
                return Err(shape_err("optimiser gradient", theta.dim(), grad.dim()));
            }
            if !self.m.contains(name) {
                self.m.insert(name, Array2::zeros(grad.raw_dim()));
                self.v.insert(name, Array2::zeros(grad.raw_dim()));
            }
            let m = self.m.get_mut(name).expect("inserted");
            Zip::from(&mut *m).and(grad).for_each(|m, &g| *m = b1t * *m + one_b1 * g);
            let v = self.v.get_mut(name).expect("inserted");
            Zip::from(&mut *v).and(grad).for_each(|v, &g| *v = b2t * *v + one_b2 * g * g);
            let (m, v) = (&self.m[name], &self.v[name]);
            Zip::from(theta).and(m).and(v).for_each(|th, &m, &v| {
                *th *= decay;
                *th -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// Rescales every gradient by `max_norm / norm` when the global L2 norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients<T: Scalar>(grads: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(lit(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Array2::from_elem((1, 1), v));
        p
    }

    fn hyper(wd: f64) -> OptimHyper {
        OptimHyper {
            weight_decay: wd,
            ..Default::default()
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(0.5);
        let mut adam = Adam::new();
        adam.step(&mut p, &single(1.0), &hyper(0.0)).unwrap();
        let want = 0.5 - 1e-4 / (1.0 + 1e-8);
        assert!((p["w"][[0, 0]] - want).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = single(0.5);
        Adam::new().step(&mut p, &single(0.0), &hyper(0.0)).unwrap();
        assert_eq!(p["w"][[0, 0]], 0.5);
    }

    #[test]
    fn decay_only_step() {
        let mut p = single(2.0);
        Adam::new().step(&mut p, &single(0.0), &hyper(1e-5)).unwrap();
        assert!((p["w"][[0, 0]] - 2.0 * (1.0 - 1e-9)).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let mut g = ParamStore::<f64>::new();
        g.insert("a", Array2::from_elem((1, 2), 0.0));
        g.get_mut("a").unwrap()[[0, 0]] = 6.0;
        g.get_mut("a").unwrap()[[0, 1]] = 8.0;
        assert_eq!(clip_gradients(&mut g, 5.0), 10.0);
        assert!((g["a"][[0, 0]] - 3.0).abs() < 1e-12);

        let mut small = single(3.0);
        clip_gradients(&mut small, 5.0);
        assert_eq!(small["w"][[0, 0]], 3.0);

        let mut zero = single(0.0);
        clip_gradients(&mut zero, 5.0);
        assert_eq!(zero["w"][[0, 0]], 0.0);
    }
}
