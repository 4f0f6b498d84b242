//! Adam optimizer.

use super::params::{ParamGrads, ParamId, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros = |t: &Tensor| Tensor::zeros(t.rows(), t.cols());
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|(_, _, t)| zeros(t)).collect(),
            v: params.iter().map(|(_, _, t)| zeros(t)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Parameters without a gradient are left alone.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamGrads) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {} gradients",
                self.m.len(),
                grads.len()
            )));
        }
        if !grads.is_finite() {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..self.m.len() {
            let id = ParamId(i);
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64) -> (ParamSet, ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::row_vector(vec![w])).unwrap();
        (ps, id)
    }

    fn grad(id: ParamId, g: f64) -> ParamGrads {
        let mut grads = ParamGrads::new(1);
        grads.add(id, &Tensor::row_vector(vec![g]));
        grads
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let (mut ps, id) = scalar(1.5);
        let mut opt = Adam::new(&ps, 0.1);
        opt.step(&mut ps, &grad(id, 0.0)).unwrap();
        assert_eq!(ps.get(id).data()[0], 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [3.7, -0.02] {
            let (mut ps, id) = scalar(0.0);
            let mut opt = Adam::new(&ps, 1e-3);
            opt.step(&mut ps, &grad(id, g)).unwrap();
            let moved = ps.get(id).data()[0];
            assert!((moved + 1e-3 * g.signum()).abs() / 1e-3 < 1e-6);
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let (mut ps, id) = scalar(0.0);
        let mut opt = Adam::new(&ps, 0.1);
        for _ in 0..200 {
            let w = ps.get(id).data()[0];
            opt.step(&mut ps, &grad(id, 2.0 * (w - 3.0))).unwrap();
        }
        assert!((ps.get(id).data()[0] - 3.0).abs() < 0.1);
        assert_eq!(opt.steps(), 200);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let (mut ps, id) = scalar(0.0);
        let mut opt = Adam::new(&ps, 0.1);
        assert!(matches!(
            opt.step(&mut ps, &grad(id, f64::NAN)),
            Err(Error::Numeric(_))
        ));
    }
}
