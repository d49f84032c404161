//! Stochastic gradient descent with classical momentum.

use super::{NnError, Real, Tensor};

/// `v <- momentum * v - lr * g; p <- p + v`, element-wise.
pub fn sgd_step<T: Real>(param: &mut [T], grad: &[T], velocity: &mut [T], lr: T, momentum: T) {
    debug_assert!(param.len() == grad.len() && grad.len() == velocity.len());
    for ((p, &g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v - lr * g;
        *p = *p + *v;
    }
}

/// Velocity buffers for an ordered parameter list.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Apply one update. `params` and `grads` must list tensors in the same
    /// order on every call.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[Tensor<T>]) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::Shape(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() || v.len() != p.len() {
                return Err(NnError::Shape(format!(
                    "parameter {:?} vs gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            sgd_step(p.data_mut(), g.data(), v, self.lr, self.momentum);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = [1.5f64, -2.0];
        let mut v = [0.0; 2];
        sgd_step(&mut p, &[0.0, 0.0], &mut v, 0.1, 0.9);
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn plain_step() {
        let mut p = [1.0f64];
        let mut v = [0.0];
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.0);
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        // v1 = -0.1, v2 = 0.9 * -0.1 - 0.1 = -0.19, p = 1 - 0.29
        let mut opt = Sgd::new(0.1f64, 0.9);
        let mut p = Tensor::full(&[1], 1.0);
        let g = [Tensor::full(&[1], 1.0)];
        opt.step(vec![&mut p], &g).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-15);
        opt.step(vec![&mut p], &g).unwrap();
        assert!((p.data()[0] - 0.71).abs() < 1e-15);
    }
}
