use serde::{Deserialize, Serialize};

use super::{Matrix, Mlp2Grads, Mlp2Params, Scalar};

/// Hyper-parameters shared by every optimizer instance in a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Decoupled-weight-decay Adam state for one list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamW<T: Scalar = f64> {
    cfg: AdamWConfig,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: AdamWConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            cfg,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            step: 0,
        }
    }

    pub fn for_mlp(cfg: AdamWConfig, p: &Mlp2Params<T>) -> Self {
        let shapes: Vec<_> = p.tensors().iter().map(|m| m.shape()).collect();
        Self::new(cfg, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.cfg
    }

    /// One update over aligned parameter and gradient lists.
    pub fn step(&mut self, params: &mut [&mut Matrix<T>], grads: &[&Matrix<T>]) {
        assert_eq!(params.len(), self.m.len(), "adamw parameter count");
        assert_eq!(grads.len(), self.m.len(), "adamw gradient count");
        self.step += 1;
        let t = self.step as i32;
        let lr = T::of(self.cfg.lr);
        let b1 = T::of(self.cfg.beta1);
        let b2 = T::of(self.cfg.beta2);
        let eps = T::of(self.cfg.eps);
        let decay = T::one() - lr * T::of(self.cfg.weight_decay);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "adamw gradient shape");
            assert_eq!(p.shape(), self.m[k].shape(), "adamw state shape");
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            for (((pi, &gi), mi), vi) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *pi *= decay;
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    pub fn step_mlp(&mut self, p: &mut Mlp2Params<T>, g: &Mlp2Grads<T>) {
        let mut params = p.tensors_mut();
        self.step(&mut params, &g.tensors());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_vec(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &[(2, 2)]);
        let mut p = Matrix::from_vec(2, 2, vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let before = p.clone();
        for _ in 0..5 {
            opt.step(&mut [&mut p], &[&Matrix::zeros(2, 2)]);
        }
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 5);
    }

    #[test]
    fn first_step_matches_scalar_recomputation() {
        let cfg = AdamWConfig {
            lr: 0.001,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        let mut opt = AdamW::new(cfg, &[(1, 1)]);
        let mut p = scalar(0.3);
        opt.step(&mut [&mut p], &[&scalar(1.0)]);
        // m = 0.5, v = 0.001; m̂ = 1, v̂ = 1
        let m = (1.0 - 0.5) * 1.0;
        let v = (1.0 - 0.999) * 1.0;
        let m_hat = m / (1.0 - 0.5);
        let v_hat = v / (1.0 - 0.999);
        let expected = 0.3 - 0.001 * m_hat / (f64::sqrt(v_hat) + 1e-8);
        assert!((p[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn decay_shrinks_parameters_with_zero_gradient() {
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &[(1, 1)]);
        let mut p = scalar(2.0);
        opt.step(&mut [&mut p], &[&scalar(0.0)]);
        assert!((p[(0, 0)] - 2.0 * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
    }
}
