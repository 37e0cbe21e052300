//! Two-layer perceptron `y = W2·φ(W1·x + b1) + b2` with LeakyReLU `φ`, plus
//! the closed-form first- and second-order terms the adversarial losses need.

use std::ops::Range;

use super::{Matrix, Rng, Scalar};
use crate::error::{dim_err, Error, Result};

/// Default LeakyReLU negative slope.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Floor on the input-gradient norm inside the gradient penalty.
pub const GRAD_NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Mlp2Params<T: Scalar = f64> {
    w1: Matrix<T>,
    b1: Matrix<T>,
    w2: Matrix<T>,
    b2: Matrix<T>,
    slope: T,
    generation: u64,
}

impl<T: Scalar> PartialEq for Mlp2Params<T> {
    fn eq(&self, other: &Self) -> bool {
        self.slope == other.slope && self.tensors() == other.tensors()
    }
}

/// Activations kept by [`Mlp2Params::forward`] for backprop.
#[derive(Clone, Debug)]
pub struct Mlp2Cache<T: Scalar = f64> {
    input: Matrix<T>,
    pre: Matrix<T>,
    act: Matrix<T>,
    generation: u64,
}

impl<T: Scalar> Mlp2Cache<T> {
    /// Post-activation hidden layer `φ(W1·x + b1)`.
    pub fn hidden(&self) -> &Matrix<T> {
        &self.act
    }
}

/// Gradients with the same layout as [`Mlp2Params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp2Grads<T: Scalar = f64> {
    pub w1: Matrix<T>,
    pub b1: Matrix<T>,
    pub w2: Matrix<T>,
    pub b2: Matrix<T>,
}

impl<T: Scalar> Mlp2Grads<T> {
    pub fn zeros_like(p: &Mlp2Params<T>) -> Self {
        Self {
            w1: Matrix::zeros(p.w1.rows(), p.w1.cols()),
            b1: Matrix::zeros(1, p.b1.cols()),
            w2: Matrix::zeros(p.w2.rows(), p.w2.cols()),
            b2: Matrix::zeros(1, p.b2.cols()),
        }
    }

    /// `self += s · other`
    pub fn axpy(&mut self, s: T, other: &Self) {
        self.w1.axpy(s, &other.w1);
        self.b1.axpy(s, &other.b1);
        self.w2.axpy(s, &other.w2);
        self.b2.axpy(s, &other.b2);
    }

    pub fn scale(&mut self, s: T) {
        self.w1.scale_mut(s);
        self.b1.scale_mut(s);
        self.w2.scale_mut(s);
        self.b2.scale_mut(s);
    }

    pub fn tensors(&self) -> [&Matrix<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.tensors()
            .iter()
            .flat_map(|m| m.as_slice().iter())
            .fold(T::zero(), |a, &v| a.max(v.abs()))
    }
}

impl<T: Scalar> Mlp2Params<T> {
    /// Uniform `±1/√fan_in` initialisation for weights and biases.
    pub fn init(d_in: usize, hidden: usize, d_out: usize, slope: f64, rng: &mut Rng) -> Self {
        let k1 = 1.0 / (d_in.max(1) as f64).sqrt();
        let k2 = 1.0 / (hidden.max(1) as f64).sqrt();
        Self {
            w1: rng.uniform_matrix(hidden, d_in, -k1, k1),
            b1: rng.uniform_matrix(1, hidden, -k1, k1),
            w2: rng.uniform_matrix(d_out, hidden, -k2, k2),
            b2: rng.uniform_matrix(1, d_out, -k2, k2),
            slope: T::of(slope),
            generation: 0,
        }
    }

    pub fn from_parts(w1: Matrix<T>, b1: Matrix<T>, w2: Matrix<T>, b2: Matrix<T>, slope: T) -> Result<Self> {
        let h = w1.rows();
        if b1.shape() != (1, h) {
            return Err(dim_err("Mlp2Params::from_parts b1", format!("1x{h}"), format!("{:?}", b1.shape())));
        }
        if w2.cols() != h {
            return Err(dim_err("Mlp2Params::from_parts w2 cols", h, w2.cols()));
        }
        if b2.shape() != (1, w2.rows()) {
            return Err(dim_err(
                "Mlp2Params::from_parts b2",
                format!("1x{}", w2.rows()),
                format!("{:?}", b2.shape()),
            ));
        }
        if !(slope > T::zero() && slope <= T::one()) {
            return Err(Error::Contract(format!("LeakyReLU slope {slope} outside (0, 1]")));
        }
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            slope,
            generation: 0,
        })
    }

    pub fn d_in(&self) -> usize {
        self.w1.cols()
    }
    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }
    pub fn d_out(&self) -> usize {
        self.w2.rows()
    }
    pub fn slope(&self) -> T {
        self.slope
    }
    pub fn w1(&self) -> &Matrix<T> {
        &self.w1
    }
    pub fn b1(&self) -> &Matrix<T> {
        &self.b1
    }
    pub fn w2(&self) -> &Matrix<T> {
        &self.w2
    }
    pub fn b2(&self) -> &Matrix<T> {
        &self.b2
    }

    pub fn tensors(&self) -> [&Matrix<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// Mutable access to all parameter tensors. Invalidates outstanding caches.
    pub fn tensors_mut(&mut self) -> [&mut Matrix<T>; 4] {
        self.generation += 1;
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|m| m.as_slice().len()).sum()
    }

    /// Flattened parameter vector in `w1, b1, w2, b2` order.
    pub fn flat(&self) -> Vec<T> {
        self.tensors().iter().flat_map(|m| m.as_slice().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, v: &[T]) {
        assert_eq!(v.len(), self.num_params(), "set_flat length");
        let mut off = 0;
        for m in self.tensors_mut() {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&v[off..off + n]);
            off += n;
        }
    }

    /// Order-sensitive checksum of all parameter bits.
    pub fn checksum(&self) -> u64 {
        self.flat().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, v| {
            (h ^ v.to_f64_lossy().to_bits()).wrapping_mul(0x100_0000_01b3)
        })
    }

    #[inline]
    fn act(&self, s: T) -> T {
        if s > T::zero() {
            s
        } else {
            self.slope * s
        }
    }

    #[inline]
    fn act_deriv(&self, s: T) -> T {
        if s > T::zero() {
            T::one()
        } else {
            self.slope
        }
    }

    fn check_input(&self, op: &'static str, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.d_in() {
            return Err(dim_err(op, format!("{} input columns", self.d_in()), x.cols()));
        }
        Ok(())
    }

    fn pre_activation(&self, x: &Matrix<T>) -> Matrix<T> {
        let mut pre = x.matmul_t(&self.w1);
        pre.add_row(&self.b1);
        pre
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Mlp2Cache<T>)> {
        self.check_input("mlp2_forward", x)?;
        let pre = self.pre_activation(x);
        let act = pre.map(|s| self.act(s));
        let mut y = act.matmul_t(&self.w2);
        y.add_row(&self.b2);
        Ok((
            y,
            Mlp2Cache {
                input: x.clone(),
                pre,
                act,
                generation: self.generation,
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input("mlp2_forward", x)?;
        let act = self.pre_activation(x).map(|s| self.act(s));
        let mut y = act.matmul_t(&self.w2);
        y.add_row(&self.b2);
        Ok(y)
    }

    /// Post-activation hidden layer only.
    pub fn hidden_activations(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input("mlp2_hidden", x)?;
        Ok(self.pre_activation(x).map(|s| self.act(s)))
    }

    /// Gradients of `Σ⟨dY, Y⟩` with respect to every parameter and to the input.
    pub fn backward(&self, cache: &Mlp2Cache<T>, dy: &Matrix<T>) -> Result<(Mlp2Grads<T>, Matrix<T>)> {
        if cache.generation != self.generation || cache.pre.cols() != self.hidden() {
            return Err(Error::Usage(
                "stale forward cache: parameters changed since the forward pass".into(),
            ));
        }
        if dy.shape() != (cache.input.rows(), self.d_out()) {
            return Err(dim_err(
                "mlp2_grads",
                format!("{}x{}", cache.input.rows(), self.d_out()),
                format!("{:?}", dy.shape()),
            ));
        }
        let w2 = dy.t_matmul(&cache.act);
        let b2 = dy.sum_rows();
        let dh = dy.matmul(&self.w2);
        let dpre = dh.zip_map(&cache.pre, |g, s| g * self.act_deriv(s));
        let w1 = dpre.t_matmul(&cache.input);
        let b1 = dpre.sum_rows();
        let dx = dpre.matmul(&self.w1);
        Ok((Mlp2Grads { w1, b1, w2, b2 }, dx))
    }

    fn require_scalar_output(&self, op: &str) -> Result<()> {
        if self.d_out() != 1 {
            return Err(Error::Contract(format!("{op} requires a scalar-output critic, d_out = {}", self.d_out())));
        }
        Ok(())
    }

    /// Per-row `φ'(W1·x + b1) ⊙ w2`, the hidden-layer sensitivity of a scalar critic.
    fn weighted_slopes(&self, x: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
        let pre = self.pre_activation(x);
        let d = pre.map(|s| self.act_deriv(s));
        let w2 = self.w2.row(0);
        let mut dw = d.clone();
        for i in 0..dw.rows() {
            for (v, &w) in dw.row_mut(i).iter_mut().zip(w2) {
                *v *= w;
            }
        }
        (d, dw)
    }

    /// Row `i` holds `∇ₓ D(xᵢ) = W1ᵀ·diag(φ'(W1·xᵢ + b1))·W2ᵀ`.
    pub fn critic_input_gradient(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.require_scalar_output("critic_input_gradient")?;
        self.check_input("critic_input_gradient", x)?;
        let (_, dw) = self.weighted_slopes(x);
        Ok(dw.matmul(&self.w1))
    }

    /// Gradient penalty `λ · meanᵢ (‖∇ₓ D(x̂ᵢ)‖ − 1)²` over all input columns.
    pub fn gp_value_and_grads(&self, xhat: &Matrix<T>, lambda_gp: T) -> Result<(T, Mlp2Grads<T>)> {
        self.gp_value_and_grads_block(xhat, 0..self.d_in(), lambda_gp)
    }

    /// Gradient penalty where the norm covers only the input columns in `block`.
    ///
    /// Parameter gradients come from differentiating the closed-form input
    /// gradient with `φ'` held piecewise constant, so the biases get none.
    pub fn gp_value_and_grads_block(
        &self,
        xhat: &Matrix<T>,
        block: Range<usize>,
        lambda_gp: T,
    ) -> Result<(T, Mlp2Grads<T>)> {
        self.require_scalar_output("gp_value_and_grads")?;
        self.check_input("gp_value_and_grads", xhat)?;
        if block.end > self.d_in() || block.is_empty() {
            return Err(Error::Contract(format!(
                "penalised block {block:?} outside input width {}",
                self.d_in()
            )));
        }
        let n = xhat.rows();
        let mut grads = Mlp2Grads::zeros_like(self);
        if n == 0 {
            return Ok((T::zero(), grads));
        }
        let (d, dw) = self.weighted_slopes(xhat);
        let g = dw.matmul(&self.w1);
        let floor = T::of(GRAD_NORM_FLOOR);
        let inv_n = T::one() / T::of_usize(n);
        let two = T::of(2.0);

        let mut penalty = T::zero();
        let mut u = Matrix::zeros(n, self.d_in());
        for i in 0..n {
            let gi = &g.row(i)[block.clone()];
            let raw = gi.iter().map(|&v| v * v).sum::<T>().sqrt();
            let norm = raw.max(floor);
            let dev = norm - T::one();
            penalty += dev * dev;
            if raw > floor {
                let c = two * lambda_gp * inv_n * dev / norm;
                for (o, &v) in u.row_mut(i)[block.clone()].iter_mut().zip(gi) {
                    *o = c * v;
                }
            }
        }
        grads.w1 = dw.t_matmul(&u);
        grads.w2 = d.hadamard(&u.matmul_t(&self.w1)).sum_rows();
        Ok((lambda_gp * penalty * inv_n, grads))
    }
}
