//! Scalar objectives shared by the training stages, each returning its value
//! together with exact gradients.

use std::ops::Range;

use crate::error::{dim_err, Result};
use crate::numkit::{Matrix, Mlp2Grads, Mlp2Params, Rng, Scalar};

/// Lower and upper clamp applied to every encoder log-variance output.
pub const LOGVAR_CLAMP: (f64, f64) = (-10.0, 10.0);

fn same_shape<T: Scalar>(op: &'static str, a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(op, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}

/// Value and gradients of `KL(N(μ, exp(logvar)) ‖ N(0, I))`, averaged over rows.
#[derive(Clone, Debug)]
pub struct KlTerm<T: Scalar = f64> {
    pub value: T,
    pub d_mu: Matrix<T>,
    pub d_logvar: Matrix<T>,
}

pub fn kl_std_normal<T: Scalar>(mu: &Matrix<T>, logvar: &Matrix<T>) -> Result<KlTerm<T>> {
    same_shape("kl_std_normal", mu, logvar)?;
    let n = mu.rows().max(1);
    let inv_n = T::one() / T::of_usize(n);
    let half = T::of(0.5);
    let mut total = T::zero();
    for (&m, &lv) in mu.as_slice().iter().zip(logvar.as_slice()) {
        total += lv.exp() + m * m - T::one() - lv;
    }
    Ok(KlTerm {
        value: half * total * inv_n,
        d_mu: mu.scaled(inv_n),
        d_logvar: logvar.map(|lv| half * (lv.exp() - T::one()) * inv_n),
    })
}

/// `z = μ + exp(logvar / 2) ⊙ ε`; also returns `ε` so gradients can flow through it.
pub fn reparameterize<T: Scalar>(mu: &Matrix<T>, logvar: &Matrix<T>, rng: &mut Rng) -> Result<(Matrix<T>, Matrix<T>)> {
    same_shape("reparameterize", mu, logvar)?;
    let eps: Matrix<T> = rng.normal_matrix(mu.rows(), mu.cols());
    Ok((reparameterize_with(mu, logvar, &eps), eps))
}

/// Reparameterised sample with pinned noise; log-variance is clamped first.
pub fn reparameterize_with<T: Scalar>(mu: &Matrix<T>, logvar: &Matrix<T>, eps: &Matrix<T>) -> Matrix<T> {
    let (lo, hi) = (T::of(LOGVAR_CLAMP.0), T::of(LOGVAR_CLAMP.1));
    let half = T::of(0.5);
    let std = logvar.map(|lv| (half * lv.max(lo).min(hi)).exp());
    mu.add(&std.hadamard(eps))
}

/// Splits an encoder output into `(μ, clamped logvar)` halves.
pub fn split_gaussian<T: Scalar>(enc: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
    let d = enc.cols() / 2;
    let (lo, hi) = (T::of(LOGVAR_CLAMP.0), T::of(LOGVAR_CLAMP.1));
    (enc.cols_range(0..d), enc.cols_range(d..2 * d).map(|v| v.max(lo).min(hi)))
}

/// Gradient mask for the clamp in [`split_gaussian`].
pub fn logvar_clamp_mask<T: Scalar>(raw_logvar: &Matrix<T>) -> Matrix<T> {
    let (lo, hi) = (T::of(LOGVAR_CLAMP.0), T::of(LOGVAR_CLAMP.1));
    raw_logvar.map(|v| if v < lo || v > hi { T::zero() } else { T::one() })
}

/// Mean over all entries of `(pred − target)²`.
pub fn mse_loss<T: Scalar>(pred: &Matrix<T>, target: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    same_shape("mse_loss", pred, target)?;
    let count = pred.as_slice().len().max(1);
    let scale = T::of(2.0) / T::of_usize(count);
    let diff = pred.sub(target);
    Ok((diff.frobenius_sq() / T::of_usize(count), diff.scaled(scale)))
}

/// Mean over rows of `‖pred − target‖²₂`.
pub fn squared_error<T: Scalar>(pred: &Matrix<T>, target: &Matrix<T>) -> Result<(T, Matrix<T>)> {
    same_shape("squared_error", pred, target)?;
    let n = pred.rows().max(1);
    let diff = pred.sub(target);
    let scale = T::of(2.0) / T::of_usize(n);
    Ok((diff.frobenius_sq() / T::of_usize(n), diff.scaled(scale)))
}

/// Row-wise `α·real + (1 − α)·fake`.
pub fn interpolate<T: Scalar>(real: &Matrix<T>, fake: &Matrix<T>, alphas: &[T]) -> Matrix<T> {
    assert_eq!(real.shape(), fake.shape(), "interpolate shape");
    assert_eq!(alphas.len(), real.rows(), "interpolate alpha count");
    Matrix::from_fn(real.rows(), real.cols(), |i, j| {
        alphas[i] * real[(i, j)] + (T::one() - alphas[i]) * fake[(i, j)]
    })
}

pub fn draw_alphas<T: Scalar>(n: usize, rng: &mut Rng) -> Vec<T> {
    (0..n).map(|_| T::of(rng.uniform())).collect()
}

/// Critic side of a Wasserstein objective with gradient penalty.
#[derive(Clone, Debug)]
pub struct CriticSide<T: Scalar = f64> {
    /// `E[D(real)] − E[D(fake)] − λ·GP`, the quantity the critic maximises.
    pub objective: T,
    pub penalty: T,
    /// Gradient of `−objective`, so a descent step is an ascent step on the objective.
    pub grads: Mlp2Grads<T>,
}

/// Evaluates the critic objective on given real, fake and interpolated inputs.
///
/// `block` selects the input columns included in the penalised gradient norm.
pub fn critic_side<T: Scalar>(
    critic: &Mlp2Params<T>,
    real: &Matrix<T>,
    fake: &Matrix<T>,
    xhat: &Matrix<T>,
    block: Range<usize>,
    lambda_gp: T,
) -> Result<CriticSide<T>> {
    let (d_real, c_real) = critic.forward(real)?;
    let (d_fake, c_fake) = critic.forward(fake)?;
    let nr = T::of_usize(real.rows().max(1));
    let nf = T::of_usize(fake.rows().max(1));
    let (g_real, _) = critic.backward(&c_real, &Matrix::filled(real.rows(), 1, -T::one() / nr))?;
    let (g_fake, _) = critic.backward(&c_fake, &Matrix::filled(fake.rows(), 1, T::one() / nf))?;
    let (penalty, g_pen) = critic.gp_value_and_grads_block(xhat, block, lambda_gp)?;
    let mut grads = g_real;
    grads.axpy(T::one(), &g_fake);
    grads.axpy(T::one(), &g_pen);
    Ok(CriticSide {
        objective: d_real.mean() - d_fake.mean() - penalty,
        penalty,
        grads,
    })
}

/// Generator side `−E[D(fake)]` and its gradient with respect to the critic input.
#[derive(Clone, Debug)]
pub struct GeneratorSide<T: Scalar = f64> {
    pub objective: T,
    pub input_grad: Matrix<T>,
}

pub fn generator_side<T: Scalar>(critic: &Mlp2Params<T>, fake: &Matrix<T>) -> Result<GeneratorSide<T>> {
    let (d_fake, cache) = critic.forward(fake)?;
    let n = T::of_usize(fake.rows().max(1));
    let (_, input_grad) = critic.backward(&cache, &Matrix::filled(fake.rows(), 1, -T::one() / n))?;
    Ok(GeneratorSide {
        objective: -d_fake.mean(),
        input_grad,
    })
}

/// Both sides of one adversarial term evaluated on a single batch.
#[derive(Clone, Debug)]
pub struct AdversarialLoss<T: Scalar = f64> {
    pub critic: CriticSide<T>,
    pub generator: GeneratorSide<T>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn kl_of_standard_normal_is_zero() {
        let z: Matrix = Matrix::zeros(3, 4);
        assert_eq!(kl_std_normal(&z, &z).unwrap().value, 0.0);
    }

    #[test]
    fn kl_unit_mean_shift() {
        let kl = kl_std_normal(&m(&[&[1.0]]), &m(&[&[0.0]])).unwrap();
        assert!((kl.value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_is_nonnegative() {
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let mu: Matrix = rng.normal_matrix(3, 4);
            let lv = rng.normal_matrix(3, 4).scaled(3.0);
            assert!(kl_std_normal(&mu, &lv).unwrap().value >= 0.0);
        }
    }

    #[test]
    fn mse_definition() {
        let a = m(&[&[1.0, 2.0, 3.0]]);
        assert_eq!(mse_loss(&a, &a).unwrap().0, 0.0);
        let b = m(&[&[0.0, 1.0, 2.0]]);
        assert!((mse_loss(&a, &b).unwrap().0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reparameterize_collapses_at_logvar_floor() {
        let mut rng = Rng::new(4);
        let mu = m(&[&[0.5, -1.5]]);
        let lv = Matrix::filled(1, 2, -1e6);
        let (z, _) = reparameterize(&mu, &lv, &mut rng).unwrap();
        // clamp floor is -10, so std = exp(-5)
        assert!(z.max_abs_diff(&mu) < 10.0 * (-5.0f64).exp());
    }

    #[test]
    fn reparameterize_moments() {
        let mut rng = Rng::new(5);
        let n = 100_000;
        let z: Matrix = Matrix::zeros(n, 1);
        let (s, _) = reparameterize(&z, &z, &mut rng).unwrap();
        let mean = s.mean();
        let var = s.map(|v| (v - mean) * (v - mean)).sum() / (n as f64 - 1.0);
        // standard errors: 1/√n for the mean, √(2/n) for the variance
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn reparameterize_is_reproducible() {
        let mu = m(&[&[0.1, 0.2]]);
        let lv = m(&[&[0.0, 1.0]]);
        let a = reparameterize(&mu, &lv, &mut Rng::new(11)).unwrap().0;
        let b = reparameterize(&mu, &lv, &mut Rng::new(11)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn interpolation_endpoint() {
        let r = m(&[&[1.0, 2.0]]);
        let f = m(&[&[5.0, 7.0]]);
        assert_eq!(interpolate(&r, &f, &[1.0]), r);
        assert_eq!(interpolate(&r, &f, &[0.0]), f);
    }
}
