//! Shared encoder/decoder plumbing for the two variational autoencoders.

use crate::error::Result;
use crate::losses::{kl_std_normal, logvar_clamp_mask, reparameterize_with, split_gaussian};
use crate::numkit::{Matrix, Mlp2Cache, Mlp2Grads, Mlp2Params, Scalar};

/// Everything kept from one encode → sample → decode pass.
#[derive(Clone, Debug)]
pub struct VaePass<T: Scalar = f64> {
    pub mu: Matrix<T>,
    pub logvar: Matrix<T>,
    pub eps: Matrix<T>,
    pub z: Matrix<T>,
    pub recon: Matrix<T>,
    clamp_mask: Matrix<T>,
    enc_cache: Mlp2Cache<T>,
    dec_cache: Mlp2Cache<T>,
}

/// Encodes `enc_input`, samples `z = μ + σ ⊙ eps`, and decodes `[z | cond]`.
pub fn vae_forward<T: Scalar>(
    encoder: &Mlp2Params<T>,
    decoder: &Mlp2Params<T>,
    enc_input: &Matrix<T>,
    cond: Option<&Matrix<T>>,
    eps: &Matrix<T>,
) -> Result<VaePass<T>> {
    let (enc_out, enc_cache) = encoder.forward(enc_input)?;
    let (mu, logvar) = split_gaussian(&enc_out);
    let clamp_mask = logvar_clamp_mask(&enc_out.cols_range(mu.cols()..enc_out.cols()));
    let z = reparameterize_with(&mu, &logvar, eps);
    let dec_in = match cond {
        Some(c) => Matrix::hcat(&[&z, c]),
        None => z.clone(),
    };
    let (recon, dec_cache) = decoder.forward(&dec_in)?;
    Ok(VaePass {
        mu,
        logvar,
        eps: eps.clone(),
        z,
        recon,
        clamp_mask,
        enc_cache,
        dec_cache,
    })
}

/// Gradients of `KL + ⟨d_recon, recon⟩`; returns `(kl, encoder grads, decoder grads)`.
pub fn vae_backward<T: Scalar>(
    encoder: &Mlp2Params<T>,
    decoder: &Mlp2Params<T>,
    pass: &VaePass<T>,
    d_recon: &Matrix<T>,
) -> Result<(T, Mlp2Grads<T>, Mlp2Grads<T>)> {
    vae_backward_weighted(encoder, decoder, pass, d_recon, T::one())
}

/// As [`vae_backward`] with the KL term scaled by `kl_weight` (zero drops it).
pub fn vae_backward_weighted<T: Scalar>(
    encoder: &Mlp2Params<T>,
    decoder: &Mlp2Params<T>,
    pass: &VaePass<T>,
    d_recon: &Matrix<T>,
    kl_weight: T,
) -> Result<(T, Mlp2Grads<T>, Mlp2Grads<T>)> {
    let (dec_grads, d_dec_in) = decoder.backward(&pass.dec_cache, d_recon)?;
    let d_z = d_dec_in.cols_range(0..pass.z.cols());
    let kl = kl_std_normal(&pass.mu, &pass.logvar)?;
    let half = T::of(0.5);
    let mut d_mu = d_z.clone();
    d_mu.axpy(kl_weight, &kl.d_mu);
    // ∂z/∂logvar = ε · exp(logvar/2) / 2
    let d_lv_sample = Matrix::from_fn(d_z.rows(), d_z.cols(), |i, j| {
        d_z[(i, j)] * pass.eps[(i, j)] * half * (half * pass.logvar[(i, j)]).exp()
    });
    let d_lv = d_lv_sample.add(&kl.d_logvar.scaled(kl_weight)).hadamard(&pass.clamp_mask);
    let (enc_grads, _) = encoder.backward(&pass.enc_cache, &Matrix::hcat(&[&d_mu, &d_lv]))?;
    Ok((kl.value, enc_grads, dec_grads))
}
