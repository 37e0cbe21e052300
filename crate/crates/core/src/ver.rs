//! Stage 1: unsupervised variational pre-training over every visual feature,
//! frozen afterwards to provide the `[x | μ | logσ²]` embedding.

use serde::{Deserialize, Serialize};

use crate::container::{push_mlp, read_mlp, Container};
use crate::error::{Error, Result};
use crate::losses::{split_gaussian, squared_error};
use crate::numkit::{AdamW, AdamWConfig, Matrix, Mlp2Params, Rng, LEAKY_SLOPE};
use crate::trace::{epoch_batches, EpochMeter, LossTrace};
use crate::vae::{vae_backward, vae_forward};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub adam: AdamWConfig,
    pub seed: u64,
}

impl Default for VerConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            hidden: 64,
            latent_dim: 4,
            adam: AdamWConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerModel {
    encoder: Mlp2Params,
    decoder: Mlp2Params,
    frozen: bool,
}

impl VerModel {
    pub fn init(d_x: usize, latent_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            encoder: Mlp2Params::init(d_x, hidden, 2 * latent_dim, LEAKY_SLOPE, rng),
            decoder: Mlp2Params::init(latent_dim, hidden, d_x, LEAKY_SLOPE, rng),
            frozen: false,
        }
    }

    pub fn d_x(&self) -> usize {
        self.encoder.d_in()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.d_out() / 2
    }

    /// Width of [`ver_embed`] output.
    pub fn embed_width(&self) -> usize {
        self.d_x() + 2 * self.latent_dim()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn encoder(&self) -> &Mlp2Params {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp2Params {
        &self.decoder
    }

    pub fn checksum(&self) -> u64 {
        self.encoder.checksum() ^ self.decoder.checksum().rotate_left(17)
    }

    /// Mean squared reconstruction error `mean_rows ‖F(μ(x)) − x‖²` through the means.
    pub fn reconstruction_error(&self, x: &Matrix) -> Result<f64> {
        let (mu, _) = split_gaussian(&self.encoder.predict(x)?);
        let recon = self.decoder.predict(&mu)?;
        Ok(squared_error(&recon, x)?.0)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("ver").with_meta("frozen", u8::from(self.frozen));
        push_mlp(&mut c, "enc", &self.encoder);
        push_mlp(&mut c, "dec", &self.decoder);
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != "ver" {
            return Err(Error::Parse(format!("expected a ver checkpoint, found {:?}", c.kind)));
        }
        Ok(Self {
            encoder: read_mlp(c, "enc")?,
            decoder: read_mlp(c, "dec")?,
            frozen: c.meta("frozen")? == "1",
        })
    }
}

/// Stacks seen and unseen features into the label-free pre-training pool.
pub fn pretraining_pool(xs: &Matrix, xu: &Matrix) -> Matrix {
    if xu.rows() == 0 {
        xs.clone()
    } else {
        Matrix::vcat(&[xs, xu])
    }
}

/// Minimises `KL + reconstruction error` over mini-batches of `features`.
pub fn pretrain_ver(features: &Matrix, cfg: &VerConfig) -> Result<(VerModel, LossTrace)> {
    let root = Rng::new(cfg.seed);
    let mut model = VerModel::init(features.cols(), cfg.latent_dim, cfg.hidden, &mut root.fork(0));
    let trace = train_ver(&mut model, features, cfg, &root)?;
    model.freeze();
    Ok((model, trace))
}

fn train_ver(model: &mut VerModel, features: &Matrix, cfg: &VerConfig, root: &Rng) -> Result<LossTrace> {
    if model.frozen {
        return Err(Error::Usage("cannot train a frozen VER model".into()));
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("n_pre must be at least 1".into()));
    }
    let mut batch_rng = root.fork(1);
    let mut noise_rng = root.fork(2);
    let mut opt_e = AdamW::for_mlp(cfg.adam, &model.encoder);
    let mut opt_d = AdamW::for_mlp(cfg.adam, &model.decoder);
    let mut trace = LossTrace::new("ver", &["loss", "kl", "recon"]);
    for epoch in 1..=cfg.epochs {
        let mut meter = EpochMeter::new(3);
        for idx in epoch_batches(features.rows(), cfg.batch_size, &mut batch_rng) {
            let x = features.select_rows(&idx);
            let eps = noise_rng.normal_matrix(x.rows(), model.latent_dim());
            let pass = vae_forward(&model.encoder, &model.decoder, &x, None, &eps)?;
            let (recon, d_recon) = squared_error(&pass.recon, &x)?;
            let (kl, ge, gd) = vae_backward(&model.encoder, &model.decoder, &pass, &d_recon)?;
            meter.add("ver", epoch, &[kl + recon, kl, recon])?;
            opt_e.step_mlp(&mut model.encoder, &ge);
            opt_d.step_mlp(&mut model.decoder, &gd);
        }
        meter.finish(&mut trace, epoch);
    }
    Ok(trace)
}

/// Deterministic embedding `[x | μ_pre(x) | logσ²_pre(x)]`.
pub fn ver_embed(model: &VerModel, x: &Matrix) -> Result<Matrix> {
    if !model.frozen {
        return Err(Error::Usage("VER embedding requires a frozen model".into()));
    }
    let (mu, logvar) = split_gaussian(&model.encoder.predict(x)?);
    Ok(Matrix::hcat(&[x, &mu, &logvar]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticSpec};

    fn quick_cfg(epochs: usize) -> VerConfig {
        VerConfig {
            epochs,
            latent_dim: 3,
            hidden: 32,
            ..Default::default()
        }
    }

    fn pool(spec: &SyntheticSpec) -> Matrix {
        let (ds, _) = make_synthetic(spec).unwrap();
        let v = ds.train_view();
        pretraining_pool(v.xs, v.xu)
    }

    #[test]
    fn embedding_shape_and_passthrough() {
        let x = pool(&SyntheticSpec {
            samples_per_class: 10,
            ..Default::default()
        });
        let (m, _) = pretrain_ver(&x, &quick_cfg(1)).unwrap();
        let e = ver_embed(&m, &x).unwrap();
        assert_eq!(e.cols(), x.cols() + 2 * 3);
        assert_eq!(e.cols_range(0..x.cols()), x);
        assert_eq!(e, ver_embed(&m, &x).unwrap());
    }

    #[test]
    fn unfrozen_model_cannot_embed() {
        let m = VerModel::init(4, 2, 8, &mut Rng::new(0));
        assert!(matches!(ver_embed(&m, &Matrix::zeros(1, 4)), Err(Error::Usage(_))));
    }

    #[test]
    fn training_reduces_reconstruction_error() {
        let x = pool(&SyntheticSpec {
            samples_per_class: 50,
            ..Default::default()
        });
        let cfg = quick_cfg(30);
        let untrained = VerModel::init(x.cols(), cfg.latent_dim, cfg.hidden, &mut Rng::new(cfg.seed).fork(0));
        let (trained, trace) = pretrain_ver(&x, &cfg).unwrap();
        assert!(trained.reconstruction_error(&x).unwrap() < untrained.reconstruction_error(&x).unwrap());
        assert!(trace.column("loss").unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = VerModel::init(5, 2, 7, &mut Rng::new(1));
        let c = Container::from_bytes(&m.to_container().to_bytes().unwrap()).unwrap();
        assert_eq!(VerModel::from_container(&c).unwrap(), m);
    }
}
