//! Stage 3: conditional feature generation. A VAE on seen pairs shares its
//! decoder `G` with three Wasserstein critics: conditional seen `D_s`,
//! unconditional unseen `D_u`, and the pseudo-conditional unseen `D_u2` whose
//! conditions come from the frozen regressor.

use serde::{Deserialize, Serialize};

use crate::container::{push_mlp, read_mlp, Container};
use crate::data::TrainView;
use crate::error::{dim_err, Error, Result};
use crate::losses::{critic_side, draw_alphas, generator_side, interpolate, squared_error};
use crate::numkit::{AdamW, AdamWConfig, Matrix, Mlp2Grads, Mlp2Params, Rng, LEAKY_SLOPE};
use crate::priors::{assign_nearest, ClassPrior};
use crate::regress::{regress, RegressorModel};
use crate::trace::{epoch_batches, EpochMeter, LossTrace};
use crate::vae::{vae_backward, vae_backward_weighted, vae_forward};
use crate::ver::VerModel;

/// Encoder `E: [x | a] → [μ | logσ²]` and generator `G: [z | a] → x`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorModel {
    pub encoder: Mlp2Params,
    pub generator: Mlp2Params,
    frozen: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticSet {
    /// `[x | a] → 1`
    pub d_s: Mlp2Params,
    /// `x → 1`
    pub d_u: Mlp2Params,
    /// `[x | ã] → 1`
    pub d_u2: Mlp2Params,
}

/// Priors used to sample unseen semantics on each side of the `D_u` game.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePriors {
    /// Semantics for the fake unseen batch the generator is updated on.
    pub g_prior: ClassPrior,
    /// Semantics for the fake batch the critic `D_u` compares with real data.
    pub d_prior: ClassPrior,
}

impl StagePriors {
    pub fn same(p: ClassPrior) -> Self {
        Self {
            g_prior: p.clone(),
            d_prior: p,
        }
    }
}

impl GeneratorModel {
    pub fn init(d_x: usize, d_a: usize, latent_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            encoder: Mlp2Params::init(d_x + d_a, hidden, 2 * latent_dim, LEAKY_SLOPE, &mut rng.fork(0)),
            generator: Mlp2Params::init(latent_dim + d_a, hidden, d_x, LEAKY_SLOPE, &mut rng.fork(1)),
            frozen: false,
        }
    }

    pub fn d_x(&self) -> usize {
        self.generator.d_out()
    }
    pub fn latent_dim(&self) -> usize {
        self.encoder.d_out() / 2
    }
    pub fn d_a(&self) -> usize {
        self.generator.d_in() - self.latent_dim()
    }
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// `G([z | a])` without keeping a cache.
    pub fn decode(&self, z: &Matrix, a: &Matrix) -> Result<Matrix> {
        self.generator.predict(&Matrix::hcat(&[z, a]))
    }

    pub fn to_container(&self, critics: Option<&CriticSet>) -> Container {
        let mut c = Container::new("generator").with_meta("frozen", u8::from(self.frozen));
        push_mlp(&mut c, "enc", &self.encoder);
        push_mlp(&mut c, "gen", &self.generator);
        if let Some(cs) = critics {
            push_mlp(&mut c, "ds", &cs.d_s);
            push_mlp(&mut c, "du", &cs.d_u);
            push_mlp(&mut c, "du2", &cs.d_u2);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<(Self, Option<CriticSet>)> {
        if c.kind != "generator" {
            return Err(Error::Parse(format!("expected a generator checkpoint, found {:?}", c.kind)));
        }
        let critics = if c.has_matrix("ds.w1") {
            Some(CriticSet {
                d_s: read_mlp(c, "ds")?,
                d_u: read_mlp(c, "du")?,
                d_u2: read_mlp(c, "du2")?,
            })
        } else {
            None
        };
        let m = Self {
            encoder: read_mlp(c, "enc")?,
            generator: read_mlp(c, "gen")?,
            frozen: c.meta("frozen")? == "1",
        };
        if m.encoder.d_in() != m.d_x() + m.d_a() {
            return Err(Error::Parse("encoder and generator widths disagree".into()));
        }
        Ok((m, critics))
    }
}

impl CriticSet {
    pub fn init(d_x: usize, d_a: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            d_s: Mlp2Params::init(d_x + d_a, hidden, 1, LEAKY_SLOPE, &mut rng.fork(0)),
            d_u: Mlp2Params::init(d_x, hidden, 1, LEAKY_SLOPE, &mut rng.fork(1)),
            d_u2: Mlp2Params::init(d_x + d_a, hidden, 1, LEAKY_SLOPE, &mut rng.fork(2)),
        }
    }
}

/// Gradients for the encoder and generator.
#[derive(Clone, Debug)]
pub struct ModelGrads {
    pub encoder: Mlp2Grads,
    pub generator: Mlp2Grads,
}

/// One adversarial term evaluated on a batch against a fixed critic.
#[derive(Clone, Debug)]
pub struct GanTerm {
    /// Objective the critic maximises (penalty included).
    pub critic_objective: f64,
    pub penalty: f64,
    /// `−E[D(fake)]`, minimised by the generator.
    pub generator_objective: f64,
    /// Gradient of `−critic_objective` in critic parameters.
    pub critic_grads: Mlp2Grads,
    /// Gradient of `generator_objective` in model parameters.
    pub model_grads: ModelGrads,
}

fn check_pair(op: &'static str, m: &GeneratorModel, x: &Matrix, a: &Matrix) -> Result<()> {
    if x.cols() != m.d_x() {
        return Err(dim_err(op, format!("{} feature columns", m.d_x()), x.cols()));
    }
    if a.cols() != m.d_a() {
        return Err(dim_err(op, format!("{} semantic columns", m.d_a()), a.cols()));
    }
    if x.rows() != a.rows() {
        return Err(dim_err(op, format!("{} semantic rows", x.rows()), a.rows()));
    }
    Ok(())
}

/// `KL(N(μˢ, σˢ) ‖ N(0, I)) + E‖G(z̃ˢ, aˢ) − xˢ‖²` with `z̃ˢ` drawn through `rng`.
pub fn loss_vae_s(m: &GeneratorModel, xs: &Matrix, as_: &Matrix, rng: &mut Rng) -> Result<(f64, ModelGrads)> {
    check_pair("loss_vae_s", m, xs, as_)?;
    let eps = rng.normal_matrix(xs.rows(), m.latent_dim());
    let pass = vae_forward(&m.encoder, &m.generator, &Matrix::hcat(&[xs, as_]), Some(as_), &eps)?;
    let (recon, d_recon) = squared_error(&pass.recon, xs)?;
    let (kl, encoder, generator) = vae_backward(&m.encoder, &m.generator, &pass, &d_recon)?;
    Ok((kl + recon, ModelGrads { encoder, generator }))
}

/// Conditional seen critic on real pairs versus VAE reconstructions.
///
/// Draws the latent noise first, then the interpolation weights.
pub fn loss_gan_s(
    c: &CriticSet,
    m: &GeneratorModel,
    xs: &Matrix,
    as_: &Matrix,
    rng: &mut Rng,
    lambda_gp: f64,
) -> Result<GanTerm> {
    check_pair("loss_gan_s", m, xs, as_)?;
    let eps = rng.normal_matrix(xs.rows(), m.latent_dim());
    let alphas = draw_alphas(xs.rows(), rng);
    let pass = vae_forward(&m.encoder, &m.generator, &Matrix::hcat(&[xs, as_]), Some(as_), &eps)?;
    let real = Matrix::hcat(&[xs, as_]);
    let fake = Matrix::hcat(&[&pass.recon, as_]);
    let hat = Matrix::hcat(&[&interpolate(xs, &pass.recon, &alphas), as_]);
    let side = critic_side(&c.d_s, &real, &fake, &hat, 0..m.d_x(), lambda_gp)?;
    let gen = generator_side(&c.d_s, &fake)?;
    let d_recon = gen.input_grad.cols_range(0..m.d_x());
    let (_, encoder, generator) = vae_backward_weighted(&m.encoder, &m.generator, &pass, &d_recon, 0.0)?;
    Ok(GanTerm {
        critic_objective: side.objective,
        penalty: side.penalty,
        generator_objective: gen.objective,
        critic_grads: side.grads,
        model_grads: ModelGrads { encoder, generator },
    })
}

/// Fake unseen batch `G(z, a)` with `z ∼ N(0, I)`; returns the fake and the
/// gradient of `−E[critic(fake)]` with respect to `G`'s parameters.
fn unseen_fake_term(
    critic: &Mlp2Params,
    m: &GeneratorModel,
    xu: &Matrix,
    cond: &Matrix,
    conditional: bool,
    rng: &mut Rng,
    lambda_gp: f64,
) -> Result<GanTerm> {
    let z = rng.normal_matrix(cond.rows(), m.latent_dim());
    let alphas = draw_alphas(xu.rows(), rng);
    let (fake_x, cache) = m.generator.forward(&Matrix::hcat(&[&z, cond]))?;
    let hat_x = interpolate(xu, &fake_x, &alphas);
    let with_cond = |x: &Matrix| if conditional { Matrix::hcat(&[x, cond]) } else { x.clone() };
    let (real, fake, hat) = (with_cond(xu), with_cond(&fake_x), with_cond(&hat_x));
    let side = critic_side(critic, &real, &fake, &hat, 0..m.d_x(), lambda_gp)?;
    let gen = generator_side(critic, &fake)?;
    let (generator, _) = m.generator.backward(&cache, &gen.input_grad.cols_range(0..m.d_x()))?;
    Ok(GanTerm {
        critic_objective: side.objective,
        penalty: side.penalty,
        generator_objective: gen.objective,
        critic_grads: side.grads,
        model_grads: ModelGrads {
            encoder: Mlp2Grads::zeros_like(&m.encoder),
            generator,
        },
    })
}

/// Unconditional unseen critic on real `xu` versus `G(z, a_sampled)`.
pub fn loss_gan_u1(
    c: &CriticSet,
    m: &GeneratorModel,
    xu: &Matrix,
    a_sampled: &Matrix,
    rng: &mut Rng,
    lambda_gp: f64,
) -> Result<GanTerm> {
    check_pair("loss_gan_u1", m, xu, a_sampled)?;
    unseen_fake_term(&c.d_u, m, xu, a_sampled, false, rng, lambda_gp)
}

/// Pseudo conditions `ã = R(x)` for unseen features; requires a frozen regressor.
pub fn pfa_conditions(reg: &RegressorModel, ver: &VerModel, xu: &Matrix) -> Result<Matrix> {
    if !reg.is_frozen() {
        return Err(Error::Usage("pseudo conditions require a frozen regressor".into()));
    }
    regress(reg, ver, xu)
}

/// Class frequencies implied by mapping each pseudo condition to its nearest
/// unseen semantic row.
pub fn pseudo_condition_prior(conds: &Matrix, a_unseen: &Matrix) -> Result<ClassPrior> {
    let mut counts = vec![0.0; a_unseen.rows()];
    for k in assign_nearest(conds, a_unseen) {
        counts[k] += 1.0;
    }
    ClassPrior::from_weights(&counts)
}

/// Pseudo-conditional unseen critic: the i-th real and i-th fake row share
/// the condition `ã_i = R(xu_i)`. No prior is sampled.
pub fn loss_gan_u2_pfa(
    c: &CriticSet,
    m: &GeneratorModel,
    reg: &RegressorModel,
    ver: &VerModel,
    xu: &Matrix,
    rng: &mut Rng,
    lambda_gp: f64,
) -> Result<GanTerm> {
    let cond = pfa_conditions(reg, ver, xu)?;
    check_pair("loss_gan_u2_pfa", m, xu, &cond)?;
    unseen_fake_term(&c.d_u2, m, xu, &cond, true, rng, lambda_gp)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub lambda_u1: f64,
    pub lambda_u2: f64,
    pub lambda_gp: f64,
    pub adam: AdamWConfig,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            hidden: 64,
            latent_dim: 8,
            lambda_u1: 1.0,
            lambda_u2: 0.09,
            lambda_gp: 10.0,
            adam: AdamWConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedGenerator {
    pub model: GeneratorModel,
    pub critics: CriticSet,
    pub trace: LossTrace,
}

const TRACE_COLUMNS: [&str; 9] = [
    "vae", "kl", "recon", "critic_s", "gen_s", "critic_u1", "gen_u1", "critic_u2", "gen_u2",
];

/// Per batch: one ascent step for each active critic, then one descent step
/// for `E, G` on `L_VAE + L_GAN^s + λ_u1·L_GAN^u1 + λ_u2·L_GAN^u2`.
///
/// Each random quantity has its own stream, so switching an unseen term off
/// leaves the seen-side draws untouched. `reg` may be `None` only when
/// `λ_u2 = 0`.
pub fn train_generator(
    view: &TrainView<'_>,
    ver: &VerModel,
    reg: Option<&RegressorModel>,
    priors: &StagePriors,
    cfg: &GeneratorConfig,
) -> Result<TrainedGenerator> {
    if cfg.epochs == 0 {
        return Err(Error::Config("n_g must be at least 1".into()));
    }
    let n_u = view.n_unseen_classes();
    if priors.g_prior.len() != n_u || priors.d_prior.len() != n_u {
        return Err(Error::Contract(format!("stage priors must cover {n_u} unseen classes")));
    }
    let (d_x, d_a) = (view.d_x(), view.d_a());
    let use_u1 = cfg.lambda_u1 > 0.0 && view.xu.rows() > 0;
    let use_u2 = cfg.lambda_u2 > 0.0 && view.xu.rows() > 0;
    let pseudo = if use_u2 {
        let reg = reg.ok_or_else(|| Error::Dependency("λ_u2 > 0 requires a trained regressor".into()))?;
        Some(pfa_conditions(reg, ver, view.xu)?)
    } else {
        None
    };

    let root = Rng::new(cfg.seed);
    let mut model = GeneratorModel::init(d_x, d_a, cfg.latent_dim, cfg.hidden, &mut root.fork(0));
    let mut critics = CriticSet::init(d_x, d_a, cfg.hidden, &mut root.fork(1));
    let mut batch_rng = root.fork(2);
    let mut seen_noise = root.fork(3);
    let mut seen_alpha = root.fork(4);
    let mut unseen_idx = root.fork(5);
    let mut u1_rng = root.fork(6);
    let mut u2_rng = root.fork(7);

    let mut opt_e = AdamW::for_mlp(cfg.adam, &model.encoder);
    let mut opt_g = AdamW::for_mlp(cfg.adam, &model.generator);
    let mut opt_ds = AdamW::for_mlp(cfg.adam, &critics.d_s);
    let mut opt_du = AdamW::for_mlp(cfg.adam, &critics.d_u);
    let mut opt_du2 = AdamW::for_mlp(cfg.adam, &critics.d_u2);
    let mut trace = LossTrace::new("generator", &TRACE_COLUMNS);

    for epoch in 1..=cfg.epochs {
        let mut meter = EpochMeter::new(TRACE_COLUMNS.len());
        for idx in epoch_batches(view.xs.rows(), cfg.batch_size, &mut batch_rng) {
            let n = idx.len();
            let xs = view.xs.select_rows(&idx);
            let as_ = view.seen_semantics(&idx);

            // seen pair: VAE pass shared by the reconstruction and D_s
            let eps = seen_noise.normal_matrix(n, cfg.latent_dim);
            let pass = vae_forward(&model.encoder, &model.generator, &Matrix::hcat(&[&xs, &as_]), Some(&as_), &eps)?;
            let real_s = Matrix::hcat(&[&xs, &as_]);
            let fake_s = Matrix::hcat(&[&pass.recon, &as_]);
            let alphas = draw_alphas(n, &mut seen_alpha);
            let hat_s = Matrix::hcat(&[&interpolate(&xs, &pass.recon, &alphas), &as_]);
            let side_s = critic_side(&critics.d_s, &real_s, &fake_s, &hat_s, 0..d_x, cfg.lambda_gp)?;
            opt_ds.step_mlp(&mut critics.d_s, &side_s.grads);

            let (recon, mut d_recon) = squared_error(&pass.recon, &xs)?;
            let gen_s = generator_side(&critics.d_s, &fake_s)?;
            d_recon.axpy(1.0, &gen_s.input_grad.cols_range(0..d_x));
            let (kl, ge, mut gg) = vae_backward(&model.encoder, &model.generator, &pass, &d_recon)?;

            let xu_idx = if use_u1 || use_u2 {
                unseen_idx.indices(view.xu.rows(), n)
            } else {
                Vec::new()
            };
            let xu = view.xu.select_rows(&xu_idx);

            let (mut critic_u1, mut gen_u1) = (0.0, 0.0);
            if use_u1 {
                let a_d = view.a_unseen.select_rows(&priors.d_prior.sample(n, &mut u1_rng));
                let z_d = u1_rng.normal_matrix(n, cfg.latent_dim);
                let fake_d = model.decode(&z_d, &a_d)?;
                let alphas = draw_alphas(n, &mut u1_rng);
                let side = critic_side(&critics.d_u, &xu, &fake_d, &interpolate(&xu, &fake_d, &alphas), 0..d_x, cfg.lambda_gp)?;
                opt_du.step_mlp(&mut critics.d_u, &side.grads);
                critic_u1 = side.objective;

                let a_g = view.a_unseen.select_rows(&priors.g_prior.sample(n, &mut u1_rng));
                let z_g = u1_rng.normal_matrix(n, cfg.latent_dim);
                let (fake_g, cache) = model.generator.forward(&Matrix::hcat(&[&z_g, &a_g]))?;
                let gen = generator_side(&critics.d_u, &fake_g)?;
                let (g, _) = model.generator.backward(&cache, &gen.input_grad)?;
                gg.axpy(cfg.lambda_u1, &g);
                gen_u1 = gen.objective;
            }

            let (mut critic_u2, mut gen_u2) = (0.0, 0.0);
            if let Some(pseudo) = &pseudo {
                let cond = pseudo.select_rows(&xu_idx);
                let z = u2_rng.normal_matrix(n, cfg.latent_dim);
                let (fake_x, cache) = model.generator.forward(&Matrix::hcat(&[&z, &cond]))?;
                let alphas = draw_alphas(n, &mut u2_rng);
                let hat = Matrix::hcat(&[&interpolate(&xu, &fake_x, &alphas), &cond]);
                let fake = Matrix::hcat(&[&fake_x, &cond]);
                let side = critic_side(&critics.d_u2, &Matrix::hcat(&[&xu, &cond]), &fake, &hat, 0..d_x, cfg.lambda_gp)?;
                opt_du2.step_mlp(&mut critics.d_u2, &side.grads);
                critic_u2 = side.objective;

                let gen = generator_side(&critics.d_u2, &fake)?;
                let (g, _) = model.generator.backward(&cache, &gen.input_grad.cols_range(0..d_x))?;
                gg.axpy(cfg.lambda_u2, &g);
                gen_u2 = gen.objective;
            }

            meter.add(
                "generator",
                epoch,
                &[kl + recon, kl, recon, side_s.objective, gen_s.objective, critic_u1, gen_u1, critic_u2, gen_u2],
            )?;
            opt_e.step_mlp(&mut model.encoder, &ge);
            opt_g.step_mlp(&mut model.generator, &gg);
        }
        meter.finish(&mut trace, epoch);
    }
    model.freeze();
    Ok(TrainedGenerator { model, critics, trace })
}

/// `n_per_row` samples `G(z, a_i)` per semantic row, grouped by row.
pub fn synthesize(m: &GeneratorModel, a: &Matrix, n_per_row: usize, rng: &mut Rng) -> Result<Matrix> {
    if a.cols() != m.d_a() {
        return Err(dim_err("synthesize", format!("{} semantic columns", m.d_a()), a.cols()));
    }
    let rows: Vec<usize> = (0..a.rows()).flat_map(|i| std::iter::repeat_n(i, n_per_row)).collect();
    let cond = a.select_rows(&rows);
    let z = rng.normal_matrix(cond.rows(), m.latent_dim());
    m.decode(&z, &cond)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn synthesize_shape_and_reproducibility() {
        let g = GeneratorModel::init(5, 3, 2, 8, &mut Rng::new(0));
        let a = Matrix::from_fn(4, 3, |i, j| (i + j) as f64);
        let x1 = synthesize(&g, &a, 7, &mut Rng::new(9)).unwrap();
        let x2 = synthesize(&g, &a, 7, &mut Rng::new(9)).unwrap();
        assert_eq!(x1.shape(), (28, 5));
        assert_eq!(x1, x2);
        assert_eq!(synthesize(&g, &a, 0, &mut Rng::new(9)).unwrap().rows(), 0);
    }

    #[test]
    fn unit_feature_gradient_critic_has_no_penalty() {
        // unit-norm gradient on the feature block: zero penalty
        let g = GeneratorModel::init(2, 1, 2, 4, &mut Rng::new(0));
        let mut c = CriticSet::init(2, 1, 1, &mut Rng::new(1));
        c.d_s = Mlp2Params::from_parts(m(&[&[0.6, 0.8, 0.0]]), m(&[&[0.0]]), m(&[&[1.0]]), m(&[&[0.0]]), 1.0).unwrap();
        let x = m(&[&[0.3, -0.1], &[1.0, 2.0]]);
        let a = m(&[&[1.0], &[0.5]]);
        let t = loss_gan_s(&c, &g, &x, &a, &mut Rng::new(2), 10.0).unwrap();
        assert!(t.penalty.abs() < 1e-12);
        assert!(t.critic_objective.is_finite());
    }

    #[test]
    fn pseudo_prior_counts_nearest_rows() {
        let a_u = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let conds = m(&[&[0.9, 0.1], &[0.8, 0.0], &[0.1, 1.1], &[1.0, 0.2]]);
        let p = pseudo_condition_prior(&conds, &a_u).unwrap();
        assert_eq!(p.probs(), &[0.75, 0.25]);
    }

    #[test]
    fn checkpoint_round_trip_with_critics() {
        let g = GeneratorModel::init(3, 2, 2, 5, &mut Rng::new(0));
        let c = CriticSet::init(3, 2, 5, &mut Rng::new(1));
        let bytes = g.to_container(Some(&c)).to_bytes().unwrap();
        let (g2, c2) = GeneratorModel::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(g2, g);
        assert_eq!(c2.unwrap(), c);
    }
}
