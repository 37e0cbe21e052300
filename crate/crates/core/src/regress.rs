//! Stage 2: the visual-to-semantic regressor `R`, trained with MSE on seen
//! pairs plus an adversarial semantic critic over seen and unseen predictions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container::{push_mlp, read_mlp, Container};
use crate::data::TrainView;
use crate::error::{dim_err, Error, Result};
use crate::losses::{critic_side, draw_alphas, generator_side, interpolate, mse_loss};
use crate::numkit::{AdamW, AdamWConfig, Matrix, Mlp2Grads, Mlp2Params, Rng, LEAKY_SLOPE};
use crate::priors::ClassPrior;
use crate::trace::{epoch_batches, EpochMeter, LossTrace};
use crate::ver::{ver_embed, VerModel};

/// What the regressor reads: the VER embedding or raw features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorInput {
    Ver,
    Plain,
}

impl fmt::Display for RegressorInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegressorInput::Ver => "ver",
            RegressorInput::Plain => "plain",
        })
    }
}

impl FromStr for RegressorInput {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ver" => Ok(Self::Ver),
            "plain" => Ok(Self::Plain),
            o => Err(Error::Config(format!("unknown regressor input {o:?} (ver|plain)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorModel {
    net: Mlp2Params,
    input: RegressorInput,
    frozen: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticCritic {
    pub net: Mlp2Params,
}

impl SemanticCritic {
    pub fn init(d_a: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            net: Mlp2Params::init(d_a, hidden, 1, LEAKY_SLOPE, rng),
        }
    }
}

impl RegressorModel {
    pub fn init(input: RegressorInput, in_width: usize, hidden: usize, d_a: usize, rng: &mut Rng) -> Self {
        Self {
            net: Mlp2Params::init(in_width, hidden, d_a, LEAKY_SLOPE, rng),
            input,
            frozen: false,
        }
    }

    pub fn net(&self) -> &Mlp2Params {
        &self.net
    }
    pub fn input(&self) -> RegressorInput {
        self.input
    }
    pub fn hidden_width(&self) -> usize {
        self.net.hidden()
    }
    pub fn d_a(&self) -> usize {
        self.net.d_out()
    }
    pub fn is_frozen(&self) -> bool {
        self.frozen
    }
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Input rows the network consumes for features `x`.
    pub fn features(&self, ver: &VerModel, x: &Matrix) -> Result<Matrix> {
        let f = match self.input {
            RegressorInput::Ver => ver_embed(ver, x)?,
            RegressorInput::Plain => x.clone(),
        };
        if f.cols() != self.net.d_in() {
            return Err(dim_err("regress", format!("{} input columns", self.net.d_in()), f.cols()));
        }
        Ok(f)
    }

    pub fn to_container(&self, critic: Option<&SemanticCritic>) -> Container {
        let mut c = Container::new("regressor")
            .with_meta("input", self.input)
            .with_meta("frozen", u8::from(self.frozen));
        push_mlp(&mut c, "r", &self.net);
        if let Some(cr) = critic {
            push_mlp(&mut c, "dr", &cr.net);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<(Self, Option<SemanticCritic>)> {
        if c.kind != "regressor" {
            return Err(Error::Parse(format!("expected a regressor checkpoint, found {:?}", c.kind)));
        }
        let critic = if c.has_matrix("dr.w1") {
            Some(SemanticCritic {
                net: read_mlp(c, "dr")?,
            })
        } else {
            None
        };
        Ok((
            Self {
                net: read_mlp(c, "r")?,
                input: c.meta("input")?.parse()?,
                frozen: c.meta("frozen")? == "1",
            },
            critic,
        ))
    }
}

/// Pseudo semantic labels `ã = R(input(x))`.
pub fn regress(m: &RegressorModel, ver: &VerModel, x: &Matrix) -> Result<Matrix> {
    m.net.predict(&m.features(ver, x)?)
}

/// Post-activation output of the regressor's first layer.
pub fn regressor_hidden(m: &RegressorModel, ver: &VerModel, x: &Matrix) -> Result<Matrix> {
    m.net.hidden_activations(&m.features(ver, x)?)
}

/// Mean absolute error over every entry.
pub fn semantic_mae(pred: &Matrix, target: &Matrix) -> f64 {
    assert_eq!(pred.shape(), target.shape(), "semantic_mae shape");
    let n = pred.as_slice().len().max(1) as f64;
    pred.as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n
}

/// Both sides of the semantic adversarial objective on one batch.
#[derive(Clone, Debug)]
pub struct SemanticAdversarial {
    /// Seen plus unseen critic objectives, each with its own penalty.
    pub critic_objective: f64,
    /// `−E[D_r(ã_s)] − E[D_r(ã_u)]`
    pub generator_objective: f64,
    /// Gradient of `−critic_objective` in critic parameters.
    pub critic_grads: Mlp2Grads,
    /// Gradients of `generator_objective` with respect to the fake semantics.
    pub d_fake_seen: Matrix,
    pub d_fake_unseen: Matrix,
}

pub fn semantic_critic_losses(
    critic: &SemanticCritic,
    a_real_s: &Matrix,
    a_fake_s: &Matrix,
    a_real_u: &Matrix,
    a_fake_u: &Matrix,
    lambda_gp: f64,
    rng: &mut Rng,
) -> Result<SemanticAdversarial> {
    let d_a = critic.net.d_in();
    for m in [a_real_s, a_fake_s, a_real_u, a_fake_u] {
        if m.cols() != d_a {
            return Err(dim_err("semantic_critic_losses", format!("{d_a} semantic columns"), m.cols()));
        }
    }
    if a_real_s.rows() != a_fake_s.rows() || a_real_u.rows() != a_fake_u.rows() {
        return Err(dim_err(
            "semantic_critic_losses",
            "equal real and fake batch sizes",
            format!("{}/{} and {}/{}", a_real_s.rows(), a_fake_s.rows(), a_real_u.rows(), a_fake_u.rows()),
        ));
    }
    let mut critic_objective = 0.0;
    let mut critic_grads = Mlp2Grads::zeros_like(&critic.net);
    for (real, fake) in [(a_real_s, a_fake_s), (a_real_u, a_fake_u)] {
        if real.rows() == 0 {
            continue;
        }
        let alphas = draw_alphas(real.rows(), rng);
        let hat = interpolate(real, fake, &alphas);
        let side = critic_side(&critic.net, real, fake, &hat, 0..d_a, lambda_gp)?;
        critic_objective += side.objective;
        critic_grads.axpy(1.0, &side.grads);
    }
    let gen_s = generator_side(&critic.net, a_fake_s)?;
    let gen_u = generator_side(&critic.net, a_fake_u)?;
    let seen_term = if a_fake_s.rows() > 0 { gen_s.objective } else { 0.0 };
    let unseen_term = if a_fake_u.rows() > 0 { gen_u.objective } else { 0.0 };
    Ok(SemanticAdversarial {
        critic_objective,
        generator_objective: seen_term + unseen_term,
        critic_grads,
        d_fake_seen: gen_s.input_grad,
        d_fake_unseen: gen_u.input_grad,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub lambda_r: f64,
    pub lambda_gp: f64,
    pub input: RegressorInput,
    /// Train the semantic critic alongside `R`.
    pub use_critic: bool,
    pub adam: AdamWConfig,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            hidden: 64,
            lambda_r: 0.01,
            lambda_gp: 10.0,
            input: RegressorInput::Ver,
            use_critic: true,
            adam: AdamWConfig::default(),
            seed: 0,
        }
    }
}

/// Output of [`train_regressor`].
#[derive(Clone, Debug)]
pub struct TrainedRegressor {
    pub model: RegressorModel,
    pub critic: Option<SemanticCritic>,
    pub trace: LossTrace,
}

/// Regressor side of one batch.
#[derive(Clone, Debug)]
pub struct RegressorObjective {
    pub mse: f64,
    /// `−E[D_r(ã_s)] − E[D_r(ã_u)]`, zero without a critic.
    pub adversarial: f64,
    pub seen_mae: f64,
    /// Gradient of `mse + λ_r·adversarial` in the regressor parameters.
    pub grads: Mlp2Grads,
}

pub fn regressor_objective(
    net: &Mlp2Params,
    critic: Option<&SemanticCritic>,
    feats_s: &Matrix,
    a_s: &Matrix,
    feats_u: &Matrix,
    lambda_r: f64,
) -> Result<RegressorObjective> {
    let (fake_s, cache_s) = net.forward(feats_s)?;
    let (mse, mut d_s) = mse_loss(&fake_s, a_s)?;
    let mut adversarial = 0.0;
    let mut unseen = None;
    if let (Some(c), true) = (critic, lambda_r > 0.0) {
        let gs = generator_side(&c.net, &fake_s)?;
        d_s.axpy(lambda_r, &gs.input_grad);
        adversarial += gs.objective;
        if feats_u.rows() > 0 {
            let (fake_u, cache_u) = net.forward(feats_u)?;
            let gu = generator_side(&c.net, &fake_u)?;
            adversarial += gu.objective;
            unseen = Some((cache_u, gu.input_grad.scaled(lambda_r)));
        }
    }
    let (mut grads, _) = net.backward(&cache_s, &d_s)?;
    if let Some((cache_u, d_u)) = unseen {
        grads.axpy(1.0, &net.backward(&cache_u, &d_u)?.0);
    }
    Ok(RegressorObjective {
        mse,
        adversarial,
        seen_mae: semantic_mae(&fake_s, a_s),
        grads,
    })
}

/// Per batch: one critic ascent step, then one regressor descent step on
/// `L_mse + λ_r·(−E[D_r(ã_s)] − E[D_r(ã_u)])`. Unseen real semantics are
/// drawn from `Au` according to `prior`.
pub fn train_regressor(
    view: &TrainView<'_>,
    ver: &VerModel,
    prior: &ClassPrior,
    cfg: &RegressorConfig,
) -> Result<TrainedRegressor> {
    if cfg.epochs == 0 {
        return Err(Error::Config("n_r must be at least 1".into()));
    }
    if prior.len() != view.n_unseen_classes() {
        return Err(Error::Contract(format!(
            "prior over {} classes for {} unseen classes",
            prior.len(),
            view.n_unseen_classes()
        )));
    }
    let root = Rng::new(cfg.seed);
    let in_width = match cfg.input {
        RegressorInput::Ver => ver.embed_width(),
        RegressorInput::Plain => view.d_x(),
    };
    let mut model = RegressorModel::init(cfg.input, in_width, cfg.hidden, view.d_a(), &mut root.fork(0));
    let mut critic = cfg
        .use_critic
        .then(|| SemanticCritic::init(view.d_a(), cfg.hidden, &mut root.fork(1)));
    let mut batch_rng = root.fork(2);
    let mut unseen_rng = root.fork(3);
    let mut prior_rng = root.fork(4);
    let mut alpha_rng = root.fork(5);

    let feats_s = model.features(ver, view.xs)?;
    let feats_u = if view.xu.rows() > 0 {
        model.features(ver, view.xu)?
    } else {
        Matrix::zeros(0, in_width)
    };
    let mut opt_r = AdamW::for_mlp(cfg.adam, &model.net);
    let mut opt_c = critic.as_ref().map(|c| AdamW::for_mlp(cfg.adam, &c.net));
    let mut trace = LossTrace::new("regressor", &["mse", "critic_objective", "adversarial", "seen_mae"]);

    for epoch in 1..=cfg.epochs {
        let mut meter = EpochMeter::new(4);
        for idx in epoch_batches(view.xs.rows(), cfg.batch_size, &mut batch_rng) {
            let a_s = view.seen_semantics(&idx);
            let n_u = if feats_u.rows() > 0 { idx.len() } else { 0 };
            let idx_u = unseen_rng.indices(feats_u.rows().max(1), n_u);
            let classes_u = prior.sample(n_u, &mut prior_rng);
            let a_real_u = view.a_unseen.select_rows(&classes_u);

            let batch_s = feats_s.select_rows(&idx);
            let batch_u = feats_u.select_rows(&idx_u);

            let mut critic_obj = 0.0;
            if let (Some(c), Some(opt)) = (critic.as_mut(), opt_c.as_mut()) {
                let fake_s = model.net.predict(&batch_s)?;
                let fake_u = model.net.predict(&batch_u)?;
                let adv = semantic_critic_losses(c, &a_s, &fake_s, &a_real_u, &fake_u, cfg.lambda_gp, &mut alpha_rng)?;
                critic_obj = adv.critic_objective;
                opt.step_mlp(&mut c.net, &adv.critic_grads);
            }

            let obj = regressor_objective(&model.net, critic.as_ref(), &batch_s, &a_s, &batch_u, cfg.lambda_r)?;
            meter.add("regressor", epoch, &[obj.mse, critic_obj, obj.adversarial, obj.seen_mae])?;
            let grads = obj.grads;
            opt_r.step_mlp(&mut model.net, &grads);
        }
        meter.finish(&mut trace, epoch);
    }
    model.freeze();
    Ok(TrainedRegressor { model, critic, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn constant_critic_objective_is_minus_two_penalties() {
        let critic = SemanticCritic {
            net: Mlp2Params::from_parts(
                Matrix::zeros(3, 2),
                Matrix::zeros(1, 3),
                Matrix::zeros(1, 3),
                m(&[&[0.7]]),
                LEAKY_SLOPE,
            )
            .unwrap(),
        };
        let a = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let out = semantic_critic_losses(&critic, &a, &a, &a, &a, 10.0, &mut Rng::new(0)).unwrap();
        assert!((out.critic_objective + 20.0).abs() < 1e-9);
    }

    #[test]
    fn unit_gradient_affine_critic_has_no_penalty() {
        let critic = SemanticCritic {
            net: Mlp2Params::from_parts(m(&[&[0.6, 0.8]]), m(&[&[0.0]]), m(&[&[1.0]]), m(&[&[0.0]]), 1.0).unwrap(),
        };
        let a = m(&[&[1.0, 2.0], &[3.0, -1.0]]);
        let out = semantic_critic_losses(&critic, &a, &a, &a, &a, 10.0, &mut Rng::new(0)).unwrap();
        assert!(out.critic_objective.abs() < 1e-12);
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let critic = SemanticCritic::init(2, 4, &mut Rng::new(0));
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(semantic_critic_losses(&critic, &a, &b, &a, &a, 10.0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn mae_definition() {
        assert_eq!(semantic_mae(&m(&[&[1.0, -1.0]]), &m(&[&[0.0, 0.0]])), 1.0);
    }
}
