//! Central finite-difference oracle and random gradient cases shared by the
//! gradient tests and the acceptance target.
#![allow(dead_code)]

use ivaegan::fgen::{loss_gan_s, loss_gan_u1, loss_gan_u2_pfa, loss_vae_s, CriticSet, GeneratorModel, ModelGrads};
use ivaegan::losses::{kl_std_normal, mse_loss, squared_error};
use ivaegan::numkit::{Matrix, Mlp2Grads, Mlp2Params, Rng, LEAKY_SLOPE};
use ivaegan::regress::{regressor_objective, semantic_critic_losses, RegressorInput, RegressorModel, SemanticCritic};
use ivaegan::ver::{ver_embed, VerModel};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
pub const CASES: usize = 100;

/// Central differences `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + STEP;
            let hi = f(&x);
            x[i] = orig - STEP;
            let lo = f(&x);
            x[i] = orig;
            (hi - lo) / (2.0 * STEP)
        })
        .collect()
}

/// Max-norm relative error between two gradient vectors.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    diff / inf(analytic).max(inf(numeric)).max(1e-10)
}

pub fn flat_grads(g: &Mlp2Grads) -> Vec<f64> {
    g.tensors().iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

fn with_flat(net: &Mlp2Params, v: &[f64]) -> Mlp2Params {
    let mut n = net.clone();
    n.set_flat(v);
    n
}

fn dims(rng: &mut Rng) -> (usize, usize, usize, usize) {
    // rows, feature width, semantic width, hidden width
    (2 + rng.below(4), 2 + rng.below(4), 2 + rng.below(3), 3 + rng.below(5))
}

fn net(d_in: usize, hidden: usize, d_out: usize, rng: &mut Rng) -> Mlp2Params {
    Mlp2Params::init(d_in, hidden, d_out, LEAKY_SLOPE, rng)
}

/// Worst relative error over `CASES` seeded cases of `case`.
pub fn worst(tag: u64, mut case: impl FnMut(&mut Rng) -> f64) -> f64 {
    let root = Rng::new(0x6a5d ^ tag);
    (0..CASES as u64).map(|i| case(&mut root.fork(i))).fold(0.0, f64::max)
}

pub fn mlp_params() -> f64 {
    worst(1, |rng| {
        let (n, d_in, d_out, h) = dims(rng);
        let p = net(d_in, h, d_out, rng);
        let x: Matrix = rng.normal_matrix(n, d_in);
        let dy: Matrix = rng.normal_matrix(n, d_out);
        let (_, cache) = p.forward(&x).unwrap();
        let (g, _) = p.backward(&cache, &dy).unwrap();
        let fd = central_diff(&p.flat(), |v| with_flat(&p, v).predict(&x).unwrap().hadamard(&dy).sum());
        rel_err(&flat_grads(&g), &fd)
    })
}

pub fn mlp_inputs() -> f64 {
    worst(2, |rng| {
        let (n, d_in, d_out, h) = dims(rng);
        let p = net(d_in, h, d_out, rng);
        let x: Matrix = rng.normal_matrix(n, d_in);
        let dy: Matrix = rng.normal_matrix(n, d_out);
        let (_, cache) = p.forward(&x).unwrap();
        let (_, dx) = p.backward(&cache, &dy).unwrap();
        let fd = central_diff(x.as_slice(), |v| {
            let xv = Matrix::from_vec(n, d_in, v.to_vec()).unwrap();
            p.predict(&xv).unwrap().hadamard(&dy).sum()
        });
        rel_err(dx.as_slice(), &fd)
    })
}

/// Closed-form `∇ₓ D(x)` of a scalar critic against differences of `D`.
pub fn critic_input() -> f64 {
    worst(3, |rng| {
        let (n, d_in, _, h) = dims(rng);
        let p = net(d_in, h, 1, rng);
        let x: Matrix = rng.normal_matrix(n, d_in);
        let g = p.critic_input_gradient(&x).unwrap();
        let fd = central_diff(x.as_slice(), |v| p.predict(&Matrix::from_vec(n, d_in, v.to_vec()).unwrap()).unwrap().sum());
        rel_err(g.as_slice(), &fd)
    })
}

/// Parameter gradient of the gradient penalty (double backprop).
pub fn gradient_penalty() -> f64 {
    worst(4, |rng| {
        let (n, d_in, _, h) = dims(rng);
        let p = net(d_in, h, 1, rng);
        let x: Matrix = rng.normal_matrix(n, d_in);
        let (_, g) = p.gp_value_and_grads(&x, 10.0).unwrap();
        let fd = central_diff(&p.flat(), |v| with_flat(&p, v).gp_value_and_grads(&x, 10.0).unwrap().0);
        rel_err(&flat_grads(&g), &fd)
    })
}

pub fn kl() -> f64 {
    worst(5, |rng| {
        let (n, d, _, _) = dims(rng);
        let mu: Matrix = rng.normal_matrix(n, d);
        let lv: Matrix = rng.normal_matrix(n, d);
        let t = kl_std_normal(&mu, &lv).unwrap();
        let joint: Vec<f64> = mu.as_slice().iter().chain(lv.as_slice()).copied().collect();
        let fd = central_diff(&joint, |v| {
            let m = Matrix::from_vec(n, d, v[..n * d].to_vec()).unwrap();
            let l = Matrix::from_vec(n, d, v[n * d..].to_vec()).unwrap();
            kl_std_normal(&m, &l).unwrap().value
        });
        let analytic: Vec<f64> = t.d_mu.as_slice().iter().chain(t.d_logvar.as_slice()).copied().collect();
        rel_err(&analytic, &fd)
    })
}

pub fn mse() -> f64 {
    worst(6, |rng| {
        let (n, d, _, _) = dims(rng);
        let pred: Matrix = rng.normal_matrix(n, d);
        let target: Matrix = rng.normal_matrix(n, d);
        let mut e: f64 = 0.0;
        for loss in [mse_loss::<f64>, squared_error::<f64>] {
            let (_, g) = loss(&pred, &target).unwrap();
            let fd = central_diff(pred.as_slice(), |v| loss(&Matrix::from_vec(n, d, v.to_vec()).unwrap(), &target).unwrap().0);
            e = e.max(rel_err(g.as_slice(), &fd));
        }
        e
    })
}

struct GenCase {
    model: GeneratorModel,
    critics: CriticSet,
    x: Matrix,
    a: Matrix,
    seed: u64,
}

fn gen_case(rng: &mut Rng) -> GenCase {
    let (n, d_x, d_a, h) = dims(rng);
    let latent = 1 + rng.below(3);
    GenCase {
        model: GeneratorModel::init(d_x, d_a, latent, h, &mut rng.fork(0)),
        critics: CriticSet::init(d_x, d_a, h, &mut rng.fork(1)),
        x: rng.normal_matrix(n, d_x),
        a: rng.normal_matrix(n, d_a),
        seed: rng.below(1 << 30) as u64,
    }
}

fn model_flat(m: &GeneratorModel) -> Vec<f64> {
    let mut v = m.encoder.flat();
    v.extend(m.generator.flat());
    v
}

fn model_with(m: &GeneratorModel, v: &[f64]) -> GeneratorModel {
    let mut out = m.clone();
    let k = m.encoder.num_params();
    out.encoder.set_flat(&v[..k]);
    out.generator.set_flat(&v[k..]);
    out
}

fn model_grads_flat(g: &ModelGrads) -> Vec<f64> {
    let mut v = flat_grads(&g.encoder);
    v.extend(flat_grads(&g.generator));
    v
}

/// Checks critic and model gradients of one adversarial term. `pick` selects
/// the critic the term trains inside a [`CriticSet`].
fn adversarial_case(
    c: &GenCase,
    pick: fn(&mut CriticSet) -> &mut Mlp2Params,
    term: &dyn Fn(&CriticSet, &GeneratorModel, &mut Rng) -> ivaegan::fgen::GanTerm,
) -> f64 {
    let run = |cs: &CriticSet, m: &GeneratorModel| term(cs, m, &mut Rng::new(c.seed));
    let base = run(&c.critics, &c.model);
    let mut critics = c.critics.clone();
    let theta = pick(&mut critics).flat();
    let fd_critic = central_diff(&theta, |v| {
        let mut cs = c.critics.clone();
        pick(&mut cs).set_flat(v);
        -run(&cs, &c.model).critic_objective
    });
    let fd_model = central_diff(&model_flat(&c.model), |v| run(&c.critics, &model_with(&c.model, v)).generator_objective);
    rel_err(&flat_grads(&base.critic_grads), &fd_critic).max(rel_err(&model_grads_flat(&base.model_grads), &fd_model))
}

pub fn vae_seen() -> f64 {
    worst(7, |rng| {
        let c = gen_case(rng);
        let (_, g) = loss_vae_s(&c.model, &c.x, &c.a, &mut Rng::new(c.seed)).unwrap();
        let fd = central_diff(&model_flat(&c.model), |v| {
            loss_vae_s(&model_with(&c.model, v), &c.x, &c.a, &mut Rng::new(c.seed)).unwrap().0
        });
        rel_err(&model_grads_flat(&g), &fd)
    })
}

pub fn gan_seen() -> f64 {
    worst(8, |rng| {
        let c = gen_case(rng);
        adversarial_case(&c, |cs| &mut cs.d_s, &|cs, m, r| loss_gan_s(cs, m, &c.x, &c.a, r, 10.0).unwrap())
    })
}

pub fn gan_unseen_prior() -> f64 {
    worst(9, |rng| {
        let c = gen_case(rng);
        adversarial_case(&c, |cs| &mut cs.d_u, &|cs, m, r| loss_gan_u1(cs, m, &c.x, &c.a, r, 10.0).unwrap())
    })
}

pub fn gan_unseen_pfa() -> f64 {
    worst(10, |rng| {
        let c = gen_case(rng);
        let mut ver = VerModel::init(c.x.cols(), 2, 4, &mut rng.fork(2));
        ver.freeze();
        let mut reg = RegressorModel::init(RegressorInput::Ver, ver.embed_width(), 4, c.a.cols(), &mut rng.fork(3));
        reg.freeze();
        adversarial_case(&c, |cs| &mut cs.d_u2, &|cs, m, r| {
            loss_gan_u2_pfa(cs, m, &reg, &ver, &c.x, r, 10.0).unwrap()
        })
    })
}

/// Semantic critic gradients and the input gradients it hands the regressor.
pub fn semantic_critic() -> f64 {
    worst(11, |rng| {
        let (n, _, d_a, h) = dims(rng);
        let critic = SemanticCritic::init(d_a, h, &mut rng.fork(0));
        let m = n + rng.below(3);
        let (rs, fs): (Matrix, Matrix) = (rng.normal_matrix(n, d_a), rng.normal_matrix(n, d_a));
        let (ru, fu): (Matrix, Matrix) = (rng.normal_matrix(m, d_a), rng.normal_matrix(m, d_a));
        let seed = rng.below(1 << 30) as u64;
        let eval = |c: &SemanticCritic, fs: &Matrix, fu: &Matrix| {
            semantic_critic_losses(c, &rs, fs, &ru, fu, 10.0, &mut Rng::new(seed)).unwrap()
        };
        let base = eval(&critic, &fs, &fu);
        let fd_c = central_diff(&critic.net.flat(), |v| {
            -eval(&SemanticCritic { net: with_flat(&critic.net, v) }, &fs, &fu).critic_objective
        });
        let joint: Vec<f64> = fs.as_slice().iter().chain(fu.as_slice()).copied().collect();
        let fd_in = central_diff(&joint, |v| {
            let s = Matrix::from_vec(n, d_a, v[..n * d_a].to_vec()).unwrap();
            let u = Matrix::from_vec(m, d_a, v[n * d_a..].to_vec()).unwrap();
            eval(&critic, &s, &u).generator_objective
        });
        let analytic: Vec<f64> = base.d_fake_seen.as_slice().iter().chain(base.d_fake_unseen.as_slice()).copied().collect();
        rel_err(&flat_grads(&base.critic_grads), &fd_c).max(rel_err(&analytic, &fd_in))
    })
}

/// Full regressor objective `L_mse + λ_r·(adversarial)` in the regressor parameters.
pub fn regressor_adversarial() -> f64 {
    worst(12, |rng| {
        let (n, d_x, d_a, h) = dims(rng);
        let mut ver = VerModel::init(d_x, 2, 4, &mut rng.fork(0));
        ver.freeze();
        let reg = RegressorModel::init(RegressorInput::Ver, ver.embed_width(), h, d_a, &mut rng.fork(1));
        let critic = SemanticCritic::init(d_a, h, &mut rng.fork(2));
        let fs = ver_embed(&ver, &rng.normal_matrix(n, d_x)).unwrap();
        let fu = ver_embed(&ver, &rng.normal_matrix(n + 1, d_x)).unwrap();
        let a: Matrix = rng.normal_matrix(n, d_a);
        let lambda = 0.5;
        let obj = |p: &Mlp2Params| regressor_objective(p, Some(&critic), &fs, &a, &fu, lambda).unwrap();
        let base = obj(reg.net());
        let fd = central_diff(&reg.net().flat(), |v| {
            let o = obj(&with_flat(reg.net(), v));
            o.mse + lambda * o.adversarial
        });
        rel_err(&flat_grads(&base.grads), &fd)
    })
}

/// Every named gradient check with its worst relative error.
pub fn all_gradient_checks() -> Vec<(&'static str, f64)> {
    vec![
        ("mlp parameters", mlp_params()),
        ("mlp inputs", mlp_inputs()),
        ("critic input gradient", critic_input()),
        ("gradient penalty parameters", gradient_penalty()),
        ("kl", kl()),
        ("mse", mse()),
        ("seen vae", vae_seen()),
        ("seen conditional gan", gan_seen()),
        ("unseen prior-sampled gan", gan_unseen_prior()),
        ("unseen pseudo-conditional gan", gan_unseen_pfa()),
        ("semantic critic", semantic_critic()),
        ("regressor adversarial", regressor_adversarial()),
    ]
}

/// Macro top-1 recomputed with plain loops: per class, hits over support,
/// averaged over classes that occur in `labels`.
pub fn macro_top1_oracle(preds: &[usize], labels: &[usize], n_classes: usize) -> f64 {
    let mut hits = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    for i in 0..labels.len() {
        support[labels[i]] += 1;
        if preds[i] == labels[i] {
            hits[labels[i]] += 1;
        }
    }
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..n_classes {
        if support[c] > 0 {
            sum += hits[c] as f64 / support[c] as f64;
            present += 1;
        }
    }
    sum / present as f64
}

/// Largest route discrepancy over `count` random marginal-matched toys.
pub fn ape_random_toys(count: usize, seed: u64) -> f64 {
    use ivaegan::diagnostics::{ape_identity_check, DiscreteToy};
    let root = Rng::new(seed);
    (0..count as u64)
        .map(|i| {
            let mut rng = root.fork(i);
            let m = 2 + rng.below(7);
            let k = 2 + rng.below(4);
            let toy = DiscreteToy::random_marginal_matched(m, k, &mut rng).unwrap();
            ape_identity_check(&toy).unwrap()
        })
        .fold(0.0, f64::max)
}
