mod common;

use common::TOLERANCE;

fn check(name: &str, err: f64) {
    assert!(err <= TOLERANCE, "{name}: worst relative error {err:.3e}");
}

#[test]
fn mlp_parameter_gradients() {
    check("mlp parameters", common::mlp_params());
}

#[test]
fn mlp_input_gradients() {
    check("mlp inputs", common::mlp_inputs());
}

#[test]
fn closed_form_critic_input_gradient() {
    check("critic input", common::critic_input());
}

#[test]
fn gradient_penalty_parameter_gradients() {
    check("gradient penalty", common::gradient_penalty());
}

#[test]
fn kl_gradients() {
    check("kl", common::kl());
}

#[test]
fn mse_gradients() {
    check("mse", common::mse());
}

#[test]
fn seen_vae_gradients() {
    check("seen vae", common::vae_seen());
}

#[test]
fn seen_gan_gradients() {
    check("seen gan", common::gan_seen());
}

#[test]
fn unseen_prior_gan_gradients() {
    check("unseen prior gan", common::gan_unseen_prior());
}

#[test]
fn pseudo_conditional_gan_gradients() {
    check("pfa gan", common::gan_unseen_pfa());
}

#[test]
fn semantic_critic_gradients() {
    check("semantic critic", common::semantic_critic());
}

#[test]
fn regressor_adversarial_gradients() {
    check("regressor", common::regressor_adversarial());
}

#[test]
fn f32_backward_tracks_f64() {
    use ivaegan::numkit::{Matrix, Mlp2Params, Rng, LEAKY_SLOPE};
    let mut rng = Rng::new(5);
    for _ in 0..20 {
        let p: Mlp2Params = Mlp2Params::init(4, 6, 3, LEAKY_SLOPE, &mut rng);
        let x: Matrix = rng.normal_matrix(5, 4);
        let dy: Matrix = rng.normal_matrix(5, 3);
        let (_, c64) = p.forward(&x).unwrap();
        let (g64, _) = p.backward(&c64, &dy).unwrap();
        let p32 = Mlp2Params::<f32>::from_parts(
            p.w1().cast(),
            p.b1().cast(),
            p.w2().cast(),
            p.b2().cast(),
            LEAKY_SLOPE as f32,
        )
        .unwrap();
        let (_, c32) = p32.forward(&x.cast()).unwrap();
        let (g32, _) = p32.backward(&c32, &dy.cast()).unwrap();
        let a = common::flat_grads(&g64);
        let b: Vec<f64> = g32.tensors().iter().flat_map(|m| m.as_slice().iter().map(|&v| v as f64)).collect();
        assert!(common::rel_err(&b, &a) < 1e-4);
    }
}

#[test]
fn oracle_rejects_slightly_wrong_gradient() {
    use ivaegan::numkit::Rng;
    let mut rng = Rng::new(8);
    let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
    let f = |v: &[f64]| v.iter().map(|t| t.sin() * t).sum::<f64>();
    let exact: Vec<f64> = x.iter().map(|t| t.cos() * t + t.sin()).collect();
    let fd = common::central_diff(&x, f);
    assert!(common::rel_err(&exact, &fd) < 1e-8);
    let off: Vec<f64> = exact.iter().map(|g| g * 1.001).collect();
    assert!(common::rel_err(&off, &fd) > TOLERANCE);
}
