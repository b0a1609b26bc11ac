use redsc_core::autodiff::Graph;
use redsc_core::baselines::{lsr_baseline_cluster, ridge_closed_form, RidgeProblem};
use redsc_core::checkpoint::Checkpoint;
use redsc_core::data::{load_idx, synth_subspaces, write_idx_images, write_idx_labels, SynthParams};
use redsc_core::diagnostics::{toy_architecture, toy_params};
use redsc_core::model::{
    encode, forward_finetune_graph, loss_graph, Architecture, ModelParams, ParamVars, SkipMode,
};
use redsc_core::rng::{gaussian, seeded, uniform};
use redsc_core::trainer::{finetune, fit_self_expression, pretrain, TrainConfig};
use redsc_core::Array;

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs_pretrain: epochs, epochs_finetune: epochs, seed: 5, ..TrainConfig::default() }
}

#[test]
fn adam_self_expression_matches_ridge_on_small_problem() {
    let mut rng = seeded(1);
    let latents = vec![gaussian(&[12, 2, 2, 2], 0.5, &mut rng), gaussian(&[12, 5, 1, 1], 0.5, &mut rng)];
    let flat: Vec<Array> = latents.iter().map(|z| z.reshape(&[12, z.len() / 12]).unwrap().transpose().unwrap()).collect();
    let exact = ridge_closed_form(&RidgeProblem::new(flat, 1.0)).unwrap();
    let cfg = TrainConfig { epochs_finetune: 8000, zero_diag: false, ..TrainConfig::default() };
    let (theta, history) = fit_self_expression(&latents, &cfg).unwrap();
    let rel = theta.sub(&exact).unwrap().frobenius() / exact.frobenius();
    assert!(rel < 1e-3, "relative error {rel}");
    let totals = history.totals();
    assert!(totals.last().unwrap() < &totals[0]);
}

#[test]
fn pretraining_is_bit_reproducible() {
    let x = uniform(&[6, 1, 8, 8], 0.0, 1.0, &mut seeded(2));
    let arch = toy_architecture();
    let (p1, h1) = pretrain(&x, &arch, &small_cfg(15)).unwrap();
    let (p2, h2) = pretrain(&x, &arch, &small_cfg(15)).unwrap();
    assert_eq!(h1.to_csv(), h2.to_csv());
    assert_eq!(p1, p2);
    let (_, h3) = pretrain(&x, &arch, &TrainConfig { seed: 6, ..small_cfg(15) }).unwrap();
    assert_ne!(h1.to_csv(), h3.to_csv());
}

#[test]
fn finetuning_keeps_zero_diagonal_and_reduces_loss() {
    let x = uniform(&[8, 1, 8, 8], 0.0, 1.0, &mut seeded(3));
    let arch = toy_architecture();
    let (pre, _) = pretrain(&x, &arch, &small_cfg(20)).unwrap();
    let (fine, history) = finetune(&x, &pre, &arch, &small_cfg(40), None).unwrap();
    let theta = fine.theta.unwrap();
    assert!((0..8).all(|i| theta.at2(i, i) == 0.0));
    let t = history.totals();
    assert!(t.last().unwrap() < &t[0], "{t:?}");
    assert!(history.records.iter().all(|r| r.loss.total.is_finite()));
}

#[test]
fn theta_gradient_comes_from_reconstruction_and_self_expression() {
    let arch = toy_architecture();
    let params = toy_params(&arch, 4, 4).unwrap();
    let x = uniform(&[4, 1, 8, 8], 0.0, 1.0, &mut seeded(4));
    let grad_of = |pick: &dyn Fn(&redsc_core::model::LossVars) -> redsc_core::autodiff::Var| {
        let mut g = Graph::new();
        let vars = ParamVars::register(&mut g, &params);
        let xv = g.constant(x.clone());
        let fwd = forward_finetune_graph(&mut g, xv, &vars, &arch, SkipMode::Full).unwrap();
        let loss = loss_graph(&mut g, xv, &fwd, vars.theta, 1.0).unwrap();
        g.backward(pick(&loss)).unwrap();
        let grads: Vec<f64> = vars.vars().iter().map(|&v| g.grad_or_zeros(v).max_abs()).collect();
        grads
    };
    let rec = grad_of(&|l| l.reconstruction);
    let se = grad_of(&|l| l.self_expression.unwrap());
    let theta = rec.len() - 1;
    assert!(rec[theta] > 0.0, "reconstruction does not reach the self-expressive layer");
    assert!(se[theta] > 0.0);
    // every array receives gradient from the reconstruction term
    assert!(rec.iter().all(|&g| g > 0.0), "{rec:?}");
    // decoder weights do not affect the self-expression term
    let tau = arch.depth();
    for j in 0..tau {
        assert_eq!(se[2 * tau + 2 * j], 0.0);
    }
}

#[test]
fn skip_free_network_self_expresses_only_innermost_map() {
    let arch = toy_architecture();
    let params = toy_params(&arch, 3, 6).unwrap();
    let x = uniform(&[3, 1, 8, 8], 0.0, 1.0, &mut seeded(6));
    let mut g = Graph::new();
    let vars = ParamVars::register(&mut g, &params);
    let xv = g.constant(x.clone());
    let fwd = forward_finetune_graph(&mut g, xv, &vars, &arch, SkipMode::None).unwrap();
    assert_eq!(fwd.expressed.iter().map(|&(i, _)| i).collect::<Vec<_>>(), vec![arch.depth() - 1]);
    let full = forward_finetune_graph(&mut g, xv, &vars, &arch, SkipMode::Full).unwrap();
    assert_eq!(full.expressed.len(), arch.depth());
}

#[test]
fn checkpoint_file_round_trip_preserves_latents() {
    let dir = tempfile::tempdir().unwrap();
    let arch = Architecture::default();
    let params = ModelParams::init(&arch, 8).unwrap().with_theta(4);
    let path = dir.path().join("ck.bin");
    Checkpoint { arch: arch.clone(), params: params.clone(), seed: 8 }.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let x = uniform(&[4, 1, 16, 16], 0.0, 1.0, &mut seeded(8));
    assert_eq!(encode(&x, &back.params, &back.arch).unwrap(), encode(&x, &params, &arch).unwrap());
}

#[test]
fn idx_round_trip_and_baseline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let p = SynthParams { n_subspaces: 3, dim: 2, height: 6, width: 6, per_class: 15, noise_sigma: 0.0, seed: 2 };
    let data = synth_subspaces(&p).unwrap();
    let truth = data.dataset.labels.clone().unwrap();
    write_idx_images(&dir.path().join("img"), &data.dataset.images).unwrap();
    write_idx_labels(&dir.path().join("lbl"), &truth).unwrap();
    let back = load_idx(&dir.path().join("img"), &dir.path().join("lbl")).unwrap();
    assert_eq!(back.images, data.dataset.images);
    assert_eq!(back.labels.as_ref(), Some(&truth));

    let r = lsr_baseline_cluster(&data.raw, 0.1, 3, 0, &truth).unwrap();
    assert_eq!(r.err, 0.0);
    assert!((r.nmi - 1.0).abs() < 1e-12);
}
