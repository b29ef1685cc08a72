use drkn_core::drkn::{default_delta, DrknModel, RbfModel, Trainable};
use drkn_core::kernelapprox::wendland_q31;
use drkn_core::svmio::{MultiClassSvm, SvmClass};
use drkn_core::train::{model_grad_check, LossTarget};
use drkn_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single_sv(gamma: f64, bias: f64) -> MultiClassSvm<f64> {
    MultiClassSvm::new(
        gamma,
        vec![
            SvmClass { label: 0, bias, alphas: vec![1.0], support_vectors: vec![vec![0.0, 0.0, 0.0]] },
            SvmClass { label: 1, bias: -bias, alphas: vec![-1.0], support_vectors: vec![vec![0.0, 0.0, 0.0]] },
        ],
    )
    .unwrap()
}

fn random_svm(classes: usize, dim: usize, per_class: usize, seed: u64) -> MultiClassSvm<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = (0..classes)
        .map(|c| SvmClass {
            label: c as i64,
            bias: rng.random_range(-0.3..0.3),
            alphas: (0..per_class).map(|_| rng.random_range(-1.0..1.0)).collect(),
            support_vectors: (0..per_class).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        })
        .collect();
    MultiClassSvm::new(0.8, classes).unwrap()
}

#[test]
fn support_vector_at_origin_scores_near_one() {
    let delta = 0.02;
    let model = DrknModel::assemble(&single_sv(1.0, 0.0), Some(delta)).unwrap();
    let l = model.profile().unwrap().lipschitz_l();
    let s = model.scores(&[0.0, 0.0, 0.0]).unwrap();
    assert!((s[0] - 1.0).abs() <= l * delta.sqrt() + delta, "score {}", s[0]);
    assert!((s[0] + s[1]).abs() < 1e-12);
}

#[test]
fn far_points_score_the_bias() {
    let model = DrknModel::assemble(&single_sv(1.0, 0.25), Some(0.02)).unwrap();
    let r = model.metadata().wendland_r;
    let far = [3.0 * r, -2.0 * r, r];
    let s = model.scores(&far).unwrap();
    assert!((s[0] - 0.25).abs() < 1e-9, "{s:?}");
}

#[test]
fn zero_model_is_indifferent() {
    let mut svm = random_svm(3, 2, 4, 1);
    for c in &mut svm.classes {
        c.bias = 0.0;
        c.alphas.iter_mut().for_each(|a| *a = 0.0);
    }
    let drkn = DrknModel::assemble(&svm, Some(0.05)).unwrap();
    let rbf = RbfModel::assemble(&svm).unwrap();
    for x in [[0.1, -0.4], [2.0, 3.0]] {
        assert_eq!(drkn.outputs(&x).unwrap(), vec![0.5; 3]);
        assert_eq!(drkn.decision(&x).unwrap(), 0);
        assert_eq!(rbf.scores(&x).unwrap(), vec![0.0; 3]);
    }
}

#[test]
fn expanded_network_matches_scores() {
    let svm = random_svm(2, 3, 5, 3);
    let model = DrknModel::assemble(&svm, Some(0.05)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for c in 0..2 {
        let net = model.expanded_class_network(c).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let got = net.forward(&x).unwrap()[0];
            let want = model.scores(&x).unwrap()[c];
            assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{got} vs {want}");
        }
    }
}

#[test]
fn parameter_count_formula() {
    let svm = random_svm(3, 4, 6, 5);
    let model = DrknModel::assemble(&svm, Some(0.05)).unwrap();
    let expected = model.fold_net().param_count() + 3 * (6 * (4 + 1) + 1);
    assert_eq!(model.param_count(), expected);
    assert_eq!(model.params().len(), expected);
}

#[test]
fn assembly_respects_the_score_bound() {
    let svm = random_svm(3, 3, 8, 6);
    let model = DrknModel::assemble(&svm, None).unwrap();
    assert_eq!(model.metadata().delta, default_delta(&svm));
    let probes = model.probes(200, 9);
    assert!(model.assembly_gap(&svm, &probes).unwrap() <= 1.0);
}

#[test]
fn json_round_trip_is_exact() {
    let svm = random_svm(3, 2, 3, 7);
    let drkn = DrknModel::assemble(&svm, Some(0.05)).unwrap();
    let back = DrknModel::<f64>::from_json(&drkn.to_json()).unwrap();
    assert_eq!(back, drkn);
    let rbf = RbfModel::assemble(&svm).unwrap();
    assert_eq!(RbfModel::<f64>::from_json(&rbf.to_json()).unwrap(), rbf);
    assert!(DrknModel::<f64>::from_json(&rbf.to_json()).is_err());
    assert!(matches!(DrknModel::<f64>::from_json("{\"model\":\"drkn\"}"), Err(Error::Schema { .. })));
}

#[test]
fn rbf_equals_the_svm_exactly() {
    let svm = random_svm(4, 3, 5, 8);
    let rbf = RbfModel::assemble(&svm).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        assert_eq!(rbf.scores(&x).unwrap(), svm.scores(&x).unwrap());
    }
}

#[test]
fn rbf_width_gradient_is_exact() {
    let rbf = RbfModel::assemble(&random_svm(3, 3, 4, 12)).unwrap();
    let x = [0.2, -0.1, 0.5];
    for target in [LossTarget::Outputs, LossTarget::Scores] {
        assert!(model_grad_check(&rbf, &x, 1, target, 1e-6).unwrap() <= 1e-6);
    }
    // gamma leads the parameter vector
    assert_eq!(rbf.params()[0], rbf.gamma());
}

#[test]
fn shared_fold_parameters_stay_tied_after_updates() {
    let svm = random_svm(2, 4, 3, 13);
    let mut model = DrknModel::assemble(&svm, Some(0.05)).unwrap();
    let mut grad = model.zero_grad();
    let mut upstream = |_: &[f64]| Ok(vec![1.0, -1.0]);
    model.accumulate(&[0.1, 0.2, -0.3, 0.0], &mut upstream, &mut grad).unwrap();
    model.apply(&grad, 0.1);
    let expanded = model.fold_net().expanded();
    let x = [0.3, -0.2, 0.1, 0.4];
    let a = model.fold_net().forward(&x).unwrap()[0];
    let b = expanded.forward(&x).unwrap()[0];
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn wendland_profile_is_recorded() {
    let model = DrknModel::assemble(&single_sv(0.5, 0.0), Some(0.05)).unwrap();
    let r = model.metadata().wendland_r;
    assert_eq!(model.profile().unwrap(), wendland_q31(r).unwrap());
    assert_eq!(model.metadata().gamma, 0.5);
}
