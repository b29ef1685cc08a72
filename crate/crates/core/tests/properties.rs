mod common;

use drkn_core::drkn::squash;
use drkn_core::foldbuild::{
    build_3layer_radial, build_lipschitz1d, build_norm2, build_normd, build_radial_net, make_fold_layer, FoldSpec, Sharing,
};
use drkn_core::kernelapprox::{tabulated_profile, wendland_q31};
use drkn_core::netcore::{grad_check, Activation, Layer, Network};
use drkn_core::svmio::{argmax, rbf_gram, smo_solve, split_dataset, Dataset, Split};
use drkn_core::train::softmax_xent;
use proptest::prelude::*;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn scale_into_ball(x: Vec<f64>, r: f64, frac: f64) -> Vec<f64> {
    let n = norm(&x);
    if n == 0.0 {
        return x;
    }
    x.iter().map(|v| v / n * r * frac).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_is_an_isometry_onto_the_kept_half(theta in 0.0..std::f64::consts::TAU, x in -5.0..5.0f64, y in -5.0..5.0f64) {
        let (lx, ly) = (theta.cos(), theta.sin());
        let out = make_fold_layer(FoldSpec::new(lx, ly).unwrap()).unwrap().forward(&[x, y]).unwrap();
        prop_assert!((norm(&out) - norm(&[x, y])).abs() < 1e-12);
        // lands where l . p_perp >= 0
        prop_assert!(lx * -out[1] + ly * out[0] >= -1e-12);
        let want = common::fold_oracle([lx, ly], [x, y]);
        prop_assert!((out[0] - want[0]).abs() < 1e-12 && (out[1] - want[1]).abs() < 1e-12);
    }

    #[test]
    fn norm2_underestimates_within_delta(r in 0.5..10.0f64, frac in 0.01..0.99f64, x in prop::collection::vec(-1.0..1.0f64, 2), t in 0.0..1.0f64) {
        let delta = r * frac;
        let b = build_norm2(r, delta).unwrap();
        let p = scale_into_ball(x, r, t);
        let est = b.net.forward(&p).unwrap()[0];
        let truth = norm(&p);
        prop_assert!(est <= truth + 1e-12);
        prop_assert!(truth - est <= delta);
    }

    #[test]
    fn normd_within_delta(d in 2usize..10, x in prop::collection::vec(-1.0..1.0f64, 10), t in 0.0..1.0f64, delta in 0.01..0.3f64) {
        let b = build_normd(d, 2.0, delta, Sharing::None).unwrap();
        let p = scale_into_ball(x[..d].to_vec(), 2.0, t);
        let est = b.net.forward(&p).unwrap()[0];
        prop_assert!(est >= -1e-12 && est <= norm(&p) + 1e-12);
        prop_assert!(norm(&p) - est <= delta);
    }

    #[test]
    fn sharing_does_not_change_the_function(d in 2usize..9, x in prop::collection::vec(-1.0..1.0f64, 8)) {
        let w = wendland_q31(1.5).unwrap();
        let p = &x[..d];
        let plain = build_radial_net(&w, d, 0.05, Sharing::None).unwrap();
        let full = build_radial_net(&w, d, 0.05, Sharing::Full).unwrap();
        let a = plain.net.forward(p).unwrap()[0];
        let b = full.net.forward(p).unwrap()[0];
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(full.net.param_count() <= plain.net.param_count());
        let t1 = build_3layer_radial(&w, d.min(4), 0.2, Sharing::None).unwrap();
        let t2 = build_3layer_radial(&w, d.min(4), 0.2, Sharing::PerStage).unwrap();
        let q = &x[..d.min(4)];
        prop_assert!((t1.net.forward(q).unwrap()[0] - t2.net.forward(q).unwrap()[0]).abs() < 1e-10);
    }

    #[test]
    fn lipschitz_approximator_budget(values in prop::collection::vec(-3.0..3.0f64, 2..8), r in 0.2..4.0f64, delta in 0.001..0.5f64, probe in -1.0..5.0f64) {
        let n = values.len();
        let knots: Vec<f64> = (0..n).map(|i| r * i as f64 / (n - 1) as f64).collect();
        let profile = tabulated_profile(knots, values).unwrap();
        let b = build_lipschitz1d(&profile, delta).unwrap();
        let l = profile.lipschitz_l();
        let y = b.net.forward(&[probe]).unwrap()[0];
        prop_assert!((y - profile.value(probe)).abs() <= delta + 1e-9);
        prop_assert!(b.net.relu_units() as f64 <= 3.0 * r * l / delta || b.net.relu_units() == 0);
    }

    #[test]
    fn random_networks_have_exact_gradients(seed in 0u64..1000, widths in prop::collection::vec(1usize..5, 2..5)) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let acts = [Activation::Relu, Activation::Linear, Activation::Tanh];
        let layers: Vec<Layer<f64>> = widths
            .windows(2)
            .map(|w| {
                let weights = (0..w[1]).map(|_| (0..w[0]).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                let biases = (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect();
                Layer::new(acts[rng.random_range(0..3)], weights, biases).unwrap()
            })
            .collect();
        let net = Network::chain(layers).unwrap();
        let x: Vec<f64> = (0..widths[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        prop_assert!(grad_check(&net, &x, 1e-6).unwrap() <= 1e-6);
        let back = Network::<f64>::from_json(&net.to_json()).unwrap();
        prop_assert_eq!(back, net);
    }

    #[test]
    fn argmax_ignores_common_shifts_and_squashing(scores in prop::collection::vec(-5.0..5.0f64, 1..6), shift in -10.0..10.0f64) {
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        prop_assert_eq!(argmax(&scores), argmax(&shifted));
        prop_assert_eq!(argmax(&scores), argmax(&squash(&scores)));
    }

    #[test]
    fn softmax_gradient_sums_to_zero(scores in prop::collection::vec(-50.0..50.0f64, 2..6), pick in 0usize..6) {
        let label = pick % scores.len();
        let (loss, g) = softmax_xent(&scores, label).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn smo_solution_is_feasible(seed in 0u64..200, c in 0.1..10.0f64) {
        let (xs, y) = common::binary_problem(16, seed);
        let tol = 1e-4;
        let sol = smo_solve(&rbf_gram(&xs, 0.7), &y, c, tol, 1_000_000).unwrap();
        prop_assert!(sol.lambda.iter().all(|&l| (0.0..=c).contains(&l)));
        let balance: f64 = sol.lambda.iter().zip(&y).map(|(l, y)| l * y).sum();
        prop_assert!(balance.abs() <= tol);
    }

    #[test]
    fn split_counts_and_determinism(n in 2usize..200, ratio in 0.05..0.95f64, seed in 0u64..50) {
        let data = Dataset::from_raw((0..n).map(|i| vec![i as f64]).collect(), (0..n).map(|i| (i % 3) as i64).collect()).unwrap();
        let a = split_dataset(&data, ratio, seed).unwrap();
        prop_assert_eq!(a.rows(Split::Train).len(), (ratio * n as f64).round() as usize);
        prop_assert_eq!(&a, &split_dataset(&data, ratio, seed).unwrap());
    }
}
