mod common;

use drkn_core::svmio::{
    emit_ovr_model_json, kkt_residual, load_dataset_csv, load_dataset_libsvm, parse_libsvm_model, parse_ovr_model_json,
    rbf_gram, smo_solve, smo_train, split_dataset, LabelColumn, MultiClassSvm, Split,
};
use drkn_core::synth::annulus;
use drkn_core::train::error_rate;
use drkn_core::drkn::RbfModel;

#[test]
fn smo_matches_an_independent_dual_solver() {
    for (seed, c) in [(1, 0.5), (2, 2.0), (3, 10.0)] {
        let (xs, y) = common::binary_problem(24, seed);
        let gram = rbf_gram(&xs, 0.5);
        let sol = smo_solve(&gram, &y, c, 1e-6, 1_000_000).unwrap();
        let (lambda, objective) = common::dual_oracle(&xs, &y, c, 0.5);
        assert!((sol.objective - objective).abs() <= 1e-4, "{} vs {objective}", sol.objective);
        assert!(kkt_residual(&gram, &y, &sol.lambda, sol.bias, c) <= 1e-6);
        let gap = sol.lambda.iter().zip(&lambda).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-2 * c, "lambda gap {gap}");
    }
}

#[test]
fn annulus_is_learnable() {
    let data = split_dataset(&annulus(300, 5), 0.7, 2024).unwrap();
    let svm = smo_train(&data, 10.0, 0.5, 1e-3).unwrap();
    let rbf = RbfModel::assemble(&svm).unwrap();
    assert!(error_rate(&rbf, &data, &data.rows(Split::Train)).unwrap() <= 0.05);
    assert!(error_rate(&rbf, &data, &data.rows(Split::Test)).unwrap() <= 0.05);
}

#[test]
fn golden_model_scores() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data");
    let model = parse_libsvm_model::<f64>(&std::fs::read_to_string(format!("{dir}/golden_rbf.model")).unwrap()).unwrap();
    let expected = std::fs::read_to_string(format!("{dir}/golden_rbf_scores.csv")).unwrap();
    let again = parse_ovr_model_json::<f64>(&emit_ovr_model_json(&model)).unwrap();
    assert_eq!(again, model);
    for line in expected.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let s = model.scores(&v[..3]).unwrap();
        assert!((s[0] - v[3]).abs() <= 1e-12 * (1.0 + v[3].abs()));
        assert_eq!(s[0], -s[1]);
    }
}

#[test]
fn libsvm_parser_rejects_unsupported_models() {
    let base = "svm_type c_svc\nkernel_type rbf\ngamma 0.5\nnr_class 2\ntotal_sv 1\nrho 0.1\nlabel 1 -1\nnr_sv 1 0\nSV\n1 1:0.5\n";
    assert!(parse_libsvm_model::<f64>(base).is_ok());
    let linear = base.replace("kernel_type rbf", "kernel_type linear");
    let err = parse_libsvm_model::<f64>(&linear).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
    let multi = base.replace("nr_class 2", "nr_class 3");
    assert!(parse_libsvm_model::<f64>(&multi).is_err());
}

#[test]
fn model_json_rejects_unknown_fields_and_bad_shapes() {
    let ok = r#"{"gamma":1.0,"classes":[{"label":0,"bias":0.0,"alphas":[1.0],"support_vectors":[[0.0,1.0]]}]}"#;
    assert!(MultiClassSvm::<f64>::from_json(ok).is_ok());
    assert!(MultiClassSvm::<f64>::from_json(&ok.replace("\"gamma\"", "\"extra\":1,\"gamma\"")).is_err());
    assert!(MultiClassSvm::<f64>::from_json(&ok.replace("[1.0]", "[1.0,2.0]")).is_err());
}

#[test]
fn dataset_loaders_agree() {
    let csv = "a,b,y\n0.5,1.0,7\n-1.0,2.0,3\n0.0,0.0,7\n";
    let libsvm = "7 1:0.5 2:1.0\n3 1:-1.0 2:2.0\n7\n";
    let from_csv = load_dataset_csv::<f64>(csv, &"y".parse::<LabelColumn>().unwrap()).unwrap();
    let from_index = load_dataset_csv::<f64>(csv, &"2".parse::<LabelColumn>().unwrap()).unwrap();
    let from_libsvm = load_dataset_libsvm::<f64>(libsvm).unwrap();
    assert_eq!(from_csv, from_index);
    assert_eq!(from_csv.features, from_libsvm.features);
    assert_eq!(from_csv.labels, vec![1, 0, 1]);
    assert_eq!(from_csv.label_names, vec![3, 7]);
    assert_eq!(from_libsvm.labels, from_csv.labels);
}
