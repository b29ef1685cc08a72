use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;
use drkn_core::drkn::ASSEMBLY_PROBES;
use drkn_core::foldbuild::{audit_bounds, build_3layer_radial, build_normd, build_radial_net, BoundReport, Sharing};
use drkn_core::kernelapprox::{fit_wendland_to_gaussian, wendland_q31};
use drkn_core::svmio::{smo_train, Split};
use drkn_core::synth::{annulus, blobs};
use drkn_core::train::{evaluate, export_history_csv, parse_history_csv, train, History, LossTarget, Metrics, TrainConfig};
use drkn_core::{Dataset, DrknModel, RbfModel};
use serde::Serialize;
use serde_json::{json, Value};

use crate::io::{align_labels, read, write, AnyModel};
use crate::manifest::RunManifest;
use crate::{
    BuildDrknArgs, BuildRbfArgs, Cli, Command, EvalArgs, ExportCurvesArgs, KernelArg, LossArg, NetworkKind, ProfileId,
    RowsArg, SharingArg, SynthArgs, SynthKind, TrainDrknArgs, TrainSvmArgs, VerifyBoundsArgs,
};

/// What a command read and wrote, for its manifest.
struct Outcome {
    primary: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    /// Values resolved at run time, merged over the parsed arguments.
    resolved: Value,
    seed: Option<u64>,
    /// Set when a checked invariant failed; outputs are still written.
    failure: Option<String>,
}

impl Outcome {
    fn new(primary: &Path) -> Self {
        Outcome {
            primary: primary.to_path_buf(),
            inputs: Vec::new(),
            outputs: vec![primary.to_path_buf()],
            resolved: json!({}),
            seed: None,
            failure: None,
        }
    }
}

pub fn run(command: Command, args: Vec<String>) -> Result<()> {
    let outcome = match &command {
        Command::VerifyBounds(a) => verify_bounds(a)?,
        Command::TrainSvm(a) => train_svm(a)?,
        Command::BuildDrkn(a) => build_drkn(a)?,
        Command::BuildRbf(a) => build_rbf(a)?,
        Command::TrainDrkn(a) => train_drkn(a)?,
        Command::Eval(a) => eval(a)?,
        Command::ExportCurves(a) => export_curves(a)?,
        Command::Synth(a) => synth(a)?,
        Command::Replay(a) => return replay(&a.manifest),
    };
    let mut config = serde_json::to_value(&command)?;
    if let (Some(Value::Object(fields)), Value::Object(extra)) =
        (config.get_mut(command.name()), outcome.resolved.clone())
    {
        fields.extend(extra);
    }
    let manifest = RunManifest {
        subcommand: command.name().to_string(),
        args,
        working_dir: std::env::current_dir()?,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        config,
        seed: outcome.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    manifest.write(&outcome.primary)?;
    match outcome.failure {
        Some(msg) => bail!(msg),
        None => Ok(()),
    }
}

fn replay(path: &Path) -> Result<()> {
    let manifest = RunManifest::load(path)?;
    if manifest.version != env!("CARGO_PKG_VERSION") {
        eprintln!("warning: manifest written by version {}, replaying with {}", manifest.version, env!("CARGO_PKG_VERSION"));
    }
    std::env::set_current_dir(&manifest.working_dir)
        .with_context(|| format!("entering {}", manifest.working_dir.display()))?;
    let cli = Cli::try_parse_from(std::iter::once("drkn".to_string()).chain(manifest.args.iter().cloned()))
        .with_context(|| format!("re-parsing the arguments recorded in {}", path.display()))?;
    if matches!(cli.command, Command::Replay(_)) {
        bail!("{} records a replay", path.display());
    }
    run(cli.command, manifest.args)
}

fn dedup<T: Copy>(values: &[T], key: impl Fn(T) -> u64) -> Vec<T> {
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for &v in values {
        if !seen.contains(&key(v)) {
            seen.push(key(v));
            out.push(v);
        }
    }
    out
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn verify_bounds(a: &VerifyBoundsArgs) -> Result<Outcome> {
    let dims = dedup(&a.dims, |d| d as u64);
    let deltas = dedup(&a.delta, f64::to_bits);
    let networks: Vec<NetworkKind> = dedup(&a.networks, |n| n as u64)
        .into_iter()
        .filter(|&n| !(n == NetworkKind::ThreeLayer && a.profile == ProfileId::Norm))
        .collect();
    let sharing = match a.sharing {
        SharingArg::None => Sharing::None,
        SharingArg::Stage => Sharing::PerStage,
        SharingArg::Full => Sharing::Full,
    };
    let mut out = Outcome::new(&a.out);
    let mut csv = format!(
        "network,profile,{},delta_target,stored_weights,distinct_params,amplification,within_bounds\n",
        BoundReport::csv_header()
    );
    let mut failed = Vec::new();
    for &d in &dims {
        for &delta in &deltas {
            for &kind in &networks {
                let name = match kind {
                    NetworkKind::Deep => "deep",
                    NetworkKind::ThreeLayer => "three-layer",
                };
                let profile = match a.profile {
                    ProfileId::Norm => "norm",
                    ProfileId::Wendland => "wendland",
                };
                let built = match (kind, a.profile) {
                    (NetworkKind::Deep, ProfileId::Norm) => build_normd(d, a.radius, delta, sharing),
                    (NetworkKind::Deep, ProfileId::Wendland) => build_radial_net(&wendland_q31(a.radius)?, d, delta, sharing),
                    (NetworkKind::ThreeLayer, _) => build_3layer_radial(&wendland_q31(a.radius)?, d, delta, sharing),
                }
                .with_context(|| format!("building {name} network for d={d}, delta={delta}"))?;
                let report = audit_bounds(&built, a.samples, a.seed)?;
                let amp = report.amplification.as_ref().map(|(_, e)| csv_quote(e)).unwrap_or_default();
                writeln!(
                    csv,
                    "{name},{profile},{},{},{},{},{amp},{}",
                    report.csv_row(),
                    report.delta_target,
                    report.stored_weights,
                    report.distinct_params,
                    report.within_bounds()
                )?;
                if !report.within_bounds() {
                    failed.push(format!("{name} d={d} delta={delta}"));
                }
                if let Some(dir) = &a.emit_networks {
                    let path = dir.join(format!("{name}_{profile}_d{d}_delta{delta}.json"));
                    write(&path, &built.net.to_json())?;
                    out.outputs.push(path);
                }
                eprintln!(
                    "{name:>11} d={d:<3} delta={delta:<8} layers={:<4} neurons={:<7} weights={:<8} sup_error={:.3e} (target {:.3e})",
                    report.layers_built, report.neurons_built, report.weights_built, report.measured_sup_error, report.delta_target
                );
            }
        }
    }
    write(&a.out, &csv)?;
    out.seed = Some(a.seed);
    out.resolved = json!({ "dims": dims, "delta": deltas, "networks": networks });
    if !failed.is_empty() {
        out.failure = Some(format!("bounds violated for {}", failed.join(", ")));
    }
    Ok(out)
}

fn split_error(decide: impl Fn(&[f64]) -> drkn_core::Result<usize>, data: &Dataset, which: Split) -> Result<Option<f64>> {
    let rows = data.rows(which);
    if rows.is_empty() {
        return Ok(None);
    }
    let mut wrong = 0;
    for &i in &rows {
        if decide(&data.features[i])? != data.labels[i] {
            wrong += 1;
        }
    }
    Ok(Some(wrong as f64 / rows.len() as f64))
}

fn train_svm(a: &TrainSvmArgs) -> Result<Outcome> {
    let data = a.data.load(a.seed)?;
    let gamma = a.gamma.unwrap_or(1.0 / data.dim() as f64);
    let svm = smo_train(&data, a.c, gamma, a.tol)?;
    write(&a.out, &svm.to_json())?;
    let train_err = split_error(|x| svm.decision(x), &data, Split::Train)?;
    let test_err = split_error(|x| svm.decision(x), &data, Split::Test)?;
    eprintln!(
        "svm: {} classes, {} support vectors, train error {:?}, test error {:?}",
        svm.n_classes(),
        svm.total_support_vectors(),
        train_err,
        test_err
    );
    let mut out = Outcome::new(&a.out);
    out.inputs.push(a.data.data.clone());
    out.seed = Some(a.seed);
    out.resolved = json!({ "gamma": gamma });
    Ok(out)
}

fn build_drkn(a: &BuildDrknArgs) -> Result<Outcome> {
    let svm = AnyModel::load(&a.model)?.svm(&a.model)?;
    let model = DrknModel::assemble(&svm, a.delta)?;
    let gap = model.assembly_gap(&svm, &model.probes(ASSEMBLY_PROBES, 0))?;
    write(&a.out, &model.to_json())?;
    let meta = model.metadata();
    eprintln!(
        "drkn: delta {}, Wendland support {:.4}, {} fold layers, {} parameters, worst score error / bound {:.3}",
        meta.delta,
        meta.wendland_r,
        model.fold_net().layers().len(),
        model.param_count(),
        gap
    );
    let mut out = Outcome::new(&a.out);
    out.inputs.push(a.model.clone());
    out.resolved = json!({ "delta": meta.delta, "wendland_R": meta.wendland_r });
    Ok(out)
}

fn build_rbf(a: &BuildRbfArgs) -> Result<Outcome> {
    let svm = AnyModel::load(&a.model)?.svm(&a.model)?;
    let model = RbfModel::assemble(&svm)?;
    write(&a.out, &model.to_json())?;
    let mut out = Outcome::new(&a.out);
    out.inputs.push(a.model.clone());
    Ok(out)
}

fn train_drkn(a: &TrainDrknArgs) -> Result<Outcome> {
    let model = AnyModel::load(&a.model)?;
    let data = align_labels(&a.data.load(a.seed)?, &model.labels())?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        shuffle: true,
        allow_any_batch: a.any_batch,
        loss_on: match a.loss {
            LossArg::Outputs => LossTarget::Outputs,
            LossArg::Scores => LossTarget::Scores,
        },
    };
    let (json, mut history) = match model {
        AnyModel::Drkn(mut m) => {
            let h = train(&mut m, &data, &cfg)?;
            (m.to_json(), h)
        }
        AnyModel::Rbf(mut m) => {
            let h = train(&mut m, &data, &cfg)?;
            (m.to_json(), h)
        }
        AnyModel::Svm(_) => bail!("{} is an SVM; build a DRKN or RBF model first", a.model.display()),
    };
    let mut out = Outcome::new(&a.out);
    out.inputs.extend([a.model.clone(), a.data.data.clone()]);
    if let Some(path) = &a.svm {
        let svm = AnyModel::load(path)?;
        let aligned = align_labels(&data, &svm.labels())?;
        history.svm_test_error = split_error(|x| svm.decision(x), &aligned, Split::Test)?;
        out.inputs.push(path.clone());
    }
    let history_path = a.history.clone().unwrap_or_else(|| a.out.with_extension("history.csv"));
    write(&a.out, &json)?;
    write(&history_path, &export_history_csv(&history))?;
    if let (Some(first), Some(last)) = (history.epochs.first(), history.epochs.last()) {
        eprintln!(
            "epoch 0: train error {:.4}, test error {:?}; epoch {}: train error {:.4}, test error {:?}",
            first.train_error, first.test_error, last.epoch, last.train_error, last.test_error
        );
    }
    out.outputs.push(history_path.clone());
    out.seed = Some(a.seed);
    out.resolved = json!({ "train_config": cfg, "history": history_path });
    Ok(out)
}

#[derive(Serialize)]
struct EvalReport<'a> {
    model: &'a str,
    rows_from: RowsArg,
    labels: Vec<i64>,
    #[serde(flatten)]
    metrics: Metrics,
}

fn eval(a: &EvalArgs) -> Result<Outcome> {
    let model = AnyModel::load(&a.model)?;
    let labels = model.labels();
    let data = align_labels(&a.data.load(a.seed)?, &labels)?;
    if data.dim() != model.dim() {
        bail!("{} has {} features, the model expects {}", a.data.data.display(), data.dim(), model.dim());
    }
    let rows = match a.rows {
        RowsArg::Train => data.rows(Split::Train),
        RowsArg::Test => data.rows(Split::Test),
        RowsArg::All => (0..data.len()).collect(),
    };
    let decide = |x: &[f64]| model.decision(x);
    let reference = a.reference.as_ref().map(|p| AnyModel::load(p)).transpose()?;
    let metrics = match &reference {
        None => evaluate(&decide, None, &data, &rows)?,
        Some(r) => {
            let to_model: Vec<usize> =
                r.labels().iter().map(|l| labels.iter().position(|m| m == l).unwrap_or(usize::MAX)).collect();
            let wendland = match (r, a.reference_kernel) {
                (AnyModel::Svm(svm), KernelArg::Wendland) => Some(wendland_q31(fit_wendland_to_gaussian(svm.gamma)?.support_r)?),
                _ => None,
            };
            let refer = |x: &[f64]| -> drkn_core::Result<usize> {
                let c = match (r, &wendland) {
                    (AnyModel::Svm(svm), Some(p)) => svm.profile_decision(p, x)?,
                    _ => r.decision(x)?,
                };
                Ok(to_model[c])
            };
            evaluate(&decide, Some(&refer), &data, &rows)?
        }
    };
    let report = EvalReport { model: model.kind(), rows_from: a.rows, labels, metrics };
    write(&a.out, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    eprintln!(
        "{}: accuracy {:.4} on {} rows{}",
        report.model,
        report.metrics.accuracy,
        report.metrics.rows,
        report.metrics.agreement.map(|g| format!(", agreement {g:.4}")).unwrap_or_default()
    );
    let mut out = Outcome::new(&a.out);
    out.inputs.extend([a.model.clone(), a.data.data.clone()]);
    out.inputs.extend(a.reference.iter().cloned());
    out.seed = Some(a.seed);
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn export_curves(a: &ExportCurvesArgs) -> Result<Outcome> {
    if !a.names.is_empty() && a.names.len() != a.history.len() {
        bail!("{} names given for {} history files", a.names.len(), a.history.len());
    }
    let histories: Vec<History> = a
        .history
        .iter()
        .map(|p| parse_history_csv(&read(p)?).with_context(|| format!("parsing {}", p.display())))
        .collect::<Result<_>>()?;
    let names: Vec<String> = if a.names.is_empty() {
        a.history.iter().map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()).collect()
    } else {
        a.names.clone()
    };
    let mut csv = String::from("epoch");
    for n in &names {
        write!(csv, ",{n}_train_error,{n}_test_error,{n}_train_loss")?;
    }
    csv.push_str(",svm_test_error\n");
    let svm = histories.iter().find_map(|h| h.svm_test_error);
    let rows = histories.iter().map(|h| h.epochs.len()).max().unwrap_or(0);
    for k in 0..rows {
        let epoch = histories.iter().find_map(|h| h.epochs.get(k)).map_or(k, |r| r.epoch);
        csv.push_str(&epoch.to_string());
        for h in &histories {
            let r = h.epochs.get(k);
            write!(
                csv,
                ",{},{},{}",
                cell(r.map(|r| r.train_error)),
                cell(r.and_then(|r| r.test_error)),
                cell(r.map(|r| r.train_loss))
            )?;
        }
        writeln!(csv, ",{}", cell(svm))?;
    }
    write(&a.out, &csv)?;
    let mut out = Outcome::new(&a.out);
    out.inputs = a.history.clone();
    out.resolved = json!({ "names": names });
    Ok(out)
}

fn synth(a: &SynthArgs) -> Result<Outcome> {
    let data: Dataset = match a.kind {
        SynthKind::Annulus => annulus(a.n, a.seed),
        SynthKind::Blobs => {
            if a.dim == 0 || a.classes == 0 {
                bail!("blobs need dim >= 1 and classes >= 1");
            }
            blobs(a.n, a.dim, a.classes, a.spread, a.seed)
        }
    };
    let mut csv = String::new();
    for k in 1..=data.dim() {
        write!(csv, "x{k},")?;
    }
    csv.push_str("label\n");
    for (row, &l) in data.features.iter().zip(&data.labels) {
        for v in row {
            write!(csv, "{v},")?;
        }
        writeln!(csv, "{}", data.label_names[l])?;
    }
    write(&a.out, &csv)?;
    let mut out = Outcome::new(&a.out);
    out.seed = Some(a.seed);
    Ok(out)
}
