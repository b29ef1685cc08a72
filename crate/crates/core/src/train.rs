//! Mini-batch SGD with softmax cross-entropy, per-epoch error curves, and
//! classification metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drkn::{squash, Trainable};
use crate::error::{json_from_str, Error, Result};
use crate::netcore::relative_gap;
use crate::scalar::Scalar;
use crate::svmio::{argmax, Dataset, Split};

/// `-log softmax(scores)[label]` and its gradient `softmax - onehot`.
pub fn softmax_xent<T: Scalar>(scores: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= scores.len() {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", scores.len())));
    }
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let loss = total.ln() - (scores[label] - max);
    let mut grad: Vec<T> = exps.iter().map(|&e| e / total).collect();
    grad[label] = grad[label] - T::one();
    Ok((loss, grad))
}

/// What the softmax is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTarget {
    /// The squashed outputs `1/2 + 1/2 tanh(s)`.
    #[default]
    Outputs,
    /// The raw scores `s`.
    Scores,
}

/// Loss at `scores` and its gradient with respect to the scores.
pub fn score_loss<T: Scalar>(scores: &[T], label: usize, target: LossTarget) -> Result<(T, Vec<T>)> {
    match target {
        LossTarget::Scores => softmax_xent(scores, label),
        LossTarget::Outputs => {
            let (loss, g) = softmax_xent(&squash(scores), label)?;
            let half = T::lit(0.5);
            let grad = g
                .iter()
                .zip(scores)
                .map(|(&gi, &s)| {
                    let t = s.tanh();
                    gi * half * (T::one() - t * t)
                })
                .collect();
            Ok((loss, grad))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Accept batch sizes outside 10..=100.
    pub allow_any_batch: bool,
    pub loss_on: LossTarget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            shuffle: true,
            allow_any_batch: false,
            loss_on: LossTarget::Outputs,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !self.allow_any_batch && !(10..=100).contains(&self.batch_size) {
            return Err(Error::invalid(format!(
                "batch size {} outside 10..=100 (set allow_any_batch to override)",
                self.batch_size
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = json_from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_error: f64,
    /// `None` when the dataset has no test rows.
    pub test_error: Option<f64>,
    pub train_loss: f64,
}

/// Error curves; epoch 0 is the model before any update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub svm_test_error: Option<f64>,
}

pub const HISTORY_COLUMNS: [&str; 5] = ["epoch", "train_error", "test_error", "train_loss", "svm_test_error"];

fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn export_history_csv(history: &History) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HISTORY_COLUMNS).expect("in-memory write");
    for r in &history.epochs {
        w.write_record([
            r.epoch.to_string(),
            r.train_error.to_string(),
            opt_cell(r.test_error),
            r.train_loss.to_string(),
            opt_cell(history.svm_test_error),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn parse_history_csv(text: &str) -> Result<History> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?;
    if header.iter().ne(HISTORY_COLUMNS) {
        return Err(Error::parse(1, format!("expected columns {}", HISTORY_COLUMNS.join(","))));
    }
    let mut history = History::default();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| Error::parse(line, format!("invalid {} '{}'", HISTORY_COLUMNS[k], &rec[k])))
        };
        let opt = |k: usize| -> Result<Option<f64>> { if rec[k].is_empty() { Ok(None) } else { num(k).map(Some) } };
        let epoch = rec[0].parse().map_err(|_| Error::parse(line, format!("invalid epoch '{}'", &rec[0])))?;
        history.epochs.push(EpochRecord { epoch, train_error: num(1)?, test_error: opt(2)?, train_loss: num(3)? });
        history.svm_test_error = opt(4)?;
    }
    Ok(history)
}

/// 0-1 error of `model` on the given rows.
pub fn error_rate<T: Scalar, M: Trainable<T>>(model: &M, data: &Dataset<T>, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Ok(0.0);
    }
    let mut wrong = 0usize;
    for &i in rows {
        if model.decision(&data.features[i])? != data.labels[i] {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / rows.len() as f64)
}

/// Mean loss and 0-1 error over `rows`, from one scoring pass.
fn loss_and_error<T: Scalar, M: Trainable<T>>(model: &M, data: &Dataset<T>, rows: &[usize], target: LossTarget) -> Result<(f64, f64)> {
    if rows.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut total = 0.0;
    let mut wrong = 0usize;
    for &i in rows {
        let s = model.scores(&data.features[i])?;
        total += score_loss(&s, data.labels[i], target)?.0.as_f64();
        if argmax(&squash(&s)) != data.labels[i] {
            wrong += 1;
        }
    }
    let n = rows.len() as f64;
    Ok((total / n, wrong as f64 / n))
}

fn record<T: Scalar, M: Trainable<T>>(model: &M, data: &Dataset<T>, train: &[usize], test: &[usize], epoch: usize, target: LossTarget) -> Result<EpochRecord> {
    let (train_loss, train_error) = loss_and_error(model, data, train, target)?;
    Ok(EpochRecord {
        epoch,
        train_error,
        test_error: if test.is_empty() { None } else { Some(error_rate(model, data, test)?) },
        train_loss,
    })
}

fn check_data<T: Scalar, M: Trainable<T>>(model: &M, data: &Dataset<T>) -> Result<()> {
    if data.dim() != model.dim() && !data.is_empty() {
        return Err(Error::Dimension { expected: model.dim(), got: data.dim() });
    }
    if let Some(&l) = data.labels.iter().find(|&&l| l >= model.n_classes()) {
        return Err(Error::invalid(format!("label id {l} out of range for a {}-class model", model.n_classes())));
    }
    Ok(())
}

/// Mean loss over `rows` and its gradient, accumulated into `grad`.
fn batch_step<T: Scalar, M: Trainable<T>>(
    model: &M,
    data: &Dataset<T>,
    rows: &[usize],
    target: LossTarget,
    grad: &mut M::Grad,
) -> Result<T> {
    model.clear_grad(grad);
    let scale = T::one() / T::from_usize_lossy(rows.len());
    let mut total = T::zero();
    for &i in rows {
        let label = data.labels[i];
        let mut upstream = |s: &[T]| -> Result<Vec<T>> {
            let (loss, g) = score_loss(s, label, target)?;
            total = total + loss;
            Ok(g.into_iter().map(|v| v * scale).collect())
        };
        model.accumulate(&data.features[i], &mut upstream, grad)?;
    }
    Ok(total * scale)
}

/// Trains on the rows tagged train, recording errors on both splits after
/// every epoch.
pub fn train<T: Scalar, M: Trainable<T>>(model: &mut M, data: &Dataset<T>, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    check_data(model, data)?;
    let mut train_rows = data.rows(Split::Train);
    let test_rows = data.rows(Split::Test);
    let mut history = History::default();
    history.epochs.push(record(model, data, &train_rows, &test_rows, 0, cfg.loss_on)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grad = model.zero_grad();
    let lr = T::lit(cfg.learning_rate);
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            train_rows.shuffle(&mut rng);
        }
        for (batch, rows) in train_rows.chunks(cfg.batch_size).enumerate() {
            let loss = batch_step(model, data, rows, cfg.loss_on, &mut grad)?;
            let g = model.flatten_grad(&grad);
            if !loss.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { epoch, batch });
            }
            model.apply(&grad, lr);
        }
        history.epochs.push(record(model, data, &train_rows, &test_rows, epoch, cfg.loss_on)?);
    }
    Ok(history)
}

/// Largest relative gap between the analytic gradient of the loss at
/// `(x, label)` and central finite differences over every parameter.
pub fn model_grad_check<T: Scalar, M: Trainable<T>>(model: &M, x: &[T], label: usize, target: LossTarget, epsilon: T) -> Result<T> {
    let mut grad = model.zero_grad();
    let mut upstream = |s: &[T]| score_loss(s, label, target).map(|r| r.1);
    model.accumulate(x, &mut upstream, &mut grad)?;
    let analytic = model.flatten_grad(&grad);
    let params = model.params();
    let mut probe = model.clone();
    let mut values = params.clone();
    let mut worst = T::zero();
    for (k, &a) in analytic.iter().enumerate() {
        values[k] = params[k] + epsilon;
        probe.set_params(&values)?;
        let plus = score_loss(&probe.scores(x)?, label, target)?.0;
        values[k] = params[k] - epsilon;
        probe.set_params(&values)?;
        let minus = score_loss(&probe.scores(x)?, label, target)?.0;
        values[k] = params[k];
        worst = worst.max(relative_gap(a, (plus - minus) / (epsilon + epsilon)));
    }
    Ok(worst)
}

/// Classification metrics on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rows: usize,
    pub accuracy: f64,
    /// Error rate among rows of each class id (0 for absent classes).
    pub per_class_error: Vec<f64>,
    /// Fraction of rows where the decision matches the reference model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agreement: Option<f64>,
}

/// Metrics of `decide` on `rows`, optionally against a reference decision.
pub fn evaluate<T: Scalar>(
    decide: &dyn Fn(&[T]) -> Result<usize>,
    reference: Option<&dyn Fn(&[T]) -> Result<usize>>,
    data: &Dataset<T>,
    rows: &[usize],
) -> Result<Metrics> {
    let k = data.n_classes();
    let mut wrong = vec![0usize; k];
    let mut seen = vec![0usize; k];
    let mut agree = 0usize;
    for &i in rows {
        let x = &data.features[i];
        let y = decide(x)?;
        let l = data.labels[i];
        seen[l] += 1;
        if y != l {
            wrong[l] += 1;
        }
        if let Some(r) = reference {
            if r(x)? == y {
                agree += 1;
            }
        }
    }
    let n = rows.len();
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Metrics {
        rows: n,
        accuracy: 1.0 - frac(wrong.iter().sum(), n),
        per_class_error: wrong.iter().zip(&seen).map(|(&w, &s)| frac(w, s)).collect(),
        agreement: reference.map(|_| if n == 0 { 1.0 } else { frac(agree, n) }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scores_give_log_k() {
        let (loss, g) = softmax_xent(&[0.3_f64; 4], 2).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
        assert!(softmax_xent(&[0.0_f64; 2], 2).is_err());
    }

    #[test]
    fn xent_is_stable_for_large_scores() {
        let (loss, g) = softmax_xent(&[1000.0_f64, 0.0], 1).unwrap();
        assert!((loss - 1000.0).abs() < 1e-9);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn score_loss_gradients_match_differences() {
        let s = [0.4_f64, -1.2, 0.9];
        for target in [LossTarget::Outputs, LossTarget::Scores] {
            let (_, g) = score_loss(&s, 1, target).unwrap();
            for k in 0..3 {
                let mut p = s;
                p[k] += 1e-6;
                let mut m = s;
                m[k] -= 1e-6;
                let fd = (score_loss(&p, 1, target).unwrap().0 - score_loss(&m, 1, target).unwrap().0) / 2e-6;
                assert!((fd - g[k]).abs() < 1e-7, "{target:?} {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.batch_size, cfg.epochs, cfg.learning_rate), (32, 100, 0.01));
        assert_eq!(TrainConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(TrainConfig::from_json(r#"{"batch_size": 5}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"batch_size": 5, "allow_any_batch": true}"#).is_ok());
        assert!(TrainConfig::from_json(r#"{"learning_rate": -1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"momentum": 0.9}"#).is_err());
    }

    #[test]
    fn history_csv_round_trip() {
        assert_eq!(export_history_csv(&History::default()), "epoch,train_error,test_error,train_loss,svm_test_error\n");
        let h = History {
            epochs: vec![
                EpochRecord { epoch: 0, train_error: 0.25, test_error: Some(0.1), train_loss: 0.693 },
                EpochRecord { epoch: 1, train_error: 0.2, test_error: Some(1.0 / 3.0), train_loss: 0.6 },
            ],
            svm_test_error: Some(0.05),
        };
        let text = export_history_csv(&h);
        assert_eq!(parse_history_csv(&text).unwrap(), h);
        let no_test = History { epochs: vec![EpochRecord { epoch: 0, train_error: 0.5, test_error: None, train_loss: 1.0 }], svm_test_error: None };
        assert_eq!(parse_history_csv(&export_history_csv(&no_test)).unwrap(), no_test);
        assert!(parse_history_csv("a,b\n1,2\n").is_err());
    }
}
