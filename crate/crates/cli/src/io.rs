use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use drkn_core::svmio::{load_dataset_csv, load_dataset_libsvm, parse_libsvm_model, split_dataset, LabelColumn};
use drkn_core::{Dataset, DrknModel, MultiClassSvm, RbfModel};
use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// `.csv` files are CSV; anything else is sniffed.
    Auto,
    Csv,
    Libsvm,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct DataArgs {
    /// Dataset file: numeric CSV or libsvm sparse format.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV label column: 0-based index, header name, or `last`.
    #[arg(long, default_value = "last")]
    pub label: String,
    #[arg(long, value_enum, default_value_t = DataFormat::Auto)]
    pub format: DataFormat,
    /// Fraction of rows used for training.
    #[arg(long, default_value_t = 0.7)]
    pub split: f64,
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn looks_like_libsvm(text: &str) -> bool {
    text.lines().find(|l| !l.trim().is_empty()).is_some_and(|l| l.contains(':') && !l.contains(','))
}

impl DataArgs {
    /// Loads the file and tags rows train/test with a split seeded by `seed`.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        let text = read(&self.data)?;
        let csv = match self.format {
            DataFormat::Csv => true,
            DataFormat::Libsvm => false,
            DataFormat::Auto => {
                self.data.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) || !looks_like_libsvm(&text)
            }
        };
        let data = if csv {
            let column = if self.label == "last" {
                let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
                LabelColumn::Index(first.split(',').count().saturating_sub(1))
            } else {
                self.label.parse().expect("infallible")
            };
            load_dataset_csv(&text, &column)
        } else {
            load_dataset_libsvm(&text)
        }
        .with_context(|| format!("loading {}", self.data.display()))?;
        if data.is_empty() {
            bail!("{} has no rows", self.data.display());
        }
        Ok(split_dataset(&data, self.split, seed)?)
    }
}

/// Rewrites class ids so that id `c` is the model's class `c`.
pub fn align_labels(data: &Dataset, model_labels: &[i64]) -> Result<Dataset> {
    let mut out = data.clone();
    for (i, l) in out.labels.iter_mut().enumerate() {
        let raw = data.label_names[*l];
        *l = model_labels
            .iter()
            .position(|&m| m == raw)
            .ok_or_else(|| anyhow!("row {i} has label {raw}, which the model does not know (classes {model_labels:?})"))?;
    }
    out.label_names = model_labels.to_vec();
    Ok(out)
}

pub enum AnyModel {
    Svm(MultiClassSvm),
    Drkn(DrknModel),
    Rbf(RbfModel),
}

impl AnyModel {
    /// SVM JSON, DRKN or RBF JSON (by their `model` tag), or a libsvm model file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read(path)?;
        let ctx = || format!("loading model {}", path.display());
        if text.trim_start().starts_with("svm_type") {
            return Ok(AnyModel::Svm(parse_libsvm_model(&text).with_context(ctx)?));
        }
        let value: serde_json::Value = serde_json::from_str(&text).with_context(ctx)?;
        Ok(match value.get("model").and_then(|m| m.as_str()) {
            Some("drkn") => AnyModel::Drkn(DrknModel::from_json(&text).with_context(ctx)?),
            Some("rbf") => AnyModel::Rbf(RbfModel::from_json(&text).with_context(ctx)?),
            Some(other) => bail!("{}: unknown model kind {other:?}", path.display()),
            None => AnyModel::Svm(MultiClassSvm::from_json(&text).with_context(ctx)?),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Svm(_) => "svm",
            AnyModel::Drkn(_) => "drkn",
            AnyModel::Rbf(_) => "rbf",
        }
    }

    pub fn labels(&self) -> Vec<i64> {
        match self {
            AnyModel::Svm(m) => m.classes.iter().map(|c| c.label).collect(),
            AnyModel::Drkn(m) => m.classes().iter().map(|c| c.label).collect(),
            AnyModel::Rbf(m) => m.classes().iter().map(|c| c.label).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnyModel::Svm(m) => m.dim(),
            AnyModel::Drkn(m) => m.dim(),
            AnyModel::Rbf(m) => m.dim(),
        }
    }

    pub fn decision(&self, x: &[f64]) -> drkn_core::Result<usize> {
        match self {
            AnyModel::Svm(m) => m.decision(x),
            AnyModel::Drkn(m) => m.decision(x),
            AnyModel::Rbf(m) => m.decision(x),
        }
    }

    pub fn svm(self, path: &Path) -> Result<MultiClassSvm> {
        match self {
            AnyModel::Svm(m) => Ok(m),
            other => bail!("{} holds a {} model, expected an SVM", path.display(), other.kind()),
        }
    }
}
