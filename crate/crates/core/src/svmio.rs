//! One-vs-rest RBF support vector machines: model files, datasets, and an
//! SMO trainer.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{json_from_str, Error, Result};
use crate::kernelapprox::RadialProfile;
use crate::scalar::Scalar;

/// Binary `score = sum alpha_i K(V_i, x) + bias` for one class against the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct SvmClass<T> {
    pub label: i64,
    pub bias: T,
    pub alphas: Vec<T>,
    pub support_vectors: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct MultiClassSvm<T> {
    pub gamma: T,
    pub classes: Vec<SvmClass<T>>,
}

pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&u, &v)| (u - v) * (u - v)).sum()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> MultiClassSvm<T> {
    pub fn new(gamma: T, classes: Vec<SvmClass<T>>) -> Result<Self> {
        let model = MultiClassSvm { gamma, classes };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > T::zero()) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.classes.is_empty() {
            return Err(Error::invalid("model has no classes"));
        }
        let d = self.dim_unchecked();
        for (c, class) in self.classes.iter().enumerate() {
            if class.support_vectors.is_empty() {
                return Err(Error::invalid(format!("class {c} has no support vectors")));
            }
            if class.alphas.len() != class.support_vectors.len() {
                return Err(Error::invalid(format!(
                    "class {c}: {} alphas for {} support vectors",
                    class.alphas.len(),
                    class.support_vectors.len()
                )));
            }
            if let Some((i, v)) = class.support_vectors.iter().enumerate().find(|(_, v)| v.len() != d) {
                return Err(Error::invalid(format!("class {c}, support vector {i}: dimension {} != {d}", v.len())));
            }
            let finite = class.bias.is_finite()
                && class.alphas.iter().all(|a| a.is_finite())
                && class.support_vectors.iter().flatten().all(|v| v.is_finite());
            if !finite {
                return Err(Error::invalid(format!("class {c} has non-finite parameters")));
            }
        }
        Ok(())
    }

    fn dim_unchecked(&self) -> usize {
        self.classes.first().and_then(|c| c.support_vectors.first()).map_or(0, Vec::len)
    }

    pub fn dim(&self) -> usize {
        self.dim_unchecked()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total_support_vectors(&self) -> usize {
        self.classes.iter().map(|c| c.support_vectors.len()).sum()
    }

    /// Largest per-class `sum |alpha|`.
    pub fn max_alpha_mass(&self) -> T {
        self.classes
            .iter()
            .map(|c| c.alphas.iter().map(|a| a.abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }

    /// Per-class scores with the Gaussian kernel `exp(-gamma ||V - x||^2)`.
    pub fn scores(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        Ok(self
            .classes
            .iter()
            .map(|c| {
                c.alphas
                    .iter()
                    .zip(&c.support_vectors)
                    .map(|(&a, v)| a * (-self.gamma * sq_dist(v, x)).exp())
                    .sum::<T>()
                    + c.bias
            })
            .collect())
    }

    /// Per-class scores with the kernel `profile(||V - x||)`.
    pub fn profile_scores(&self, profile: &RadialProfile<T>, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        Ok(self
            .classes
            .iter()
            .map(|c| {
                c.alphas
                    .iter()
                    .zip(&c.support_vectors)
                    .map(|(&a, v)| a * profile.value(sq_dist(v, x).sqrt()))
                    .sum::<T>()
                    + c.bias
            })
            .collect())
    }

    pub fn decision(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.scores(x)?))
    }

    pub fn profile_decision(&self, profile: &RadialProfile<T>, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.profile_scores(profile, x)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: MultiClassSvm<T> = json_from_str(text)?;
        model.validate()?;
        Ok(model)
    }
}

pub fn parse_ovr_model_json<T: Scalar>(text: &str) -> Result<MultiClassSvm<T>> {
    MultiClassSvm::from_json(text)
}

pub fn emit_ovr_model_json<T: Scalar>(model: &MultiClassSvm<T>) -> String {
    model.to_json()
}

fn parse_num<T: Scalar>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(T::lit)
        .ok_or_else(|| Error::parse(line, format!("invalid {what} '{tok}'")))
}

fn parse_sparse<T: Scalar>(tokens: &[&str], line: usize) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| Error::parse(line, format!("expected index:value, got '{tok}'")))?;
        let idx: usize = idx
            .parse()
            .ok()
            .filter(|&i| i >= 1)
            .ok_or_else(|| Error::parse(line, format!("invalid feature index '{idx}' (indices are 1-based)")))?;
        out.push((idx, parse_num(val, line, "feature value")?));
    }
    Ok(out)
}

fn densify<T: Scalar>(sparse: &[(usize, T)], dim: usize) -> Vec<T> {
    let mut v = vec![T::zero(); dim];
    for &(i, x) in sparse {
        v[i - 1] = x;
    }
    v
}

/// Parses a binary libsvm RBF model. Class 0 is the first listed label with
/// `alpha = coef, bias = -rho`; class 1 mirrors it.
pub fn parse_libsvm_model<T: Scalar>(text: &str) -> Result<MultiClassSvm<T>> {
    let mut header: BTreeMap<&str, (usize, Vec<&str>)> = BTreeMap::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut saw_sv = false;
    for (no, line) in lines.by_ref() {
        if line.is_empty() {
            continue;
        }
        if line == "SV" {
            saw_sv = true;
            break;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        header.insert(key, (no, parts.collect()));
    }
    if !saw_sv {
        return Err(Error::parse(text.lines().count(), "missing 'SV' line"));
    }
    let get = |key: &str| header.get(key).ok_or_else(|| Error::parse(0, format!("missing header key '{key}'")));
    let single = |key: &str| -> Result<(usize, &str)> {
        let (no, vals) = get(key)?;
        match vals.as_slice() {
            [v] => Ok((*no, *v)),
            _ => Err(Error::parse(*no, format!("'{key}' expects one value"))),
        }
    };

    let (no, svm_type) = single("svm_type")?;
    if !matches!(svm_type, "c_svc" | "nu_svc") {
        return Err(Error::parse(no, format!("unsupported svm_type '{svm_type}' (expected c_svc or nu_svc)")));
    }
    let (no, kernel) = single("kernel_type")?;
    if kernel != "rbf" {
        return Err(Error::parse(no, format!("unsupported kernel_type '{kernel}' (only rbf models can be converted)")));
    }
    let (no, gamma) = single("gamma")?;
    let gamma: T = parse_num(gamma, no, "gamma")?;
    let (no, nr_class) = single("nr_class")?;
    let nr_class: usize = nr_class.parse().map_err(|_| Error::parse(no, format!("invalid nr_class '{nr_class}'")))?;
    if nr_class != 2 {
        return Err(Error::parse(
            no,
            format!(
                "model has {nr_class} classes; libsvm stores multi-class models one-vs-one. \
                 Train one binary model per class against the rest and combine them in the one-vs-rest JSON format"
            ),
        ));
    }
    let (no, total) = single("total_sv")?;
    let total_sv: usize = total.parse().map_err(|_| Error::parse(no, format!("invalid total_sv '{total}'")))?;
    let (no, rho) = single("rho")?;
    let rho: T = parse_num(rho, no, "rho")?;
    let labels: Vec<i64> = match header.get("label") {
        Some((no, vals)) => {
            let labels = vals
                .iter()
                .map(|v| v.parse::<i64>().map_err(|_| Error::parse(*no, format!("invalid label '{v}'"))))
                .collect::<Result<Vec<_>>>()?;
            if labels.len() != 2 {
                return Err(Error::parse(*no, "expected two labels"));
            }
            labels
        }
        None => vec![0, 1],
    };
    if let Some((no, vals)) = header.get("nr_sv") {
        let counts = vals
            .iter()
            .map(|v| v.parse::<usize>().map_err(|_| Error::parse(*no, format!("invalid nr_sv '{v}'"))))
            .collect::<Result<Vec<_>>>()?;
        if counts.iter().sum::<usize>() != total_sv {
            return Err(Error::parse(*no, "nr_sv does not add up to total_sv"));
        }
    }

    let mut coefs = Vec::new();
    let mut sparse = Vec::new();
    let mut dim = 0;
    for (no, line) in lines {
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        coefs.push(parse_num::<T>(tokens[0], no, "coefficient")?);
        let entries = parse_sparse::<T>(&tokens[1..], no)?;
        dim = entries.iter().map(|e| e.0).fold(dim, usize::max);
        sparse.push(entries);
    }
    if coefs.len() != total_sv {
        return Err(Error::parse(text.lines().count(), format!("expected {total_sv} support vectors, found {}", coefs.len())));
    }
    let svs: Vec<Vec<T>> = sparse.iter().map(|s| densify(s, dim)).collect();
    let positive = SvmClass { label: labels[0], bias: -rho, alphas: coefs.clone(), support_vectors: svs.clone() };
    let negative = SvmClass { label: labels[1], bias: rho, alphas: coefs.iter().map(|&a| -a).collect(), support_vectors: svs };
    MultiClassSvm::new(gamma, vec![positive, negative])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Labelled rows. `labels` are class ids indexing `label_names`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub features: Vec<Vec<T>>,
    pub labels: Vec<usize>,
    pub label_names: Vec<i64>,
    pub split: Vec<Split>,
}

impl<T: Scalar> Dataset<T> {
    /// Rows tagged as train. Ids are assigned by sorting the raw labels.
    pub fn from_raw(features: Vec<Vec<T>>, raw_labels: Vec<i64>) -> Result<Self> {
        if features.len() != raw_labels.len() {
            return Err(Error::invalid("feature and label counts differ"));
        }
        if let Some(d) = features.first().map(Vec::len) {
            if let Some(i) = features.iter().position(|r| r.len() != d) {
                return Err(Error::parse(i, format!("row {i} has {} features, expected {d}", features[i].len())));
            }
        }
        let mut names = raw_labels.clone();
        names.sort_unstable();
        names.dedup();
        let labels = raw_labels.iter().map(|l| names.binary_search(l).expect("label present")).collect();
        let n = features.len();
        Ok(Dataset { features, labels, label_names: names, split: vec![Split::Train; n] })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn rows(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    /// Rows of one split as a new dataset (all tagged train).
    pub fn subset(&self, which: Split) -> Dataset<T> {
        let rows = self.rows(which);
        Dataset {
            features: rows.iter().map(|&i| self.features[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            label_names: self.label_names.clone(),
            split: vec![Split::Train; rows.len()],
        }
    }

    /// Fraction of rows per class id, over the given split or all rows.
    pub fn class_proportions(&self, which: Option<Split>) -> Vec<f64> {
        let rows: Vec<usize> = match which {
            Some(s) => self.rows(s),
            None => (0..self.len()).collect(),
        };
        let mut counts = vec![0usize; self.n_classes()];
        for &i in &rows {
            counts[self.labels[i]] += 1;
        }
        counts.iter().map(|&c| if rows.is_empty() { 0.0 } else { c as f64 / rows.len() as f64 }).collect()
    }
}

/// Which column of a CSV file holds the label.
#[derive(Clone, Debug, PartialEq)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(s.parse::<usize>().map_or_else(|_| LabelColumn::Name(s.to_string()), LabelColumn::Index))
    }
}

fn parse_label(tok: &str, line: usize) -> Result<i64> {
    let v: f64 = tok.trim().parse().map_err(|_| Error::parse(line, format!("invalid label '{tok}'")))?;
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::parse(line, format!("label '{tok}' is not an integer")));
    }
    Ok(v as i64)
}

/// Numeric CSV. A header row is assumed when the label column is given by
/// name, or when the first row does not parse as numbers.
pub fn load_dataset_csv<T: Scalar>(text: &str, label_column: &LabelColumn) -> Result<Dataset<T>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).flexible(true).from_reader(text.as_bytes());
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(i + 1, e.to_string()))?;
        records.push(rec);
    }
    let first_numeric = records.first().is_some_and(|r| r.iter().all(|c| c.parse::<f64>().is_ok()));
    let has_header = matches!(label_column, LabelColumn::Name(_)) || !first_numeric;
    let label_idx = match label_column {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => records
            .first()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::parse(1, format!("no column named '{name}'")))?,
    };
    let start = usize::from(has_header);
    let width = records.get(start).map_or(0, |r| r.len());
    if label_idx >= width.max(1) && records.len() > start {
        return Err(Error::parse(start + 1, format!("label column {label_idx} out of range for {width} columns")));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in records.iter().enumerate().skip(start) {
        let line = i + 1;
        if rec.len() != width {
            return Err(Error::parse(line, format!("row has {} cells, expected {width}", rec.len())));
        }
        let mut row = Vec::with_capacity(width - 1);
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                labels.push(parse_label(cell, line)?);
            } else {
                row.push(parse_num(cell, line, &format!("value in column {j}"))?);
            }
        }
        features.push(row);
    }
    Dataset::from_raw(features, labels)
}

/// Lines `label idx:val ...` with 1-based indices; the dimension is the
/// largest index present.
pub fn load_dataset_libsvm<T: Scalar>(text: &str) -> Result<Dataset<T>> {
    let mut sparse = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        labels.push(parse_label(tokens[0], i + 1)?);
        let entries = parse_sparse::<T>(&tokens[1..], i + 1)?;
        dim = entries.iter().map(|e| e.0).fold(dim, usize::max);
        sparse.push(entries);
    }
    Dataset::from_raw(sparse.iter().map(|s| densify(s, dim)).collect(), labels)
}

/// Seeded shuffle, then the first `round(ratio n)` rows are train.
pub fn split_dataset<T: Scalar>(data: &Dataset<T>, ratio: f64, seed: u64) -> Result<Dataset<T>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * data.len() as f64).round() as usize;
    let mut out = data.clone();
    for (k, &i) in order.iter().enumerate() {
        out.split[i] = if k < n_train { Split::Train } else { Split::Test };
    }
    Ok(out)
}

/// Dual solution of one binary soft-margin problem.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarySolution<T> {
    pub lambda: Vec<T>,
    pub bias: T,
    /// `sum lambda - 1/2 sum_ij lambda_i lambda_j y_i y_j K_ij`
    pub objective: T,
    pub iterations: usize,
}

/// Kernel matrix `exp(-gamma ||x_i - x_j||^2)`, row-major.
pub fn rbf_gram<T: Scalar>(xs: &[Vec<T>], gamma: T) -> Vec<T> {
    let n = xs.len();
    let mut k = vec![T::zero(); n * n];
    for i in 0..n {
        k[i * n + i] = T::one();
        for j in 0..i {
            let v = (-gamma * sq_dist(&xs[i], &xs[j])).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

pub fn dual_objective<T: Scalar>(gram: &[T], y: &[T], lambda: &[T]) -> T {
    let n = y.len();
    let mut quad = T::zero();
    for i in 0..n {
        if lambda[i] == T::zero() {
            continue;
        }
        let row: T = (0..n).map(|j| lambda[j] * y[j] * gram[i * n + j]).sum();
        quad = quad + lambda[i] * y[i] * row;
    }
    lambda.iter().copied().sum::<T>() - quad / T::lit(2.0)
}

/// Largest KKT violation of `(lambda, bias)` for the decision
/// `f(x_i) = sum_j lambda_j y_j K_ij + bias`.
pub fn kkt_residual<T: Scalar>(gram: &[T], y: &[T], lambda: &[T], bias: T, c: T) -> T {
    let n = y.len();
    let mut worst = T::zero();
    for i in 0..n {
        let f: T = (0..n).map(|j| lambda[j] * y[j] * gram[i * n + j]).sum::<T>() + bias;
        let m = y[i] * f - T::one();
        let v = if lambda[i] <= T::zero() {
            (-m).max(T::zero())
        } else if lambda[i] >= c {
            m.max(T::zero())
        } else {
            m.abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// SMO with maximal-violating-pair first choice and second-order second
/// choice. Stops when the violation gap `m - M` is at most `tol`.
pub fn smo_solve<T: Scalar>(gram: &[T], y: &[T], c: T, tol: T, max_iter: usize) -> Result<BinarySolution<T>> {
    let n = y.len();
    if gram.len() != n * n {
        return Err(Error::invalid("kernel matrix does not match the labels"));
    }
    if !(c > T::zero()) || !(tol > T::zero()) {
        return Err(Error::invalid(format!("need C > 0 and tol > 0, got C={c}, tol={tol}")));
    }
    let tau = T::lit(1e-12);
    let q = |i: usize, j: usize| y[i] * y[j] * gram[i * n + j];
    let mut lambda = vec![T::zero(); n];
    // gradient of 1/2 l'Ql - e'l
    let mut grad = vec![-T::one(); n];
    let in_up = |l: T, yi: T| (yi > T::zero() && l < c) || (yi < T::zero() && l > T::zero());
    let in_low = |l: T, yi: T| (yi > T::zero() && l > T::zero()) || (yi < T::zero() && l < c);

    let mut iterations = 0;
    loop {
        let mut i = usize::MAX;
        let mut gmax = T::neg_infinity();
        for t in 0..n {
            if in_up(lambda[t], y[t]) && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        let mut gmin = T::infinity();
        let mut j = usize::MAX;
        let mut best = T::infinity();
        for t in 0..n {
            if !in_low(lambda[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let a = (gram[i * n + i] + gram[t * n + t] - T::lit(2.0) * gram[i * n + t]).max(tau);
                let obj = -(b * b) / a;
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin <= tol {
            break;
        }
        iterations += 1;
        if iterations > max_iter {
            return Err(Error::Invariant(format!("SMO did not converge in {max_iter} iterations (gap {})", gmax - gmin)));
        }

        let (old_i, old_j) = (lambda[i], lambda[j]);
        if y[i] != y[j] {
            let a = (q(i, i) + q(j, j) + T::lit(2.0) * q(i, j)).max(tau);
            let delta = (-grad[i] - grad[j]) / a;
            let diff = lambda[i] - lambda[j];
            lambda[i] = lambda[i] + delta;
            lambda[j] = lambda[j] + delta;
            if diff > T::zero() {
                if lambda[j] < T::zero() {
                    lambda[j] = T::zero();
                    lambda[i] = diff;
                }
            } else if lambda[i] < T::zero() {
                lambda[i] = T::zero();
                lambda[j] = -diff;
            }
            if diff > T::zero() {
                if lambda[i] > c {
                    lambda[i] = c;
                    lambda[j] = c - diff;
                }
            } else if lambda[j] > c {
                lambda[j] = c;
                lambda[i] = c + diff;
            }
        } else {
            let a = (q(i, i) + q(j, j) - T::lit(2.0) * q(i, j)).max(tau);
            let delta = (grad[i] - grad[j]) / a;
            let sum = lambda[i] + lambda[j];
            lambda[i] = lambda[i] - delta;
            lambda[j] = lambda[j] + delta;
            if sum > c {
                if lambda[i] > c {
                    lambda[i] = c;
                    lambda[j] = sum - c;
                }
            } else if lambda[j] < T::zero() {
                lambda[j] = T::zero();
                lambda[i] = sum;
            }
            if sum > c {
                if lambda[j] > c {
                    lambda[j] = c;
                    lambda[i] = sum - c;
                }
            } else if lambda[i] < T::zero() {
                lambda[i] = T::zero();
                lambda[j] = sum;
            }
        }
        let (di, dj) = (lambda[i] - old_i, lambda[j] - old_j);
        for t in 0..n {
            grad[t] = grad[t] + q(t, i) * di + q(t, j) * dj;
        }
    }

    // bias = -rho, rho averaged over free variables (midpoint of the
    // feasible interval when none are free)
    let mut sum = T::zero();
    let mut free = 0usize;
    let (mut ub, mut lb) = (T::infinity(), T::neg_infinity());
    for t in 0..n {
        let yg = y[t] * grad[t];
        if lambda[t] > T::zero() && lambda[t] < c {
            sum = sum + yg;
            free += 1;
        } else if (lambda[t] >= c && y[t] < T::zero()) || (lambda[t] <= T::zero() && y[t] > T::zero()) {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    let rho = if free > 0 { sum / T::from_usize_lossy(free) } else { (ub + lb) / T::lit(2.0) };
    let objective = dual_objective(gram, y, &lambda);
    Ok(BinarySolution { lambda, bias: -rho, objective, iterations })
}

/// One-vs-rest training: class `c` against all other rows, using the rows
/// tagged train.
pub fn smo_train<T: Scalar>(data: &Dataset<T>, c: T, gamma: T, tol: T) -> Result<MultiClassSvm<T>> {
    let train = data.subset(Split::Train);
    if train.is_empty() {
        return Err(Error::invalid("no training rows"));
    }
    if !(gamma > T::zero()) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    let gram = rbf_gram(&train.features, gamma);
    let max_iter = (100 * train.len()).max(10_000_000);
    let mut classes = Vec::new();
    for (cid, &label) in train.label_names.iter().enumerate() {
        let y: Vec<T> = train.labels.iter().map(|&l| if l == cid { T::one() } else { -T::one() }).collect();
        if !y.iter().any(|&v| v > T::zero()) {
            return Err(Error::invalid(format!("class {label} has no training rows")));
        }
        let sol = smo_solve(&gram, &y, c, tol, max_iter)?;
        let mut alphas = Vec::new();
        let mut svs = Vec::new();
        for (i, &l) in sol.lambda.iter().enumerate() {
            if l > T::zero() {
                alphas.push(y[i] * l);
                svs.push(train.features[i].clone());
            }
        }
        if svs.is_empty() {
            return Err(Error::invalid(format!("class {label}: solver produced no support vectors")));
        }
        classes.push(SvmClass { label, bias: sol.bias, alphas, support_vectors: svs });
    }
    MultiClassSvm::new(gamma, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sv(v: Vec<f64>, alpha: f64, bias: f64, label: i64) -> SvmClass<f64> {
        SvmClass { label, bias, alphas: vec![alpha], support_vectors: vec![v] }
    }

    #[test]
    fn libsvm_single_sv_at_origin() {
        let text = "svm_type c_svc\nkernel_type rbf\ngamma 1\nnr_class 2\ntotal_sv 1\nrho 0\nlabel 1 -1\nnr_sv 1 0\nSV\n1.0 1:0 2:0\n";
        let m: MultiClassSvm<f64> = parse_libsvm_model(text).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.scores(&[0.0, 0.0]).unwrap()[0], 1.0);
        assert_eq!(m.classes[1].label, -1);
        assert_eq!(m.decision(&[0.0, 0.0]).unwrap(), 0);
    }

    #[test]
    fn libsvm_sparse_defaults_to_zero() {
        let text = "svm_type c_svc\nkernel_type rbf\ngamma 0.5\nnr_class 2\ntotal_sv 2\nrho 0.25\nlabel 0 1\nSV\n1 3:2\n-1 1:1\n";
        let m: MultiClassSvm<f64> = parse_libsvm_model(text).unwrap();
        assert_eq!(m.classes[0].support_vectors, vec![vec![0.0, 0.0, 2.0], vec![1.0, 0.0, 0.0]]);
        assert_eq!(m.classes[0].bias, -0.25);
        assert_eq!(m.classes[1].alphas, vec![-1.0, 1.0]);
    }

    #[test]
    fn libsvm_errors_carry_line_numbers() {
        let base = "svm_type c_svc\nkernel_type rbf\ngamma 1\nnr_class 2\ntotal_sv 1\nrho 0\nSV\n";
        let bad_line = format!("{base}1.0 1:x\n");
        let err = parse_libsvm_model::<f64>(&bad_line).unwrap_err().to_string();
        assert!(err.contains("line 8"), "{err}");
        let linear = base.replace("rbf", "linear") + "1 1:0\n";
        let err = parse_libsvm_model::<f64>(&linear).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("kernel_type"), "{err}");
        let ovo = base.replace("nr_class 2", "nr_class 3") + "1 1:0\n";
        let err = parse_libsvm_model::<f64>(&ovo).unwrap_err().to_string();
        assert!(err.contains("one-vs-rest"), "{err}");
        let svr = base.replace("c_svc", "epsilon_svr") + "1 1:0\n";
        assert!(parse_libsvm_model::<f64>(&svr).unwrap_err().to_string().contains("svm_type"));
    }

    #[test]
    fn json_round_trip_and_schema_errors() {
        let m = MultiClassSvm::new(0.5, vec![one_sv(vec![1.0, 2.0], 0.3, 0.1, 4), one_sv(vec![-1.0, 0.5], -0.7, 0.0, 9)]).unwrap();
        let text = emit_ovr_model_json(&m);
        assert_eq!(
            text,
            r#"{"gamma":0.5,"classes":[{"label":4,"bias":0.1,"alphas":[0.3],"support_vectors":[[1.0,2.0]]},{"label":9,"bias":0.0,"alphas":[-0.7],"support_vectors":[[-1.0,0.5]]}]}"#
        );
        assert_eq!(parse_ovr_model_json::<f64>(&text).unwrap(), m);
        let err = parse_ovr_model_json::<f64>(r#"{"classes":[]}"#).unwrap_err().to_string();
        assert!(err.contains("gamma"), "{err}");
        let err = parse_ovr_model_json::<f64>(r#"{"gamma":1,"classes":[{"label":0,"bias":"x","alphas":[],"support_vectors":[]}]}"#)
            .unwrap_err()
            .to_string();
        assert!(err.contains("classes[0].bias"), "{err}");
        let ragged = r#"{"gamma":1,"classes":[{"label":0,"bias":0,"alphas":[1,1],"support_vectors":[[1,2],[1]]}]}"#;
        assert!(parse_ovr_model_json::<f64>(ragged).is_err());
    }

    #[test]
    fn decisions() {
        let single = MultiClassSvm::new(1.0, vec![one_sv(vec![0.0], 1.0, 0.0, 0)]).unwrap();
        assert_eq!(single.decision(&[5.0]).unwrap(), 0);
        let two = MultiClassSvm::new(1.0, vec![one_sv(vec![0.0, 0.0], 1.0, 0.0, 0), one_sv(vec![10.0, 10.0], 1.0, 0.0, 1)]).unwrap();
        assert_eq!(two.decision(&[0.0, 0.0]).unwrap(), 0);
        assert_eq!(two.decision(&[10.0, 9.5]).unwrap(), 1);
        assert!(matches!(two.scores(&[1.0]), Err(Error::Dimension { expected: 2, got: 1 })));
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn two_point_problem_splits_midway() {
        let xs = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let y = vec![1.0_f64, -1.0];
        let gram = rbf_gram(&xs, 1.0);
        let sol = smo_solve(&gram, &y, 10.0, 1e-9, 1000).unwrap();
        assert!(sol.lambda.iter().all(|&l| l > 0.0));
        assert!((sol.lambda[0] - sol.lambda[1]).abs() < 1e-12);
        assert!(sol.bias.abs() < 1e-9);
        let f = |x: f64| sol.lambda[0] * (-(x * x)).exp() - sol.lambda[1] * (-(x - 1.0) * (x - 1.0)).exp() + sol.bias;
        assert!(f(0.0) > 0.0 && f(1.0) < 0.0 && f(0.5).abs() < 1e-9);
    }

    #[test]
    fn csv_and_libsvm_loaders() {
        let csv = "a,b,class\n1,2,0\n3,4,1\n5,6,1\n";
        let d: Dataset<f64> = load_dataset_csv(csv, &LabelColumn::Name("class".into())).unwrap();
        assert_eq!(d.features, vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(d.labels, vec![0, 1, 1]);
        let d: Dataset<f64> = load_dataset_csv("7,1,2\n-1,3,4\n", &LabelColumn::Index(0)).unwrap();
        assert_eq!(d.label_names, vec![-1, 7]);
        assert_eq!(d.labels, vec![1, 0]);
        let err = load_dataset_csv::<f64>("1,2,0\n3,x,1\n", &LabelColumn::Index(2)).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(load_dataset_csv::<f64>("1,2,0\n3,1\n", &LabelColumn::Index(2)).is_err());

        let d: Dataset<f64> = load_dataset_libsvm("1 3:2.5\n-1 1:1\n").unwrap();
        assert_eq!(d.features[0], vec![0.0, 0.0, 2.5]);
        assert_eq!(d.label_names, vec![-1, 1]);
    }

    #[test]
    fn split_is_seeded_prefix() {
        let d = Dataset::from_raw((0..10).map(|i| vec![i as f64]).collect(), vec![0; 10]).unwrap();
        let a = split_dataset(&d, 0.7, 3).unwrap();
        assert_eq!(a.rows(Split::Train).len(), 7);
        assert_eq!(a.rows(Split::Test).len(), 3);
        assert_eq!(a, split_dataset(&d, 0.7, 3).unwrap());
        assert!(split_dataset(&d, 1.0, 3).is_err());
        assert_eq!(a.class_proportions(Some(Split::Test)), vec![1.0]);
    }
}
