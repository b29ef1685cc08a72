//! Deep radial kernel networks assembled from one-vs-rest SVMs, and the
//! Gaussian-RBF baseline with the same parameterisation.
//!
//! Class scores are `s_c(x) = sum_i alpha_ci F(V_ci - x) + b_c`, where `F` is
//! a single fold network approximating a Wendland profile fitted to the
//! SVM's Gaussian kernel. Outputs are `1/2 + 1/2 tanh(s_c)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{json_from_str, Error, Result};
use crate::foldbuild::{build_radial_net, Sharing};
use crate::kernelapprox::{fit_wendland_to_gaussian, wendland_q31, RadialProfile};
use crate::netcore::{Activation, Layer, Network, ParamGrads, Trace};
use crate::scalar::Scalar;
use crate::svmio::{argmax, sq_dist, MultiClassSvm, SvmClass};

/// Support vectors, signed coefficients and bias of one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct KernelClass<T> {
    pub label: i64,
    pub bias: T,
    pub alphas: Vec<T>,
    pub support_vectors: Vec<Vec<T>>,
}

impl<T: Scalar> From<&SvmClass<T>> for KernelClass<T> {
    fn from(c: &SvmClass<T>) -> Self {
        KernelClass { label: c.label, bias: c.bias, alphas: c.alphas.clone(), support_vectors: c.support_vectors.clone() }
    }
}

/// Squashed class outputs `1/2 + 1/2 tanh(s)`.
pub fn squash<T: Scalar>(scores: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    scores.iter().map(|&s| half + half * s.tanh()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct DrknMetadata<T> {
    pub gamma: T,
    #[serde(rename = "wendland_R")]
    pub wendland_r: T,
    pub delta: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrknModel<T: Scalar> {
    fold_net: Network<T>,
    classes: Vec<KernelClass<T>>,
    dim: usize,
    metadata: DrknMetadata<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
struct DrknDoc<T: Scalar> {
    model: String,
    fold_net: Network<T>,
    classes: Vec<KernelClass<T>>,
    metadata: DrknMetadata<T>,
}

fn validate_classes<T: Scalar>(classes: &[KernelClass<T>]) -> Result<usize> {
    if classes.is_empty() {
        return Err(Error::invalid("model has no classes"));
    }
    let dim = classes[0].support_vectors.first().map_or(0, Vec::len);
    for (c, class) in classes.iter().enumerate() {
        if class.alphas.len() != class.support_vectors.len() || class.support_vectors.is_empty() {
            return Err(Error::invalid(format!("class {c}: need one alpha per support vector and at least one support vector")));
        }
        if class.support_vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid(format!("class {c}: support vectors must have dimension {dim}")));
        }
    }
    Ok(dim)
}

/// `0.01 / max_c sum_i |alpha_ci|`, clamped to `[1e-4, 0.05]`.
pub fn default_delta<T: Scalar>(svm: &MultiClassSvm<T>) -> T {
    let mass = svm.max_alpha_mass();
    let d = if mass > T::zero() { T::lit(0.01) / mass } else { T::lit(0.05) };
    d.max(T::lit(1e-4)).min(T::lit(0.05))
}

/// Number of probes used for the assembly check.
pub const ASSEMBLY_PROBES: usize = 100;

impl<T: Scalar> DrknModel<T> {
    /// Fits the Wendland support to the SVM's Gaussian kernel, builds the fold
    /// network for accuracy `delta` (the default rule when `None`), copies the
    /// SVM parameters, and checks the score-approximation bound on
    /// [`ASSEMBLY_PROBES`] probe points.
    pub fn assemble(svm: &MultiClassSvm<T>, delta: Option<T>) -> Result<Self> {
        svm.validate()?;
        let delta = delta.unwrap_or_else(|| default_delta(svm));
        if !(delta > T::zero()) {
            return Err(Error::invalid(format!("delta must be positive, got {delta}")));
        }
        let fit = fit_wendland_to_gaussian(svm.gamma)?;
        let profile = wendland_q31(fit.support_r)?;
        let fold_net = build_radial_net(&profile, svm.dim(), delta, Sharing::PerStage)?;
        let model = DrknModel {
            fold_net: fold_net.net,
            classes: svm.classes.iter().map(KernelClass::from).collect(),
            dim: svm.dim(),
            metadata: DrknMetadata { gamma: svm.gamma, wendland_r: fit.support_r, delta },
        };
        model.check_assembly(svm, ASSEMBLY_PROBES, 0)?;
        Ok(model)
    }

    pub fn from_parts(fold_net: Network<T>, classes: Vec<KernelClass<T>>, metadata: DrknMetadata<T>) -> Result<Self> {
        let dim = validate_classes(&classes)?;
        if fold_net.input_dim() != Some(dim) || fold_net.output_dim() != Some(1) {
            return Err(Error::invalid(format!(
                "fold_net maps {:?} -> {:?}, expected {dim} -> 1",
                fold_net.input_dim(),
                fold_net.output_dim()
            )));
        }
        Ok(DrknModel { fold_net, classes, dim, metadata })
    }

    /// The Wendland profile the fold network approximates.
    pub fn profile(&self) -> Result<RadialProfile<T>> {
        wendland_q31(self.metadata.wendland_r)
    }

    /// Score error allowed for class `c`: `sum |alpha| (L sqrt(delta) + delta)`.
    pub fn score_tolerance(&self, c: usize) -> Result<T> {
        let l = self.profile()?.lipschitz_l();
        let delta = self.metadata.delta;
        let mass: T = self.classes[c].alphas.iter().map(|a| a.abs()).sum();
        Ok(mass * (l * delta.sqrt() + delta))
    }

    /// Probe points: a random support vector plus a uniform offset of up to
    /// `1.5 R` in each coordinate.
    pub fn probes(&self, n: usize, seed: u64) -> Vec<Vec<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sv: Vec<&Vec<T>> = self.classes.iter().flat_map(|c| &c.support_vectors).collect();
        let reach = 1.5 * self.metadata.wendland_r.as_f64();
        (0..n)
            .map(|_| {
                let v = sv[rng.random_range(0..sv.len())];
                v.iter().map(|&a| a + T::lit(rng.random_range(-reach..=reach))).collect()
            })
            .collect()
    }

    /// Largest `|s_c - s_c^wendland| / tolerance_c` over the probes; at most 1
    /// when the assembly bound holds.
    pub fn assembly_gap(&self, svm: &MultiClassSvm<T>, probes: &[Vec<T>]) -> Result<T> {
        let profile = self.profile()?;
        let tol: Vec<T> = (0..self.classes.len()).map(|c| self.score_tolerance(c)).collect::<Result<_>>()?;
        let mut worst = T::zero();
        for x in probes {
            let ours = self.scores(x)?;
            let reference = svm.profile_scores(&profile, x)?;
            for c in 0..ours.len() {
                let slack = T::lit(1e-9) * (T::one() + reference[c].abs());
                let gap = (ours[c] - reference[c]).abs();
                let ratio = if tol[c] > T::zero() { (gap - slack).max(T::zero()) / tol[c] } else if gap > slack { T::infinity() } else { T::zero() };
                worst = worst.max(ratio);
            }
        }
        Ok(worst)
    }

    fn check_assembly(&self, svm: &MultiClassSvm<T>, n: usize, seed: u64) -> Result<()> {
        let gap = self.assembly_gap(svm, &self.probes(n, seed))?;
        if gap > T::one() {
            return Err(Error::Invariant(format!("assembled scores exceed the approximation bound ({gap} x tolerance)")));
        }
        Ok(())
    }

    pub fn fold_net(&self) -> &Network<T> {
        &self.fold_net
    }

    pub fn classes(&self) -> &[KernelClass<T>] {
        &self.classes
    }

    pub fn metadata(&self) -> &DrknMetadata<T> {
        &self.metadata
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// `|F| + sum_c N_c (d + 1) + N_C`.
    pub fn param_count(&self) -> usize {
        self.fold_net.param_count()
            + self.classes.iter().map(|c| c.alphas.len() * (self.dim + 1) + 1).sum::<usize>()
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    fn kernel(&self, v: &[T], x: &[T], diff: &mut Vec<T>, trace: &mut Trace<T>) -> Result<T> {
        diff.clear();
        diff.extend(v.iter().zip(x).map(|(&a, &b)| a - b));
        self.fold_net.forward_trace(diff, trace)?;
        Ok(trace.output()[0])
    }

    pub fn scores(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_dim(x)?;
        let mut trace = Trace::new();
        let mut diff = Vec::with_capacity(self.dim);
        self.classes
            .iter()
            .map(|c| {
                let mut s = c.bias;
                for (&a, v) in c.alphas.iter().zip(&c.support_vectors) {
                    s = s + a * self.kernel(v, x, &mut diff, &mut trace)?;
                }
                Ok(s)
            })
            .collect()
    }

    pub fn outputs(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(squash(&self.scores(x)?))
    }

    pub fn decision(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.outputs(x)?))
    }

    /// The score of class `c` as one explicit network: a linear layer forming
    /// every `V_ci - x`, the fold network applied block-wise, and the
    /// alpha-weighted sum.
    pub fn expanded_class_network(&self, c: usize) -> Result<Network<T>> {
        let class = &self.classes[c];
        let (n, d) = (class.support_vectors.len(), self.dim);
        let mut w = vec![T::zero(); n * d * d];
        for i in 0..n {
            for k in 0..d {
                w[(i * d + k) * d + k] = -T::one();
            }
        }
        let b: Vec<T> = class.support_vectors.iter().flatten().copied().collect();
        let mut layers = vec![Layer::from_flat(Activation::Linear, n * d, d, w, b)?];
        for l in self.fold_net.layers() {
            let dense = Layer::from_flat(l.activation(), l.block_rows(), l.block_cols(), l.weights().to_vec(), l.biases().to_vec())?;
            layers.push(dense.with_tiles(l.tiles() * n)?);
        }
        layers.push(Layer::from_flat(Activation::Linear, 1, n, class.alphas.clone(), vec![class.bias])?);
        Network::chain(layers)
    }

    pub fn to_json(&self) -> String {
        let doc = DrknDoc {
            model: "drkn".into(),
            fold_net: self.fold_net.clone(),
            classes: self.classes.clone(),
            metadata: self.metadata.clone(),
        };
        serde_json::to_string(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DrknDoc<T> = json_from_str(text)?;
        if doc.model != "drkn" {
            return Err(Error::Schema { path: "model".into(), msg: format!("expected \"drkn\", got {:?}", doc.model) });
        }
        Self::from_parts(doc.fold_net, doc.classes, doc.metadata)
    }
}

/// Gaussian-RBF network with the SVM's parameters; every centre, coefficient,
/// bias and the shared width are trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct RbfModel<T> {
    gamma: T,
    classes: Vec<KernelClass<T>>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
struct RbfDoc<T> {
    model: String,
    gamma: T,
    classes: Vec<KernelClass<T>>,
}

impl<T: Scalar> RbfModel<T> {
    pub fn assemble(svm: &MultiClassSvm<T>) -> Result<Self> {
        svm.validate()?;
        Ok(RbfModel { gamma: svm.gamma, classes: svm.classes.iter().map(KernelClass::from).collect(), dim: svm.dim() })
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn classes(&self) -> &[KernelClass<T>] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn param_count(&self) -> usize {
        1 + self.classes.iter().map(|c| c.alphas.len() * (self.dim + 1) + 1).sum::<usize>()
    }

    pub fn scores(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.dim {
            return Err(Error::Dimension { expected: self.dim, got: x.len() });
        }
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

    pub fn outputs(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(squash(&self.scores(x)?))
    }

    pub fn decision(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.outputs(x)?))
    }

    pub fn to_json(&self) -> String {
        let doc = RbfDoc { model: "rbf".into(), gamma: self.gamma, classes: self.classes.clone() };
        serde_json::to_string(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: RbfDoc<T> = json_from_str(text)?;
        if doc.model != "rbf" {
            return Err(Error::Schema { path: "model".into(), msg: format!("expected \"rbf\", got {:?}", doc.model) });
        }
        let dim = validate_classes(&doc.classes)?;
        Ok(RbfModel { gamma: doc.gamma, classes: doc.classes, dim })
    }
}

/// Gradient of the per-class parameters, laid out like [`KernelClass`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClassGrad<T> {
    pub bias: T,
    pub alphas: Vec<T>,
    pub support_vectors: Vec<Vec<T>>,
}

fn zero_class_grads<T: Scalar>(classes: &[KernelClass<T>]) -> Vec<ClassGrad<T>> {
    classes
        .iter()
        .map(|c| ClassGrad {
            bias: T::zero(),
            alphas: vec![T::zero(); c.alphas.len()],
            support_vectors: c.support_vectors.iter().map(|v| vec![T::zero(); v.len()]).collect(),
        })
        .collect()
}

fn clear_class_grads<T: Scalar>(grads: &mut [ClassGrad<T>]) {
    for g in grads {
        g.bias = T::zero();
        g.alphas.iter_mut().for_each(|a| *a = T::zero());
        g.support_vectors.iter_mut().flatten().for_each(|a| *a = T::zero());
    }
}

fn step_classes<T: Scalar>(classes: &mut [KernelClass<T>], grads: &[ClassGrad<T>], step: T) {
    for (c, g) in classes.iter_mut().zip(grads) {
        c.bias = c.bias - step * g.bias;
        for (a, ga) in c.alphas.iter_mut().zip(&g.alphas) {
            *a = *a - step * *ga;
        }
        for (v, gv) in c.support_vectors.iter_mut().flatten().zip(g.support_vectors.iter().flatten()) {
            *v = *v - step * *gv;
        }
    }
}

fn push_class_params<T: Scalar>(classes: &[KernelClass<T>], out: &mut Vec<T>) {
    for c in classes {
        for v in &c.support_vectors {
            out.extend_from_slice(v);
        }
        out.extend_from_slice(&c.alphas);
        out.push(c.bias);
    }
}

fn push_class_grads<T: Scalar>(grads: &[ClassGrad<T>], out: &mut Vec<T>) {
    for g in grads {
        for v in &g.support_vectors {
            out.extend_from_slice(v);
        }
        out.extend_from_slice(&g.alphas);
        out.push(g.bias);
    }
}

fn read_class_params<T: Scalar>(classes: &mut [KernelClass<T>], values: &[T]) -> usize {
    let mut at = 0;
    let mut take = || {
        at += 1;
        values[at - 1]
    };
    for c in classes {
        for v in c.support_vectors.iter_mut().flatten() {
            *v = take();
        }
        for a in &mut c.alphas {
            *a = take();
        }
        c.bias = take();
    }
    at
}

/// A model whose class scores can be differentiated with respect to all of its
/// parameters.
pub trait Trainable<T: Scalar>: Clone {
    /// Gradient accumulator (and any scratch space reused between calls).
    type Grad;

    fn n_classes(&self) -> usize;
    fn dim(&self) -> usize;
    fn scores(&self, x: &[T]) -> Result<Vec<T>>;
    fn zero_grad(&self) -> Self::Grad;
    fn clear_grad(&self, grad: &mut Self::Grad);

    /// Computes the scores at `x`, asks `upstream` for `dL/ds`, and adds
    /// `dL/dtheta` into `grad`. Returns the scores.
    fn accumulate(&self, x: &[T], upstream: &mut dyn FnMut(&[T]) -> Result<Vec<T>>, grad: &mut Self::Grad) -> Result<Vec<T>>;

    /// `theta -= step * grad`.
    fn apply(&mut self, grad: &Self::Grad, step: T);

    /// All trainable parameters, flattened.
    fn params(&self) -> Vec<T>;
    fn set_params(&mut self, values: &[T]) -> Result<()>;
    /// `grad` in the layout of [`Trainable::params`].
    fn flatten_grad(&self, grad: &Self::Grad) -> Vec<T>;

    fn decision(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&squash(&self.scores(x)?)))
    }
}

pub struct DrknGrad<T> {
    pub fold: ParamGrads<T>,
    pub classes: Vec<ClassGrad<T>>,
    traces: Vec<Vec<Trace<T>>>,
    diff: Vec<T>,
    input_grad: Vec<T>,
}

impl<T: Scalar> Trainable<T> for DrknModel<T> {
    type Grad = DrknGrad<T>;

    fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn scores(&self, x: &[T]) -> Result<Vec<T>> {
        DrknModel::scores(self, x)
    }

    fn zero_grad(&self) -> DrknGrad<T> {
        DrknGrad {
            fold: self.fold_net.zero_grads(),
            classes: zero_class_grads(&self.classes),
            traces: self.classes.iter().map(|c| (0..c.alphas.len()).map(|_| Trace::new()).collect()).collect(),
            diff: Vec::with_capacity(self.dim),
            input_grad: Vec::new(),
        }
    }

    fn clear_grad(&self, grad: &mut DrknGrad<T>) {
        grad.fold.fill_zero();
        clear_class_grads(&mut grad.classes);
    }

    fn accumulate(&self, x: &[T], upstream: &mut dyn FnMut(&[T]) -> Result<Vec<T>>, grad: &mut DrknGrad<T>) -> Result<Vec<T>> {
        self.check_dim(x)?;
        let mut scores = Vec::with_capacity(self.classes.len());
        // forward pass keeps one trace per support vector
        for (c, class) in self.classes.iter().enumerate() {
            let mut s = class.bias;
            for (i, (&a, v)) in class.alphas.iter().zip(&class.support_vectors).enumerate() {
                let trace = &mut grad.traces[c][i];
                grad.diff.clear();
                grad.diff.extend(v.iter().zip(x).map(|(&p, &q)| p - q));
                self.fold_net.forward_trace(&grad.diff, trace)?;
                s = s + a * trace.output()[0];
            }
            scores.push(s);
        }
        let up = upstream(&scores)?;
        for (c, class) in self.classes.iter().enumerate() {
            let g = up[c];
            let cg = &mut grad.classes[c];
            cg.bias = cg.bias + g;
            if g == T::zero() {
                continue;
            }
            for (i, &a) in class.alphas.iter().enumerate() {
                let trace = &grad.traces[c][i];
                cg.alphas[i] = cg.alphas[i] + g * trace.output()[0];
                self.fold_net.accumulate_gradient(trace, &[g * a], &mut grad.fold, &mut grad.input_grad)?;
                for (dv, &gi) in cg.support_vectors[i].iter_mut().zip(&grad.input_grad) {
                    *dv = *dv + gi;
                }
            }
        }
        Ok(scores)
    }

    fn apply(&mut self, grad: &DrknGrad<T>, step: T) {
        self.fold_net.apply_gradient(&grad.fold, step);
        step_classes(&mut self.classes, &grad.classes, step);
    }

    fn params(&self) -> Vec<T> {
        let mut out = self.fold_net.params();
        push_class_params(&self.classes, &mut out);
        out
    }

    fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Dimension { expected: self.param_count(), got: values.len() });
        }
        let nf = self.fold_net.param_count();
        self.fold_net.set_params(&values[..nf])?;
        read_class_params(&mut self.classes, &values[nf..]);
        Ok(())
    }

    fn flatten_grad(&self, grad: &DrknGrad<T>) -> Vec<T> {
        let mut out = grad.fold.flatten();
        push_class_grads(&grad.classes, &mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RbfGrad<T> {
    pub gamma: T,
    pub classes: Vec<ClassGrad<T>>,
}

impl<T: Scalar> Trainable<T> for RbfModel<T> {
    type Grad = RbfGrad<T>;

    fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn scores(&self, x: &[T]) -> Result<Vec<T>> {
        RbfModel::scores(self, x)
    }

    fn zero_grad(&self) -> RbfGrad<T> {
        RbfGrad { gamma: T::zero(), classes: zero_class_grads(&self.classes) }
    }

    fn clear_grad(&self, grad: &mut RbfGrad<T>) {
        grad.gamma = T::zero();
        clear_class_grads(&mut grad.classes);
    }

    fn accumulate(&self, x: &[T], upstream: &mut dyn FnMut(&[T]) -> Result<Vec<T>>, grad: &mut RbfGrad<T>) -> Result<Vec<T>> {
        let scores = RbfModel::scores(self, x)?;
        let up = upstream(&scores)?;
        let two = T::lit(2.0);
        for (c, class) in self.classes.iter().enumerate() {
            let g = up[c];
            let cg = &mut grad.classes[c];
            cg.bias = cg.bias + g;
            for (i, (&a, v)) in class.alphas.iter().zip(&class.support_vectors).enumerate() {
                let d2 = sq_dist(v, x);
                let k = (-self.gamma * d2).exp();
                cg.alphas[i] = cg.alphas[i] + g * k;
                grad.gamma = grad.gamma - g * a * k * d2;
                let coef = -two * self.gamma * g * a * k;
                for ((dv, &p), &q) in cg.support_vectors[i].iter_mut().zip(v).zip(x) {
                    *dv = *dv + coef * (p - q);
                }
            }
        }
        Ok(scores)
    }

    fn apply(&mut self, grad: &RbfGrad<T>, step: T) {
        self.gamma = self.gamma - step * grad.gamma;
        step_classes(&mut self.classes, &grad.classes, step);
    }

    fn params(&self) -> Vec<T> {
        let mut out = vec![self.gamma];
        push_class_params(&self.classes, &mut out);
        out
    }

    fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Dimension { expected: self.param_count(), got: values.len() });
        }
        self.gamma = values[0];
        read_class_params(&mut self.classes, &values[1..]);
        Ok(())
    }

    fn flatten_grad(&self, grad: &RbfGrad<T>) -> Vec<T> {
        let mut out = vec![grad.gamma];
        push_class_grads(&grad.classes, &mut out);
        out
    }
}
