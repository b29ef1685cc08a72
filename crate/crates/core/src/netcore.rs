//! Layered dense networks with tied blocks, shared layers and exact
//! reverse-mode gradients.
//!
//! A [`Layer`] computes `y = act(W x + b)`. To express weight sharing inside a
//! layer, the stored `W`/`b` are a single *block* that is repeated
//! block-diagonally `tiles` times: tile `t` reads inputs
//! `[t*cols, (t+1)*cols)` and writes outputs `[t*rows, (t+1)*rows)`.
//! Sharing across layers is expressed by named share groups; all members of
//! a group hold bitwise-identical blocks and receive one summed gradient.
//!
//! Parameters are addressed by *slot*: one slot per unshared layer and one per
//! share group, ordered by first appearance. [`ParamGrads`], [`Network::params`]
//! and [`Network::set_params`] all use this slot order (weights row-major,
//! then biases).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{json_from_str, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Linear => z,
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative given the preactivation `z` and output `y`. The ReLU
    /// subgradient at exactly zero is zero.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Linear => T::one(),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    activation: Activation,
    tiles: usize,
    rows: usize,
    cols: usize,
    weights: Vec<T>,
    biases: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    /// Builds a layer from a row-per-output weight matrix.
    pub fn new(activation: Activation, weights: Vec<Vec<T>>, biases: Vec<T>) -> Result<Self> {
        let rows = weights.len();
        let cols = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged weight matrix"));
        }
        Self::from_flat(activation, rows, cols, weights.into_iter().flatten().collect(), biases)
    }

    pub fn from_flat(
        activation: Activation,
        rows: usize,
        cols: usize,
        weights: Vec<T>,
        biases: Vec<T>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("layer block must be non-empty, got {rows}x{cols}")));
        }
        if weights.len() != rows * cols {
            return Err(Error::invalid(format!(
                "weight buffer has {} entries, expected {rows}x{cols}",
                weights.len()
            )));
        }
        if biases.len() != rows {
            return Err(Error::invalid(format!(
                "weights have {rows} rows but biases have length {}",
                biases.len()
            )));
        }
        if weights.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite layer parameter"));
        }
        // -0.0 + 0.0 == +0.0: store a single zero so updates by zero steps are bitwise no-ops
        let unsign = |v: Vec<T>| v.into_iter().map(|x| x + T::zero()).collect();
        Ok(Layer { activation, tiles: 1, rows, cols, weights: unsign(weights), biases: unsign(biases) })
    }

    /// Repeats the block `tiles` times along the diagonal.
    pub fn with_tiles(mut self, tiles: usize) -> Result<Self> {
        if tiles == 0 {
            return Err(Error::invalid("tiles must be at least 1"));
        }
        self.tiles = tiles;
        Ok(self)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn tiles(&self) -> usize {
        self.tiles
    }
    pub fn block_rows(&self) -> usize {
        self.rows
    }
    pub fn block_cols(&self) -> usize {
        self.cols
    }
    pub fn in_dim(&self) -> usize {
        self.tiles * self.cols
    }
    pub fn out_dim(&self) -> usize {
        self.tiles * self.rows
    }
    /// Block weights, row-major `rows x cols`.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }
    pub fn biases(&self) -> &[T] {
        &self.biases
    }
    pub fn weight(&self, row: usize, col: usize) -> T {
        self.weights[row * self.cols + col]
    }

    /// Stored parameters of one block.
    pub fn block_param_count(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    /// The equivalent untiled layer with an explicit block-diagonal matrix.
    pub fn expanded(&self) -> Layer<T> {
        if self.tiles == 1 {
            return self.clone();
        }
        let (out, inp) = (self.out_dim(), self.in_dim());
        let mut w = vec![T::zero(); out * inp];
        let mut b = Vec::with_capacity(out);
        for t in 0..self.tiles {
            for r in 0..self.rows {
                let row = t * self.rows + r;
                for c in 0..self.cols {
                    w[row * inp + t * self.cols + c] = self.weights[r * self.cols + c];
                }
                b.push(self.biases[r]);
            }
        }
        Layer { activation: self.activation, tiles: 1, rows: out, cols: inp, weights: w, biases: b }
    }

    fn same_block(&self, other: &Layer<T>) -> bool {
        self.activation == other.activation
            && self.rows == other.rows
            && self.cols == other.cols
            && self.weights == other.weights
            && self.biases == other.biases
    }

    fn affine_into(&self, x: &[T], z: &mut [T]) {
        let (rows, cols) = (self.rows, self.cols);
        for t in 0..self.tiles {
            let xin = &x[t * cols..(t + 1) * cols];
            let zout = &mut z[t * rows..(t + 1) * rows];
            for (r, zr) in zout.iter_mut().enumerate() {
                let w = &self.weights[r * cols..(r + 1) * cols];
                let mut acc = self.biases[r];
                for (wi, xi) in w.iter().zip(xin) {
                    acc = acc + *wi * *xi;
                }
                *zr = acc;
            }
        }
    }
}

/// Gradient of one parameter slot (same shape as the stored block).
#[derive(Clone, Debug, PartialEq)]
pub struct SlotGrad<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
}

/// Parameter gradients, one entry per slot; shared groups hold a single
/// summed gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    pub slots: Vec<SlotGrad<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn len(&self) -> usize {
        self.slots.iter().map(|s| s.weights.len() + s.biases.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fill_zero(&mut self) {
        for s in &mut self.slots {
            s.weights.iter_mut().for_each(|v| *v = T::zero());
            s.biases.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// `self += scale * other`. Panics if the shapes differ.
    pub fn add_scaled(&mut self, other: &ParamGrads<T>, scale: T) {
        assert_eq!(self.slots.len(), other.slots.len(), "gradient slot count mismatch");
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x = *x + scale * *y;
            }
            for (x, y) in a.biases.iter_mut().zip(&b.biases) {
                *x = *x + scale * *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for g in &mut self.slots {
            g.weights.iter_mut().for_each(|v| *v = *v * s);
            g.biases.iter_mut().for_each(|v| *v = *v * s);
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        for s in &self.slots {
            out.extend_from_slice(&s.weights);
            out.extend_from_slice(&s.biases);
        }
        out
    }
}

/// Result of [`Network::backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle<T> {
    pub params: ParamGrads<T>,
    pub input: Vec<T>,
}

/// Activations recorded by [`Network::forward_trace`]; reusable across calls.
#[derive(Clone, Debug, Default)]
pub struct Trace<T> {
    input: Vec<T>,
    pre: Vec<Vec<T>>,
    post: Vec<Vec<T>>,
}

impl<T: Scalar> Trace<T> {
    pub fn new() -> Self {
        Trace { input: Vec::new(), pre: Vec::new(), post: Vec::new() }
    }

    pub fn output(&self) -> &[T] {
        self.post.last().unwrap_or(&self.input)
    }

    /// Output of layer `k` after its activation.
    pub fn layer_output(&self, k: usize) -> &[T] {
        &self.post[k]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "NetworkDoc<T>", into = "NetworkDoc<T>")]
pub struct Network<T: Scalar> {
    layers: Vec<Layer<T>>,
    shares: BTreeMap<String, Vec<usize>>,
    slot_of: Vec<usize>,
    slots: Vec<Vec<usize>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<Layer<T>>, shares: BTreeMap<String, Vec<usize>>) -> Result<Self> {
        for k in 1..layers.len() {
            let (prev, cur) = (&layers[k - 1], &layers[k]);
            if prev.out_dim() != cur.in_dim() {
                return Err(Error::Shape {
                    layer: k,
                    msg: format!(
                        "expects {} inputs but layer {} produces {}",
                        cur.in_dim(),
                        k - 1,
                        prev.out_dim()
                    ),
                });
            }
        }

        let mut group_of: Vec<Option<&str>> = vec![None; layers.len()];
        for (name, members) in &shares {
            if members.is_empty() {
                return Err(Error::invalid(format!("share group `{name}` is empty")));
            }
            let first = members[0];
            for &k in members {
                if k >= layers.len() {
                    return Err(Error::invalid(format!(
                        "share group `{name}` names layer {k}, network has {}",
                        layers.len()
                    )));
                }
                if let Some(other) = group_of[k] {
                    return Err(Error::invalid(format!(
                        "layer {k} belongs to share groups `{other}` and `{name}`"
                    )));
                }
                group_of[k] = Some(name);
                if first < layers.len() && !layers[first].same_block(&layers[k]) {
                    return Err(Error::Shape {
                        layer: k,
                        msg: format!("differs from layer {first} in share group `{name}`"),
                    });
                }
            }
        }

        let mut slot_of = vec![usize::MAX; layers.len()];
        let mut slots: Vec<Vec<usize>> = Vec::new();
        for k in 0..layers.len() {
            if slot_of[k] != usize::MAX {
                continue;
            }
            let members = match group_of[k] {
                Some(name) => {
                    let mut m = shares[name].clone();
                    m.sort_unstable();
                    m.dedup();
                    m
                }
                None => vec![k],
            };
            for &m in &members {
                slot_of[m] = slots.len();
            }
            slots.push(members);
        }

        Ok(Network { layers, shares, slot_of, slots })
    }

    /// A network without share groups.
    pub fn chain(layers: Vec<Layer<T>>) -> Result<Self> {
        Self::new(layers, BTreeMap::new())
    }

    pub fn empty() -> Self {
        Network { layers: Vec::new(), shares: BTreeMap::new(), slot_of: Vec::new(), slots: Vec::new() }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn shares(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.shares
    }

    /// `None` for the empty network, which accepts any input length.
    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(Layer::in_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(Layer::out_dim)
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slot_of(&self, layer: usize) -> usize {
        self.slot_of[layer]
    }

    /// Distinct trainable parameters (tied blocks and share groups counted once).
    pub fn param_count(&self) -> usize {
        self.slots.iter().map(|m| self.layers[m[0]].block_param_count()).sum()
    }

    /// Parameter count of the same network with every tie undone.
    pub fn untied_param_count(&self) -> usize {
        self.layers.iter().map(|l| l.tiles * l.block_param_count()).sum()
    }

    /// Number of units in ReLU layers.
    pub fn relu_units(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.activation == Activation::Relu)
            .map(Layer::out_dim)
            .sum()
    }

    pub fn relu_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.activation == Activation::Relu).count()
    }

    /// Appends the layers of `other` (its share groups are re-indexed).
    pub fn then(&self, other: &Network<T>) -> Result<Network<T>> {
        let offset = self.layers.len();
        let mut layers = self.layers.clone();
        layers.extend(other.layers.iter().cloned());
        let mut shares = self.shares.clone();
        for (name, members) in &other.shares {
            if shares.contains_key(name) {
                return Err(Error::invalid(format!("duplicate share group `{name}`")));
            }
            shares.insert(name.clone(), members.iter().map(|k| k + offset).collect());
        }
        Network::new(layers, shares)
    }

    /// Equivalent network with every layer untiled and no share groups.
    pub fn expanded(&self) -> Network<T> {
        let layers = self.layers.iter().map(Layer::expanded).collect();
        Network::chain(layers).expect("expansion preserves shapes")
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        match self.input_dim() {
            Some(d) if d != x.len() => Err(Error::Shape {
                layer: 0,
                msg: format!("expects {d} inputs, got {}", x.len()),
            }),
            _ => Ok(()),
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            next.clear();
            next.resize(layer.out_dim(), T::zero());
            layer.affine_into(&cur, &mut next);
            let act = layer.activation;
            next.iter_mut().for_each(|v| *v = act.apply(*v));
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass keeping every pre- and post-activation for backprop.
    pub fn forward_trace(&self, x: &[T], trace: &mut Trace<T>) -> Result<()> {
        self.check_input(x)?;
        trace.input.clear();
        trace.input.extend_from_slice(x);
        trace.pre.resize_with(self.layers.len(), Vec::new);
        trace.post.resize_with(self.layers.len(), Vec::new);
        for (k, layer) in self.layers.iter().enumerate() {
            let (before, rest) = trace.post.split_at_mut(k);
            let input = if k == 0 { &trace.input } else { &before[k - 1] };
            let pre = &mut trace.pre[k];
            pre.clear();
            pre.resize(layer.out_dim(), T::zero());
            layer.affine_into(input, pre);
            let post = &mut rest[0];
            post.clear();
            let act = layer.activation;
            post.extend(pre.iter().map(|&z| act.apply(z)));
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> ParamGrads<T> {
        ParamGrads {
            slots: self
                .slots
                .iter()
                .map(|m| {
                    let l = &self.layers[m[0]];
                    SlotGrad {
                        weights: vec![T::zero(); l.rows * l.cols],
                        biases: vec![T::zero(); l.rows],
                    }
                })
                .collect(),
        }
    }

    /// Adds the gradient of `upstream . output` for the traced input into
    /// `grads` and writes the input gradient into `input_grad`.
    pub fn accumulate_gradient(
        &self,
        trace: &Trace<T>,
        upstream: &[T],
        grads: &mut ParamGrads<T>,
        input_grad: &mut Vec<T>,
    ) -> Result<()> {
        let out = self.output_dim().unwrap_or(trace.input.len());
        if upstream.len() != out {
            return Err(Error::Shape {
                layer: self.layers.len().saturating_sub(1),
                msg: format!("upstream has length {}, network output is {out}", upstream.len()),
            });
        }
        if trace.pre.len() != self.layers.len() {
            return Err(Error::invalid("trace does not belong to this network"));
        }
        let mut delta = upstream.to_vec();
        let mut next = Vec::new();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let (pre, post) = (&trace.pre[k], &trace.post[k]);
            let act = layer.activation;
            for ((d, &z), &y) in delta.iter_mut().zip(pre).zip(post) {
                *d = *d * act.derivative(z, y);
            }
            let input = if k == 0 { &trace.input } else { &trace.post[k - 1] };
            let (rows, cols) = (layer.rows, layer.cols);
            let g = &mut grads.slots[self.slot_of[k]];
            next.clear();
            next.resize(layer.in_dim(), T::zero());
            for t in 0..layer.tiles {
                let xin = &input[t * cols..(t + 1) * cols];
                let nin = &mut next[t * cols..(t + 1) * cols];
                for r in 0..rows {
                    let dr = delta[t * rows + r];
                    if dr == T::zero() {
                        continue;
                    }
                    g.biases[r] = g.biases[r] + dr;
                    let w = &layer.weights[r * cols..(r + 1) * cols];
                    let gw = &mut g.weights[r * cols..(r + 1) * cols];
                    for c in 0..cols {
                        gw[c] = gw[c] + dr * xin[c];
                        nin[c] = nin[c] + dr * w[c];
                    }
                }
            }
            std::mem::swap(&mut delta, &mut next);
        }
        *input_grad = delta;
        Ok(())
    }

    /// Exact gradients of `upstream . forward(x)` with respect to every
    /// parameter slot and to `x`.
    pub fn backward(&self, x: &[T], upstream: &[T]) -> Result<GradientBundle<T>> {
        let mut trace = Trace::new();
        self.forward_trace(x, &mut trace)?;
        let mut params = self.zero_grads();
        let mut input = Vec::new();
        self.accumulate_gradient(&trace, upstream, &mut params, &mut input)?;
        Ok(GradientBundle { params, input })
    }

    /// `params -= step * grads`, written identically to every member of a slot.
    pub fn apply_gradient(&mut self, grads: &ParamGrads<T>, step: T) {
        assert_eq!(grads.slots.len(), self.slots.len(), "gradient slot count mismatch");
        for (members, g) in self.slots.iter().zip(&grads.slots) {
            let canon = &self.layers[members[0]];
            let w: Vec<T> = canon.weights.iter().zip(&g.weights).map(|(&p, &d)| p - step * d).collect();
            let b: Vec<T> = canon.biases.iter().zip(&g.biases).map(|(&p, &d)| p - step * d).collect();
            for &m in members {
                self.layers[m].weights.copy_from_slice(&w);
                self.layers[m].biases.copy_from_slice(&b);
            }
        }
    }

    /// Distinct parameters in slot order.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for m in &self.slots {
            let l = &self.layers[m[0]];
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Dimension { expected: self.param_count(), got: values.len() });
        }
        let mut at = 0;
        for s in 0..self.slots.len() {
            let canon = &self.layers[self.slots[s][0]];
            let (nw, nb) = (canon.weights.len(), canon.biases.len());
            let w = &values[at..at + nw];
            let b = &values[at + nw..at + nw + nb];
            for &m in &self.slots[s] {
                self.layers[m].weights.copy_from_slice(w);
                self.layers[m].biases.copy_from_slice(b);
            }
            at += nw + nb;
        }
        Ok(())
    }

    /// Adds `delta` to the flat parameter `index` in every layer of its slot.
    pub fn nudge_param(&mut self, index: usize, delta: T) {
        let mut at = index;
        for s in 0..self.slots.len() {
            let canon = &self.layers[self.slots[s][0]];
            let (nw, nb) = (canon.weights.len(), canon.biases.len());
            if at < nw + nb {
                for &m in &self.slots[s] {
                    let l = &mut self.layers[m];
                    if at < nw {
                        l.weights[at] = l.weights[at] + delta;
                    } else {
                        l.biases[at - nw] = l.biases[at - nw] + delta;
                    }
                }
                return;
            }
            at -= nw + nb;
        }
        panic!("parameter index {index} out of range");
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        json_from_str(text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct LayerDoc<T> {
    activation: Activation,
    weights: Vec<Vec<T>>,
    biases: Vec<T>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    tiles: usize,
}

fn one() -> usize {
    1
}

fn is_one(n: &usize) -> bool {
    *n == 1
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct NetworkDoc<T> {
    layers: Vec<LayerDoc<T>>,
    #[serde(default)]
    shares: BTreeMap<String, Vec<usize>>,
}

impl<T: Scalar> TryFrom<NetworkDoc<T>> for Network<T> {
    type Error = Error;

    fn try_from(doc: NetworkDoc<T>) -> Result<Self> {
        let layers = doc
            .layers
            .into_iter()
            .enumerate()
            .map(|(k, l)| {
                Layer::new(l.activation, l.weights, l.biases)
                    .and_then(|layer| layer.with_tiles(l.tiles))
                    .map_err(|e| Error::Schema { path: format!("layers[{k}]"), msg: e.to_string() })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers, doc.shares)
    }
}

impl<T: Scalar> From<Network<T>> for NetworkDoc<T> {
    fn from(net: Network<T>) -> Self {
        NetworkDoc {
            layers: net
                .layers
                .into_iter()
                .map(|l| LayerDoc {
                    activation: l.activation,
                    weights: l.weights.chunks(l.cols).map(<[T]>::to_vec).collect(),
                    biases: l.biases,
                    tiles: l.tiles,
                })
                .collect(),
            shares: net.shares,
        }
    }
}

/// Maximum relative difference between analytic and central finite-difference
/// gradients of `upstream . forward(x)`, over every distinct parameter and
/// every input coordinate. Relative differences use
/// `|a - fd| / max(1, |a|, |fd|)`.
pub fn grad_check_with<T: Scalar>(
    net: &Network<T>,
    x: &[T],
    upstream: &[T],
    epsilon: T,
) -> Result<T> {
    if !(epsilon > T::zero()) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let analytic = net.backward(x, upstream)?;
    let objective = |n: &Network<T>, input: &[T]| -> Result<T> {
        Ok(n.forward(input)?.iter().zip(upstream).map(|(&y, &u)| y * u).sum())
    };
    let two_eps = epsilon + epsilon;
    let mut worst = T::zero();
    let mut probe = net.clone();
    for (i, &a) in analytic.params.flatten().iter().enumerate() {
        probe.nudge_param(i, epsilon);
        let plus = objective(&probe, x)?;
        probe.nudge_param(i, -two_eps);
        let minus = objective(&probe, x)?;
        probe.nudge_param(i, epsilon);
        worst = worst.max(relative_gap(a, (plus - minus) / two_eps));
    }
    let mut xp = x.to_vec();
    for (i, &a) in analytic.input.iter().enumerate() {
        let orig = xp[i];
        xp[i] = orig + epsilon;
        let plus = objective(net, &xp)?;
        xp[i] = orig - epsilon;
        let minus = objective(net, &xp)?;
        xp[i] = orig;
        worst = worst.max(relative_gap(a, (plus - minus) / two_eps));
    }
    Ok(worst)
}

/// [`grad_check_with`] using an all-ones upstream vector.
pub fn grad_check<T: Scalar>(net: &Network<T>, x: &[T], epsilon: T) -> Result<T> {
    let out = net.output_dim().unwrap_or(x.len());
    grad_check_with(net, x, &vec![T::one(); out], epsilon)
}

pub(crate) fn relative_gap<T: Scalar>(a: T, b: T) -> T {
    (a - b).abs() / T::one().max(a.abs()).max(b.abs())
}
