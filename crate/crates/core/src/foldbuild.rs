//! Constructive ReLU networks for `||x||` and radial functions `f(||x||)`.
//!
//! # Folds
//!
//! A fold about the line through the origin with unit direction `l` keeps a
//! point `p` when `n . p >= 0`, where `n = (l_y, -l_x)`, and reflects it about
//! the line otherwise. Four ReLU units realise it exactly:
//!
//! ```text
//! x- = relu(-n.p)   x+ = relu(n.p)   y- = relu(-l.p)   y+ = relu(l.p)
//! p' = l (y+ - y-) + n (x- + x+)
//! ```
//!
//! The recombination `p'` is linear, so inside a stack it is folded into the
//! next layer's weights and only 4 ReLU units per fold are stored.
//!
//! # Norm stacks
//!
//! Fold `i` (1-based) uses the direction at angle `pi / 2^(i-1)`. After `f`
//! folds every point of the plane lies in the sector `[0, pi / 2^(f-1)]`; the
//! stack reads out the projection onto the sector bisector, which
//! under-estimates the norm by at most `||p|| (1 - cos(pi / 2^f))`. With
//! `f = ceil(log2(R pi / delta))` this is at most `delta` on the disc of radius
//! `R`.
//!
//! In `d` dimensions the coordinates are reduced pairwise over
//! `m = log2(d)` stages (padding `d` with zeros to a power of two). The stage
//! errors obey `e_{i+1} <= sqrt(2) e_i + delta_1`, so with per-stage
//! tolerance `delta_1 = delta / A(m)` and amplification
//! `A(m) = ((sqrt 2)^m - 1) / (sqrt 2 - 1)` the total error is at most `delta`.
//!
//! # Counting conventions
//!
//! Layers and neurons count ReLU layers and ReLU units. Weights are counted
//! in the unabsorbed circuit: every ReLU unit contributes two (a fold unit
//! reads a 2-D point; a 1-D approximator unit has one input and one output
//! coefficient). [`BoundReport::stored_weights`] reports the non-zero entries
//! actually stored after absorption.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernelapprox::RadialProfile;
use crate::netcore::{Activation, Layer, Network};
use crate::scalar::Scalar;

/// Unit direction of a fold line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldSpec<T> {
    lx: T,
    ly: T,
}

impl<T: Scalar> FoldSpec<T> {
    pub fn new(lx: T, ly: T) -> Result<Self> {
        let norm2 = lx * lx + ly * ly;
        if !norm2.is_finite() || (norm2 - T::one()).abs() > T::lit(1e-12) {
            return Err(Error::invalid(format!("fold direction ({lx}, {ly}) is not a unit vector")));
        }
        Ok(FoldSpec { lx, ly })
    }

    pub fn from_angle(theta: T) -> Self {
        FoldSpec { lx: theta.cos(), ly: theta.sin() }
    }

    pub fn lx(&self) -> T {
        self.lx
    }

    pub fn ly(&self) -> T {
        self.ly
    }

    /// Unit weights in the order `x-, x+, y-, y+`.
    pub fn unit_weights(&self) -> [[T; 2]; 4] {
        let (lx, ly) = (self.lx, self.ly);
        [[-ly, lx], [ly, -lx], [-lx, -ly], [lx, ly]]
    }

    /// Linear map from the four unit outputs back to the folded point.
    pub fn recombination(&self) -> [[T; 4]; 2] {
        let (lx, ly) = (self.lx, self.ly);
        [[ly, ly, -lx, lx], [-lx, -lx, -ly, ly]]
    }

    pub fn recombine(&self, units: &[T]) -> [T; 2] {
        let rec = self.recombination();
        let dot = |row: &[T; 4]| row.iter().zip(units).map(|(&a, &b)| a * b).sum::<T>();
        [dot(&rec[0]), dot(&rec[1])]
    }
}

/// One fold as a network: a ReLU layer of 4 units followed by the linear
/// recombination back to `R^2`.
pub fn make_fold_layer<T: Scalar>(spec: FoldSpec<T>) -> Result<Network<T>> {
    let spec = FoldSpec::new(spec.lx, spec.ly)?;
    let units = Layer::new(
        Activation::Relu,
        spec.unit_weights().iter().map(|r| r.to_vec()).collect(),
        vec![T::zero(); 4],
    )?;
    let rec = Layer::new(
        Activation::Linear,
        spec.recombination().iter().map(|r| r.to_vec()).collect(),
        vec![T::zero(); 2],
    )?;
    Network::chain(vec![units, rec])
}

/// Fold directions of a norm stack: angle `pi / 2^(i-1)` for fold `i`.
pub fn fold_schedule<T: Scalar>(folds: usize) -> Vec<FoldSpec<T>> {
    (1..=folds)
        .map(|i| FoldSpec::from_angle(T::PI() / T::lit(2f64.powi(i as i32 - 1))))
        .collect()
}

/// `((sqrt 2)^stages - 1) / (sqrt 2 - 1)`: total error of a `stages`-deep
/// pairwise reduction in units of the per-stage error.
pub fn amplification<T: Scalar>(stages: usize) -> T {
    let s2 = T::SQRT_2();
    (s2.powi(stages as i32) - T::one()) / (s2 - T::one())
}

/// Folds per stage needed for error `stage_delta` on the disc of radius `radius`.
pub fn folds_for<T: Scalar>(radius: T, stage_delta: T) -> usize {
    let f = (radius * T::PI() / stage_delta).log2().ceil();
    f.to_usize().unwrap_or(usize::MAX).max(1)
}

/// Weight sharing applied by the builders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Sharing {
    /// Every fold block stored explicitly (block-diagonal dense layers).
    #[default]
    None,
    /// Pairs within a stage share one fold stack (tiled layers).
    PerStage,
    /// `PerStage`, plus fold `i` of every stage in one share group.
    Full,
}

/// Layout of a pairwise norm reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct NormPlan<T> {
    pub dim: usize,
    pub padded_dim: usize,
    pub stages: usize,
    pub folds_per_stage: usize,
    pub radius: T,
    pub delta: T,
    pub stage_delta: T,
    pub amplification: T,
}

impl<T: Scalar> NormPlan<T> {
    pub fn new(dim: usize, radius: T, delta: T) -> Result<Self> {
        if dim < 2 {
            return Err(Error::invalid(format!("norm networks need d >= 2, got {dim}")));
        }
        if !(radius > T::zero()) || !radius.is_finite() {
            return Err(Error::invalid(format!("radius must be positive, got {radius}")));
        }
        if !(delta > T::zero()) || delta >= radius {
            return Err(Error::invalid(format!("need 0 < delta < R, got delta={delta}, R={radius}")));
        }
        let padded_dim = dim.next_power_of_two();
        let stages = padded_dim.trailing_zeros() as usize;
        let amp = amplification::<T>(stages);
        let stage_delta = delta / amp;
        Ok(NormPlan {
            dim,
            padded_dim,
            stages,
            folds_per_stage: folds_for(radius, stage_delta),
            radius,
            delta,
            stage_delta,
            amplification: amp,
        })
    }

    pub fn amplification_expr(&self) -> String {
        format!("A(m) = ((sqrt 2)^m - 1)/(sqrt 2 - 1), m = {}: A = {}", self.stages, self.amplification)
    }

    pub fn fold_units(&self) -> usize {
        4 * (self.padded_dim - 1) * self.folds_per_stage
    }
}

type Block<T> = (usize, usize, Vec<T>);

fn matmul<T: Scalar>(a: &[T], a_rows: usize, a_cols: usize, b: &[T], b_cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a_rows * b_cols];
    for i in 0..a_rows {
        for j in 0..b_cols {
            let mut acc = T::zero();
            for k in 0..a_cols {
                acc = acc + a[i * a_cols + k] * b[k * b_cols + j];
            }
            out[i * b_cols + j] = acc;
        }
    }
    out
}

/// Absorbed blocks of one fold stack.
struct FoldStack<T> {
    /// 4x2: first fold on a raw coordinate pair.
    first: Block<T>,
    /// 4x8: first fold on two readouts of the previous stage.
    merge: Block<T>,
    /// 4x4 blocks for folds 2..=f.
    inner: Vec<Block<T>>,
    /// 1x4: bisector readout of the last fold.
    readout: Vec<T>,
}

impl<T: Scalar> FoldStack<T> {
    fn new(folds: usize) -> Self {
        let specs = fold_schedule::<T>(folds);
        let flat_units = |s: &FoldSpec<T>| s.unit_weights().iter().flatten().copied().collect::<Vec<T>>();
        let flat_rec = |s: &FoldSpec<T>| s.recombination().iter().flatten().copied().collect::<Vec<T>>();

        let inner = specs
            .windows(2)
            .map(|w| (4, 4, matmul(&flat_units(&w[1]), 4, 2, &flat_rec(&w[0]), 4)))
            .collect();

        let last = &specs[folds - 1];
        let phi = T::PI() / T::lit(2f64.powi(folds as i32));
        let readout = matmul(&[phi.cos(), phi.sin()], 1, 2, &flat_rec(last), 4);

        // [[r, 0], [0, r]] maps two previous pair-stacks (8 units) to a point.
        let mut pair = vec![T::zero(); 16];
        pair[..4].copy_from_slice(&readout);
        pair[12..].copy_from_slice(&readout);
        let merge = (4, 8, matmul(&flat_units(&specs[0]), 4, 2, &pair, 8));

        FoldStack { first: (4, 2, flat_units(&specs[0])), merge, inner, readout }
    }
}

fn relu_block<T: Scalar>(block: &Block<T>, tiles: usize, sharing: Sharing) -> Result<Layer<T>> {
    let (rows, cols, w) = block;
    let layer = Layer::from_flat(Activation::Relu, *rows, *cols, w.clone(), vec![T::zero(); *rows])?.with_tiles(tiles)?;
    Ok(if sharing == Sharing::None { layer.expanded() } else { layer })
}

/// ReLU layers of the pairwise reduction; the caller appends the readout
/// (their final layer exposes 4 units of the last stack).
fn norm_layers<T: Scalar>(
    plan: &NormPlan<T>,
    sharing: Sharing,
) -> Result<(Vec<Layer<T>>, BTreeMap<String, Vec<usize>>, FoldStack<T>)> {
    let stack = FoldStack::new(plan.folds_per_stage);
    let mut layers = Vec::new();
    if plan.padded_dim != plan.dim {
        let mut w = vec![T::zero(); plan.padded_dim * plan.dim];
        for i in 0..plan.dim {
            w[i * plan.dim + i] = T::one();
        }
        layers.push(Layer::from_flat(Activation::Linear, plan.padded_dim, plan.dim, w, vec![T::zero(); plan.padded_dim])?);
    }
    let mut fold_index: Vec<Vec<usize>> = vec![Vec::new(); plan.folds_per_stage];
    for stage in 1..=plan.stages {
        let pairs = plan.padded_dim >> stage;
        for i in 0..plan.folds_per_stage {
            let block = match (stage, i) {
                (1, 0) => &stack.first,
                (_, 0) => &stack.merge,
                (_, i) => &stack.inner[i - 1],
            };
            if stage > 1 || i > 0 {
                fold_index[i].push(layers.len());
            }
            layers.push(relu_block(block, pairs, sharing)?);
        }
    }
    let mut shares = BTreeMap::new();
    if sharing == Sharing::Full {
        for (i, members) in fold_index.into_iter().enumerate() {
            if members.len() > 1 {
                let name = if i == 0 { "merge".to_string() } else { format!("fold{}", i + 1) };
                shares.insert(name, members);
            }
        }
    }
    Ok((layers, shares, stack))
}

/// `h(x) = offset + sum_k slopes[k] * relu(x - knots[k])`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinear<T> {
    pub offset: T,
    pub slopes: Vec<T>,
    pub knots: Vec<T>,
}

impl<T: Scalar> PiecewiseLinear<T> {
    pub fn eval(&self, x: T) -> T {
        self.slopes
            .iter()
            .zip(&self.knots)
            .fold(self.offset, |acc, (&a, &b)| acc + a * (x - b).max(T::zero()))
    }

    pub fn units(&self) -> usize {
        self.slopes.len()
    }

    /// Interpolant of `f` through the given knots, constant left of the first
    /// and right of the last knot. Slopes are clamped to `[-cap, cap]` when a
    /// cap is given; collinear knots are dropped.
    fn through(f: impl Fn(T) -> T, knots: &[T], cap: Option<T>) -> Self {
        let values: Vec<T> = knots.iter().map(|&t| f(t)).collect();
        let mut slopes = Vec::with_capacity(knots.len());
        let mut prev = T::zero();
        let mut scale = T::zero();
        for k in 0..knots.len() {
            let s = if k + 1 < knots.len() {
                let s = (values[k + 1] - values[k]) / (knots[k + 1] - knots[k]);
                cap.map_or(s, |c| s.max(-c).min(c))
            } else {
                T::zero()
            };
            scale = scale.max(s.abs());
            slopes.push(s - prev);
            prev = s;
        }
        let tiny = T::lit(1e-12) * scale;
        let (slopes, kept): (Vec<T>, Vec<T>) = slopes
            .into_iter()
            .zip(knots.iter().copied())
            .filter(|(a, _)| a.abs() > tiny)
            .unzip();
        PiecewiseLinear { offset: values[0], slopes, knots: kept }
    }

    fn constant(value: T) -> Self {
        PiecewiseLinear { offset: value, slopes: Vec::new(), knots: Vec::new() }
    }
}

/// Uniform-knot interpolant of an `lipschitz`-Lipschitz `f` on `[lo, hi]`
/// (constant outside) with sup error at most `delta`: knot spacing is at most
/// `2 delta / lipschitz`.
fn lipschitz_interpolant<T: Scalar>(f: impl Fn(T) -> T, lo: T, hi: T, lipschitz: T, delta: T) -> PiecewiseLinear<T> {
    let span = hi - lo;
    if span * lipschitz <= delta + delta {
        // |f(x) - (f(lo) + f(hi))/2| <= L (hi - lo) / 2
        return PiecewiseLinear::constant((f(lo) + f(hi)) / T::lit(2.0));
    }
    let segments = (span * lipschitz / (delta + delta)).ceil().to_usize().unwrap_or(usize::MAX);
    let knots: Vec<T> = (0..=segments)
        .map(|k| lo + span * T::from_usize_lossy(k) / T::from_usize_lossy(segments))
        .collect();
    PiecewiseLinear::through(f, &knots, Some(lipschitz))
}

fn require_compact<T: Scalar>(profile: &RadialProfile<T>) -> Result<()> {
    if !profile.is_compact() {
        return Err(Error::invalid(
            "profile has unbounded support; fit a Wendland profile first (fit_wendland_to_gaussian)",
        ));
    }
    let l = profile.lipschitz_l();
    if !l.is_finite() || l < T::zero() {
        return Err(Error::invalid(format!("invalid Lipschitz constant {l}")));
    }
    Ok(())
}

fn check_delta<T: Scalar>(delta: T) -> Result<()> {
    if !(delta > T::zero()) || !delta.is_finite() {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    Ok(())
}

/// One-hidden-layer approximation `a + sum alpha_i relu(r - beta_i)` of a
/// compact profile on `[0, R]` with sup error at most `delta`.
pub fn lipschitz_approximator<T: Scalar>(profile: &RadialProfile<T>, delta: T) -> Result<PiecewiseLinear<T>> {
    require_compact(profile)?;
    check_delta(delta)?;
    let h = lipschitz_interpolant(|r| profile.value(r), T::zero(), profile.support_r(), profile.lipschitz_l(), delta);
    if !h.offset.is_finite() || h.slopes.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("profile produced non-finite values"));
    }
    Ok(h)
}

/// Which construction produced a network, and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum BuildPlan<T> {
    Lipschitz1d { profile: RadialProfile<T>, delta: T, approx: PiecewiseLinear<T> },
    Norm { plan: NormPlan<T> },
    Radial { plan: NormPlan<T>, profile: RadialProfile<T>, delta: T, tail_units: usize },
    ThreeLayer { dim: usize, profile: RadialProfile<T>, delta: T, square_units: usize, outer_units: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Built<T: Scalar> {
    pub net: Network<T>,
    pub plan: BuildPlan<T>,
}

impl<T: Scalar> Built<T> {
    /// Input dimension the construction was built for.
    pub fn dim(&self) -> usize {
        match &self.plan {
            BuildPlan::Lipschitz1d { .. } => 1,
            BuildPlan::Norm { plan } | BuildPlan::Radial { plan, .. } => plan.dim,
            BuildPlan::ThreeLayer { dim, .. } => *dim,
        }
    }

    /// Radius of the ball on which accuracy is guaranteed.
    pub fn radius(&self) -> T {
        match &self.plan {
            BuildPlan::Norm { plan } => plan.radius,
            BuildPlan::Lipschitz1d { profile, .. }
            | BuildPlan::Radial { profile, .. }
            | BuildPlan::ThreeLayer { profile, .. } => profile.support_r(),
        }
    }

    /// Guaranteed sup error: `delta` for norm and 1-D builders,
    /// `L sqrt(delta) + delta` for radial builders.
    pub fn error_bound(&self) -> T {
        match &self.plan {
            BuildPlan::Lipschitz1d { delta, .. } => *delta,
            BuildPlan::Norm { plan } => plan.delta,
            BuildPlan::Radial { profile, delta, .. } | BuildPlan::ThreeLayer { profile, delta, .. } => {
                profile.lipschitz_l() * delta.sqrt() + *delta
            }
        }
    }

    /// Value the network approximates at `x`.
    pub fn target(&self, x: &[T]) -> T {
        match &self.plan {
            BuildPlan::Lipschitz1d { profile, .. } => profile.value(x[0]),
            BuildPlan::Norm { .. } => euclid(x),
            BuildPlan::Radial { profile, .. } | BuildPlan::ThreeLayer { profile, .. } => profile.value(euclid(x)),
        }
    }
}

pub(crate) fn euclid<T: Scalar>(x: &[T]) -> T {
    x.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// Network `R -> R` for a Lipschitz profile: one ReLU layer and an affine readout.
pub fn build_lipschitz1d<T: Scalar>(profile: &RadialProfile<T>, delta: T) -> Result<Built<T>> {
    let approx = lipschitz_approximator(profile, delta)?;
    let net = tail_network(&approx, &[T::one()], 1)?;
    Ok(Built { net, plan: BuildPlan::Lipschitz1d { profile: profile.clone(), delta, approx } })
}

/// ReLU layer with rows `input_row` and biases `-knots`, then the readout.
/// With no units the network is a single constant linear layer.
fn tail_layers<T: Scalar>(approx: &PiecewiseLinear<T>, input_row: &[T], in_dim: usize) -> Result<Vec<Layer<T>>> {
    if approx.units() == 0 {
        return Ok(vec![Layer::from_flat(Activation::Linear, 1, in_dim, vec![T::zero(); in_dim], vec![approx.offset])?]);
    }
    let w = approx.units();
    let mut weights = Vec::with_capacity(w * in_dim);
    for _ in 0..w {
        weights.extend_from_slice(input_row);
    }
    let hidden = Layer::from_flat(Activation::Relu, w, in_dim, weights, approx.knots.iter().map(|&b| -b).collect())?;
    let readout = Layer::from_flat(Activation::Linear, 1, w, approx.slopes.clone(), vec![approx.offset])?;
    Ok(vec![hidden, readout])
}

fn tail_network<T: Scalar>(approx: &PiecewiseLinear<T>, input_row: &[T], in_dim: usize) -> Result<Network<T>> {
    Network::chain(tail_layers(approx, input_row, in_dim)?)
}

/// Approximates `||x||` on the disc of radius `radius` to within `delta`.
pub fn build_norm2<T: Scalar>(radius: T, delta: T) -> Result<Built<T>> {
    build_normd(2, radius, delta, Sharing::None)
}

/// Approximates `||x||` on the ball of radius `radius` in `R^dim` to within `delta`.
pub fn build_normd<T: Scalar>(dim: usize, radius: T, delta: T, sharing: Sharing) -> Result<Built<T>> {
    let plan = NormPlan::new(dim, radius, delta)?;
    let (mut layers, shares, stack) = norm_layers(&plan, sharing)?;
    layers.push(Layer::from_flat(Activation::Linear, 1, 4, stack.readout.clone(), vec![T::zero()])?);
    let net = Network::new(layers, shares)?;
    Ok(Built { net, plan: BuildPlan::Norm { plan } })
}

/// Deep radial network: a norm reduction to accuracy `sqrt(delta)` followed
/// by a 1-D approximator of the profile to accuracy `delta`. On the ball of
/// radius `R = support_r` the error is at most `L sqrt(delta) + delta`.
pub fn build_radial_net<T: Scalar>(profile: &RadialProfile<T>, dim: usize, delta: T, sharing: Sharing) -> Result<Built<T>> {
    require_compact(profile)?;
    check_delta(delta)?;
    let plan = NormPlan::new(dim, profile.support_r(), delta.sqrt())?;
    let approx = lipschitz_approximator(profile, delta)?;
    let (mut layers, shares, stack) = norm_layers(&plan, sharing)?;
    layers.extend(tail_layers(&approx, &stack.readout, 4)?);
    let net = Network::new(layers, shares)?;
    Ok(Built {
        net,
        plan: BuildPlan::Radial { plan, profile: profile.clone(), delta, tail_units: approx.units() },
    })
}

/// Three-layer construction: per-coordinate approximations of
/// `min(x_i^2, R^2)` to `delta / d`, summed, then a piecewise-linear
/// approximation of `u -> f(sqrt(u))` with knots at `(k R / n)^2`. The error
/// on the ball is at most `delta + L sqrt(delta)`.
pub fn build_3layer_radial<T: Scalar>(profile: &RadialProfile<T>, dim: usize, delta: T, sharing: Sharing) -> Result<Built<T>> {
    require_compact(profile)?;
    check_delta(delta)?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let (r, l) = (profile.support_r(), profile.lipschitz_l());
    let d = T::from_usize_lossy(dim);
    let square = lipschitz_interpolant(|x: T| (x * x).min(r * r), -r, r, r + r, delta / d);

    // uniform knots in the radius with spacing <= delta / L, so the
    // interpolant of f(sqrt(u)) is within L * spacing = delta
    let outer = if r * l <= delta + delta {
        PiecewiseLinear::constant((profile.value(T::zero()) + profile.value(r)) / T::lit(2.0))
    } else {
        let n = (r * l / delta).ceil().to_usize().unwrap_or(usize::MAX);
        let knots: Vec<T> = (0..=n)
            .map(|k| {
                let t = r * T::from_usize_lossy(k) / T::from_usize_lossy(n);
                t * t
            })
            .collect();
        PiecewiseLinear::through(|u: T| profile.value(u.max(T::zero()).sqrt()), &knots, None)
    };

    let (w1, w3) = (square.units(), outer.units());
    let plan = BuildPlan::ThreeLayer { dim, profile: profile.clone(), delta, square_units: w1, outer_units: w3 };
    let constant = |value: T| -> Result<Built<T>> {
        let layer = Layer::from_flat(Activation::Linear, 1, dim, vec![T::zero(); dim], vec![value])?;
        Ok(Built { net: Network::chain(vec![layer])?, plan: plan.clone() })
    };
    if w3 == 0 {
        return constant(outer.offset);
    }
    if w1 == 0 {
        return constant(outer.eval(d * square.offset));
    }

    let neg_knots = |p: &PiecewiseLinear<T>| p.knots.iter().map(|&b| -b).collect::<Vec<T>>();
    let outer_readout = Layer::from_flat(Activation::Linear, 1, w3, outer.slopes.clone(), vec![outer.offset])?;
    let square_block = Layer::from_flat(Activation::Relu, w1, 1, vec![T::one(); w1], neg_knots(&square))?;
    let layers = if sharing == Sharing::None {
        let squares = square_block.with_tiles(dim)?.expanded();
        let mut row = Vec::with_capacity(dim * w1);
        for _ in 0..dim {
            row.extend_from_slice(&square.slopes);
        }
        let mut weights = Vec::with_capacity(w3 * dim * w1);
        for _ in 0..w3 {
            weights.extend_from_slice(&row);
        }
        let biases = outer.knots.iter().map(|&b| d * square.offset - b).collect();
        let outer_units = Layer::from_flat(Activation::Relu, w3, dim * w1, weights, biases)?;
        vec![squares, outer_units, outer_readout]
    } else {
        let sum_block = Layer::from_flat(Activation::Linear, 1, w1, square.slopes.clone(), vec![square.offset])?;
        let outer_units = Layer::from_flat(Activation::Relu, w3, dim, vec![T::one(); w3 * dim], neg_knots(&outer))?;
        vec![square_block.with_tiles(dim)?, sum_block.with_tiles(dim)?, outer_units, outer_readout]
    };
    Ok(Built { net: Network::chain(layers)?, plan })
}

/// Network size and measured accuracy against the closed-form bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub dim: usize,
    pub radius: f64,
    pub delta: f64,
    pub layers_built: usize,
    pub layers_bound: usize,
    pub neurons_built: usize,
    pub neurons_bound: usize,
    pub weights_built: usize,
    pub weights_bound: usize,
    /// Non-zero weights stored after absorbing the recombination units.
    pub stored_weights: usize,
    /// Distinct trainable parameters (ties counted once).
    pub distinct_params: usize,
    pub measured_sup_error: f64,
    /// Guaranteed error of the construction.
    pub delta_target: f64,
    /// Error amplification of the pairwise reduction, with its closed form.
    pub amplification: Option<(f64, String)>,
}

impl BoundReport {
    pub fn csv_header() -> &'static str {
        "d,R,delta,layers_built,layers_bound,neurons_built,neurons_bound,weights_built,weights_bound,sup_error"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.dim,
            self.radius,
            self.delta,
            self.layers_built,
            self.layers_bound,
            self.neurons_built,
            self.neurons_bound,
            self.weights_built,
            self.weights_bound,
            self.measured_sup_error
        )
    }

    pub fn within_bounds(&self) -> bool {
        self.layers_built <= self.layers_bound
            && self.neurons_built <= self.neurons_bound
            && self.weights_built <= self.weights_bound
            && self.measured_sup_error <= self.delta_target
    }
}

fn floor_count(x: f64) -> usize {
    if x.is_finite() && x > 0.0 {
        x.floor() as usize
    } else {
        0
    }
}

/// Neuron bound of the deep radial construction:
/// `4 (d-1) ceil(log2(R pi A / sqrt(delta))) + 3 R L / delta` with `d` padded
/// to a power of two.
pub fn deep_neuron_bound(dim: usize, radius: f64, lipschitz: f64, delta: f64) -> f64 {
    let plan = NormPlan::new(dim, radius, delta.sqrt()).expect("valid deep-network parameters");
    4.0 * (plan.padded_dim - 1) as f64 * plan.folds_per_stage as f64 + 3.0 * radius * lipschitz / delta
}

/// Weight bound of the deep radial construction (`8 (d-1)` per fold layer).
pub fn deep_weight_bound(dim: usize, radius: f64, lipschitz: f64, delta: f64) -> f64 {
    let plan = NormPlan::new(dim, radius, delta.sqrt()).expect("valid deep-network parameters");
    8.0 * (plan.padded_dim - 1) as f64 * plan.folds_per_stage as f64 + 3.0 * radius * lipschitz / delta
}

/// Width bound of the three-layer construction, `(6 d^2 R^2 + 3 R L) / delta`.
pub fn three_layer_width_bound(dim: usize, radius: f64, lipschitz: f64, delta: f64) -> f64 {
    let d = dim as f64;
    (6.0 * d * d * radius * radius + 3.0 * radius * lipschitz) / delta
}

/// Weight bound of the weight-shared three-layer network, `(6 d R^2 + 3 R L) / delta`.
pub fn three_layer_shared_weight_bound(dim: usize, radius: f64, lipschitz: f64, delta: f64) -> f64 {
    (6.0 * dim as f64 * radius * radius + 3.0 * radius * lipschitz) / delta
}

/// Uniform samples in the ball of radius `radius`, then `boundary` points on
/// its sphere, then the axis points `+-radius e_i` and the origin.
pub fn ball_samples<T: Scalar>(dim: usize, radius: T, interior: usize, boundary: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(interior + boundary + 2 * dim + 1);
    let direction = |rng: &mut ChaCha8Rng| loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|a| a / n).collect::<Vec<f64>>();
        }
    };
    let r = radius.as_f64();
    for _ in 0..interior {
        let u = direction(&mut rng);
        let rho = r * rng.random::<f64>().powf(1.0 / dim as f64);
        out.push(u.into_iter().map(|a| T::lit(a * rho)).collect());
    }
    for _ in 0..boundary {
        let u = direction(&mut rng);
        out.push(u.into_iter().map(|a| T::lit(a * r)).collect());
    }
    for i in 0..dim {
        for s in [radius, -radius] {
            let mut v = vec![T::zero(); dim];
            v[i] = s;
            out.push(v);
        }
    }
    out.push(vec![T::zero(); dim]);
    out
}

/// Largest `|net(x) - target(x)|` over `points`.
pub fn sup_error<T: Scalar>(built: &Built<T>, points: &[Vec<T>]) -> Result<T> {
    let mut worst = T::zero();
    for x in points {
        let y = built.net.forward(x)?[0];
        worst = worst.max((y - built.target(x)).abs());
    }
    Ok(worst)
}

/// Sup error on a dense grid over `[-0.1 R, 1.2 R]` (plus the knots) for 1-D
/// builders, otherwise over `samples` ball points and a tenth as many sphere
/// points.
pub fn measure_sup_error<T: Scalar>(built: &Built<T>, samples: usize, seed: u64) -> Result<T> {
    let points: Vec<Vec<T>> = match &built.plan {
        BuildPlan::Lipschitz1d { approx, .. } => {
            let r = built.radius();
            let (lo, hi) = (-T::lit(0.1) * r, T::lit(1.2) * r);
            let n = samples.max(2);
            (0..=n)
                .map(|i| vec![lo + (hi - lo) * T::from_usize_lossy(i) / T::from_usize_lossy(n)])
                .chain(approx.knots.iter().map(|&k| vec![k]))
                .collect()
        }
        _ => ball_samples(built.dim(), built.radius(), samples, (samples / 10).max(1), seed),
    };
    sup_error(built, &points)
}

fn stored_weights<T: Scalar>(net: &Network<T>) -> usize {
    net.layers()
        .iter()
        .map(|l| l.tiles() * l.weights().iter().filter(|w| **w != T::zero()).count())
        .sum()
}

/// Counts the built network, evaluates the closed-form bounds for its
/// construction, and measures the sup error by sampling (at least `samples`
/// ball points plus boundary and axis points).
pub fn audit_bounds<T: Scalar>(built: &Built<T>, samples: usize, seed: u64) -> Result<BoundReport> {
    let net = &built.net;
    let neurons_built = net.relu_units();
    let (layers_bound, neurons_bound, weights_bound, delta, amplification) = match &built.plan {
        BuildPlan::Lipschitz1d { profile, delta, .. } => {
            let w = floor_count(3.0 * profile.support_r().as_f64() * profile.lipschitz_l().as_f64() / delta.as_f64());
            (1, w, w, delta.as_f64(), None)
        }
        BuildPlan::Norm { plan } => {
            let f = folds_for(plan.radius * plan.amplification, plan.delta);
            let pairs = plan.padded_dim - 1;
            (plan.stages * f, 4 * pairs * f, 8 * pairs * f, plan.delta.as_f64(), Some(plan))
        }
        BuildPlan::Radial { plan, profile, delta, .. } => {
            let (r, l, dl) = (plan.radius.as_f64(), profile.lipschitz_l().as_f64(), delta.as_f64());
            let f = folds_for(plan.radius * plan.amplification, plan.delta);
            (
                plan.stages * f + 1,
                floor_count(deep_neuron_bound(plan.dim, r, l, dl)),
                floor_count(deep_weight_bound(plan.dim, r, l, dl)),
                dl,
                Some(plan),
            )
        }
        BuildPlan::ThreeLayer { dim, profile, delta, .. } => {
            let w = floor_count(three_layer_width_bound(
                *dim,
                profile.support_r().as_f64(),
                profile.lipschitz_l().as_f64(),
                delta.as_f64(),
            ));
            (2, w, w, delta.as_f64(), None)
        }
    };
    Ok(BoundReport {
        dim: built.dim(),
        radius: built.radius().as_f64(),
        delta,
        layers_built: net.relu_layers(),
        layers_bound,
        neurons_built,
        neurons_bound,
        weights_built: 2 * neurons_built,
        weights_bound,
        stored_weights: stored_weights(net),
        distinct_params: net.param_count(),
        measured_sup_error: measure_sup_error(built, samples, seed)?.as_f64(),
        delta_target: built.error_bound().as_f64(),
        amplification: amplification.map(|p| (p.amplification.as_f64(), p.amplification_expr())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernelapprox::{tabulated_profile, wendland_q31};
    use crate::netcore::Trace;

    /// Closed-form fold: identity when `l . x_perp > 0`, reflection otherwise.
    fn fold_oracle(lx: f64, ly: f64, x: [f64; 2]) -> [f64; 2] {
        let perp = [-x[1], x[0]];
        if lx * perp[0] + ly * perp[1] > 0.0 {
            x
        } else {
            let m = [[lx * lx - ly * ly, 2.0 * lx * ly], [2.0 * lx * ly, ly * ly - lx * lx]];
            [m[0][0] * x[0] + m[0][1] * x[1], m[1][0] * x[0] + m[1][1] * x[1]]
        }
    }

    #[test]
    fn fold_examples() {
        let down = make_fold_layer(FoldSpec::new(-1.0, 0.0).unwrap()).unwrap();
        assert_eq!(down.forward(&[3.0, -4.0]).unwrap(), vec![3.0, 4.0]);
        assert_eq!(down.forward(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let up = make_fold_layer(FoldSpec::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(up.forward(&[-2.0, 5.0]).unwrap(), vec![2.0, 5.0]);
        assert_eq!(fold_oracle(0.0, 1.0, [-2.0, 5.0]), [2.0, 5.0]);
    }

    #[test]
    fn fold_rejects_non_unit_direction() {
        assert!(FoldSpec::new(1.0, 1.0).is_err());
        assert!(FoldSpec::new(0.6, 0.8).is_ok());
    }

    #[test]
    fn exactly_one_unit_per_pair_is_active() {
        let spec = FoldSpec::from_angle(0.7_f64);
        let net = make_fold_layer(spec).unwrap();
        let mut trace = Trace::new();
        for x in [[1.0, 2.0], [-3.0, 0.5], [0.2, -1.0], [-1.0, -1.0]] {
            net.forward_trace(&x, &mut trace).unwrap();
            let u = trace.layer_output(0);
            assert!((u[0] > 0.0) ^ (u[1] > 0.0));
            assert!((u[2] > 0.0) ^ (u[3] > 0.0));
            let out = trace.output();
            let want = fold_oracle(spec.lx(), spec.ly(), x);
            assert!((out[0] - want[0]).abs() < 1e-12 && (out[1] - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn norm2_layer_count() {
        let b = build_norm2(1.0_f64, 0.01).unwrap();
        assert_eq!(b.net.relu_layers(), 9);
        assert_eq!((100.0 * std::f64::consts::PI).log2().ceil(), 9.0);
        assert_eq!(b.net.forward(&[0.0, 0.0]).unwrap(), vec![0.0]);
        let b5 = build_norm2(5.0_f64, 0.05).unwrap();
        assert!((b5.net.forward(&[3.0, 4.0]).unwrap()[0] - 5.0).abs() <= 0.05);
        assert!(build_norm2(1.0_f64, 1.0).is_err());
        assert!(build_norm2(1.0_f64, 0.0).is_err());
    }

    #[test]
    fn norm2_accuracy_near_delta_equal_radius() {
        // bisector readout keeps the bound even for delta close to R
        for delta in [0.6, 0.8, 0.95] {
            let b = build_norm2(1.0_f64, delta).unwrap();
            let err = measure_sup_error(&b, 5000, 3).unwrap();
            assert!(err <= delta, "delta={delta}: {err}");
        }
    }

    #[test]
    fn contraction_into_sector() {
        let f = 8;
        let specs = fold_schedule::<f64>(f);
        let b = build_norm2(1.0_f64, 1.0 / 2f64.powi(f as i32) * std::f64::consts::PI * 1.01).unwrap();
        assert_eq!(b.net.relu_layers(), f);
        let mut trace = Trace::new();
        for x in ball_samples(2, 1.0_f64, 2000, 200, 11) {
            if x.iter().all(|v| *v == 0.0) {
                continue;
            }
            b.net.forward_trace(&x, &mut trace).unwrap();
            for (i, spec) in specs.iter().enumerate() {
                let p = spec.recombine(trace.layer_output(i));
                let angle = p[1].atan2(p[0]);
                let width = std::f64::consts::PI / 2f64.powi(i as i32);
                assert!(angle >= -1e-12 && angle <= width + 1e-12, "fold {}: angle {angle}", i + 1);
                assert!((euclid(&p) - euclid(&x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normd_d2_reduces_to_norm2() {
        let a = build_norm2(1.0_f64, 0.05).unwrap();
        let b = build_normd(2, 1.0_f64, 0.05, Sharing::None).unwrap();
        assert_eq!(a.net, b.net);
        let c = build_normd(2, 1.0_f64, 0.05, Sharing::PerStage).unwrap();
        assert_eq!(c.net.layers(), b.net.layers());
    }

    #[test]
    fn normd_stage_delta_from_recurrence() {
        let plan = NormPlan::new(4, 1.0_f64, 0.05).unwrap();
        assert_eq!(plan.stages, 2);
        assert!((plan.amplification - (1.0 + 2f64.sqrt())).abs() < 1e-15);
        assert!((plan.stage_delta - 0.05 / (1.0 + 2f64.sqrt())).abs() < 1e-15);
        assert!((plan.stage_delta - 0.0207).abs() < 1e-4);
        // e_1 = d1, e_{i+1} = sqrt(2) e_i + d1
        for m in 1..6 {
            let mut e = 1.0;
            for _ in 1..m {
                e = 2f64.sqrt() * e + 1.0;
            }
            assert!((amplification::<f64>(m) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn normd_accuracy_and_counts() {
        for d in [3usize, 4, 5, 8] {
            let b = build_normd(d, 1.0_f64, 0.05, Sharing::None).unwrap();
            let report = audit_bounds(&b, 4000, 5).unwrap();
            assert!(report.measured_sup_error <= 0.05, "d={d}: {report:?}");
            assert!(report.within_bounds(), "d={d}: {report:?}");
            let BuildPlan::Norm { plan } = &b.plan else { unreachable!() };
            assert_eq!(report.neurons_built, 4 * (plan.padded_dim - 1) * plan.folds_per_stage);
        }
        let e1: Vec<f64> = (0..8).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let b = build_normd(8, 1.0_f64, 0.05, Sharing::None).unwrap();
        assert!((b.net.forward(&e1).unwrap()[0] - 1.0).abs() <= 0.05);
        assert!(build_normd(1, 1.0_f64, 0.05, Sharing::None).is_err());
    }

    #[test]
    fn sharing_variants_agree() {
        for d in [4usize, 8] {
            let plain = build_normd(d, 2.0_f64, 0.05, Sharing::None).unwrap();
            let tiled = build_normd(d, 2.0_f64, 0.05, Sharing::PerStage).unwrap();
            let full = build_normd(d, 2.0_f64, 0.05, Sharing::Full).unwrap();
            for x in ball_samples(d, 2.0_f64, 50, 5, 1) {
                let y = plain.net.forward(&x).unwrap()[0];
                assert!((tiled.net.forward(&x).unwrap()[0] - y).abs() < 1e-12);
                assert!((full.net.forward(&x).unwrap()[0] - y).abs() < 1e-12);
            }
            let BuildPlan::Norm { plan } = &tiled.plan else { unreachable!() };
            let f = plan.folds_per_stage;
            // one fold stack per stage: (4x2 or 4x8) + (f-1) 4x4 blocks, plus the readout
            let first = 4 * 2 + 4;
            let merge = 4 * 8 + 4;
            let inner = (f - 1) * (16 + 4);
            let per_stage = first + inner + (plan.stages - 1) * (merge + inner);
            assert_eq!(tiled.net.param_count(), per_stage + 5);
            assert!(full.net.param_count() < tiled.net.param_count());
            assert!(tiled.net.param_count() < plain.net.param_count());
        }
    }

    #[test]
    fn lipschitz1d_examples() {
        let ramp = tabulated_profile(vec![0.0_f64, 1.0], vec![1.0, 0.0]).unwrap();
        let h = lipschitz_approximator(&ramp, 0.01).unwrap();
        assert_eq!(h.offset, 1.0);
        assert_eq!(h.knots, vec![0.0, 1.0]);
        assert!((h.slopes[0] + 1.0).abs() < 1e-12 && (h.slopes[1] - 1.0).abs() < 1e-12);
        let b = build_lipschitz1d(&ramp, 0.01).unwrap();
        assert!(measure_sup_error(&b, 10_000, 0).unwrap() < 1e-12);

        let flat = tabulated_profile(vec![0.0_f64, 2.0], vec![0.7, 0.7]).unwrap();
        let b = build_lipschitz1d(&flat, 0.01).unwrap();
        let BuildPlan::Lipschitz1d { approx, .. } = &b.plan else { unreachable!() };
        assert_eq!(approx.units(), 0);
        assert_eq!(b.net.forward(&[1.3]).unwrap(), vec![0.7]);
    }

    #[test]
    fn lipschitz1d_rejects_gaussian() {
        let g = crate::kernelapprox::gaussian_profile(1.0_f64).unwrap();
        let err = build_lipschitz1d(&g, 0.01).unwrap_err().to_string();
        assert!(err.contains("fit a Wendland"), "{err}");
        assert!(build_radial_net(&g, 2, 0.01, Sharing::None).is_err());
    }

    #[test]
    fn radial_zero_profile_is_zero() {
        let zero = tabulated_profile(vec![0.0_f64, 1.0], vec![0.0, 0.0]).unwrap();
        let b = build_radial_net(&zero, 3, 0.01, Sharing::None).unwrap();
        for x in ball_samples(3, 1.0_f64, 20, 2, 0) {
            assert_eq!(b.net.forward(&x).unwrap(), vec![0.0]);
        }
        let t = build_3layer_radial(&zero, 1, 0.01, Sharing::None).unwrap();
        assert_eq!(t.net.forward(&[0.4]).unwrap(), vec![0.0]);
        assert_eq!(t.net.relu_units(), 0);
    }

    #[test]
    fn three_layer_variants_agree_and_meet_bound() {
        let w = wendland_q31(1.0_f64).unwrap();
        for d in [2usize, 3] {
            let plain = build_3layer_radial(&w, d, 0.1, Sharing::None).unwrap();
            let tied = build_3layer_radial(&w, d, 0.1, Sharing::PerStage).unwrap();
            assert_eq!(plain.net.relu_layers(), 2);
            assert_eq!(tied.net.relu_layers(), 2);
            for x in ball_samples(d, 1.0_f64, 200, 20, 9) {
                let a = plain.net.forward(&x).unwrap()[0];
                let b = tied.net.forward(&x).unwrap()[0];
                assert!((a - b).abs() < 1e-10);
            }
            let report = audit_bounds(&plain, 3000, 2).unwrap();
            assert!(report.within_bounds(), "{report:?}");
            let BuildPlan::ThreeLayer { square_units, outer_units, .. } = tied.plan else { unreachable!() };
            // one square block shared by all coordinates
            assert_eq!(
                tied.net.param_count(),
                2 * square_units + (square_units + 1) + (outer_units * d + outer_units) + (outer_units + 1)
            );
        }
    }

    #[test]
    fn deep_beats_three_layer_at_scale() {
        let w = wendland_q31(4.0_f64).unwrap();
        let l = w.lipschitz_l();
        let deep = deep_weight_bound(8, 4.0, l, 0.01);
        let shallow = three_layer_width_bound(8, 4.0, l, 0.01);
        assert!(deep < shallow, "{deep} vs {shallow}");
        let built = build_radial_net(&w, 8, 0.01, Sharing::None).unwrap();
        assert!(((2 * built.net.relu_units()) as f64) < shallow);
    }

    #[test]
    fn csv_row_layout() {
        let b = build_norm2(1.0_f64, 0.01).unwrap();
        let r = audit_bounds(&b, 1000, 0).unwrap();
        assert_eq!(BoundReport::csv_header().split(',').count(), r.csv_row().split(',').count());
        assert!(r.csv_row().starts_with("2,1,0.01,9,9,36,36,72,72,"));
    }
}
