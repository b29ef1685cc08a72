//! Radial profiles `r -> f(r)`: the Gaussian kernel, its compactly supported
//! Wendland `Q_{3,1}` surrogate, and tabulated piecewise-linear profiles.
//!
//! Fold-network builders only accept compact profiles (constant for
//! `r >= support_r`). A Gaussian must first be replaced by a fitted Wendland
//! profile, see [`fit_wendland_to_gaussian`].

use serde::{Deserialize, Serialize};

use crate::error::{json_from_str, Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub enum ProfileKind<T> {
    Gaussian { gamma: T },
    WendlandQ31 { support: T },
    /// Linear interpolation through `(knots[i], values[i])`, constant past the
    /// last knot. `knots[0]` is zero.
    Tabulated { knots: Vec<T>, values: Vec<T> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "ProfileDoc<T>", into = "ProfileDoc<T>")]
pub struct RadialProfile<T> {
    kind: ProfileKind<T>,
    support_r: T,
    lipschitz_l: T,
}

impl<T: Scalar> RadialProfile<T> {
    pub fn kind(&self) -> &ProfileKind<T> {
        &self.kind
    }

    /// Radius past which the profile is constant; infinite for the Gaussian.
    pub fn support_r(&self) -> T {
        self.support_r
    }

    pub fn lipschitz_l(&self) -> T {
        self.lipschitz_l
    }

    pub fn is_compact(&self) -> bool {
        self.support_r.is_finite()
    }

    pub fn value(&self, r: T) -> T {
        let r = r.max(T::zero());
        match &self.kind {
            ProfileKind::Gaussian { gamma } => (-*gamma * r * r).exp(),
            ProfileKind::WendlandQ31 { support } => {
                if r >= *support {
                    T::zero()
                } else {
                    let s = r / *support;
                    let t = T::one() - s;
                    let t2 = t * t;
                    t2 * t2 * (T::lit(4.0) * s + T::one())
                }
            }
            ProfileKind::Tabulated { knots, values } => {
                let last = knots.len() - 1;
                if r >= knots[last] {
                    return values[last];
                }
                let k = knots.partition_point(|&t| t <= r) - 1;
                let w = (r - knots[k]) / (knots[k + 1] - knots[k]);
                values[k] + w * (values[k + 1] - values[k])
            }
        }
    }

    /// Derivative for the analytic kinds; `None` for tabulated profiles.
    pub fn derivative(&self, r: T) -> Option<T> {
        let r = r.max(T::zero());
        match &self.kind {
            ProfileKind::Gaussian { gamma } => Some(-T::lit(2.0) * *gamma * r * (-*gamma * r * r).exp()),
            ProfileKind::WendlandQ31 { support } => {
                if r >= *support {
                    Some(T::zero())
                } else {
                    let s = r / *support;
                    let t = T::one() - s;
                    Some(-T::lit(20.0) * s * t * t * t / *support)
                }
            }
            ProfileKind::Tabulated { .. } => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        json_from_str(text)
    }
}

pub fn gaussian_profile<T: Scalar>(gamma: T) -> Result<RadialProfile<T>> {
    if !(gamma > T::zero()) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    // max_r |2 gamma r exp(-gamma r^2)| is reached at r = 1/sqrt(2 gamma)
    let lipschitz_l = (T::lit(2.0) * gamma).sqrt() * T::lit(-0.5).exp();
    Ok(RadialProfile { kind: ProfileKind::Gaussian { gamma }, support_r: T::infinity(), lipschitz_l })
}

pub fn wendland_q31<T: Scalar>(support_r: T) -> Result<RadialProfile<T>> {
    if !(support_r > T::zero()) || !support_r.is_finite() {
        return Err(Error::invalid(format!("support radius must be positive, got {support_r}")));
    }
    let mut profile = RadialProfile {
        kind: ProfileKind::WendlandQ31 { support: support_r },
        support_r,
        lipschitz_l: T::zero(),
    };
    let slope = |r: T| profile.derivative(r).expect("analytic").abs();
    let (_, l) = golden_max(slope, T::zero(), support_r, T::lit(1e-13));
    profile.lipschitz_l = l;
    Ok(profile)
}

/// Piecewise-linear profile through `(knots, values)`; `knots` must start at
/// zero and increase strictly.
pub fn tabulated_profile<T: Scalar>(knots: Vec<T>, values: Vec<T>) -> Result<RadialProfile<T>> {
    if knots.len() < 2 || knots.len() != values.len() {
        return Err(Error::invalid("tabulated profile needs at least two (knot, value) pairs"));
    }
    if knots[0] != T::zero() {
        return Err(Error::invalid("first knot must be zero"));
    }
    if knots.iter().chain(&values).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite profile value"));
    }
    if knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("knots must increase strictly"));
    }
    let lipschitz_l = knots
        .windows(2)
        .zip(values.windows(2))
        .map(|(k, v)| ((v[1] - v[0]) / (k[1] - k[0])).abs())
        .fold(T::zero(), T::max);
    let support_r = knots[knots.len() - 1];
    Ok(RadialProfile { kind: ProfileKind::Tabulated { knots, values }, support_r, lipschitz_l })
}

/// Golden-section search for the maximum of a unimodal function on `[lo, hi]`.
fn golden_max<T: Scalar>(f: impl Fn(T) -> T, mut lo: T, mut hi: T, tol: T) -> (T, T) {
    let inv_phi = T::lit(0.618_033_988_749_894_8);
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol * (T::one() + lo.abs() + hi.abs()) {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        }
    }
    let x = (lo + hi) / T::lit(2.0);
    (x, f(x).max(fa).max(fb))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WendlandFit<T> {
    pub support_r: T,
    /// `sup_{r >= 0} |wendland(r) - exp(-gamma r^2)|` at the fitted radius.
    pub sup_error: T,
}

/// Sup-norm distance between the Wendland profile of radius `support` and the
/// Gaussian `exp(-gamma r^2)`, sampled on a dense grid of `[0, support]`
/// (past the support the gap is the Gaussian tail, maximal at `support`).
pub fn wendland_gaussian_gap<T: Scalar>(gamma: T, support: T) -> T {
    const GRID: usize = 4000;
    let w = match wendland_q31(support) {
        Ok(w) => w,
        Err(_) => return T::infinity(),
    };
    let mut worst = (-gamma * support * support).exp();
    for i in 0..=GRID {
        let r = support * T::from_usize_lossy(i) / T::from_usize_lossy(GRID);
        worst = worst.max((w.value(r) - (-gamma * r * r).exp()).abs());
    }
    worst
}

/// Support radius minimising the sup-norm gap to the Gaussian, by grid search
/// over `[0.5/sqrt(gamma), 6/sqrt(gamma)]` followed by bracket refinement to
/// `1e-3` relative.
pub fn fit_wendland_to_gaussian<T: Scalar>(gamma: T) -> Result<WendlandFit<T>> {
    if !(gamma > T::zero()) || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    let scale = T::one() / gamma.sqrt();
    let (lo, hi) = (T::lit(0.5) * scale, T::lit(6.0) * scale);
    let coarse = 110;
    let mut step = (hi - lo) / T::from_usize_lossy(coarse);
    let mut best = lo;
    let mut best_gap = T::infinity();
    for i in 0..=coarse {
        let r = lo + step * T::from_usize_lossy(i);
        let gap = wendland_gaussian_gap(gamma, r);
        if gap < best_gap {
            best = r;
            best_gap = gap;
        }
    }
    while step > T::lit(1e-4) * best {
        let centre = best;
        let fine = step / T::lit(10.0);
        for j in -10i32..=10 {
            let r = centre + fine * T::lit(f64::from(j));
            if r < lo || r > hi {
                continue;
            }
            let gap = wendland_gaussian_gap(gamma, r);
            if gap < best_gap {
                best = r;
                best_gap = gap;
            }
        }
        step = fine;
    }
    Ok(WendlandFit { support_r: best, sup_error: best_gap })
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar", deny_unknown_fields)]
struct ProfileDoc<T> {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<T>,
    #[serde(rename = "support_R")]
    support_r: Option<T>,
    #[serde(rename = "lipschitz_L")]
    lipschitz_l: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    knots: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<T>>,
}

impl<T: Scalar> From<RadialProfile<T>> for ProfileDoc<T> {
    fn from(p: RadialProfile<T>) -> Self {
        let support_r = p.support_r.is_finite().then_some(p.support_r);
        match p.kind {
            ProfileKind::Gaussian { gamma } => ProfileDoc {
                kind: "gaussian".into(),
                gamma: Some(gamma),
                support_r,
                lipschitz_l: p.lipschitz_l,
                knots: None,
                values: None,
            },
            ProfileKind::WendlandQ31 { .. } => ProfileDoc {
                kind: "wendland_q31".into(),
                gamma: None,
                support_r,
                lipschitz_l: p.lipschitz_l,
                knots: None,
                values: None,
            },
            ProfileKind::Tabulated { knots, values } => ProfileDoc {
                kind: "tabulated".into(),
                gamma: None,
                support_r,
                lipschitz_l: p.lipschitz_l,
                knots: Some(knots),
                values: Some(values),
            },
        }
    }
}

impl<T: Scalar> TryFrom<ProfileDoc<T>> for RadialProfile<T> {
    type Error = Error;

    fn try_from(doc: ProfileDoc<T>) -> Result<Self> {
        let missing = |f: &str| Error::Schema { path: f.into(), msg: format!("required for kind `{}`", doc.kind) };
        let profile = match doc.kind.as_str() {
            "gaussian" => gaussian_profile(doc.gamma.ok_or_else(|| missing("gamma"))?)?,
            "wendland_q31" => wendland_q31(doc.support_r.ok_or_else(|| missing("support_R"))?)?,
            "tabulated" => tabulated_profile(
                doc.knots.clone().ok_or_else(|| missing("knots"))?,
                doc.values.clone().ok_or_else(|| missing("values"))?,
            )?,
            other => {
                return Err(Error::Schema { path: "kind".into(), msg: format!("unknown profile kind `{other}`") })
            }
        };
        Ok(profile)
    }
}
