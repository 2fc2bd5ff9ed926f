//! Analytic velocity and damping fields, their mollifications and growth splits.
//!
//! Every field carries its closed-form divergence; nothing here is sampled from
//! data. Points are plain `&[f64]` slices of length `dim`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{csum, gauss_legendre};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("damping is singular at {point:?}")]
    SingularPoint { point: Vec<f64> },
    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },
    #[error("mollifier kernel integrates to {integral} (expected 1)")]
    BadKernel { integral: f64 },
    #[error("growth split violated at t={t}, x={point:?}: |b|/(1+|x|)={ratio} > b1+b2={bound}")]
    SplitViolation {
        t: f64,
        point: Vec<f64>,
        ratio: f64,
        bound: f64,
    },
    #[error("field `{0}` does not declare a growth split")]
    NoSplit(String),
    #[error("mollification is implemented for d = 1, 2 (got d = {0})")]
    UnsupportedDimension(usize),
    #[error("mollifier scale must be positive (got {0})")]
    BadEps(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    Smooth,
    Lipschitz,
    BvNonsmooth,
}

/// A velocity field with closed-form divergence.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]);
    fn divergence(&self, t: f64, x: &[f64]) -> f64;
    /// `‖∇·b(t,·)‖_∞`, possibly `+∞`.
    fn div_sup(&self, t: f64) -> f64;
    /// Time-independent fields allow a cheaper mollification.
    fn autonomous(&self) -> bool {
        false
    }
    fn growth_split(&self) -> Option<GrowthSplit> {
        None
    }
}

/// Closed-form fields shipped with the scenario registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticField {
    Zero { dim: usize },
    Constant { value: Vec<f64> },
    /// `b(x) = rate · x`.
    Linear { dim: usize, rate: f64 },
    /// `b(x, y) = (−y, x)`.
    Rotation,
    /// `b(x, y) = (sign y, 0)` with `sign 0 = 0`.
    Shear,
    /// `b(x) = x (1 − x²)²` on `|x| < 1`, zero outside (d = 1).
    CompactBump,
    /// `b(x) = x (1 − ln|x|)` on `|x| ≤ 1`, `sign x` outside (d = 1);
    /// `∇·b = ln(1/|x|)·1_{|x|<1}`, unbounded but of bounded mean oscillation.
    LogDivergence,
    /// `b(t, x) = (sin x₂ + 0.3 x₁ cos t, cos x₁ − 0.2 x₂)`, smooth and time dependent.
    Swirl,
}

/// Peak of `|x (1 − x²)²|`, attained at `x = 1/√5`.
pub const COMPACT_BUMP_MAX: f64 = 0.286_216_701_119_973_07;

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl VectorField for AnalyticField {
    fn dim(&self) -> usize {
        match self {
            AnalyticField::Zero { dim } | AnalyticField::Linear { dim, .. } => *dim,
            AnalyticField::Constant { value } => value.len(),
            AnalyticField::Rotation | AnalyticField::Shear | AnalyticField::Swirl => 2,
            AnalyticField::CompactBump | AnalyticField::LogDivergence => 1,
        }
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            AnalyticField::Zero { .. } => out.iter_mut().for_each(|o| *o = 0.0),
            AnalyticField::Constant { value } => out.copy_from_slice(value),
            AnalyticField::Linear { rate, .. } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = rate * xi;
                }
            }
            AnalyticField::Rotation => {
                out[0] = -x[1];
                out[1] = x[0];
            }
            AnalyticField::Shear => {
                out[0] = sign(x[1]);
                out[1] = 0.0;
            }
            AnalyticField::CompactBump => {
                let s = x[0];
                out[0] = if s.abs() < 1.0 {
                    let q = 1.0 - s * s;
                    s * q * q
                } else {
                    0.0
                };
            }
            AnalyticField::LogDivergence => {
                let s = x[0];
                out[0] = if s == 0.0 {
                    0.0
                } else if s.abs() <= 1.0 {
                    s * (1.0 - s.abs().ln())
                } else {
                    sign(s)
                };
            }
            AnalyticField::Swirl => {
                out[0] = x[1].sin() + 0.3 * x[0] * t.cos();
                out[1] = x[0].cos() - 0.2 * x[1];
            }
        }
    }

    fn divergence(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            AnalyticField::Zero { .. }
            | AnalyticField::Constant { .. }
            | AnalyticField::Rotation
            | AnalyticField::Shear => 0.0,
            AnalyticField::Linear { dim, rate } => rate * *dim as f64,
            AnalyticField::CompactBump => {
                let s2 = x[0] * x[0];
                if s2 < 1.0 {
                    (1.0 - s2) * (1.0 - 5.0 * s2)
                } else {
                    0.0
                }
            }
            AnalyticField::LogDivergence => {
                let a = x[0].abs();
                if a < 1.0 {
                    -a.ln()
                } else {
                    0.0
                }
            }
            AnalyticField::Swirl => 0.3 * t.cos() - 0.2,
        }
    }

    fn div_sup(&self, t: f64) -> f64 {
        match self {
            AnalyticField::Zero { .. }
            | AnalyticField::Constant { .. }
            | AnalyticField::Rotation
            | AnalyticField::Shear => 0.0,
            AnalyticField::Linear { dim, rate } => rate.abs() * *dim as f64,
            AnalyticField::CompactBump => 1.0,
            AnalyticField::LogDivergence => f64::INFINITY,
            AnalyticField::Swirl => (0.3 * t.cos() - 0.2).abs(),
        }
    }

    fn autonomous(&self) -> bool {
        !matches!(self, AnalyticField::Swirl)
    }

    fn growth_split(&self) -> Option<GrowthSplit> {
        let split = match self {
            AnalyticField::Zero { .. } => GrowthSplit::new(B1Profile::Zero, 0.0),
            AnalyticField::Constant { value } => GrowthSplit::new(B1Profile::Zero, norm(value)),
            AnalyticField::Linear { rate, .. } => GrowthSplit::new(B1Profile::Zero, rate.abs()),
            AnalyticField::Rotation | AnalyticField::Shear | AnalyticField::LogDivergence => {
                GrowthSplit::new(B1Profile::Zero, 1.0)
            }
            AnalyticField::CompactBump => GrowthSplit::new(
                B1Profile::BallIndicator {
                    height: COMPACT_BUMP_MAX,
                    radius: 1.0,
                },
                0.0,
            ),
            AnalyticField::Swirl => GrowthSplit::new(B1Profile::Zero, 2.0),
        };
        Some(split)
    }
}

/// A velocity field together with its metadata.
#[derive(Clone)]
pub struct VelocityFieldSpec {
    pub id: String,
    pub regularity: Regularity,
    pub horizon: f64,
    field: Arc<dyn VectorField>,
}

impl fmt::Debug for VelocityFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VelocityFieldSpec")
            .field("id", &self.id)
            .field("regularity", &self.regularity)
            .field("horizon", &self.horizon)
            .field("dim", &self.dim())
            .finish()
    }
}

impl VelocityFieldSpec {
    pub fn new(
        id: impl Into<String>,
        field: Arc<dyn VectorField>,
        regularity: Regularity,
        horizon: f64,
    ) -> Self {
        assert!(horizon > 0.0, "horizon must be positive");
        Self {
            id: id.into(),
            regularity,
            horizon,
            field,
        }
    }

    pub fn analytic(id: impl Into<String>, field: AnalyticField, horizon: f64) -> Self {
        let regularity = match field {
            AnalyticField::Shear | AnalyticField::LogDivergence => Regularity::BvNonsmooth,
            AnalyticField::CompactBump => Regularity::Lipschitz,
            _ => Regularity::Smooth,
        };
        Self::new(id, Arc::new(field), regularity, horizon)
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    #[inline]
    pub fn eval_b_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.field.velocity(t, x, out)
    }

    pub fn eval_b(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.field.velocity(t, x, &mut out);
        out
    }

    #[inline]
    pub fn eval_div_b(&self, t: f64, x: &[f64]) -> f64 {
        self.field.divergence(t, x)
    }

    pub fn div_sup(&self, t: f64) -> f64 {
        self.field.div_sup(t)
    }

    /// `L = ∫₀ᵀ ‖∇·b(t,·)‖_∞ dt` by 64-node Gauss–Legendre.
    pub fn div_sup_integral(&self) -> f64 {
        self.div_sup_integral_until(self.horizon)
    }

    pub fn div_sup_integral_until(&self, t_end: f64) -> f64 {
        if t_end <= 0.0 {
            return 0.0;
        }
        csum(
            gauss_legendre(64, 0.0, t_end)
                .into_iter()
                .map(|(t, w)| w * self.div_sup(t)),
        )
    }

    pub fn autonomous(&self) -> bool {
        self.field.autonomous()
    }

    pub fn declared_split(&self) -> Option<GrowthSplit> {
        self.field.growth_split()
    }

    pub fn inner(&self) -> &Arc<dyn VectorField> {
        &self.field
    }
}

/// Where a damping field blows up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SingularSet {
    Point { at: Vec<f64> },
}

impl SingularSet {
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            SingularSet::Point { at } => at
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticDamping {
    Zero,
    Constant { value: f64 },
    /// `height · 1_{|x| ≤ radius}`.
    BallIndicator { height: f64, radius: f64 },
    /// `|x|^{-1/2} · 1_{|x| ≤ radius}`, singular at the origin.
    InverseSqrt { radius: f64 },
}

impl AnalyticDamping {
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            AnalyticDamping::Zero => 0.0,
            AnalyticDamping::Constant { value } => *value,
            AnalyticDamping::BallIndicator { height, radius } => {
                if norm(x) <= *radius {
                    *height
                } else {
                    0.0
                }
            }
            AnalyticDamping::InverseSqrt { radius } => {
                let r = norm(x);
                if r <= *radius {
                    1.0 / r.sqrt()
                } else {
                    0.0
                }
            }
        }
    }
}

/// Damping coefficient `c(t, x)` plus what is known about it analytically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingFieldSpec {
    pub id: String,
    pub dim: usize,
    pub kind: AnalyticDamping,
    pub singular_set: Vec<SingularSet>,
    /// `∫₀ᵀ∫|c| dx dt`, when known in closed form.
    pub l1_norm_hint: Option<f64>,
    /// `‖c(t,·)‖_{L¹}` (time independent for every shipped damping).
    pub spatial_l1: Option<f64>,
    /// `‖c‖_∞` when bounded.
    pub sup_abs: Option<f64>,
}

pub(crate) fn unit_ball_volume(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => PI.powf(d as f64 / 2.0) / gamma_half_integer(d + 2),
    }
}

/// Γ(k/2) for integer k ≥ 1.
fn gamma_half_integer(k: usize) -> f64 {
    if k == 1 {
        PI.sqrt()
    } else if k == 2 {
        1.0
    } else {
        (k as f64 / 2.0 - 1.0) * gamma_half_integer(k - 2)
    }
}

impl DampingFieldSpec {
    pub fn analytic(id: impl Into<String>, dim: usize, kind: AnalyticDamping, horizon: f64) -> Self {
        let (singular_set, l1, sup) = match &kind {
            AnalyticDamping::Zero => (vec![], Some(0.0), Some(0.0)),
            AnalyticDamping::Constant { value } => {
                let l1 = if *value == 0.0 { Some(0.0) } else { None };
                (vec![], l1, Some(value.abs()))
            }
            AnalyticDamping::BallIndicator { height, radius } => (
                vec![],
                Some(horizon * height.abs() * unit_ball_volume(dim) * radius.powi(dim as i32)),
                Some(height.abs()),
            ),
            AnalyticDamping::InverseSqrt { radius } => {
                // ∫_{B_ρ} |x|^{-1/2} = d ω_d ρ^{d-1/2} / (d - 1/2)
                let d = dim as f64;
                let l1 = horizon * d * unit_ball_volume(dim) * radius.powf(d - 0.5) / (d - 0.5);
                (
                    vec![SingularSet::Point { at: vec![0.0; dim] }],
                    Some(l1),
                    None,
                )
            }
        };
        Self {
            id: id.into(),
            dim,
            kind,
            singular_set,
            l1_norm_hint: l1,
            spatial_l1: l1.map(|v| v / horizon),
            sup_abs: sup,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::analytic("zero", dim, AnalyticDamping::Zero, 1.0)
    }

    pub fn distance_to_singular(&self, x: &[f64]) -> f64 {
        self.singular_set
            .iter()
            .map(|s| s.distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_singular_at(&self, x: &[f64]) -> bool {
        self.distance_to_singular(x) == 0.0
    }

    pub fn eval_c(&self, _t: f64, x: &[f64]) -> Result<f64, FieldError> {
        if self.is_singular_at(x) {
            return Err(FieldError::SingularPoint { point: x.to_vec() });
        }
        Ok(self.kind.value(x))
    }

    /// `c(t, x)` with the integrand set to zero within `eta` of the singular set.
    #[inline]
    pub fn eval_c_truncated(&self, _t: f64, x: &[f64], eta: f64) -> Option<f64> {
        if !self.singular_set.is_empty() && self.distance_to_singular(x) <= eta {
            None
        } else {
            Some(self.kind.value(x))
        }
    }

    pub fn is_bounded(&self) -> bool {
        self.singular_set.is_empty() && self.sup_abs.is_some()
    }
}

/// Single evaluation gateway: `(b, ∇·b, c)` at `(t, x)`.
pub fn evaluate_field(
    spec: &VelocityFieldSpec,
    damping: &DampingFieldSpec,
    t: f64,
    x: &[f64],
) -> Result<(Vec<f64>, f64, f64), FieldError> {
    if !(0.0..=spec.horizon).contains(&t) {
        return Err(FieldError::TimeOutOfRange {
            t,
            horizon: spec.horizon,
        });
    }
    let c = damping.eval_c(t, x)?;
    Ok((spec.eval_b(t, x), spec.eval_div_b(t, x), c))
}

/// Central finite-difference divergence, used to audit closed forms.
pub fn fd_divergence(spec: &VelocityFieldSpec, t: f64, x: &[f64], h: f64) -> f64 {
    let d = spec.dim();
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    let mut bp = vec![0.0; d];
    let mut bm = vec![0.0; d];
    let mut div = 0.0;
    for j in 0..d {
        xp[j] = x[j] + h;
        xm[j] = x[j] - h;
        spec.eval_b_into(t, &xp, &mut bp);
        spec.eval_b_into(t, &xm, &mut bm);
        div += (bp[j] - bm[j]) / (2.0 * h);
        xp[j] = x[j];
        xm[j] = x[j];
    }
    div
}

// ---------------------------------------------------------------------------
// growth split

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum B1Profile {
    Zero,
    /// `height · 1_{|x| < radius}`.
    BallIndicator { height: f64, radius: f64 },
}

/// `|b(t,x)|/(1+|x|) ≤ b1(t,x) + b2(t)` with `b1 ∈ L¹`, `b2 ∈ L¹(0,T)`.
///
/// All shipped splits are time independent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthSplit {
    pub b1: B1Profile,
    pub b2: f64,
}

impl GrowthSplit {
    pub fn new(b1: B1Profile, b2: f64) -> Self {
        Self { b1, b2 }
    }

    pub fn b1(&self, _t: f64, x: &[f64]) -> f64 {
        match self.b1 {
            B1Profile::Zero => 0.0,
            B1Profile::BallIndicator { height, radius } => {
                if norm(x) < radius {
                    height
                } else {
                    0.0
                }
            }
        }
    }

    pub fn b2(&self, _t: f64) -> f64 {
        self.b2
    }

    /// `‖b1(t,·)‖_{L¹(ℝᵈ \ B_R)}`.
    pub fn b1_tail_l1(&self, _t: f64, r: f64, dim: usize) -> f64 {
        match self.b1 {
            B1Profile::Zero => 0.0,
            B1Profile::BallIndicator { height, radius } => {
                if r >= radius {
                    0.0
                } else {
                    let d = dim as i32;
                    height * unit_ball_volume(dim) * (radius.powi(d) - r.powi(d))
                }
            }
        }
    }

    /// Support radius of `b1`, if any.
    pub fn b1_support(&self) -> Option<f64> {
        match self.b1 {
            B1Profile::Zero => Some(0.0),
            B1Profile::BallIndicator { radius, .. } => Some(radius),
        }
    }
}

/// Returns the field's declared split after checking it on `samples` random
/// points in `[0,T] × [-box, box]^d`.
pub fn growth_split_checked(
    spec: &VelocityFieldSpec,
    samples: usize,
    sample_box: f64,
    rng_seed: u64,
) -> Result<GrowthSplit, FieldError> {
    let split = spec
        .declared_split()
        .ok_or_else(|| FieldError::NoSplit(spec.id.clone()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let d = spec.dim();
    let mut x = vec![0.0; d];
    let mut b = vec![0.0; d];
    for _ in 0..samples {
        let t = rng.gen_range(0.0..=spec.horizon);
        for xi in x.iter_mut() {
            *xi = rng.gen_range(-sample_box..=sample_box);
        }
        spec.eval_b_into(t, &x, &mut b);
        let ratio = norm(&b) / (1.0 + norm(&x));
        let bound = split.b1(t, &x) + split.b2(t);
        if ratio > bound + 1e-12 {
            return Err(FieldError::SplitViolation {
                t,
                point: x.clone(),
                ratio,
                bound,
            });
        }
    }
    Ok(split)
}

/// Declared split verified on 10⁴ samples in `[-10, 10]^d`.
pub fn growth_split(spec: &VelocityFieldSpec) -> Result<GrowthSplit, FieldError> {
    growth_split_checked(spec, 10_000, 10.0, 0x5eed)
}

// ---------------------------------------------------------------------------
// mollification

/// How `b` is continued outside `[0, T]` before time convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeExtension {
    /// `b = 0` outside `[0, T]`.
    #[default]
    Zero,
    /// `b(t) = b(clamp(t, 0, T))`.
    Clamp,
}

/// Kernel `ε^{-d-1} ρ₁(t/ε) ρ₂(x/ε)` stored as weighted quadrature nodes.
///
/// Both profiles are `(1 − s²)⁴` on the unit ball. Node weights already
/// include the kernel value and are normalized to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub eps: f64,
    pub time_extension: TimeExtension,
    dim: usize,
    /// `(s, weight)` pairs on `[-1, 1]`.
    time_nodes: Vec<(f64, f64)>,
    /// `(y, weight)` pairs on the unit ball, `y` flattened.
    space_points: Vec<f64>,
    space_weights: Vec<f64>,
}

const KERNEL_NODES: usize = 16;

fn bump_profile(s2: f64) -> f64 {
    if s2 >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s2;
        let q2 = q * q;
        q2 * q2
    }
}

/// Symmetric Gauss–Legendre rule on `[-1, 1]`: positive nodes mirrored exactly.
fn symmetric_gl(n: usize) -> Vec<(f64, f64)> {
    let rule = gauss_legendre(n, -1.0, 1.0);
    let mut out = Vec::with_capacity(n);
    for &(x, w) in rule.iter().filter(|(x, _)| *x > 0.0) {
        out.push((x, w));
        out.push((-x, w));
    }
    if n % 2 == 1 {
        out.push((0.0, rule[n / 2].1));
    }
    out
}

impl MollifierSpec {
    pub fn new(eps: f64, dim: usize) -> Result<Self, FieldError> {
        Self::with_extension(eps, dim, TimeExtension::Zero)
    }

    pub fn with_extension(
        eps: f64,
        dim: usize,
        time_extension: TimeExtension,
    ) -> Result<Self, FieldError> {
        if !(eps > 0.0) {
            return Err(FieldError::BadEps(eps));
        }
        let time_nodes: Vec<(f64, f64)> = symmetric_gl(KERNEL_NODES)
            .into_iter()
            .map(|(s, w)| (s, w * bump_profile(s * s)))
            .collect();
        let (space_points, space_weights) = match dim {
            1 => symmetric_gl(KERNEL_NODES)
                .into_iter()
                .map(|(s, w)| (s, w * bump_profile(s * s)))
                .unzip(),
            2 => {
                // polar: Gauss–Legendre in r, midpoint in θ, mirrored across both axes
                let radial = gauss_legendre(KERNEL_NODES, 0.0, 1.0);
                let quarter = KERNEL_NODES / 4;
                let dtheta = 2.0 * PI / KERNEL_NODES as f64;
                let mut pts = Vec::new();
                let mut wts = Vec::new();
                for &(r, wr) in &radial {
                    let base = wr * r * dtheta * bump_profile(r * r);
                    for k in 0..quarter {
                        let theta = (k as f64 + 0.5) * dtheta;
                        let (sy, cx) = theta.sin_cos();
                        let (a, b) = (r * cx, r * sy);
                        for (px, py) in [(a, b), (a, -b), (-a, b), (-a, -b)] {
                            pts.push(px);
                            pts.push(py);
                            wts.push(base);
                        }
                    }
                }
                (pts, wts)
            }
            other => return Err(FieldError::UnsupportedDimension(other)),
        };
        let mut spec = Self {
            eps,
            time_extension,
            dim,
            time_nodes,
            space_points,
            space_weights,
        };
        spec.normalize();
        Ok(spec)
    }

    /// Builds a kernel from raw weighted nodes without normalizing them.
    pub fn from_nodes(
        eps: f64,
        dim: usize,
        time_nodes: Vec<(f64, f64)>,
        space_points: Vec<f64>,
        space_weights: Vec<f64>,
        time_extension: TimeExtension,
    ) -> Result<Self, FieldError> {
        if !(eps > 0.0) {
            return Err(FieldError::BadEps(eps));
        }
        let spec = Self {
            eps,
            time_extension,
            dim,
            time_nodes,
            space_points,
            space_weights,
        };
        spec.validate(1e-8)?;
        Ok(spec)
    }

    fn normalize(&mut self) {
        let zt = csum(self.time_nodes.iter().map(|p| p.1));
        self.time_nodes.iter_mut().for_each(|p| p.1 /= zt);
        let zs = csum(self.space_weights.iter().copied());
        self.space_weights.iter_mut().for_each(|w| *w /= zs);
    }

    /// `(∫ρ₁, ∫ρ₂)` under the stored quadrature.
    pub fn kernel_integrals(&self) -> (f64, f64) {
        (
            csum(self.time_nodes.iter().map(|p| p.1)),
            csum(self.space_weights.iter().copied()),
        )
    }

    pub fn validate(&self, tol: f64) -> Result<(), FieldError> {
        let (a, b) = self.kernel_integrals();
        for integral in [a, b] {
            if (integral - 1.0).abs() > tol {
                return Err(FieldError::BadKernel { integral });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn space_node_count(&self) -> usize {
        self.space_weights.len()
    }

    pub fn time_node_count(&self) -> usize {
        self.time_nodes.len()
    }

    /// Time-shifted evaluation instant for node `s`, or `None` where the
    /// zero extension switches `b` off.
    #[inline]
    fn shifted_time(&self, t: f64, s: f64, horizon: f64) -> Option<f64> {
        let ts = t - self.eps * s;
        match self.time_extension {
            TimeExtension::Zero => (0.0..=horizon).contains(&ts).then_some(ts),
            TimeExtension::Clamp => Some(ts.clamp(0.0, horizon)),
        }
    }

    /// Total time weight switched on at `t`.
    fn time_weight(&self, t: f64, horizon: f64) -> f64 {
        csum(
            self.time_nodes
                .iter()
                .filter(|(s, _)| self.shifted_time(t, *s, horizon).is_some())
                .map(|p| p.1),
        )
    }
}

#[derive(Debug)]
struct MollifiedField {
    base: Arc<dyn VectorField>,
    kernel: MollifierSpec,
    horizon: f64,
    split: Option<GrowthSplit>,
}

impl MollifiedField {
    fn spatial_velocity(&self, t: f64, x: &[f64], out: &mut [f64], scratch: &mut [f64], tmp: &mut [f64]) {
        let d = self.kernel.dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, w) in self.kernel.space_weights.iter().enumerate() {
            let y = &self.kernel.space_points[k * d..(k + 1) * d];
            for j in 0..d {
                scratch[j] = x[j] - self.kernel.eps * y[j];
            }
            self.base.velocity(t, scratch, tmp);
            for j in 0..d {
                out[j] += w * tmp[j];
            }
        }
    }

    fn spatial_divergence(&self, t: f64, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = self.kernel.dim;
        let mut acc = 0.0;
        for (k, w) in self.kernel.space_weights.iter().enumerate() {
            let y = &self.kernel.space_points[k * d..(k + 1) * d];
            for j in 0..d {
                scratch[j] = x[j] - self.kernel.eps * y[j];
            }
            acc += w * self.base.divergence(t, scratch);
        }
        acc
    }
}

// Points here are at most 2-dimensional (checked at construction).
const MAX_MOLLIFIED_DIM: usize = 2;

impl VectorField for MollifiedField {
    fn dim(&self) -> usize {
        self.kernel.dim
    }

    fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.kernel.dim;
        let mut scratch = [0.0; MAX_MOLLIFIED_DIM];
        let mut tmp = [0.0; MAX_MOLLIFIED_DIM];
        let mut acc = [0.0; MAX_MOLLIFIED_DIM];
        if self.base.autonomous() {
            let w = self.kernel.time_weight(t, self.horizon);
            self.spatial_velocity(0.0, x, &mut acc[..d], &mut scratch[..d], &mut tmp[..d]);
            for j in 0..d {
                out[j] = w * acc[j];
            }
            return;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(s, wt) in &self.kernel.time_nodes {
            if let Some(ts) = self.kernel.shifted_time(t, s, self.horizon) {
                self.spatial_velocity(ts, x, &mut acc[..d], &mut scratch[..d], &mut tmp[..d]);
                for j in 0..d {
                    out[j] += wt * acc[j];
                }
            }
        }
    }

    fn divergence(&self, t: f64, x: &[f64]) -> f64 {
        let d = self.kernel.dim;
        let mut scratch = [0.0; MAX_MOLLIFIED_DIM];
        if self.base.autonomous() {
            return self.kernel.time_weight(t, self.horizon)
                * self.spatial_divergence(0.0, x, &mut scratch[..d]);
        }
        let mut acc = 0.0;
        for &(s, wt) in &self.kernel.time_nodes {
            if let Some(ts) = self.kernel.shifted_time(t, s, self.horizon) {
                acc += wt * self.spatial_divergence(ts, x, &mut scratch[..d]);
            }
        }
        acc
    }

    /// Time-mollified `‖∇·b‖_∞`, the right-hand side of the mollified divergence bound.
    fn div_sup(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for &(s, wt) in &self.kernel.time_nodes {
            if let Some(ts) = self.kernel.shifted_time(t, s, self.horizon) {
                acc += wt * self.base.div_sup(ts);
            }
        }
        acc
    }

    fn autonomous(&self) -> bool {
        false
    }

    fn growth_split(&self) -> Option<GrowthSplit> {
        self.split
    }
}

/// Convolves `spec` with the kernel of `moll` in time and space.
///
/// The divergence of the result is the convolution of the closed-form
/// divergence, which is the distributional divergence for every shipped
/// field (none has a jump in its normal component).
pub fn mollify(spec: &VelocityFieldSpec, moll: &MollifierSpec) -> Result<VelocityFieldSpec, FieldError> {
    if moll.dim != spec.dim() {
        return Err(FieldError::UnsupportedDimension(spec.dim()));
    }
    moll.validate(1e-8)?;
    let eps = moll.eps;
    let split = spec.declared_split().map(|s| GrowthSplit {
        b1: match s.b1 {
            B1Profile::Zero => B1Profile::Zero,
            B1Profile::BallIndicator { height, radius } => B1Profile::BallIndicator {
                height: height * (1.0 + eps),
                radius: radius + eps,
            },
        },
        b2: s.b2 * (1.0 + eps),
    });
    let field = MollifiedField {
        base: spec.inner().clone(),
        kernel: moll.clone(),
        horizon: spec.horizon,
        split,
    };
    Ok(VelocityFieldSpec::new(
        format!("{}@eps={}", spec.id, eps),
        Arc::new(field),
        Regularity::Smooth,
        spec.horizon,
    ))
}
