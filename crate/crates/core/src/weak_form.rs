//! Quadrature of the renormalized weak formulation, `Γ(t) = ∫φ β(u(t))` traces,
//! the L² energy envelope and the logarithmic Gronwall/uniqueness diagnostics.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::field::{DampingFieldSpec, GrowthSplit, VelocityFieldSpec};
use crate::flow::SeedGrid;
use crate::grid::BoxGrid;
use crate::par;
use crate::quadrature::{csum, gauss_legendre, observed_order, simpson_weights};
use crate::renorm::{Renormalizer, TestFunctionPhiR};
use crate::solution::{DensityRepresentation, InitialDatum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeakFormError {
    #[error("test function support radius {support} exceeds the quadrature box {half_width}")]
    SupportOverflow { support: f64, half_width: f64 },
    #[error("solution is nonzero ({value}) on the quadrature boundary; the φ_R tail is not controlled")]
    SolutionNotContained { value: f64 },
    #[error("damping is unbounded; the L² energy envelope needs ‖c‖_∞ < ∞")]
    UnboundedDamping,
    #[error("solution samples do not match the quadrature nodes: {0}")]
    ShapeMismatch(String),
    #[error("refinement history must strictly refine")]
    NotRefining,
}

/// Midpoint rule on a box in space, composite Simpson in time.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeQuadrature {
    pub space: BoxGrid,
    pub times: Vec<f64>,
    pub time_weights: Vec<f64>,
    /// Truncation radius around singular damping.
    pub eta: f64,
}

impl SpaceTimeQuadrature {
    /// `intervals` time intervals on `[0, horizon]`; Simpson needs an even count.
    pub fn new(space: BoxGrid, horizon: f64, intervals: usize) -> Self {
        assert!(horizon > 0.0 && intervals > 0, "time grid must be nondegenerate");
        let tau = horizon / intervals as f64;
        let times = (0..=intervals)
            .map(|k| if k == intervals { horizon } else { k as f64 * tau })
            .collect();
        Self {
            space,
            times,
            time_weights: simpson_weights(intervals, tau),
            eta: 0.0,
        }
    }

    pub fn seeds(&self) -> SeedGrid {
        SeedGrid::from_box(self.space)
    }

    pub fn h(&self) -> f64 {
        self.space.spacing()
    }

    pub fn tau(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn weight_sum(&self) -> f64 {
        self.space.cell_volume() * self.space.len() as f64 * csum(self.time_weights.iter().copied())
    }

    fn check_shape(&self, u: &DensityRepresentation) -> Result<(), WeakFormError> {
        if u.times.len() != self.times.len() || u.n_points() != self.space.len() || u.dim != self.space.dim() {
            return Err(WeakFormError::ShapeMismatch(format!(
                "{} times × {} points against {} × {}",
                u.times.len(),
                u.n_points(),
                self.times.len(),
                self.space.len()
            )));
        }
        Ok(())
    }
}

/// Space-time test function with analytic derivatives.
pub trait SpaceTimeTest: Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn time_derivative(&self, t: f64, x: &[f64]) -> f64;
    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Radius of a ball about the origin containing the spatial support.
    fn support_radius(&self) -> f64;
}

/// Smooth step: 1 on `[0, flat_until]`, 0 from `zero_at` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeCutoff {
    pub flat_until: f64,
    pub zero_at: f64,
}

fn psi(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

fn psi_prime(s: f64) -> f64 {
    if s > 0.0 {
        psi(s) / (s * s)
    } else {
        0.0
    }
}

impl TimeCutoff {
    pub fn value(&self, t: f64) -> f64 {
        let s = (t - self.flat_until) / (self.zero_at - self.flat_until);
        if s <= 0.0 {
            1.0
        } else if s >= 1.0 {
            0.0
        } else {
            let (a, b) = (psi(1.0 - s), psi(s));
            a / (a + b)
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let w = self.zero_at - self.flat_until;
        let s = (t - self.flat_until) / w;
        if s <= 0.0 || s >= 1.0 {
            return 0.0;
        }
        let (a, b) = (psi(1.0 - s), psi(s));
        let (da, db) = (-psi_prime(1.0 - s), psi_prime(s));
        (da * (a + b) - a * (da + db)) / ((a + b) * (a + b)) / w
    }
}

/// `φ(t, x) = exp(1 − 1/(1 − |x−c|²/r²)) · η(t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BumpTest {
    pub center: Vec<f64>,
    pub radius: f64,
    pub cutoff: TimeCutoff,
}

impl BumpTest {
    fn spatial(&self, x: &[f64]) -> (f64, f64) {
        let q: f64 = self
            .center
            .iter()
            .zip(x)
            .map(|(c, v)| (v - c) * (v - c))
            .sum::<f64>()
            / (self.radius * self.radius);
        if q >= 1.0 {
            return (0.0, 0.0);
        }
        let g = 1.0 - q;
        let v = (1.0 - 1.0 / g).exp();
        // d v / d q
        (v, -v / (g * g))
    }

    /// `∫ ψ(x) dx` of the spatial factor by Gauss–Legendre in the radius.
    pub fn spatial_integral(&self) -> f64 {
        let d = self.center.len();
        let surface = d as f64 * crate::field::unit_ball_volume(d);
        let mut acc = 0.0;
        for k in 0..32 {
            let (a, b) = (k as f64 / 32.0, (k + 1) as f64 / 32.0);
            for (s, w) in gauss_legendre(16, a, b) {
                let g = 1.0 - s * s;
                acc += w * s.powi(d as i32 - 1) * (1.0 - 1.0 / g).exp();
            }
        }
        surface * acc * self.radius.powi(d as i32)
    }
}

impl SpaceTimeTest for BumpTest {
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.spatial(x).0 * self.cutoff.value(t)
    }

    fn time_derivative(&self, t: f64, x: &[f64]) -> f64 {
        self.spatial(x).0 * self.cutoff.derivative(t)
    }

    fn gradient(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (_, dq) = self.spatial(x);
        let eta = self.cutoff.value(t);
        let r2 = self.radius * self.radius;
        for ((o, v), c) in out.iter_mut().zip(x).zip(&self.center) {
            *o = dq * 2.0 * (v - c) / r2 * eta;
        }
    }

    fn support_radius(&self) -> f64 {
        self.center.iter().map(|v| v * v).sum::<f64>().sqrt() + self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakResidualReport {
    pub residual: f64,
    /// `(h, τ, residual)` from coarse to fine.
    pub history: Vec<(f64, f64, f64)>,
    /// Log-log slope of residual against `h`, when the history has two or more levels.
    pub order: Option<f64>,
    /// `∬ φ` on the finest grid, the natural scale of the residual.
    pub test_mass: f64,
}

/// Per-node integrand pieces shared by the weak residual and `Γ` traces.
struct NodeEval<'a> {
    field: &'a VelocityFieldSpec,
    damping: &'a DampingFieldSpec,
    beta: &'a Renormalizer,
    eta: f64,
}

impl NodeEval<'_> {
    /// `(β(u), ∇·b(β − uβ') + c u β', b)` at one node.
    #[inline]
    fn terms(&self, t: f64, x: &[f64], u: f64, b: &mut [f64]) -> (f64, f64) {
        self.field.eval_b_into(t, x, b);
        let bu = self.beta.beta(u);
        if u == 0.0 {
            return (bu, self.field.eval_div_b(t, x) * bu);
        }
        let ubp = self.beta.r_beta_prime(u);
        let div = self.field.eval_div_b(t, x);
        let c = self.damping.eval_c_truncated(t, x, self.eta).unwrap_or(0.0);
        (bu, div * (bu - ubp) + c * ubp)
    }
}

/// `|∫φ(0)β(u₀) + ∬(∂ₜφ + ∇φ·b)β(u) + ∬φ[∇·b(β(u) − uβ'(u)) + c u β'(u)]|`.
#[allow(clippy::too_many_arguments)]
pub fn weak_residual(
    u: &DensityRepresentation,
    beta: &Renormalizer,
    phi: &dyn SpaceTimeTest,
    field: &VelocityFieldSpec,
    damping: &DampingFieldSpec,
    u0: &InitialDatum,
    quad: &SpaceTimeQuadrature,
) -> Result<WeakResidualReport, WeakFormError> {
    quad.check_shape(u)?;
    let support = phi.support_radius();
    if support > quad.space.half_width() {
        return Err(WeakFormError::SupportOverflow {
            support,
            half_width: quad.space.half_width(),
        });
    }
    let d = quad.space.dim();
    let vol = quad.space.cell_volume();
    let n = quad.space.len();
    let eval = NodeEval {
        field,
        damping,
        beta,
        eta: quad.eta,
    };
    let per_time = par::map_indexed(quad.times.len(), |k| {
        let t = quad.times[k];
        let mut x = vec![0.0; d];
        let mut b = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut acc = crate::quadrature::CompensatedSum::new();
        let mut mass = crate::quadrature::CompensatedSum::new();
        for i in 0..n {
            quad.space.center_into(i, &mut x);
            let p = phi.value(t, &x);
            let pt = phi.time_derivative(t, &x);
            mass.add(p * vol);
            if p == 0.0 && pt == 0.0 {
                continue;
            }
            phi.gradient(t, &x, &mut g);
            let (bu, src) = eval.terms(t, &x, u.value(k, i), &mut b);
            let transport: f64 = g.iter().zip(&b).map(|(a, c)| a * c).sum();
            acc.add(((pt + transport) * bu + p * src) * vol);
        }
        (acc.value(), mass.value())
    });
    let bulk = csum(per_time.iter().zip(&quad.time_weights).map(|(r, w)| r.0 * w));
    let test_mass = csum(per_time.iter().zip(&quad.time_weights).map(|(r, w)| r.1 * w));
    let initial = csum((0..n).map(|i| {
        let x = quad.space.center(i);
        phi.value(0.0, &x) * beta.beta(u0.eval(&x)) * vol
    }));
    let residual = (initial + bulk).abs();
    Ok(WeakResidualReport {
        residual,
        history: vec![(quad.h(), quad.tau(), residual)],
        order: None,
        test_mass,
    })
}

/// Evaluates the weak residual on successively refined quadratures.
pub fn weak_residual_study<F>(
    levels: &[SpaceTimeQuadrature],
    mut solution_on: F,
    beta: &Renormalizer,
    phi: &dyn SpaceTimeTest,
    field: &VelocityFieldSpec,
    damping: &DampingFieldSpec,
    u0: &InitialDatum,
) -> Result<WeakResidualReport, Box<dyn std::error::Error + Send + Sync>>
where
    F: FnMut(&SpaceTimeQuadrature) -> Result<DensityRepresentation, Box<dyn std::error::Error + Send + Sync>>,
{
    if levels.windows(2).any(|w| !(w[1].h() <= w[0].h() && w[1].tau() <= w[0].tau() && (w[1].h() < w[0].h() || w[1].tau() < w[0].tau()))) {
        return Err(Box::new(WeakFormError::NotRefining));
    }
    let mut history = Vec::with_capacity(levels.len());
    let mut last = None;
    for q in levels {
        let u = solution_on(q)?;
        let rep = weak_residual(&u, beta, phi, field, damping, u0, q)?;
        history.push((q.h(), q.tau(), rep.residual));
        last = Some(rep);
    }
    let mut rep = last.ok_or(WeakFormError::NotRefining)?;
    let pairs: Vec<(f64, f64)> = history.iter().map(|(h, tau, r)| (h.max(*tau), *r)).collect();
    rep.order = observed_order(&pairs);
    rep.history = history;
    Ok(rep)
}

/// `Γ(t_k) = Σ φ β(u(t_k)) |cell|` with right-hand-side samples and an optional bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaTrace {
    pub times: Vec<f64>,
    pub gamma: Vec<f64>,
    pub rhs: Vec<f64>,
    pub bound: Vec<f64>,
    /// `max_k |ΔΓ/Δt − (RHS_k + RHS_{k+1})/2|`.
    pub consistency: f64,
}

impl GammaTrace {
    /// Largest `Γ/bound` over the time nodes (0 when the bound is empty).
    pub fn worst_ratio(&self) -> f64 {
        self.gamma
            .iter()
            .zip(&self.bound)
            .map(|(g, b)| if *g <= 0.0 { 0.0 } else { g / b })
            .fold(0.0, f64::max)
    }

    pub fn bound_holds(&self, slack: f64) -> bool {
        self.gamma.iter().zip(&self.bound).all(|(g, b)| *g <= b * (1.0 + slack))
    }
}

fn boundary_max(u: &DensityRepresentation, grid: &BoxGrid) -> f64 {
    let n = grid.cells_per_axis();
    let d = grid.dim();
    let mut worst = 0.0_f64;
    let mut idx = vec![0usize; d];
    for i in 0..grid.len() {
        let mut rem = i;
        for j in (0..d).rev() {
            idx[j] = rem % n;
            rem /= n;
        }
        if idx.iter().any(|&v| v == 0 || v == n - 1) {
            for k in 0..u.times.len() {
                worst = worst.max(u.value(k, i).abs());
            }
        }
    }
    worst
}

/// `Γ(t)` and its right-hand side for a `φ_R`-type test function.
///
/// The weight `φ_R` is not compactly supported; the quadrature box stands in
/// for `ℝᵈ`, which is exact when `u` vanishes outside it, so `u` must vanish on
/// the boundary cells.
pub fn gamma_trace(
    u: &DensityRepresentation,
    beta: &Renormalizer,
    phi: &TestFunctionPhiR,
    field: &VelocityFieldSpec,
    damping: &DampingFieldSpec,
    quad: &SpaceTimeQuadrature,
) -> Result<GammaTrace, WeakFormError> {
    quad.check_shape(u)?;
    let edge = boundary_max(u, &quad.space);
    if edge > 0.0 {
        return Err(WeakFormError::SolutionNotContained { value: edge });
    }
    let d = quad.space.dim();
    let vol = quad.space.cell_volume();
    let n = quad.space.len();
    let eval = NodeEval {
        field,
        damping,
        beta,
        eta: quad.eta,
    };
    let rows = par::map_indexed(quad.times.len(), |k| {
        let t = quad.times[k];
        let mut x = vec![0.0; d];
        let mut b = vec![0.0; d];
        let mut g = vec![0.0; d];
        let mut gamma = crate::quadrature::CompensatedSum::new();
        let mut rhs = crate::quadrature::CompensatedSum::new();
        for i in 0..n {
            let uk = u.value(k, i);
            if uk == 0.0 {
                continue;
            }
            quad.space.center_into(i, &mut x);
            let p = phi.eval(&x);
            phi.eval_grad_into(&x, &mut g);
            let (bu, src) = eval.terms(t, &x, uk, &mut b);
            let transport: f64 = g.iter().zip(&b).map(|(a, c)| a * c).sum();
            gamma.add(p * bu * vol);
            rhs.add((transport * bu + p * src) * vol);
        }
        (gamma.value(), rhs.value())
    });
    let gamma: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let rhs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let consistency = (0..gamma.len().saturating_sub(1))
        .map(|k| {
            let dt = quad.times[k + 1] - quad.times[k];
            ((gamma[k + 1] - gamma[k]) / dt - 0.5 * (rhs[k] + rhs[k + 1])).abs()
        })
        .fold(0.0, f64::max);
    Ok(GammaTrace {
        times: quad.times.clone(),
        gamma,
        rhs,
        bound: Vec::new(),
        consistency,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct L2Report {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub envelope: Vec<f64>,
    /// Largest `energy / envelope`.
    pub worst_ratio: f64,
}

impl L2Report {
    pub fn pass(&self, slack: f64) -> bool {
        self.worst_ratio <= 1.0 + slack
    }
}

/// `t ↦ ∫u²` against `∫u₀² exp(∫₀ᵗ (2‖c‖_∞ + ‖∇·b‖_∞))`.
pub fn l2_energy_diagnostic(
    u: &DensityRepresentation,
    field: &VelocityFieldSpec,
    damping: &DampingFieldSpec,
    quad: &SpaceTimeQuadrature,
) -> Result<L2Report, WeakFormError> {
    quad.check_shape(u)?;
    let c_sup = match (damping.singular_set.is_empty(), damping.sup_abs) {
        (true, Some(s)) => s,
        _ => return Err(WeakFormError::UnboundedDamping),
    };
    let energy: Vec<f64> = (0..quad.times.len())
        .map(|k| csum(u.row(k).iter().map(|v| v * v * u.cell_volume)))
        .collect();
    let e0 = energy[0];
    let envelope: Vec<f64> = quad
        .times
        .iter()
        .map(|&t| e0 * (2.0 * c_sup * t + field.div_sup_integral_until(t)).exp())
        .collect();
    let worst_ratio = energy
        .iter()
        .zip(&envelope)
        .map(|(e, b)| if *e == 0.0 { 0.0 } else { e / b })
        .fold(0.0, f64::max);
    Ok(L2Report {
        times: quad.times.clone(),
        energy,
        envelope,
        worst_ratio,
    })
}

/// Cumulative Gronwall ingredients on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallTerms {
    pub times: Vec<f64>,
    /// `A(t) = ∫₀ᵗ a`.
    pub a: Vec<f64>,
    /// `B_R(t) = ∫₀ᵗ b_R`.
    pub b_r: Vec<f64>,
    /// `C_R(t) = ∫₀ᵗ c_R`.
    pub c_r: Vec<f64>,
    /// `log(1 + π²/(4δ))`, the supremum of `β_δ`.
    pub log_factor: f64,
    /// Bound on `|u β_δ'(u)|` used for the source terms.
    pub k: f64,
    /// `‖φ_R‖_{L¹}`.
    pub phi_l1: f64,
}

impl GronwallTerms {
    pub fn bound(&self, k: usize, gamma0: f64) -> f64 {
        self.a[k].exp() * (gamma0 + self.b_r[k] + self.log_factor * self.c_r[k])
    }

    pub fn last(&self) -> usize {
        self.times.len() - 1
    }
}

fn cumulative<F: Fn(f64) -> f64>(times: &[f64], f: F) -> Vec<f64> {
    let mut out = vec![0.0; times.len()];
    for k in 1..times.len() {
        let piece = csum(gauss_legendre(8, times[k - 1], times[k]).into_iter().map(|(s, w)| w * f(s)));
        out[k] = out[k - 1] + piece;
    }
    out
}

/// `a = ‖∇·b‖_∞ + (d+1)b₂`, `b_R = ‖c‖₁ + K‖∇·b‖_∞‖φ_R‖₁`, `c_R = (d+1)‖b₁‖_{L¹(|x|>R)}`.
///
/// `K` bounds `|uβ_δ'(u)|`; since `K·sup φ_R ≤ 1` the damping part keeps the
/// plain `‖c‖₁`.
pub fn gronwall_terms(
    field: &VelocityFieldSpec,
    damping: &DampingFieldSpec,
    split: &GrowthSplit,
    phi: &TestFunctionPhiR,
    delta: f64,
    k: f64,
    times: &[f64],
) -> GronwallTerms {
    let d1 = (phi.dim + 1) as f64;
    let phi_l1 = phi.l1_norm();
    let c_l1 = damping.spatial_l1.unwrap_or(f64::INFINITY);
    let c_weight = (k * 0.5f64.powi(phi.dim as i32 + 1)).max(1.0);
    let a = cumulative(times, |t| field.div_sup(t) + d1 * split.b2(t));
    let b_r = cumulative(times, |t| c_weight * c_l1 + k * field.div_sup(t) * phi_l1);
    let c_r = cumulative(times, |t| d1 * split.b1_tail_l1(t, phi.r, phi.dim));
    GronwallTerms {
        times: times.to_vec(),
        a,
        b_r,
        c_r,
        log_factor: (PI * PI / (4.0 * delta)).ln_1p(),
        k,
        phi_l1,
    }
}

/// `Γ_{δ,R}` with `β_δ`, `φ_R` and the Gronwall bound
/// `exp(A)(Γ(0) + B_R + log(1+π²/(4δ)) C_R)` at every time node.
pub fn gronwall_log_diagnostic(
    u: &DensityRepresentation,
    delta: f64,
    r: f64,
    field: &VelocityFieldSpec,
    damping: &DampingFieldSpec,
    split: &GrowthSplit,
    quad: &SpaceTimeQuadrature,
) -> Result<(GammaTrace, GronwallTerms), WeakFormError> {
    let beta = crate::renorm::make_beta_log(delta);
    let phi = crate::renorm::make_phi_r(r, quad.space.dim());
    let mut trace = gamma_trace(u, &beta, &phi, field, damping, quad)?;
    let terms = gronwall_terms(field, damping, split, &phi, delta, beta.sup_rbeta_prime, &quad.times);
    let g0 = trace.gamma[0];
    trace.bound = (0..trace.times.len()).map(|k| terms.bound(k, g0)).collect();
    Ok((trace, terms))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UniquenessVerdict {
    /// No sample exceeds the level: nothing to exclude.
    TriviallyZero,
    /// The δ → 0 limit of the bound is below the measured superlevel mass.
    ForcesZero,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessReport {
    pub verdict: UniquenessVerdict,
    /// Worst superlevel measure over the time nodes and the node where it occurs.
    pub m: f64,
    pub worst_time: f64,
    /// `(δ, m/2^{d+1}, bound/log(1+γ/δ), holds)`.
    pub per_delta: Vec<(f64, f64, f64, bool)>,
    /// `exp(A) · C_R^∞ · 2^{d+1}` with `C_R` at its large-`R` limit.
    pub limit_bound: f64,
}

/// Data of the Gronwall bound needed by the uniqueness argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundData {
    pub a: f64,
    pub b_r: f64,
    pub c_r: f64,
    /// `lim_{R→∞} C_R`.
    pub c_r_limit: f64,
    /// Extra δ-independent source multiplying the log factor (zero outside the BMO setting).
    pub d: f64,
}

impl BoundData {
    pub fn from_terms(terms: &GronwallTerms, c_r_limit: f64) -> Self {
        let k = terms.last();
        Self {
            a: terms.a[k],
            b_r: terms.b_r[k],
            c_r: terms.c_r[k],
            c_r_limit,
            d: 0.0,
        }
    }
}

/// Superlevel contradiction test: `m = |{x ∈ B_{R₀} : arctan²u > γ}|` against
/// `2^{d+1} exp(A)(B_R + log(1+π²/(4δ))C_R) / log(1+γ/δ)` for each `δ`.
pub fn uniqueness_probe(
    u: &DensityRepresentation,
    gamma_level: f64,
    r0: f64,
    delta_list: &[f64],
    bound: &BoundData,
) -> UniquenessReport {
    let d = u.dim;
    let two = 2f64.powi(d as i32 + 1);
    let inside: Vec<usize> = (0..u.n_points())
        .filter(|&i| u.point(i).iter().map(|v| v * v).sum::<f64>().sqrt() < r0)
        .collect();
    let (m, worst_time) = (0..u.times.len())
        .map(|k| {
            let count = inside
                .iter()
                .filter(|&&i| {
                    let a = u.value(k, i).atan();
                    a * a > gamma_level
                })
                .count();
            (count as f64 * u.cell_volume, u.times[k])
        })
        .fold((0.0, 0.0), |acc, v| if v.0 > acc.0 { v } else { acc });
    let per_delta = delta_list
        .iter()
        .map(|&delta| {
            let lhs = m / two;
            let logf = (PI * PI / (4.0 * delta)).ln_1p();
            let rhs = bound.a.exp() * (bound.b_r + logf * (bound.c_r + bound.d)) / (gamma_level / delta).ln_1p();
            (delta, lhs, rhs, lhs <= rhs)
        })
        .collect();
    let limit_bound = bound.a.exp() * (bound.c_r_limit + bound.d) * two;
    let verdict = if m == 0.0 {
        UniquenessVerdict::TriviallyZero
    } else if limit_bound < m {
        UniquenessVerdict::ForcesZero
    } else {
        UniquenessVerdict::Inconclusive
    };
    UniquenessReport {
        verdict,
        m,
        worst_time,
        per_delta,
        limit_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{growth_split, AnalyticDamping, AnalyticField};
    use crate::renorm::{make_beta_arctan, make_phi_r};
    use crate::solution::DensityMode;

    fn bump() -> InitialDatum {
        InitialDatum::SmoothBump {
            center: vec![0.0],
            radius: 0.8,
            height: 1.0,
        }
    }

    fn test_fn() -> BumpTest {
        BumpTest {
            center: vec![0.1],
            radius: 1.5,
            cutoff: TimeCutoff {
                flat_until: 0.6,
                zero_at: 0.95,
            },
        }
    }

    fn on_quad<F: Fn(f64, &[f64]) -> f64 + Sync>(q: &SpaceTimeQuadrature, f: F) -> DensityRepresentation {
        DensityRepresentation::from_fn(DensityMode::Pointwise, &q.seeds(), &q.times, f)
    }

    #[test]
    fn cutoff_derivative_matches_finite_differences() {
        let c = TimeCutoff {
            flat_until: 0.2,
            zero_at: 0.7,
        };
        for t in [0.25, 0.4, 0.55, 0.69] {
            let h = 1e-6;
            let fd = (c.value(t + h) - c.value(t - h)) / (2.0 * h);
            assert!((fd - c.derivative(t)).abs() < 1e-6);
        }
        assert_eq!(c.value(0.1), 1.0);
        assert_eq!(c.value(0.8), 0.0);
    }

    #[test]
    fn bump_gradient_matches_finite_differences() {
        let b = BumpTest {
            center: vec![0.2, -0.1],
            radius: 1.0,
            cutoff: TimeCutoff {
                flat_until: 0.5,
                zero_at: 1.0,
            },
        };
        let x = [0.4, 0.3];
        let mut g = [0.0; 2];
        b.gradient(0.0, &x, &mut g);
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += 1e-6;
            xm[j] -= 1e-6;
            let fd = (b.value(0.0, &xp) - b.value(0.0, &xm)) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn stationary_solution_has_tiny_residual() {
        let q = SpaceTimeQuadrature::new(BoxGrid::new(1, 2.0, 256), 1.0, 256);
        let zero = VelocityFieldSpec::analytic("zero", AnalyticField::Zero { dim: 1 }, 1.0);
        let c0 = DampingFieldSpec::zero(1);
        let u = on_quad(&q, |_, x| bump().eval(x));
        for beta in [make_beta_arctan(1.0), crate::renorm::make_beta_log(1e-2)] {
            let r = weak_residual(&u, &beta, &test_fn(), &zero, &c0, &bump(), &q).unwrap();
            assert!(r.residual <= 1e-6, "{}", r.residual);
        }
    }

    #[test]
    fn exponential_growth_residual_converges() {
        let zero = VelocityFieldSpec::analytic("zero", AnalyticField::Zero { dim: 1 }, 1.0);
        let one = DampingFieldSpec::analytic("one", 1, AnalyticDamping::Constant { value: 1.0 }, 1.0);
        let levels: Vec<_> = [8usize, 16, 32]
            .iter()
            .map(|&k| SpaceTimeQuadrature::new(BoxGrid::new(1, 2.0, 16 * k), 1.0, k))
            .collect();
        let rep = weak_residual_study(
            &levels,
            |q| Ok(on_quad(q, |t, x| bump().eval(x) * t.exp())),
            &make_beta_arctan(1.0),
            &test_fn(),
            &zero,
            &one,
            &bump(),
        )
        .unwrap();
        assert!(rep.order.unwrap() >= 2.0, "{:?}", rep.history);
    }

    #[test]
    fn tampered_solution_is_flagged() {
        let q = SpaceTimeQuadrature::new(BoxGrid::new(1, 2.0, 128), 1.0, 128);
        let zero = VelocityFieldSpec::analytic("zero", AnalyticField::Zero { dim: 1 }, 1.0);
        let c0 = DampingFieldSpec::zero(1);
        let u = on_quad(&q, |t, x| bump().eval(x) + if t > 0.5 { 1.0 } else { 0.0 });
        let rep = weak_residual(&u, &make_beta_arctan(1.0), &test_fn(), &zero, &c0, &bump(), &q).unwrap();
        assert!(rep.residual > 0.1 * rep.test_mass);
    }

    #[test]
    fn support_overflow() {
        let q = SpaceTimeQuadrature::new(BoxGrid::new(1, 1.0, 16), 1.0, 4);
        let zero = VelocityFieldSpec::analytic("zero", AnalyticField::Zero { dim: 1 }, 1.0);
        let u = on_quad(&q, |_, _| 0.0);
        let err = weak_residual(&u, &make_beta_arctan(1.0), &test_fn(), &zero, &DampingFieldSpec::zero(1), &bump(), &q);
        assert!(matches!(err, Err(WeakFormError::SupportOverflow { .. })));
    }

    #[test]
    fn gamma_of_zero_and_stationary() {
        let q = SpaceTimeQuadrature::new(BoxGrid::new(1, 3.0, 64), 1.0, 16);
        let zero = VelocityFieldSpec::analytic("zero", AnalyticField::Zero { dim: 1 }, 1.0);
        let c0 = DampingFieldSpec::zero(1);
        let phi = make_phi_r(2.0, 1);
        let beta = crate::renorm::make_beta_log(1e-2);
        let g = gamma_trace(&on_quad(&q, |_, _| 0.0), &beta, &phi, &zero, &c0, &q).unwrap();
        assert!(g.gamma.iter().chain(&g.rhs).all(|v| *v == 0.0));
        let g = gamma_trace(&on_quad(&q, |_, x| bump().eval(x)), &beta, &phi, &zero, &c0, &q).unwrap();
        assert!(g.consistency <= 1e-8);
        assert!(g.gamma.iter().all(|v| *v == g.gamma[0] && *v > 0.0));
    }

    #[test]
    fn l2_envelopes() {
        let q = SpaceTimeQuadrature::new(BoxGrid::new(1, 3.0, 128), 1.0, 8);
        let zero = VelocityFieldSpec::analytic("zero", AnalyticField::Zero { dim: 1 }, 1.0);
        let one = DampingFieldSpec::analytic("one", 1, AnalyticDamping::Constant { value: 1.0 }, 1.0);
        let u = on_quad(&q, |t, x| bump().eval(x) * t.exp());
        let rep = l2_energy_diagnostic(&u, &zero, &one, &q).unwrap();
        assert!((rep.worst_ratio - 1.0).abs() < 1e-12);
        let sing = DampingFieldSpec::analytic("s", 1, AnalyticDamping::InverseSqrt { radius: 1.0 }, 1.0);
        assert_eq!(l2_energy_diagnostic(&u, &zero, &sing, &q), Err(WeakFormError::UnboundedDamping));
    }

    #[test]
    fn compact_support_makes_bound_delta_independent() {
        let f = VelocityFieldSpec::analytic("bump", AnalyticField::CompactBump, 1.0);
        let split = growth_split(&f).unwrap();
        let times = [0.0, 0.5, 1.0];
        let phi = make_phi_r(8.0, 1);
        let a = gronwall_terms(&f, &DampingFieldSpec::zero(1), &split, &phi, 1e-2, 2.0, &times);
        let b = gronwall_terms(&f, &DampingFieldSpec::zero(1), &split, &phi, 1e-6, 2.0, &times);
        assert_eq!(a.c_r[2], 0.0);
        assert_eq!(a.bound(2, 0.0), b.bound(2, 0.0));
    }

    #[test]
    fn probe_verdicts() {
        let q = SpaceTimeQuadrature::new(BoxGrid::new(1, 2.0, 64), 1.0, 4);
        let data = BoundData {
            a: 1.0,
            b_r: 0.5,
            c_r: 0.0,
            c_r_limit: 0.0,
            d: 0.0,
        };
        let zero = on_quad(&q, |_, _| 0.0);
        let r = uniqueness_probe(&zero, 1e-6, 1.5, &[1e-2, 1e-6, 1e-12], &data);
        assert_eq!(r.verdict, UniquenessVerdict::TriviallyZero);
        let injected = on_quad(&q, |t, x| t * bump().eval(x));
        let r = uniqueness_probe(&injected, 1e-6, 1.5, &[1e-2, 1e-6, 1e-12], &data);
        assert_eq!(r.verdict, UniquenessVerdict::ForcesZero);
        assert!(!r.per_delta.last().unwrap().3);
    }
}
