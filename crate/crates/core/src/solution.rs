//! Candidate solutions built from characteristics: the pointwise formula
//! `u(t,x) = u₀(X⁻¹)/JX(t,X⁻¹) · exp(∫c)` and its pushforward form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{DampingFieldSpec, FieldError, VelocityFieldSpec};
use crate::flow::{self, deposit_cic, Direction, FlowError, FlowMap, FlowOptions, JacobianTrack, SeedGrid};
use crate::grid::BoxGrid;
use crate::par;
use crate::quadrature::{csum, gauss_legendre};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolutionError {
    #[error("every trajectory sample lies within eta={eta} of the singular set")]
    AllTruncated { eta: f64 },
    #[error("Jacobian vanished at seed {seed}")]
    JacobianVanished { seed: usize },
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Closed-form initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDatum {
    Zero { dim: usize },
    /// Indicator of the open box `∏(loⱼ, hiⱼ)`.
    Indicator { lo: Vec<f64>, hi: Vec<f64> },
    /// `height · exp(1 − 1/(1 − |x−c|²/r²))` inside the ball, zero outside.
    SmoothBump { center: Vec<f64>, radius: f64, height: f64 },
    /// `height · (1 − |x−c|²/r²)⁴` inside the ball, zero outside.
    PolyBump { center: Vec<f64>, radius: f64, height: f64 },
    Gaussian { center: Vec<f64>, sigma: f64, height: f64 },
}

impl InitialDatum {
    pub fn dim(&self) -> usize {
        match self {
            InitialDatum::Zero { dim } => *dim,
            InitialDatum::Indicator { lo, .. } => lo.len(),
            InitialDatum::SmoothBump { center, .. }
            | InitialDatum::PolyBump { center, .. }
            | InitialDatum::Gaussian { center, .. } => center.len(),
        }
    }

    fn scaled_dist2(center: &[f64], x: &[f64], scale: f64) -> f64 {
        center
            .iter()
            .zip(x)
            .map(|(c, v)| (v - c) * (v - c))
            .sum::<f64>()
            / (scale * scale)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            InitialDatum::Zero { .. } => 0.0,
            InitialDatum::Indicator { lo, hi } => {
                let inside = x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v > *a && *v < *b);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            InitialDatum::SmoothBump { center, radius, height } => {
                let q = Self::scaled_dist2(center, x, *radius);
                if q < 1.0 {
                    height * (1.0 - 1.0 / (1.0 - q)).exp()
                } else {
                    0.0
                }
            }
            InitialDatum::PolyBump { center, radius, height } => {
                let q = Self::scaled_dist2(center, x, *radius);
                if q < 1.0 {
                    let p = (1.0 - q) * (1.0 - q);
                    height * p * p
                } else {
                    0.0
                }
            }
            InitialDatum::Gaussian { center, sigma, height } => {
                height * (-0.5 * Self::scaled_dist2(center, x, *sigma)).exp()
            }
        }
    }

    /// Radius of a ball about the origin containing the support, if bounded.
    pub fn support_radius(&self) -> Option<f64> {
        let norm = |c: &[f64]| c.iter().map(|v| v * v).sum::<f64>().sqrt();
        match self {
            InitialDatum::Zero { .. } => Some(0.0),
            InitialDatum::Indicator { lo, hi } => Some(
                lo.iter()
                    .zip(hi)
                    .map(|(a, b)| a.abs().max(b.abs()).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            ),
            InitialDatum::SmoothBump { center, radius, .. } | InitialDatum::PolyBump { center, radius, .. } => {
                Some(norm(center) + radius)
            }
            InitialDatum::Gaussian { .. } => None,
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            InitialDatum::Zero { .. } => 0.0,
            InitialDatum::Indicator { .. } => 1.0,
            InitialDatum::SmoothBump { height, .. }
            | InitialDatum::PolyBump { height, .. }
            | InitialDatum::Gaussian { height, .. } => height.abs(),
        }
    }
}

/// `D(t_k, xᵢ) = ∫₀^{t_k} c(τ, X(τ, xᵢ)) dτ` along every stored trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DampingAccumulator {
    n_times: usize,
    pub values: Vec<f64>,
    pub eta: f64,
    /// Number of trajectory samples set to zero by the truncation.
    pub truncated_nodes: usize,
    /// Trajectories whose every sample was truncated.
    pub fully_truncated: usize,
    /// `Σᵢ |cell| ∫₀ᵀ |c(τ, X(τ, xᵢ))| dτ`.
    pub total_l1: f64,
}

impl DampingAccumulator {
    #[inline]
    pub fn at(&self, seed: usize, k: usize) -> f64 {
        self.values[seed * self.n_times + k]
    }

    pub fn zero(n_seeds: usize, n_times: usize) -> Self {
        Self {
            n_times,
            values: vec![0.0; n_seeds * n_times],
            eta: 0.0,
            truncated_nodes: 0,
            fully_truncated: 0,
            total_l1: 0.0,
        }
    }
}

/// Trapezoid rule in time with the integrand zeroed within `eta` of the singular set.
///
/// Fails only if every sample of every trajectory was truncated.
pub fn damping_integral(damping: &DampingFieldSpec, flow: &FlowMap, eta: f64) -> Result<DampingAccumulator, SolutionError> {
    assert!(eta >= 0.0, "eta must be nonnegative");
    let nt = flow.n_times();
    let w = &flow.time_grid;
    let vol = flow.seeds().cell_volume();
    let rows = par::map_indexed(flow.n_seeds(), |i| {
        let mut d = vec![0.0; nt];
        let mut cut = 0usize;
        let mut abs_int = 0.0;
        let sample = |k: usize, cut: &mut usize| match damping.eval_c_truncated(w[k], flow.position(i, k), eta) {
            Some(v) => v,
            None => {
                *cut += 1;
                0.0
            }
        };
        let mut prev = sample(0, &mut cut);
        for k in 1..nt {
            let cur = sample(k, &mut cut);
            let h = 0.5 * (w[k] - w[k - 1]);
            d[k] = d[k - 1] + h * (prev + cur);
            abs_int += h * (prev.abs() + cur.abs());
            prev = cur;
        }
        (d, cut, abs_int * vol)
    });
    let fully = rows.iter().filter(|r| r.1 == nt).count();
    if fully == flow.n_seeds() && !damping.singular_set.is_empty() {
        return Err(SolutionError::AllTruncated { eta });
    }
    let truncated_nodes = rows.iter().map(|r| r.1).sum();
    let total_l1 = csum(rows.iter().map(|r| r.2));
    Ok(DampingAccumulator {
        n_times: nt,
        values: rows.into_iter().flat_map(|r| r.0).collect(),
        eta,
        truncated_nodes,
        fully_truncated: fully,
        total_l1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    Pointwise,
    Pushforward,
}

/// Density samples `u(t_k, pᵢ)` on a fixed set of points, one row per time.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRepresentation {
    pub mode: DensityMode,
    pub dim: usize,
    pub times: Vec<f64>,
    /// Evaluation points (pointwise) or target-grid centres (pushforward), flattened.
    pub points: Vec<f64>,
    pub cell_volume: f64,
    pub values: Vec<f64>,
    /// Pushforward only: total particle weight per time.
    pub particle_mass: Vec<f64>,
    /// Pushforward only: fraction of particle weight outside the target grid per time.
    pub out_of_domain: Vec<f64>,
}

impl DensityRepresentation {
    pub fn n_points(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.n_points();
        &self.values[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.n_points() + i]
    }

    /// `Σᵢ u(t_k, pᵢ) |cell|`.
    pub fn mass(&self, k: usize) -> f64 {
        csum(self.row(k).iter().map(|u| u * self.cell_volume))
    }

    /// Discrete L¹ distance between row `k` of two representations on the same points.
    pub fn l1_distance(&self, other: &Self, k: usize, k_other: usize) -> f64 {
        csum(
            self.row(k)
                .iter()
                .zip(other.row(k_other))
                .map(|(a, b)| (a - b).abs() * self.cell_volume),
        )
    }

    /// Pointwise difference `self − other` on shared points and times.
    pub fn difference(&self, other: &Self) -> Self {
        assert_eq!(self.values.len(), other.values.len(), "representations must share points and times");
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
        out
    }

    /// Representation built from an explicit closure, e.g. a closed-form solution.
    pub fn from_fn<F>(mode: DensityMode, grid: &SeedGrid, times: &[f64], u: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Sync,
    {
        let n = grid.len();
        let values = par::map_indexed(times.len() * n, |idx| u(times[idx / n], grid.point(idx % n)));
        Self {
            mode,
            dim: grid.dim(),
            times: times.to_vec(),
            points: grid.points().to_vec(),
            cell_volume: grid.cell_volume(),
            values,
            particle_mass: Vec::new(),
            out_of_domain: Vec::new(),
        }
    }
}

/// `u(T, yᵢ) = u₀(X⁻¹(T,yᵢ)) / JX(T, X⁻¹(T,yᵢ)) · exp(D(T, X⁻¹(T,yᵢ)))` from a
/// backward map whose track and accumulator were computed along it.
pub fn represent_pointwise(
    u0: &InitialDatum,
    backward: &FlowMap,
    track: &JacobianTrack,
    acc: &DampingAccumulator,
) -> Result<DensityRepresentation, SolutionError> {
    if backward.direction != Direction::Backward {
        return Err(SolutionError::Unsupported("pointwise representation needs a backward map".into()));
    }
    let last = backward.n_times() - 1;
    let values = par::try_map_indexed(backward.n_seeds(), |i| {
        let jx = track.jx_at(i, last);
        if !(jx > 0.0) || !jx.is_finite() {
            return Err(SolutionError::JacobianVanished { seed: i });
        }
        Ok(u0.eval(backward.position(i, 0)) / jx * acc.at(i, last).exp())
    })?;
    let seeds = backward.seeds();
    Ok(DensityRepresentation {
        mode: DensityMode::Pointwise,
        dim: seeds.dim(),
        times: vec![backward.time_grid[last]],
        points: seeds.points().to_vec(),
        cell_volume: seeds.cell_volume(),
        values,
        particle_mass: Vec::new(),
        out_of_domain: Vec::new(),
    })
}

/// Numerical settings for building pointwise solutions at many times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointwiseSettings {
    /// RK4 step used for every backward integration.
    pub dt: f64,
    pub eta: f64,
    pub flow: FlowOptions,
}

/// Pointwise representation on `points` at each time in `times`, integrating
/// backward from every `t` separately.
pub fn pointwise_solution(
    field: &VelocityFieldSpec,
    damping: &DampingFieldSpec,
    u0: &InitialDatum,
    points: &SeedGrid,
    times: &[f64],
    settings: &PointwiseSettings,
) -> Result<DensityRepresentation, SolutionError> {
    let n = points.len();
    let mut values = Vec::with_capacity(n * times.len());
    for &t in times {
        if t <= 0.0 {
            values.extend((0..n).map(|i| u0.eval(points.point(i))));
            continue;
        }
        let steps = ((t / settings.dt).round() as usize).max(1);
        let back = flow::integrate_interval(field, points, t, 0.0, steps, &settings.flow)?;
        let track = flow::jacobian(field, &back)?;
        let acc = damping_integral(damping, &back, settings.eta)?;
        values.extend(represent_pointwise(u0, &back, &track, &acc)?.values);
    }
    Ok(DensityRepresentation {
        mode: DensityMode::Pointwise,
        dim: points.dim(),
        times: times.to_vec(),
        points: points.points().to_vec(),
        cell_volume: points.cell_volume(),
        values,
        particle_mass: Vec::new(),
        out_of_domain: Vec::new(),
    })
}

/// Deposits particles `(X(t_k, xᵢ), u₀(xᵢ) e^{D(t_k,xᵢ)} |cell|)` onto `target`
/// by cloud-in-cell for each requested time index.
pub fn represent_pushforward(
    u0: &InitialDatum,
    forward: &FlowMap,
    acc: &DampingAccumulator,
    target: &BoxGrid,
    time_indices: &[usize],
) -> Result<DensityRepresentation, SolutionError> {
    if forward.direction != Direction::Forward {
        return Err(SolutionError::Unsupported("pushforward needs a forward map".into()));
    }
    let seeds = forward.seeds();
    let vol = seeds.cell_volume();
    let base: Vec<f64> = (0..seeds.len()).map(|i| u0.eval(seeds.point(i)) * vol).collect();
    let rows = par::map_indexed(time_indices.len(), |j| {
        let k = time_indices[j];
        let weights: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, b)| if *b == 0.0 { 0.0 } else { b * acc.at(i, k).exp() })
            .collect();
        let total = csum(weights.iter().copied());
        let (mass, lost) = deposit_cic(
            target,
            weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (forward.position(i, k).to_vec(), *w)),
        );
        let density: Vec<f64> = mass.into_iter().map(|m| m / target.cell_volume()).collect();
        let frac = if total != 0.0 { lost / total } else { 0.0 };
        (density, total, frac)
    });
    let mut values = Vec::with_capacity(target.len() * time_indices.len());
    let mut particle_mass = Vec::new();
    let mut out_of_domain = Vec::new();
    for (d, m, f) in rows {
        values.extend(d);
        particle_mass.push(m);
        out_of_domain.push(f);
    }
    Ok(DensityRepresentation {
        mode: DensityMode::Pushforward,
        dim: target.dim(),
        times: time_indices.iter().map(|&k| forward.time_grid[k]).collect(),
        points: target.centers(),
        cell_volume: target.cell_volume(),
        values,
        particle_mass,
        out_of_domain,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrabilityVerdict {
    Convergent,
    Divergent,
    Undecided,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegrabilityProbe {
    pub verdict: IntegrabilityVerdict,
    /// `(η, I_η)` in the order of the refinement list.
    pub integrals: Vec<(f64, f64)>,
}

impl IntegrabilityProbe {
    /// `I_{η_{k+1}} / I_{η_k}` for consecutive refinements.
    pub fn growth_factors(&self) -> Vec<f64> {
        self.integrals.windows(2).map(|w| w[1].1 / w[0].1).collect()
    }
}

/// Default truncation radii, fine enough for the convergence test to resolve
/// increments below `1e-8`.
pub const DEFAULT_ETAS: [f64; 9] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10];

/// `I_η = ∫_{η ≤ |x| ≤ 1} u₀ e^{t c(x)} dx` (d = 1) over decreasing `η`.
///
/// Divergent when the last refinement multiplies `I_η` by at least 10 (or
/// overflows); convergent when the last increment is below `1e-8`.
pub fn integrability_probe(
    u0: &InitialDatum,
    damping: &DampingFieldSpec,
    t: f64,
    etas: &[f64],
) -> Result<IntegrabilityProbe, SolutionError> {
    if u0.dim() != 1 || damping.dim != 1 {
        return Err(SolutionError::Unsupported("integrability probe is one-dimensional".into()));
    }
    if etas.len() < 2 || etas.windows(2).any(|w| !(w[1] < w[0] && w[1] > 0.0)) || etas[0] >= 1.0 {
        return Err(SolutionError::Unsupported("eta list must decrease within (0, 1)".into()));
    }
    // geometric panels from 1 down to the finest eta; I_η accumulates panel by panel
    let ratio: f64 = 1.05;
    let mut edges = vec![1.0];
    let finest = *etas.last().unwrap();
    let mut marks = etas.iter().peekable();
    let mut a: f64 = 1.0;
    while a > finest {
        let mut next = a / ratio;
        if let Some(&&m) = marks.peek() {
            if next <= m {
                next = m;
                marks.next();
            }
        }
        edges.push(next);
        a = next;
    }
    let mut integrals = Vec::with_capacity(etas.len());
    let mut acc = 0.0;
    let mut it = etas.iter();
    let mut target = it.next();
    for w in edges.windows(2) {
        let (hi, lo) = (w[0], w[1]);
        for (s, wt) in gauss_legendre(16, lo, hi) {
            for x in [s, -s] {
                let u = u0.eval(&[x]);
                if u != 0.0 {
                    acc += wt * u * (t * damping.eval_c(t, &[x])?).exp();
                }
            }
        }
        if let Some(&eta) = target {
            if lo <= eta {
                integrals.push((eta, acc));
                target = it.next();
            }
        }
    }
    let n = integrals.len();
    let (prev, last) = (integrals[n - 2].1, integrals[n - 1].1);
    let verdict = if !last.is_finite() || (prev > 0.0 && last / prev >= 10.0) {
        IntegrabilityVerdict::Divergent
    } else if (last - prev).abs() < 1e-8 {
        IntegrabilityVerdict::Convergent
    } else {
        IntegrabilityVerdict::Undecided
    };
    Ok(IntegrabilityProbe { verdict, integrals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{AnalyticDamping, AnalyticField};
    use crate::flow::{integrate_flow, jacobian};
    use std::f64::consts::E;

    fn bump1() -> InitialDatum {
        InitialDatum::SmoothBump {
            center: vec![0.0],
            radius: 0.9,
            height: 1.0,
        }
    }

    #[test]
    fn damping_examples() {
        let s = SeedGrid::uniform(1, 1.0, 10);
        let b = VelocityFieldSpec::analytic("zero", AnalyticField::Zero { dim: 1 }, 1.0);
        let f = integrate_flow(&b, &s, 20, Direction::Forward).unwrap();
        let acc = damping_integral(&DampingFieldSpec::zero(1), &f, 0.0).unwrap();
        assert!(acc.values.iter().all(|v| *v == 0.0));
        let c = DampingFieldSpec::analytic("c", 1, AnalyticDamping::Constant { value: 0.7 }, 1.0);
        let acc = damping_integral(&c, &f, 0.0).unwrap();
        for i in 0..s.len() {
            assert_eq!(acc.at(i, 0), 0.0);
            for k in 0..f.n_times() {
                assert!((acc.at(i, k) - 0.7 * f.time_grid[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_damping_l1_approaches_four() {
        let c = DampingFieldSpec::analytic("s", 1, AnalyticDamping::InverseSqrt { radius: 1.0 }, 1.0);
        let b = VelocityFieldSpec::analytic("zero", AnalyticField::Zero { dim: 1 }, 1.0);
        let mut last = 0.0;
        for n in [2_000, 20_000] {
            let s = SeedGrid::uniform(1, 1.0, n);
            let f = integrate_flow(&b, &s, 2, Direction::Forward).unwrap();
            let acc = damping_integral(&c, &f, 1e-9).unwrap();
            last = acc.total_l1;
        }
        assert!((last - 4.0).abs() < 0.02 * 4.0, "{last}");
    }

    #[test]
    fn all_truncated_is_reported() {
        let c = DampingFieldSpec::analytic("s", 1, AnalyticDamping::InverseSqrt { radius: 1.0 }, 1.0);
        let b = VelocityFieldSpec::analytic("zero", AnalyticField::Zero { dim: 1 }, 1.0);
        let s = SeedGrid::uniform(1, 0.1, 4);
        let f = integrate_flow(&b, &s, 2, Direction::Forward).unwrap();
        assert!(matches!(damping_integral(&c, &f, 1.0), Err(SolutionError::AllTruncated { .. })));
    }

    #[test]
    fn pointwise_pure_damping_matches_exponential() {
        let s = SeedGrid::uniform(1, 2.0, 64);
        let b = VelocityFieldSpec::analytic("zero", AnalyticField::Zero { dim: 1 }, 1.0);
        let c = DampingFieldSpec::analytic("c", 1, AnalyticDamping::BallIndicator { height: 1.0, radius: 1.0 }, 1.0);
        let settings = PointwiseSettings {
            dt: 0.01,
            eta: 0.0,
            flow: FlowOptions::default(),
        };
        let times = [0.0, 0.5, 1.0];
        let u = pointwise_solution(&b, &c, &bump1(), &s, &times, &settings).unwrap();
        for (k, t) in times.iter().enumerate() {
            for i in 0..s.len() {
                let x = s.point(i);
                let want = bump1().eval(x) * (t * c.eval_c(*t, x).unwrap()).exp();
                assert!((u.value(k, i) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pointwise_linear_expansion() {
        let b = VelocityFieldSpec::analytic("lin", AnalyticField::Linear { dim: 1, rate: 1.0 }, 1.0);
        let pts = SeedGrid::from_points(1, vec![E], 1.0).unwrap();
        let back = flow::integrate_interval(&b, &pts, 1.0, 0.0, 1000, &FlowOptions::default()).unwrap();
        let track = jacobian(&b, &back).unwrap();
        let acc = damping_integral(&DampingFieldSpec::zero(1), &back, 0.0).unwrap();
        let u0 = InitialDatum::Gaussian {
            center: vec![0.0],
            sigma: 1.0,
            height: 1.0,
        };
        let u = represent_pointwise(&u0, &back, &track, &acc).unwrap();
        assert!((u.values[0] - u0.eval(&[1.0]) / E).abs() < 1e-10);
    }

    #[test]
    fn pushforward_masses() {
        let s = SeedGrid::uniform(2, 2.0, 40);
        let rot = VelocityFieldSpec::analytic("rot", AnalyticField::Rotation, 1.0);
        let f = integrate_flow(&rot, &s, 50, Direction::Forward).unwrap();
        let acc = damping_integral(&DampingFieldSpec::zero(2), &f, 0.0).unwrap();
        let u0 = InitialDatum::SmoothBump {
            center: vec![0.3, 0.0],
            radius: 1.0,
            height: 1.0,
        };
        let grid = *s.box_grid().unwrap();
        let rep = represent_pushforward(&u0, &f, &acc, &grid, &[0, 25, 50]).unwrap();
        let m0 = rep.particle_mass[0];
        for k in 0..3 {
            assert_eq!(rep.particle_mass[k], m0);
            assert!((rep.mass(k) - m0).abs() < 1e-12);
        }
        // at t = 0 the deposit reproduces u0 on the seed cells
        for i in 0..s.len() {
            assert!((rep.value(0, i) - u0.eval(s.point(i))).abs() < 1e-12);
        }

        let zero = VelocityFieldSpec::analytic("zero", AnalyticField::Zero { dim: 2 }, 1.0);
        let f = integrate_flow(&zero, &s, 10, Direction::Forward).unwrap();
        let one = DampingFieldSpec::analytic("one", 2, AnalyticDamping::Constant { value: 1.0 }, 1.0);
        let acc = damping_integral(&one, &f, 0.0).unwrap();
        let rep = represent_pushforward(&u0, &f, &acc, &grid, &[0, 10]).unwrap();
        assert!((rep.particle_mass[1] - E * rep.particle_mass[0]).abs() < 1e-10 * rep.particle_mass[1]);
    }

    #[test]
    fn probe_verdicts() {
        let u0 = InitialDatum::Indicator { lo: vec![0.0], hi: vec![1.0] };
        let sing = DampingFieldSpec::analytic("s", 1, AnalyticDamping::InverseSqrt { radius: 1.0 }, 1.0);
        let p = integrability_probe(&u0, &sing, 1.0, &[1e-2, 1e-3, 1e-4]).unwrap();
        assert_eq!(p.verdict, IntegrabilityVerdict::Divergent);
        assert!(p.growth_factors().iter().all(|g| *g >= 10.0));

        let bounded = DampingFieldSpec::analytic("b", 1, AnalyticDamping::BallIndicator { height: 1.0, radius: 1.0 }, 1.0);
        let p = integrability_probe(&u0, &bounded, 1.0, &DEFAULT_ETAS).unwrap();
        assert_eq!(p.verdict, IntegrabilityVerdict::Convergent);
        assert!((p.integrals.last().unwrap().1 - E).abs() < 1e-8);

        let p = integrability_probe(&u0, &DampingFieldSpec::zero(1), 1.0, &DEFAULT_ETAS).unwrap();
        assert_eq!(p.verdict, IntegrabilityVerdict::Convergent);
        assert!((p.integrals.last().unwrap().1 - 1.0).abs() < 1e-9);
    }
}
