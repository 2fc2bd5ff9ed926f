//! Fixed-step RK4 flow maps over seed grids, Jacobians along trajectories and
//! the flow-level identities (change of variables, compressibility, escape).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{MollifierSpec, Regularity, TimeExtension, VelocityFieldSpec};
use crate::grid::BoxGrid;
use crate::par;
use crate::quadrature::{csum, trapezoid_weights};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("trajectory of seed {seed} escaped radius {radius} at t={t}")]
    StepBlowup { seed: usize, t: f64, radius: f64 },
    #[error("field `{0}` is not smooth; mollify it or allow reduced order")]
    NonsmoothField(String),
    #[error("|∫∇·b| = {value} along seed {seed} exceeds the allowed {limit}")]
    DivergenceUnbounded { seed: usize, value: f64, limit: f64 },
    #[error("Jacobian {value} at seed {seed} outside [e^-L, e^L] with L = {l}")]
    JacobianBounds { seed: usize, value: f64, l: f64 },
    #[error("test function mass outside the seed domain is {tail} (allowed {allowed})")]
    DomainTooSmall { tail: f64, allowed: f64 },
    #[error("invalid seed grid: {0}")]
    BadSeeds(String),
    #[error("invalid time stepping: {0}")]
    BadSteps(String),
    #[error("mollification failed: {0}")]
    Field(#[from] crate::field::FieldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Seed points with a uniform quadrature weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedGrid {
    dim: usize,
    points: Vec<f64>,
    cell_volume: f64,
    bounding_radius: f64,
    grid: Option<BoxGrid>,
}

impl SeedGrid {
    /// Cell centres of `[-r, r]^d` with `n` cells per axis.
    pub fn uniform(dim: usize, half_width: f64, n: usize) -> Self {
        Self::from_box(BoxGrid::new(dim, half_width, n))
    }

    pub fn from_box(grid: BoxGrid) -> Self {
        Self {
            dim: grid.dim(),
            points: grid.centers(),
            cell_volume: grid.cell_volume(),
            bounding_radius: grid.half_width() * (grid.dim() as f64).sqrt(),
            grid: Some(grid),
        }
    }

    pub fn from_points(dim: usize, points: Vec<f64>, cell_volume: f64) -> Result<Self, FlowError> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(FlowError::BadSeeds("point buffer is not a multiple of the dimension".into()));
        }
        if !(cell_volume > 0.0) {
            return Err(FlowError::BadSeeds(format!("cell volume {cell_volume} is not positive")));
        }
        let mut rows: Vec<&[f64]> = points.chunks(dim).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        if rows.windows(2).any(|w| w[0] == w[1]) {
            return Err(FlowError::BadSeeds("duplicate seed points".into()));
        }
        let bounding_radius = points
            .chunks(dim)
            .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(Self {
            dim,
            points,
            cell_volume,
            bounding_radius,
            grid: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    pub fn bounding_radius(&self) -> f64 {
        self.bounding_radius
    }

    pub fn box_grid(&self) -> Option<&BoxGrid> {
        self.grid.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Trajectories leaving this radius abort the run; default `10³ ×` seed radius.
    pub escape_radius: Option<f64>,
    /// Allow integrating a `bv_nonsmooth` field without mollification.
    pub accept_nonsmooth: bool,
    /// Record every `record_stride`-th RK4 step.
    pub record_stride: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            escape_radius: None,
            accept_nonsmooth: false,
            record_stride: 1,
        }
    }
}

impl FlowOptions {
    pub fn nonsmooth() -> Self {
        Self {
            accept_nonsmooth: true,
            ..Self::default()
        }
    }
}

/// Sampled trajectories; always stored in increasing time.
///
/// For a forward map, trajectory `i` starts at seed `i` at the first time node.
/// For a backward map it ends at seed `i` at the last node, so its first node is
/// the preimage of the seed under the flow.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    dim: usize,
    pub direction: Direction,
    pub time_grid: Vec<f64>,
    pub steps: usize,
    seeds: SeedGrid,
    trajectories: Vec<f64>,
}

impl FlowMap {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_seeds(&self) -> usize {
        self.seeds.len()
    }

    pub fn n_times(&self) -> usize {
        self.time_grid.len()
    }

    pub fn seeds(&self) -> &SeedGrid {
        &self.seeds
    }

    #[inline]
    pub fn position(&self, seed: usize, k: usize) -> &[f64] {
        let base = (seed * self.n_times() + k) * self.dim;
        &self.trajectories[base..base + self.dim]
    }

    pub fn trajectory(&self, seed: usize) -> &[f64] {
        let len = self.n_times() * self.dim;
        &self.trajectories[seed * len..(seed + 1) * len]
    }

    /// Index of the node holding the seed itself.
    pub fn anchor_index(&self) -> usize {
        match self.direction {
            Direction::Forward => 0,
            Direction::Backward => self.n_times() - 1,
        }
    }
}

#[inline]
fn rk4_step(field: &VelocityFieldSpec, t: f64, h: f64, y: &mut [f64], k: &mut [Vec<f64>; 4], tmp: &mut [f64]) {
    let d = y.len();
    field.eval_b_into(t, y, &mut k[0]);
    for j in 0..d {
        tmp[j] = y[j] + 0.5 * h * k[0][j];
    }
    field.eval_b_into(t + 0.5 * h, tmp, &mut k[1]);
    for j in 0..d {
        tmp[j] = y[j] + 0.5 * h * k[1][j];
    }
    field.eval_b_into(t + 0.5 * h, tmp, &mut k[2]);
    for j in 0..d {
        tmp[j] = y[j] + h * k[2][j];
    }
    field.eval_b_into(t + h, tmp, &mut k[3]);
    for j in 0..d {
        y[j] += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
    }
}

/// Integrates `ẋ = b(t, x)` from `t_from` to `t_to` (either order) for every seed.
pub fn integrate_interval(
    field: &VelocityFieldSpec,
    seeds: &SeedGrid,
    t_from: f64,
    t_to: f64,
    steps: usize,
    opts: &FlowOptions,
) -> Result<FlowMap, FlowError> {
    if steps == 0 {
        return Err(FlowError::BadSteps("steps must be positive".into()));
    }
    let stride = opts.record_stride.max(1);
    if steps % stride != 0 {
        return Err(FlowError::BadSteps(format!(
            "record stride {stride} does not divide {steps} steps"
        )));
    }
    if field.regularity == Regularity::BvNonsmooth && !opts.accept_nonsmooth {
        return Err(FlowError::NonsmoothField(field.id.clone()));
    }
    if seeds.dim() != field.dim() {
        return Err(FlowError::BadSeeds(format!(
            "seed dimension {} does not match field dimension {}",
            seeds.dim(),
            field.dim()
        )));
    }
    let d = field.dim();
    let direction = if t_to >= t_from {
        Direction::Forward
    } else {
        Direction::Backward
    };
    let (lo, hi) = if t_from <= t_to { (t_from, t_to) } else { (t_to, t_from) };
    let n_rec = steps / stride + 1;
    let dt = (hi - lo) / steps as f64;
    let time_grid: Vec<f64> = (0..n_rec)
        .map(|k| if k + 1 == n_rec { hi } else { lo + (k * stride) as f64 * dt })
        .collect();
    let radius = opts
        .escape_radius
        .unwrap_or(1e3 * seeds.bounding_radius().max(1.0));
    let h = (t_to - t_from) / steps as f64;

    let per_seed = par::try_map_indexed(seeds.len(), |i| {
        let mut y = seeds.point(i).to_vec();
        let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
        let mut tmp = vec![0.0; d];
        let mut out = vec![0.0; n_rec * d];
        let slot = |step: usize| match direction {
            Direction::Forward => step / stride,
            Direction::Backward => n_rec - 1 - step / stride,
        };
        out[slot(0) * d..slot(0) * d + d].copy_from_slice(&y);
        for n in 0..steps {
            let t = t_from + n as f64 * h;
            rk4_step(field, t, h, &mut y, &mut k, &mut tmp);
            let r2: f64 = y.iter().map(|v| v * v).sum();
            if !(r2.sqrt() <= radius) {
                return Err(FlowError::StepBlowup {
                    seed: i,
                    t: t + h,
                    radius,
                });
            }
            if (n + 1) % stride == 0 {
                let s = slot(n + 1);
                out[s * d..s * d + d].copy_from_slice(&y);
            }
        }
        Ok(out)
    })?;

    Ok(FlowMap {
        dim: d,
        direction,
        time_grid,
        steps,
        seeds: seeds.clone(),
        trajectories: per_seed.concat(),
    })
}

/// Forward flow on `[0, T]`, or the backward map from `T` to `0` giving `X⁻¹(T, ·)`.
pub fn integrate_flow(
    field: &VelocityFieldSpec,
    seeds: &SeedGrid,
    steps: usize,
    direction: Direction,
) -> Result<FlowMap, FlowError> {
    integrate_flow_with(field, seeds, steps, direction, &FlowOptions::default())
}

pub fn integrate_flow_with(
    field: &VelocityFieldSpec,
    seeds: &SeedGrid,
    steps: usize,
    direction: Direction,
    opts: &FlowOptions,
) -> Result<FlowMap, FlowError> {
    let t = field.horizon;
    match direction {
        Direction::Forward => integrate_interval(field, seeds, 0.0, t, steps, opts),
        Direction::Backward => integrate_interval(field, seeds, t, 0.0, steps, opts),
    }
}

/// `∫₀^{t_k} ∇·b(s, X(s)) ds` along every stored trajectory and its exponential.
///
/// For a backward map this is the Jacobian at the trajectory's starting point,
/// i.e. `JX(t_k, X⁻¹(T, y))`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianTrack {
    n_times: usize,
    pub div_path_integral: Vec<f64>,
    pub jx: Vec<f64>,
    /// `∫₀ᵀ ‖∇·b(t,·)‖_∞ dt` on the flow's own time grid (trapezoid) or analytic,
    /// whichever is larger.
    pub l: f64,
}

impl JacobianTrack {
    #[inline]
    pub fn jx_at(&self, seed: usize, k: usize) -> f64 {
        self.jx[seed * self.n_times + k]
    }

    #[inline]
    pub fn path_at(&self, seed: usize, k: usize) -> f64 {
        self.div_path_integral[seed * self.n_times + k]
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }
}

pub fn jacobian(field: &VelocityFieldSpec, flow: &FlowMap) -> Result<JacobianTrack, FlowError> {
    let nt = flow.n_times();
    let w = &flow.time_grid;
    let div_sup: Vec<f64> = w.iter().map(|&t| field.div_sup(t)).collect();
    let trap_l = csum(trapezoid_weights(w).iter().zip(&div_sup).map(|(a, b)| a * b));
    let l = trap_l.max(field.div_sup_integral_until(*w.last().unwrap()));
    let limit = 10.0 * l * field.horizon.max(1.0) + 1e-12;
    let per_seed = par::try_map_indexed(flow.n_seeds(), |i| {
        let mut path = vec![0.0; nt];
        let mut prev = field.eval_div_b(w[0], flow.position(i, 0));
        for k in 1..nt {
            let cur = field.eval_div_b(w[k], flow.position(i, k));
            path[k] = path[k - 1] + 0.5 * (w[k] - w[k - 1]) * (prev + cur);
            prev = cur;
        }
        let worst = path.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(worst <= limit) {
            return Err(FlowError::DivergenceUnbounded {
                seed: i,
                value: worst,
                limit,
            });
        }
        let jx: Vec<f64> = path.iter().map(|p| p.exp()).collect();
        let (lo, hi) = ((-l).exp(), l.exp());
        if let Some(&bad) = jx.iter().find(|&&j| j < lo * (1.0 - 1e-12) || j > hi * (1.0 + 1e-12)) {
            return Err(FlowError::JacobianBounds { seed: i, value: bad, l });
        }
        Ok((path, jx))
    })?;
    let (paths, jxs): (Vec<Vec<f64>>, Vec<Vec<f64>>) = per_seed.into_iter().unzip();
    Ok(JacobianTrack {
        n_times: nt,
        div_path_integral: paths.concat(),
        jx: jxs.concat(),
        l,
    })
}

/// First-order finite-difference residuals of `d/dt JX = JX ∇·b(t, X)` and of
/// `d/dt (1/JX) = −(1/JX) ∇·b(t, X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JacobianOdeResidual {
    pub jx_abs: f64,
    pub inv_abs: f64,
    /// Residual divided by the current `JX` (resp. `1/JX`).
    pub jx_rel: f64,
    pub inv_rel: f64,
}

impl JacobianOdeResidual {
    pub fn worst_relative(&self) -> f64 {
        self.jx_rel.max(self.inv_rel)
    }
}

pub fn jacobian_ode_residual(field: &VelocityFieldSpec, flow: &FlowMap, track: &JacobianTrack) -> JacobianOdeResidual {
    let nt = flow.n_times();
    let w = &flow.time_grid;
    let rows = par::map_indexed(flow.n_seeds(), |i| {
        let mut r = [0.0_f64; 4];
        for k in 0..nt.saturating_sub(1) {
            let dt = w[k + 1] - w[k];
            let div = field.eval_div_b(w[k], flow.position(i, k));
            let (j0, j1) = (track.jx_at(i, k), track.jx_at(i, k + 1));
            let res = ((j1 - j0) / dt - j0 * div).abs();
            let inv = ((1.0 / j1 - 1.0 / j0) / dt + div / j0).abs();
            r[0] = r[0].max(res);
            r[1] = r[1].max(inv);
            r[2] = r[2].max(res / j0);
            r[3] = r[3].max(inv * j0);
        }
        r
    });
    let mut out = [0.0_f64; 4];
    for r in rows {
        for j in 0..4 {
            out[j] = out[j].max(r[j]);
        }
    }
    JacobianOdeResidual {
        jx_abs: out[0],
        inv_abs: out[1],
        jx_rel: out[2],
        inv_rel: out[3],
    }
}

/// `|Σᵢ φ(X(t_k, xᵢ)) JX(t_k, xᵢ) |cell| − ∫φ|`.
///
/// `tail_outside_domain` bounds the mass of `φ∘X(t_k)·JX` that the seed domain
/// misses; it must not exceed `1e-8` of the reference integral.
pub fn change_of_variables_residual<F>(
    flow: &FlowMap,
    track: &JacobianTrack,
    k: usize,
    phi: F,
    reference_integral: f64,
    tail_outside_domain: f64,
) -> Result<f64, FlowError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let allowed = 1e-8 * reference_integral.abs();
    if tail_outside_domain > allowed {
        return Err(FlowError::DomainTooSmall {
            tail: tail_outside_domain,
            allowed,
        });
    }
    let vol = flow.seeds().cell_volume();
    let terms = par::map_indexed(flow.n_seeds(), |i| phi(flow.position(i, k)) * track.jx_at(i, k) * vol);
    Ok((csum(terms) - reference_integral).abs())
}

/// Coarse cells used to measure how much the flow compresses volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeCells {
    pub grid: BoxGrid,
}

impl ProbeCells {
    /// Blocks of `block` seed cells per axis over the seed grid's box.
    pub fn blocks_of(seeds: &SeedGrid, block: usize) -> Option<Self> {
        let g = seeds.box_grid()?;
        let n = (g.cells_per_axis() / block.max(1)).max(1);
        let half = g.half_width() * (n * block) as f64 / g.cells_per_axis() as f64;
        Some(Self {
            grid: BoxGrid::new(g.dim(), half, n),
        })
    }
}

/// Cloud-in-cell deposit of unit masses at `positions` onto `grid`; returns the
/// per-cell mass and the mass that fell outside.
pub fn deposit_cic(grid: &BoxGrid, positions: impl Iterator<Item = (Vec<f64>, f64)>) -> (Vec<f64>, f64) {
    let d = grid.dim();
    let n = grid.cells_per_axis();
    let h = grid.spacing();
    let mut mass = vec![0.0; grid.len()];
    let mut lost = 0.0;
    let mut lower = vec![0usize; d];
    let mut frac = vec![0.0; d];
    for (x, w) in positions {
        let mut inside = true;
        for j in 0..d {
            // coordinate in units of cells, measured from the first centre
            let mut s = (x[j] + grid.half_width()) / h - 0.5;
            // particles sitting on a centre deposit into that cell alone
            if (s - s.round()).abs() < 1e-9 {
                s = s.round();
            }
            if !(s >= -0.5 && s <= n as f64 - 0.5) {
                inside = false;
                break;
            }
            let f = s.floor();
            let (i0, fr) = if f < 0.0 {
                (0usize, 0.0)
            } else if f as usize >= n - 1 {
                (n - 1, 0.0)
            } else {
                (f as usize, s - f)
            };
            lower[j] = i0;
            frac[j] = fr;
        }
        if !inside {
            lost += w;
            continue;
        }
        for corner in 0..(1usize << d) {
            let mut wt = w;
            let mut flat = 0usize;
            for j in 0..d {
                let up = (corner >> j) & 1 == 1;
                let idx = if up { (lower[j] + 1).min(n - 1) } else { lower[j] };
                wt *= if up { frac[j] } else { 1.0 - frac[j] };
                flat = flat * n + idx;
            }
            if wt != 0.0 {
                mass[flat] += wt;
            }
        }
    }
    (mass, lost)
}

/// Empirical compressibility constant: the largest ratio of transported seed
/// volume to probe-cell volume over all probe cells and stored times.
pub fn compressibility_estimate(flow: &FlowMap, probe: &ProbeCells) -> f64 {
    let vol = flow.seeds().cell_volume();
    let q = probe.grid.cell_volume();
    let per_time = par::map_indexed(flow.n_times(), |k| {
        let (mass, _) = deposit_cic(
            &probe.grid,
            (0..flow.n_seeds()).map(|i| (flow.position(i, k).to_vec(), vol)),
        );
        mass.into_iter().fold(0.0, f64::max) / q
    });
    per_time.into_iter().fold(0.0, f64::max)
}

/// `|cell| · #{i : |xᵢ| < r, |X(t, xᵢ)| > R}`, maximised over stored times.
pub fn superlevel_escape(flow: &FlowMap, r: f64, big_r: f64) -> f64 {
    let norm = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let anchor = flow.anchor_index();
    let inside: Vec<usize> = (0..flow.n_seeds())
        .filter(|&i| norm(flow.position(i, anchor)) < r)
        .collect();
    let worst = (0..flow.n_times())
        .map(|k| inside.iter().filter(|&&i| norm(flow.position(i, k)) > big_r).count())
        .max()
        .unwrap_or(0);
    worst as f64 * flow.seeds().cell_volume()
}

/// One row of a mollification-convergence table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    /// Cell-averaged `|X^ε(T) − X^{ε/2}(T)|`.
    pub position: f64,
    /// Cell-averaged `|JX^ε(T) − JX^{ε/2}(T)|`.
    pub jacobian: f64,
}

/// Compares flows of `b^ε` and `b^{ε/2}` at the final time for each `ε`.
pub fn flow_convergence_study(
    field: &VelocityFieldSpec,
    eps_list: &[f64],
    seeds: &SeedGrid,
    steps: usize,
    time_extension: TimeExtension,
) -> Result<Vec<ConvergenceRow>, FlowError> {
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(FlowError::BadSteps("eps list must be strictly decreasing".into()));
    }
    let d = field.dim();
    let n = seeds.len() as f64;
    let solve = |eps: f64| -> Result<(FlowMap, JacobianTrack), FlowError> {
        let m = MollifierSpec::with_extension(eps, d, time_extension)?;
        let f = crate::field::mollify(field, &m)?;
        let flow = integrate_flow(&f, seeds, steps, Direction::Forward)?;
        let track = jacobian(&f, &flow)?;
        Ok((flow, track))
    };
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let (fa, ja) = solve(eps)?;
        let (fb, jb) = solve(eps / 2.0)?;
        let last = fa.n_times() - 1;
        let pos = csum((0..seeds.len()).map(|i| {
            fa.position(i, last)
                .iter()
                .zip(fb.position(i, last))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })) / n;
        let jac = csum((0..seeds.len()).map(|i| (ja.jx_at(i, last) - jb.jx_at(i, last)).abs())) / n;
        rows.push(ConvergenceRow {
            eps,
            position: pos,
            jacobian: jac,
        });
    }
    Ok(rows)
}
