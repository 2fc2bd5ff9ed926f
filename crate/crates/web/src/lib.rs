//! Browser bindings for a few interactive views of the transport laboratory.
//!
//! Each export is a thin wrapper around a plain Rust function so the numerics
//! can be tested natively; the wrappers only convert errors into `JsError`.

use rough_transport::bmo::{bmo_norm, dyadic_family, jn_decay_check, SampledFunction};
use rough_transport::flow::{integrate_flow_with, FlowOptions};
use rough_transport::grid::BoxGrid;
use rough_transport::renorm::make_beta_log;
use rough_transport::scenario::{analytic_damping, analytic_field, initial_datum};
use rough_transport::solution::{damping_integral, represent_pushforward};
use rough_transport::{DampingFieldSpec, Direction, Regularity, SeedGrid, VelocityFieldSpec};
use wasm_bindgen::prelude::*;

const HALF_WIDTH: f64 = 3.0;

/// Density of the transported datum on a 1D grid at `t = 0` and `t = horizon`.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct DensityView {
    centers: Vec<f64>,
    initial: Vec<f64>,
    transported: Vec<f64>,
    mass: f64,
    lost_fraction: f64,
}

#[wasm_bindgen]
impl DensityView {
    pub fn centers(&self) -> Vec<f64> {
        self.centers.clone()
    }
    pub fn initial(&self) -> Vec<f64> {
        self.initial.clone()
    }
    pub fn transported(&self) -> Vec<f64> {
        self.transported.clone()
    }
    /// Total particle mass carried at the final time.
    pub fn mass(&self) -> f64 {
        self.mass
    }
    /// Fraction of that mass deposited outside the plotting window.
    pub fn lost_fraction(&self) -> f64 {
        self.lost_fraction
    }
}

pub fn density_view(
    field_id: &str,
    damping_id: &str,
    datum_id: &str,
    horizon: f64,
    particles: usize,
    cells: usize,
) -> Result<DensityView, String> {
    if !(horizon > 0.0 && horizon <= 4.0) {
        return Err(format!("horizon must lie in (0, 4], got {horizon}"));
    }
    if !(16..=200_000).contains(&particles) || !(8..=2_000).contains(&cells) {
        return Err("particle count must be in [16, 200000] and cell count in [8, 2000]".into());
    }
    let kind = analytic_field(field_id, 1).ok_or_else(|| format!("unknown field `{field_id}`"))?;
    let field = VelocityFieldSpec::analytic(field_id, kind, horizon);
    if field.dim() != 1 {
        return Err(format!("field `{field_id}` is not one-dimensional"));
    }
    let damp = analytic_damping(damping_id).ok_or_else(|| format!("unknown damping `{damping_id}`"))?;
    let damping = DampingFieldSpec::analytic(damping_id, 1, damp, horizon);
    let u0 = initial_datum(datum_id, 1).ok_or_else(|| format!("unknown datum `{datum_id}`"))?;

    let opts = if field.regularity == Regularity::BvNonsmooth {
        FlowOptions::nonsmooth()
    } else {
        FlowOptions::default()
    };
    let seeds = SeedGrid::uniform(1, HALF_WIDTH, particles);
    let steps = 200;
    let forward = integrate_flow_with(&field, &seeds, steps, Direction::Forward, &opts).map_err(|e| e.to_string())?;
    let acc = damping_integral(&damping, &forward, 1e-8).map_err(|e| e.to_string())?;
    let target = BoxGrid::new(1, HALF_WIDTH, cells);
    let rep = represent_pushforward(&u0, &forward, &acc, &target, &[0, forward.n_times() - 1]).map_err(|e| e.to_string())?;

    Ok(DensityView {
        centers: target.centers(),
        initial: rep.row(0).to_vec(),
        transported: rep.row(1).to_vec(),
        mass: rep.particle_mass[1],
        lost_fraction: rep.out_of_domain[1],
    })
}

#[wasm_bindgen(js_name = densityView)]
pub fn density_view_js(
    field_id: &str,
    damping_id: &str,
    datum_id: &str,
    horizon: f64,
    particles: usize,
    cells: usize,
) -> Result<DensityView, JsError> {
    density_view(field_id, damping_id, datum_id, horizon, particles, cells).map_err(|e| JsError::new(&e))
}

/// Samples of the logarithmic renormalizer and of `r β'(r)` on `[0, r_max]`.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct RenormalizerCurves {
    radii: Vec<f64>,
    beta: Vec<f64>,
    r_beta_prime: Vec<f64>,
    sup_beta: f64,
}

#[wasm_bindgen]
impl RenormalizerCurves {
    pub fn radii(&self) -> Vec<f64> {
        self.radii.clone()
    }
    pub fn beta(&self) -> Vec<f64> {
        self.beta.clone()
    }
    pub fn r_beta_prime(&self) -> Vec<f64> {
        self.r_beta_prime.clone()
    }
    pub fn sup_beta(&self) -> f64 {
        self.sup_beta
    }
    /// Largest sampled `|r β'(r)|`.
    pub fn max_r_beta_prime(&self) -> f64 {
        self.r_beta_prime.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn renormalizer_curves(delta: f64, r_max: f64, samples: usize) -> Result<RenormalizerCurves, String> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(format!("delta must be positive, got {delta}"));
    }
    if !(r_max > 0.0 && r_max.is_finite()) || samples < 2 {
        return Err("need a positive range and at least two samples".into());
    }
    let b = make_beta_log(delta);
    let radii: Vec<f64> = (0..samples).map(|k| r_max * k as f64 / (samples - 1) as f64).collect();
    Ok(RenormalizerCurves {
        beta: radii.iter().map(|&r| b.beta(r)).collect(),
        r_beta_prime: radii.iter().map(|&r| b.r_beta_prime(r)).collect(),
        sup_beta: b.sup_beta,
        radii,
    })
}

#[wasm_bindgen(js_name = renormalizerCurves)]
pub fn renormalizer_curves_js(delta: f64, r_max: f64, samples: usize) -> Result<RenormalizerCurves, JsError> {
    renormalizer_curves(delta, r_max, samples).map_err(|e| JsError::new(&e))
}

/// Superlevel-set decay of `f(x) = |x|^{-p} - 1` (or `log(1/|x|)` when `p = 0`) on `(-1, 1)`.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct SuperlevelDecay {
    thresholds: Vec<f64>,
    log_measures: Vec<f64>,
    bmo_norm: f64,
    rate: f64,
}

#[wasm_bindgen]
impl SuperlevelDecay {
    pub fn thresholds(&self) -> Vec<f64> {
        self.thresholds.clone()
    }
    /// Natural log of the superlevel measure inside the support ball; `-inf` once the set is empty.
    pub fn log_measures(&self) -> Vec<f64> {
        self.log_measures.clone()
    }
    pub fn bmo_norm(&self) -> f64 {
        self.bmo_norm
    }
    /// Fitted exponential rate, or `NaN` when the decay is trivial or unfittable.
    pub fn rate(&self) -> f64 {
        self.rate
    }
}

pub fn superlevel_decay(power: f64, cells: usize) -> Result<SuperlevelDecay, String> {
    if !(0.0..1.0).contains(&power) {
        return Err(format!("power must lie in [0, 1), got {power}"));
    }
    if !(256..=1 << 20).contains(&cells) {
        return Err("cell count must be in [256, 1048576]".into());
    }
    let samples = SampledFunction::from_fn(1, 1.0, cells, |x| {
        let r = x[0].abs();
        if r == 0.0 || r >= 1.0 {
            0.0
        } else if power == 0.0 {
            -r.ln()
        } else {
            r.powf(-power) - 1.0
        }
    });
    let profile = bmo_norm(&samples, &dyadic_family(1, 1.0, 6, 4)).map_err(|e| e.to_string())?;
    let thresholds: Vec<f64> = (2..=12).map(|k| 0.5 * k as f64 * profile.norm_star).collect();
    let log_measures = profile.superlevel_measures(&thresholds).into_iter().map(f64::ln).collect();
    let rate = jn_decay_check(&profile, &thresholds)
        .ok()
        .and_then(|r| r.c_rate())
        .unwrap_or(f64::NAN);
    Ok(SuperlevelDecay {
        thresholds,
        log_measures,
        bmo_norm: profile.norm_star,
        rate,
    })
}

#[wasm_bindgen(js_name = superlevelDecay)]
pub fn superlevel_decay_js(power: f64, cells: usize) -> Result<SuperlevelDecay, JsError> {
    superlevel_decay(power, cells).map_err(|e| JsError::new(&e))
}
