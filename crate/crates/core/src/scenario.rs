//! Scenario registry, JSON configuration, orchestration of the diagnostics and
//! artifact output.

use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bmo::{
    bmo_gronwall_diagnostic, bmo_norm, choose_tau0, dyadic_family, jn_decay_check, lemma52_checks, BMOProfile,
    DecayFit, DivergenceSplit, JnReport, Lemma52Report, SampledFunction,
};
use crate::export::{Cell, CsvTable};
use crate::field::{growth_split_checked, AnalyticDamping, AnalyticField, GrowthSplit, TimeExtension};
use crate::flow::{
    change_of_variables_residual, compressibility_estimate, flow_convergence_study, integrate_flow_with, jacobian,
    jacobian_ode_residual, Direction, FlowOptions, ProbeCells,
};
use crate::grid::BoxGrid;
use crate::quadrature::{gauss_legendre, observed_order};
use crate::renorm::{make_beta_arctan, make_phi_r};
use crate::solution::{
    integrability_probe, pointwise_solution, InitialDatum, IntegrabilityVerdict, PointwiseSettings,
    DEFAULT_ETAS,
};
use crate::weak_form::{
    gronwall_log_diagnostic, gronwall_terms, l2_energy_diagnostic, uniqueness_probe, weak_residual, BoundData,
    BumpTest, SpaceTimeQuadrature, TimeCutoff, UniquenessVerdict,
};
use crate::{DampingFieldSpec, DensityRepresentation, SeedGrid, VelocityFieldSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnostic {
    FlowAccuracy,
    JacobianIdentity,
    ChangeOfVariables,
    Compressibility,
    Representation,
    WeakResidual,
    L2Energy,
    Integrability,
    FlowConvergence,
    GronwallLog,
    Uniqueness,
    TamperCheck,
    BmoSuite,
    BmoGronwall,
}

impl Diagnostic {
    pub const ALL: [Diagnostic; 14] = [
        Diagnostic::FlowAccuracy,
        Diagnostic::JacobianIdentity,
        Diagnostic::ChangeOfVariables,
        Diagnostic::Compressibility,
        Diagnostic::Representation,
        Diagnostic::WeakResidual,
        Diagnostic::L2Energy,
        Diagnostic::Integrability,
        Diagnostic::FlowConvergence,
        Diagnostic::GronwallLog,
        Diagnostic::Uniqueness,
        Diagnostic::TamperCheck,
        Diagnostic::BmoSuite,
        Diagnostic::BmoGronwall,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Diagnostic::FlowAccuracy => "flow_accuracy",
            Diagnostic::JacobianIdentity => "jacobian_identity",
            Diagnostic::ChangeOfVariables => "change_of_variables",
            Diagnostic::Compressibility => "compressibility",
            Diagnostic::Representation => "representation",
            Diagnostic::WeakResidual => "weak_residual",
            Diagnostic::L2Energy => "l2_energy",
            Diagnostic::Integrability => "integrability",
            Diagnostic::FlowConvergence => "flow_convergence",
            Diagnostic::GronwallLog => "gronwall_log",
            Diagnostic::Uniqueness => "uniqueness",
            Diagnostic::TamperCheck => "tamper_check",
            Diagnostic::BmoSuite => "bmo_suite",
            Diagnostic::BmoGronwall => "bmo_gronwall",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }

    /// Diagnostics that need `u` to be a distributional solution.
    fn needs_weak_solution(self) -> bool {
        matches!(
            self,
            Diagnostic::WeakResidual
                | Diagnostic::L2Energy
                | Diagnostic::GronwallLog
                | Diagnostic::Uniqueness
                | Diagnostic::TamperCheck
        )
    }
}

pub const FIELD_IDS: [&str; 8] = [
    "zero",
    "linear_expand",
    "linear_contract",
    "rotation",
    "shear",
    "compact_bump",
    "log_divergence",
    "swirl",
];
pub const DAMPING_IDS: [&str; 5] = ["zero", "constant", "unit_ball_indicator", "half_ball_indicator", "inverse_sqrt"];
pub const U0_IDS: [&str; 4] = ["bump", "unit_interval", "poly_bump", "gaussian"];

pub fn analytic_field(id: &str, dim: usize) -> Option<AnalyticField> {
    Some(match id {
        "zero" => AnalyticField::Zero { dim },
        "linear_expand" => AnalyticField::Linear { dim, rate: 1.0 },
        "linear_contract" => AnalyticField::Linear { dim, rate: -1.0 },
        "rotation" => AnalyticField::Rotation,
        "shear" => AnalyticField::Shear,
        "compact_bump" => AnalyticField::CompactBump,
        "log_divergence" => AnalyticField::LogDivergence,
        "swirl" => AnalyticField::Swirl,
        _ => return None,
    })
}

pub fn analytic_damping(id: &str) -> Option<AnalyticDamping> {
    Some(match id {
        "zero" => AnalyticDamping::Zero,
        "constant" => AnalyticDamping::Constant { value: 1.0 },
        "unit_ball_indicator" => AnalyticDamping::BallIndicator {
            height: 1.0,
            radius: 1.0,
        },
        "half_ball_indicator" => AnalyticDamping::BallIndicator {
            height: 0.5,
            radius: 1.0,
        },
        "inverse_sqrt" => AnalyticDamping::InverseSqrt { radius: 1.0 },
        _ => return None,
    })
}

pub fn initial_datum(id: &str, dim: usize) -> Option<InitialDatum> {
    let center = vec![0.0; dim];
    Some(match id {
        "bump" => InitialDatum::SmoothBump {
            center,
            radius: 0.8,
            height: 1.0,
        },
        "unit_interval" => InitialDatum::Indicator {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        },
        "poly_bump" => InitialDatum::PolyBump {
            center,
            radius: 0.8,
            height: 1.0,
        },
        "gaussian" => InitialDatum::Gaussian {
            center,
            sigma: 0.3,
            height: 1.0,
        },
        _ => return None,
    })
}

macro_rules! config_struct {
    ($( $(#[$meta:meta])* $name:ident : $ty:ty ),* $(,)?) => {
        /// A validated experiment description.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct ScenarioConfig {
            $( $(#[$meta])* pub $name: $ty, )*
        }

        #[derive(Debug, Default, Deserialize)]
        #[serde(deny_unknown_fields)]
        struct PartialConfig {
            $( $name: Option<$ty>, )*
        }

        impl ScenarioConfig {
            /// Every key accepted in a configuration file.
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

            fn overlay(&mut self, p: PartialConfig) {
                $( if let Some(v) = p.$name { self.$name = v; } )*
            }
        }
    };
}

config_struct! {
    scenario_id: String,
    dimension: i64,
    /// Final time `T`.
    horizon: f64,
    field_id: String,
    damping_id: String,
    u0_id: String,
    seeds_per_axis: i64,
    /// RK4 steps over `[0, T]`.
    steps: i64,
    box_radius: f64,
    /// Simpson intervals in time on the finest quadrature level.
    time_intervals: i64,
    /// Probe cells per axis for the compressibility estimate.
    probe_cells_per_axis: i64,
    diagnostics: Vec<String>,
    deltas: Vec<f64>,
    radii: Vec<f64>,
    lambdas: Vec<f64>,
    eps_list: Vec<f64>,
    /// Truncation radius around singular damping.
    eta: f64,
    bmo_cells: i64,
    bmo_radius: f64,
    expected_verdict: Option<String>,
    rng_seed: u64,
    output_dir: PathBuf,
}

struct ScenarioInfo {
    id: &'static str,
    description: &'static str,
}

const REGISTRY: [ScenarioInfo; 10] = [
    ScenarioInfo {
        id: "identity",
        description: "b = 0, c = 0: every diagnostic reduces to an exact identity",
    },
    ScenarioInfo {
        id: "linear_expand",
        description: "b = x in 1D: flow, Jacobian and change of variables against closed forms",
    },
    ScenarioInfo {
        id: "linear_contract",
        description: "b = -x in 1D: compressibility constant e",
    },
    ScenarioInfo {
        id: "rotation",
        description: "rigid rotation in 2D over a quarter turn: measure preserving",
    },
    ScenarioInfo {
        id: "shear_bv",
        description: "b = (sign y, 0): convergence of mollified flows across the jump",
    },
    ScenarioInfo {
        id: "compact_support_b",
        description: "compactly supported b: log Gronwall bound independent of delta",
    },
    ScenarioInfo {
        id: "damping_bounded",
        description: "b = 0, c = 1 on [-1, 1]: exact representation and weak residual",
    },
    ScenarioInfo {
        id: "counterexample_L1_damping",
        description: "c = |x|^(-1/2), u0 = 1 on (0, 1): integrable damping without a weak solution",
    },
    ScenarioInfo {
        id: "twin_difference_gronwall",
        description: "difference of two solutions with equal data under a swirl: Gronwall and uniqueness",
    },
    ScenarioInfo {
        id: "bmo_divergence_log",
        description: "divergence log(1/|x|): BMO norms, superlevel decay and the lambda-split bound",
    },
];

/// `(id, description)` rows whose id contains `filter`.
pub fn list_scenarios(filter: Option<&str>) -> Vec<(&'static str, &'static str)> {
    REGISTRY
        .iter()
        .filter(|s| filter.map_or(true, |f| s.id.contains(f)))
        .map(|s| (s.id, s.description))
        .collect()
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// Documented defaults of a registered scenario.
pub fn default_config(id: &str) -> Option<ScenarioConfig> {
    let mut c = ScenarioConfig {
        scenario_id: id.to_string(),
        dimension: 1,
        horizon: 1.0,
        field_id: "zero".into(),
        damping_id: "zero".into(),
        u0_id: "bump".into(),
        seeds_per_axis: 64,
        steps: 100,
        box_radius: 2.0,
        time_intervals: 16,
        probe_cells_per_axis: 20,
        diagnostics: Vec::new(),
        deltas: vec![1e-2, 1e-4, 1e-6],
        radii: vec![2.0, 4.0, 8.0],
        lambdas: vec![9.0, 12.0, 16.0],
        eps_list: vec![0.2, 0.1, 0.05, 0.025],
        eta: 1e-8,
        bmo_cells: 1 << 21,
        bmo_radius: 1.0,
        expected_verdict: None,
        rng_seed: 0,
        output_dir: PathBuf::from("out").join(id),
    };
    match id {
        "identity" => {
            c.diagnostics = strings(&[
                "flow_accuracy",
                "jacobian_identity",
                "change_of_variables",
                "representation",
                "weak_residual",
                "l2_energy",
                "gronwall_log",
                "uniqueness",
                "tamper_check",
            ]);
        }
        "linear_expand" => {
            c.field_id = "linear_expand".into();
            c.seeds_per_axis = 512;
            c.steps = 1000;
            c.diagnostics = strings(&["flow_accuracy", "jacobian_identity", "change_of_variables"]);
        }
        "linear_contract" => {
            c.field_id = "linear_contract".into();
            c.seeds_per_axis = 10_000;
            c.steps = 1000;
            c.box_radius = 1.0;
            c.diagnostics = strings(&["flow_accuracy", "jacobian_identity", "compressibility"]);
        }
        "rotation" => {
            c.dimension = 2;
            c.horizon = FRAC_PI_2;
            c.field_id = "rotation".into();
            c.seeds_per_axis = 100;
            c.steps = 1000;
            c.box_radius = 1.0;
            c.probe_cells_per_axis = 10;
            c.diagnostics = strings(&["flow_accuracy", "jacobian_identity", "compressibility"]);
        }
        "shear_bv" => {
            c.dimension = 2;
            c.field_id = "shear".into();
            c.steps = 32;
            c.box_radius = 0.25;
            c.diagnostics = strings(&["flow_convergence"]);
        }
        "compact_support_b" => {
            c.field_id = "compact_bump".into();
            c.seeds_per_axis = 256;
            c.box_radius = 4.0;
            c.radii = vec![8.0];
            c.diagnostics = strings(&["gronwall_log", "uniqueness"]);
        }
        "damping_bounded" => {
            c.damping_id = "unit_ball_indicator".into();
            c.seeds_per_axis = 256;
            c.time_intervals = 32;
            c.expected_verdict = Some("convergent".into());
            c.diagnostics = strings(&["representation", "weak_residual", "integrability", "l2_energy"]);
        }
        "counterexample_L1_damping" => {
            c.damping_id = "inverse_sqrt".into();
            c.u0_id = "unit_interval".into();
            c.expected_verdict = Some("divergent".into());
            c.diagnostics = strings(&["integrability", "weak_residual", "l2_energy"]);
        }
        "twin_difference_gronwall" => {
            c.dimension = 2;
            c.field_id = "swirl".into();
            c.damping_id = "half_ball_indicator".into();
            c.box_radius = 4.0;
            c.diagnostics = strings(&["gronwall_log", "uniqueness", "tamper_check"]);
        }
        "bmo_divergence_log" => {
            c.field_id = "log_divergence".into();
            c.seeds_per_axis = 512;
            c.box_radius = 3.0;
            c.deltas = vec![1e-2, 1e-4];
            c.radii = vec![2.0];
            c.diagnostics = strings(&["bmo_suite", "bmo_gronwall"]);
        }
        _ => return None,
    }
    Some(c)
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}{}", suggestion_text(.suggestion))]
    Parse {
        line: usize,
        column: usize,
        message: String,
        suggestion: Option<String>,
    },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn suggestion_text(s: &Option<String>) -> String {
    s.as_ref().map(|k| format!(" (did you mean `{k}`?)")).unwrap_or_default()
}

/// Closest accepted key within edit distance 2.
fn suggest_key(unknown: &str) -> Option<String> {
    ScenarioConfig::KEYS
        .iter()
        .map(|k| (strsim::levenshtein(unknown, k), *k))
        .filter(|(d, _)| *d <= 2)
        .min()
        .map(|(_, k)| k.to_string())
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let partial: PartialConfig = serde_json::from_str(text).map_err(|e| {
        let message = e.to_string();
        let suggestion = message
            .strip_prefix("unknown field `")
            .and_then(|rest| rest.split('`').next())
            .and_then(suggest_key);
        ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: message.split(" at line").next().unwrap_or(&message).to_string(),
            suggestion,
        }
    })?;
    let id = partial
        .scenario_id
        .clone()
        .ok_or_else(|| ConfigError::Validation(vec!["scenario_id: missing".into()]))?;
    let mut config = default_config(&id).ok_or_else(|| {
        let known: Vec<&str> = REGISTRY.iter().map(|s| s.id).collect();
        ConfigError::Validation(vec![format!("scenario_id: unknown `{id}` (known: {})", known.join(", "))])
    })?;
    config.overlay(partial);
    config.validate()?;
    Ok(config)
}

impl ScenarioConfig {
    pub fn dim(&self) -> usize {
        self.dimension.max(1) as usize
    }

    pub fn selected(&self) -> Vec<Diagnostic> {
        self.diagnostics.iter().filter_map(|s| Diagnostic::parse(s)).collect()
    }

    /// Collects every violated invariant.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        if !REGISTRY.iter().any(|s| s.id == self.scenario_id) {
            v.push(format!("scenario_id: unknown `{}`", self.scenario_id));
        }
        if !(1..=2).contains(&self.dimension) {
            v.push(format!("dimension: must be 1 or 2, got {}", self.dimension));
        }
        let positive_f = [
            ("horizon", self.horizon),
            ("box_radius", self.box_radius),
            ("eta", self.eta),
            ("bmo_radius", self.bmo_radius),
        ];
        for (k, x) in positive_f {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("{k}: must be positive, got {x}"));
            }
        }
        let positive_i = [
            ("seeds_per_axis", self.seeds_per_axis),
            ("steps", self.steps),
            ("time_intervals", self.time_intervals),
            ("probe_cells_per_axis", self.probe_cells_per_axis),
            ("bmo_cells", self.bmo_cells),
        ];
        for (k, x) in positive_i {
            if x <= 0 {
                v.push(format!("{k}: must be positive, got {x}"));
            }
        }
        let lists = [
            ("deltas", &self.deltas),
            ("radii", &self.radii),
            ("lambdas", &self.lambdas),
            ("eps_list", &self.eps_list),
        ];
        for (k, list) in lists {
            if let Some(bad) = list.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
                v.push(format!("{k}: entries must be positive, got {bad}"));
            }
        }
        let d = self.dim();
        let field = analytic_field(&self.field_id, d);
        match &field {
            None => v.push(format!("field_id: unknown `{}` (known: {})", self.field_id, FIELD_IDS.join(", "))),
            Some(f) => {
                use crate::field::VectorField;
                if f.dim() != d {
                    v.push(format!("field_id: `{}` is {}-dimensional, dimension is {d}", self.field_id, f.dim()));
                }
            }
        }
        if analytic_damping(&self.damping_id).is_none() {
            v.push(format!(
                "damping_id: unknown `{}` (known: {})",
                self.damping_id,
                DAMPING_IDS.join(", ")
            ));
        }
        if initial_datum(&self.u0_id, d).is_none() {
            v.push(format!("u0_id: unknown `{}` (known: {})", self.u0_id, U0_IDS.join(", ")));
        }
        if let Some(e) = &self.expected_verdict {
            if !["convergent", "divergent", "undecided"].contains(&e.as_str()) {
                v.push(format!("expected_verdict: `{e}` is not convergent, divergent or undecided"));
            }
        }
        let mut seen = Vec::new();
        for name in &self.diagnostics {
            match Diagnostic::parse(name) {
                None => {
                    let hint = Diagnostic::ALL
                        .iter()
                        .map(|d| (strsim::levenshtein(name, d.name()), d.name()))
                        .filter(|(dist, _)| *dist <= 2)
                        .min()
                        .map(|(_, n)| format!(" (did you mean `{n}`?)"))
                        .unwrap_or_default();
                    v.push(format!("diagnostics: unknown `{name}`{hint}"));
                }
                Some(diag) if seen.contains(&diag) => v.push(format!("diagnostics: `{name}` selected twice")),
                Some(diag) => seen.push(diag),
            }
        }
        let uses = |d: Diagnostic| seen.contains(&d);
        if (uses(Diagnostic::WeakResidual) || uses(Diagnostic::ChangeOfVariables)) && self.seeds_per_axis % 4 != 0 {
            v.push(format!(
                "seeds_per_axis: refinement studies need a multiple of 4, got {}",
                self.seeds_per_axis
            ));
        }
        if uses(Diagnostic::WeakResidual) && self.time_intervals % 8 != 0 {
            v.push(format!(
                "time_intervals: refinement studies need a multiple of 8, got {}",
                self.time_intervals
            ));
        } else if self.time_intervals % 2 != 0 {
            v.push(format!("time_intervals: Simpson's rule needs an even count, got {}", self.time_intervals));
        }
        if uses(Diagnostic::FlowConvergence) && self.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            v.push("eps_list: must be strictly decreasing".into());
        }
        if uses(Diagnostic::BmoSuite) || uses(Diagnostic::BmoGronwall) {
            let floor = 2f64.powi(d as i32 + 2);
            if let Some(l) = self.lambdas.iter().find(|l| **l <= floor) {
                v.push(format!("lambdas: every entry must exceed 2^(d+2) = {floor}, got {l}"));
            }
            if self.lambdas.len() < 2 {
                v.push("lambdas: at least two levels are needed for the tail fit".into());
            }
            if self.bmo_cells % 2 != 0 {
                v.push(format!("bmo_cells: must be even, got {}", self.bmo_cells));
            }
        }
        if (uses(Diagnostic::GronwallLog) || uses(Diagnostic::Uniqueness) || uses(Diagnostic::BmoGronwall))
            && (self.deltas.is_empty() || self.radii.is_empty())
        {
            v.push("deltas/radii: must be nonempty for Gronwall diagnostics".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            v.push("output_dir: must not be empty".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Validation(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    pub quantity: String,
    pub value: f64,
    /// One of `<=`, `>=`, `==`, `<`.
    pub relation: String,
    pub tolerance: f64,
    pub pass: bool,
}

impl Measurement {
    fn le(q: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::new(q, value, "<=", tol, value <= tol)
    }

    fn ge(q: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::new(q, value, ">=", tol, value >= tol)
    }

    fn flag(q: impl Into<String>, ok: bool) -> Self {
        Self::new(q, if ok { 1.0 } else { 0.0 }, "==", 1.0, ok)
    }

    fn new(q: impl Into<String>, value: f64, relation: &str, tolerance: f64, pass: bool) -> Self {
        Self {
            quantity: q.into(),
            value,
            relation: relation.into(),
            tolerance,
            pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticOutcome {
    pub name: String,
    pub pass: bool,
    pub skipped: bool,
    pub note: Option<String>,
    pub measurements: Vec<Measurement>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario_id: String,
    pub pass: bool,
    pub diagnostics: Vec<DiagnosticOutcome>,
    pub artifacts: Vec<String>,
    pub provenance: Provenance,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn outcome(&self, name: &str) -> Option<&DiagnosticOutcome> {
        self.diagnostics.iter().find(|d| d.name == name)
    }
}

/// A report together with the CSV tables it was computed from.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub tables: Vec<CsvTable>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("cannot write artifacts to {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

struct Body {
    measurements: Vec<Measurement>,
    tables: Vec<CsvTable>,
    note: Option<String>,
}

impl Body {
    fn new() -> Self {
        Self {
            measurements: Vec::new(),
            tables: Vec::new(),
            note: None,
        }
    }

    fn skipped(note: impl Into<String>) -> Self {
        Self {
            note: Some(note.into()),
            ..Self::new()
        }
    }
}

type StageResult<T> = Result<T, String>;

fn stage<T, E: std::fmt::Display>(name: &str, r: Result<T, E>) -> StageResult<T> {
    r.map_err(|e| format!("{name}: {e}"))
}

struct Context {
    cfg: ScenarioConfig,
    dim: usize,
    analytic: AnalyticField,
    field: VelocityFieldSpec,
    damping: DampingFieldSpec,
    u0: InitialDatum,
    split: GrowthSplit,
    flow_opts: FlowOptions,
    divergent_damping: Option<String>,
    twin: Option<(SpaceTimeQuadrature, DensityRepresentation, DensityRepresentation)>,
    bmo: Option<(BMOProfile, Lemma52Report, JnReport)>,
}

impl Context {
    fn new(cfg: &ScenarioConfig) -> Result<Self, RunError> {
        let dim = cfg.dim();
        let analytic = analytic_field(&cfg.field_id, dim).ok_or(RunError::Stage {
            stage: "setup",
            message: format!("unknown field `{}`", cfg.field_id),
        })?;
        let field = VelocityFieldSpec::analytic(cfg.field_id.clone(), analytic.clone(), cfg.horizon);
        let kind = analytic_damping(&cfg.damping_id).ok_or(RunError::Stage {
            stage: "setup",
            message: format!("unknown damping `{}`", cfg.damping_id),
        })?;
        let damping = DampingFieldSpec::analytic(cfg.damping_id.clone(), dim, kind, cfg.horizon);
        let u0 = initial_datum(&cfg.u0_id, dim).ok_or(RunError::Stage {
            stage: "setup",
            message: format!("unknown datum `{}`", cfg.u0_id),
        })?;
        let split = growth_split_checked(&field, 10_000, 10.0, cfg.rng_seed).map_err(|e| RunError::Stage {
            stage: "growth_split",
            message: e.to_string(),
        })?;
        let flow_opts = if field.regularity == crate::Regularity::BvNonsmooth {
            FlowOptions::nonsmooth()
        } else {
            FlowOptions::default()
        };
        Ok(Self {
            cfg: cfg.clone(),
            dim,
            analytic,
            field,
            damping,
            u0,
            split,
            flow_opts,
            divergent_damping: None,
            twin: None,
            bmo: None,
        })
    }

    fn n(&self) -> usize {
        self.cfg.seeds_per_axis as usize
    }

    fn steps(&self) -> usize {
        self.cfg.steps as usize
    }

    fn seeds(&self, n: usize) -> SeedGrid {
        SeedGrid::uniform(self.dim, self.cfg.box_radius, n)
    }

    fn quadrature(&self, cells: usize, intervals: usize, horizon: f64) -> SpaceTimeQuadrature {
        let mut q = SpaceTimeQuadrature::new(BoxGrid::new(self.dim, self.cfg.box_radius, cells), horizon, intervals);
        q.eta = self.cfg.eta;
        q
    }

    fn settings(&self, dt: f64) -> PointwiseSettings {
        PointwiseSettings {
            dt,
            eta: self.cfg.eta,
            flow: self.flow_opts,
        }
    }

    fn solve_on(&self, q: &SpaceTimeQuadrature, dt: f64) -> StageResult<DensityRepresentation> {
        stage(
            "representation",
            pointwise_solution(&self.field, &self.damping, &self.u0, &q.seeds(), &q.times, &self.settings(dt)),
        )
    }

    fn fine_dt(&self, horizon: f64) -> f64 {
        (horizon / self.cfg.steps as f64).min(horizon / 128.0)
    }

    /// Coarse (`dt = T/8`) and fine (`dt = T/128`) solutions on the finest quadrature over `[0, horizon]`.
    fn twin(&mut self, horizon: f64) -> StageResult<(SpaceTimeQuadrature, DensityRepresentation, DensityRepresentation)> {
        if let Some(t) = &self.twin {
            if t.0.horizon() == horizon {
                return Ok(t.clone());
            }
        }
        let q = self.quadrature(self.n(), self.cfg.time_intervals as usize, horizon);
        let coarse = self.solve_on(&q, horizon / 8.0)?;
        let fine = self.solve_on(&q, horizon / 128.0)?;
        let diff = coarse.difference(&fine);
        self.twin = Some((q.clone(), diff.clone(), fine.clone()));
        Ok((q, diff, fine))
    }

    fn weak_test_fn(&self) -> BumpTest {
        BumpTest {
            center: vec![0.0; self.dim],
            radius: 0.8 * self.cfg.box_radius,
            cutoff: TimeCutoff {
                flat_until: 0.6 * self.cfg.horizon,
                zero_at: 0.95 * self.cfg.horizon,
            },
        }
    }
}

fn exact_flow(field: &AnalyticField, t: f64, x: &[f64]) -> Option<Vec<f64>> {
    match field {
        AnalyticField::Zero { .. } => Some(x.to_vec()),
        AnalyticField::Linear { rate, .. } => Some(x.iter().map(|v| v * (rate * t).exp()).collect()),
        AnalyticField::Rotation => {
            let (s, c) = t.sin_cos();
            Some(vec![c * x[0] - s * x[1], s * x[0] + c * x[1]])
        }
        _ => None,
    }
}

fn flow_accuracy(ctx: &Context) -> StageResult<Body> {
    let d = ctx.dim;
    let mut probe = vec![0.0; d];
    probe[0] = 1.0;
    if exact_flow(&ctx.analytic, 0.0, &probe).is_none() {
        return Ok(Body::skipped("no closed-form flow for this field"));
    }
    let mut body = Body::new();
    let mut table = CsvTable::new("flow_accuracy", &["set", "seed", "t", "position_error"]);
    let probe_seeds = stage("seeds", SeedGrid::from_points(d, probe, 1.0))?;
    let grid_seeds = ctx.seeds(ctx.n().min(256));
    for (label, seeds) in [("probe", &probe_seeds), ("grid", &grid_seeds)] {
        let flow = stage(
            "integrate_flow",
            integrate_flow_with(&ctx.field, seeds, ctx.steps(), Direction::Forward, &ctx.flow_opts),
        )?;
        let last = flow.n_times() - 1;
        let t = flow.time_grid[last];
        let mut worst = 0.0f64;
        for i in 0..seeds.len() {
            let exact = exact_flow(&ctx.analytic, t, seeds.point(i)).unwrap();
            let err = flow
                .position(i, last)
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(err);
            if label == "probe" || i % 16 == 0 {
                table.push(crate::row![label, i, t, err]);
            }
        }
        body.measurements.push(Measurement::le(format!("{label}_position_error"), worst, 1e-8));
    }
    body.tables.push(table);
    Ok(body)
}

fn jacobian_identity(ctx: &Context) -> StageResult<Body> {
    let seeds = ctx.seeds(ctx.n().min(128));
    let run = |steps: usize| -> StageResult<_> {
        let flow = stage(
            "integrate_flow",
            integrate_flow_with(&ctx.field, &seeds, steps, Direction::Forward, &ctx.flow_opts),
        )?;
        let track = stage("jacobian", jacobian(&ctx.field, &flow))?;
        Ok(jacobian_ode_residual(&ctx.field, &flow, &track))
    };
    let coarse = run(ctx.steps())?;
    let fine = run(2 * ctx.steps())?;
    let mut body = Body::new();
    let mut table = CsvTable::new(
        "jacobian_identity",
        &["steps", "jx_abs", "inverse_abs", "jx_relative", "inverse_relative"],
    );
    for (s, r) in [(ctx.steps(), &coarse), (2 * ctx.steps(), &fine)] {
        table.push(crate::row![s, r.jx_abs, r.inv_abs, r.jx_rel, r.inv_rel]);
    }
    body.measurements.push(Measurement::le("relative_residual", coarse.worst_relative(), 1e-3));
    let exact = coarse.worst_relative() < 1e-14;
    let ratio = if exact {
        0.0
    } else {
        fine.worst_relative() / coarse.worst_relative()
    };
    body.measurements.push(Measurement::new(
        "residual_ratio_when_steps_double",
        ratio,
        "in",
        0.5,
        exact || (0.45..=0.55).contains(&ratio),
    ));
    if exact {
        body.note = Some("Jacobian identity holds exactly (divergence-free field)".into());
    }
    body.tables.push(table);
    Ok(body)
}

/// `(1 − |x|²/r²)⁴` and its integral over ℝᵈ.
fn poly_test(dim: usize, r: f64) -> (impl Fn(&[f64]) -> f64 + Sync, f64) {
    let f = move |x: &[f64]| {
        let q = x.iter().map(|v| v * v).sum::<f64>() / (r * r);
        if q < 1.0 {
            let p = (1.0 - q) * (1.0 - q);
            p * p
        } else {
            0.0
        }
    };
    let surface = dim as f64 * crate::field::unit_ball_volume(dim);
    let radial: f64 = gauss_legendre(16, 0.0, 1.0)
        .into_iter()
        .map(|(s, w)| w * s.powi(dim as i32 - 1) * (1.0 - s * s).powi(4))
        .sum();
    (f, surface * radial * r.powi(dim as i32))
}

fn change_of_variables(ctx: &Context) -> StageResult<Body> {
    let (phi, reference) = poly_test(ctx.dim, 1.0);
    let mut body = Body::new();
    let mut table = CsvTable::new("change_of_variables", &["seeds_per_axis", "h", "residual"]);
    let mut history = Vec::new();
    for n in [ctx.n() / 4, ctx.n() / 2, ctx.n()] {
        let seeds = ctx.seeds(n);
        let flow = stage(
            "integrate_flow",
            integrate_flow_with(&ctx.field, &seeds, ctx.steps(), Direction::Forward, &ctx.flow_opts),
        )?;
        let track = stage("jacobian", jacobian(&ctx.field, &flow))?;
        let last = flow.n_times() - 1;
        // The flow is a homeomorphism, so if φ vanishes on the image of the
        // boundary layer the image of the box covers its support.
        let grid = seeds.box_grid().unwrap();
        let edge = (0..seeds.len())
            .filter(|&i| {
                let x = seeds.point(i);
                x.iter().any(|v| v.abs() > grid.half_width() - grid.spacing())
            })
            .map(|i| phi(flow.position(i, last)))
            .fold(0.0, f64::max);
        let tail = if edge > 0.0 { f64::INFINITY } else { 0.0 };
        let res = stage(
            "change_of_variables",
            change_of_variables_residual(&flow, &track, last, &phi, reference, tail),
        )?;
        let h = grid.spacing();
        table.push(crate::row![n, h, res]);
        history.push((h, res));
    }
    let finest = history.last().unwrap().1;
    body.measurements.push(Measurement::le("residual", finest, 1e-5));
    let order = observed_order(&history).unwrap_or(f64::NAN);
    let at_roundoff = finest <= 1e-13 * reference;
    body.measurements.push(Measurement::new(
        "observed_order",
        order,
        ">=",
        2.0,
        order >= 2.0 || at_roundoff,
    ));
    if at_roundoff {
        body.note = Some("residual at round-off on the finest level".into());
    }
    body.tables.push(table);
    Ok(body)
}

fn compressibility(ctx: &Context) -> StageResult<Body> {
    let seeds = ctx.seeds(ctx.n());
    let flow = stage(
        "integrate_flow",
        integrate_flow_with(&ctx.field, &seeds, ctx.steps(), Direction::Forward, &ctx.flow_opts),
    )?;
    let block = (ctx.n() / ctx.cfg.probe_cells_per_axis as usize).max(1);
    let probe = ProbeCells::blocks_of(&seeds, block).ok_or("compressibility: seeds are not a box grid")?;
    let c = compressibility_estimate(&flow, &probe);
    let target = ctx.field.div_sup_integral().exp();
    let mut body = Body::new();
    let mut table = CsvTable::new("compressibility", &["block", "estimate", "exp_l"]);
    table.push(crate::row![block, c, target]);
    body.tables.push(table);
    body.measurements.push(Measurement::le("relative_deviation_from_exp_l", (c / target - 1.0).abs(), 0.1));
    Ok(body)
}

fn representation(ctx: &Context) -> StageResult<Body> {
    if !matches!(ctx.analytic, AnalyticField::Zero { .. }) {
        return Ok(Body::skipped("closed-form comparison needs b = 0"));
    }
    let q = ctx.quadrature(ctx.n(), ctx.cfg.time_intervals as usize, ctx.cfg.horizon);
    let u = ctx.solve_on(&q, ctx.cfg.horizon / ctx.cfg.steps as f64)?;
    let mut worst = 0.0f64;
    let mut table = CsvTable::new("representation", &["t", "max_abs_error"]);
    for (k, &t) in q.times.iter().enumerate() {
        let mut row_worst = 0.0f64;
        for i in 0..u.n_points() {
            let x = u.point(i);
            let c = ctx.damping.eval_c(t, x).unwrap_or(0.0);
            let exact = ctx.u0.eval(x) * (t * c).exp();
            row_worst = row_worst.max((u.value(k, i) - exact).abs());
        }
        worst = worst.max(row_worst);
        table.push(crate::row![t, row_worst]);
    }
    let mut body = Body::new();
    body.measurements.push(Measurement::le("max_abs_error", worst, 1e-12));
    body.tables.push(table);
    Ok(body)
}

fn weak_residual_diag(ctx: &Context) -> StageResult<Body> {
    let (n, k) = (ctx.n(), ctx.cfg.time_intervals as usize);
    let phi = ctx.weak_test_fn();
    let beta = make_beta_arctan(1.0);
    let mut history = Vec::new();
    let mut table = CsvTable::new("weak_residual", &["cells_per_axis", "h", "tau", "residual", "test_mass"]);
    let mut mass = 0.0;
    for level in [4usize, 2, 1] {
        let q = ctx.quadrature(n / level, k / level, ctx.cfg.horizon);
        let u = ctx.solve_on(&q, ctx.fine_dt(ctx.cfg.horizon).min(q.tau()))?;
        let rep = stage(
            "weak_residual",
            weak_residual(&u, &beta, &phi, &ctx.field, &ctx.damping, &ctx.u0, &q),
        )?;
        table.push(crate::row![n / level, q.h(), q.tau(), rep.residual, rep.test_mass]);
        history.push((q.h().max(q.tau()), rep.residual));
        mass = rep.test_mass;
    }
    let finest = history.last().unwrap().1;
    let order = observed_order(&history).unwrap_or(f64::NAN);
    let at_roundoff = finest <= 1e-12 * mass.max(1.0);
    let mut body = Body::new();
    body.measurements.push(Measurement::new(
        "observed_order",
        order,
        ">=",
        2.0,
        order >= 2.0 || at_roundoff,
    ));
    if at_roundoff {
        body.note = Some("residual at round-off on every level".into());
    }
    body.tables.push(table);
    Ok(body)
}

fn l2_energy(ctx: &Context) -> StageResult<Body> {
    if !ctx.damping.is_bounded() {
        return Ok(Body::skipped("L2 envelope needs bounded damping"));
    }
    let q = ctx.quadrature(ctx.n(), ctx.cfg.time_intervals as usize, ctx.cfg.horizon);
    let u = ctx.solve_on(&q, ctx.fine_dt(ctx.cfg.horizon))?;
    let rep = stage("l2_energy", l2_energy_diagnostic(&u, &ctx.field, &ctx.damping, &q))?;
    let mut table = CsvTable::new("l2_energy", &["t", "energy", "envelope"]);
    for k in 0..rep.times.len() {
        table.push(crate::row![rep.times[k], rep.energy[k], rep.envelope[k]]);
    }
    let mut body = Body::new();
    body.measurements.push(Measurement::le("energy_over_envelope", rep.worst_ratio, 1.05));
    body.tables.push(table);
    Ok(body)
}

fn verdict_name(v: IntegrabilityVerdict) -> &'static str {
    match v {
        IntegrabilityVerdict::Convergent => "convergent",
        IntegrabilityVerdict::Divergent => "divergent",
        IntegrabilityVerdict::Undecided => "undecided",
    }
}

fn integrability(ctx: &mut Context) -> StageResult<Body> {
    let probe = stage(
        "integrability_probe",
        integrability_probe(&ctx.u0, &ctx.damping, ctx.cfg.horizon, &DEFAULT_ETAS),
    )?;
    let mut table = CsvTable::new("integrability", &["eta", "truncated_integral", "growth_factor"]);
    let growth = probe.growth_factors();
    for (j, (eta, val)) in probe.integrals.iter().enumerate() {
        let g = if j == 0 { f64::NAN } else { growth[j - 1] };
        table.push(crate::row![*eta, *val, g]);
    }
    let verdict = verdict_name(probe.verdict);
    if probe.verdict == IntegrabilityVerdict::Divergent {
        ctx.divergent_damping = Some(format!(
            "∫u₀e^(tc) diverges at t = {}: u is not locally integrable, so it is not a distributional solution",
            ctx.cfg.horizon
        ));
    }
    let mut body = Body::new();
    if let Some(expected) = &ctx.cfg.expected_verdict {
        body.measurements.push(Measurement::flag(format!("verdict_is_{expected}"), verdict == expected));
    }
    if probe.verdict == IntegrabilityVerdict::Divergent {
        let first = growth.iter().take(2).copied().fold(f64::INFINITY, f64::min);
        body.measurements.push(Measurement::ge("min_growth_first_two_refinements", first, 10.0));
    }
    body.note = Some(format!("verdict: {verdict}"));
    body.tables.push(table);
    Ok(body)
}

fn flow_convergence(ctx: &Context) -> StageResult<Body> {
    let seeds = ctx.seeds(ctx.n());
    let rows = stage(
        "flow_convergence_study",
        flow_convergence_study(&ctx.field, &ctx.cfg.eps_list, &seeds, ctx.steps(), TimeExtension::Zero),
    )?;
    let mut table = CsvTable::new("flow_convergence", &["eps", "position_discrepancy", "jacobian_discrepancy"]);
    for r in &rows {
        table.push(crate::row![r.eps, r.position, r.jacobian]);
    }
    let mut body = Body::new();
    let decreasing = rows.windows(2).all(|w| w[1].position < w[0].position);
    body.measurements.push(Measurement::flag("position_strictly_decreasing", decreasing));
    let divergence_free = (0..=8).all(|j| ctx.field.div_sup(ctx.cfg.horizon * j as f64 / 8.0) == 0.0);
    let worst_jac = rows.iter().map(|r| r.jacobian).fold(0.0, f64::max);
    if divergence_free {
        body.measurements.push(Measurement::le("max_jacobian_discrepancy", worst_jac, 1e-10));
    } else {
        let dec = rows.windows(2).all(|w| w[1].jacobian < w[0].jacobian);
        body.measurements.push(Measurement::flag("jacobian_strictly_decreasing", dec));
    }
    body.tables.push(table);
    Ok(body)
}

fn gronwall_log(ctx: &mut Context) -> StageResult<Body> {
    let (q, u, _) = ctx.twin(ctx.cfg.horizon)?;
    let mut body = Body::new();
    let mut trace_table = CsvTable::new("gronwall_trace", &["delta", "R", "t", "gamma", "rhs", "bound"]);
    let mut term_table = CsvTable::new("gronwall_terms", &["delta", "R", "A", "B_R", "C_R", "log_factor", "consistency"]);
    for &r in &ctx.cfg.radii {
        let mut finals = Vec::new();
        for &delta in &ctx.cfg.deltas {
            let (trace, terms) = stage(
                "gronwall_log",
                gronwall_log_diagnostic(&u, delta, r, &ctx.field, &ctx.damping, &ctx.split, &q),
            )?;
            for k in 0..trace.times.len() {
                trace_table.push(crate::row![delta, r, trace.times[k], trace.gamma[k], trace.rhs[k], trace.bound[k]]);
            }
            let last = terms.last();
            term_table.push(crate::row![
                delta,
                r,
                terms.a[last],
                terms.b_r[last],
                terms.c_r[last],
                terms.log_factor,
                trace.consistency
            ]);
            body.measurements.push(Measurement::le(
                format!("gamma_over_bound[delta={delta:e},R={r}]"),
                trace.worst_ratio(),
                1.1,
            ));
            finals.push((terms.c_r[last], terms.bound(last, trace.gamma[0])));
        }
        if finals.iter().all(|(c, _)| *c == 0.0) {
            let b0 = finals[0].1;
            let spread = finals.iter().map(|(_, b)| (b - b0).abs()).fold(0.0, f64::max) / b0.abs().max(f64::MIN_POSITIVE);
            body.measurements.push(Measurement::le(format!("bound_spread_over_delta[R={r}]"), spread, 1e-12));
        }
    }
    body.tables.push(trace_table);
    body.tables.push(term_table);
    Ok(body)
}

fn uniqueness(ctx: &mut Context) -> StageResult<Body> {
    let (q, u, _) = ctx.twin(ctx.cfg.horizon)?;
    let r = ctx.cfg.radii.iter().copied().fold(0.0, f64::max);
    let phi = make_phi_r(r, ctx.dim);
    let k = crate::renorm::LOG_RBETA_PRIME_BOUND;
    let delta0 = ctx.cfg.deltas[0];
    let terms = gronwall_terms(&ctx.field, &ctx.damping, &ctx.split, &phi, delta0, k, &q.times);
    let far = make_phi_r(1e6 * r.max(1.0), ctx.dim);
    let limit = gronwall_terms(&ctx.field, &ctx.damping, &ctx.split, &far, delta0, k, &q.times);
    let data = BoundData::from_terms(&terms, *limit.c_r.last().unwrap());
    let peak = u.values.iter().map(|v| v.atan().abs()).fold(0.0, f64::max);
    let gamma_level = (0.5 * peak).powi(2);
    let rep = uniqueness_probe(&u, gamma_level, ctx.cfg.box_radius, &ctx.cfg.deltas, &data);
    let mut table = CsvTable::new("uniqueness", &["delta", "scaled_measure", "bound", "holds"]);
    for (d, lhs, rhs, ok) in &rep.per_delta {
        table.push(crate::row![*d, *lhs, *rhs, *ok]);
    }
    let mut summary = CsvTable::new("uniqueness_summary", &["gamma_level", "m", "worst_time", "limit_bound", "verdict"]);
    let verdict = match rep.verdict {
        UniquenessVerdict::TriviallyZero => "trivially_zero",
        UniquenessVerdict::ForcesZero => "forces_zero",
        UniquenessVerdict::Inconclusive => "inconclusive",
    };
    summary.push(crate::row![gamma_level, rep.m, rep.worst_time, rep.limit_bound, verdict]);
    let mut body = Body::new();
    body.measurements.push(Measurement::flag(
        "verdict_forces_u_zero",
        rep.verdict != UniquenessVerdict::Inconclusive,
    ));
    body.note = Some(format!("verdict: {verdict}"));
    body.tables.push(summary);
    body.tables.push(table);
    Ok(body)
}

fn tamper_check(ctx: &mut Context) -> StageResult<Body> {
    let (q, _, fine) = ctx.twin(ctx.cfg.horizon)?;
    let half = 0.5 * ctx.cfg.horizon;
    let mut tampered = fine.clone();
    for (k, &t) in q.times.iter().enumerate() {
        if t > half {
            let n = tampered.n_points();
            for v in &mut tampered.values[k * n..(k + 1) * n] {
                *v += 1.0;
            }
        }
    }
    let phi = ctx.weak_test_fn();
    let beta = make_beta_arctan(1.0);
    let clean = stage(
        "weak_residual",
        weak_residual(&fine, &beta, &phi, &ctx.field, &ctx.damping, &ctx.u0, &q),
    )?;
    let bad = stage(
        "weak_residual",
        weak_residual(&tampered, &beta, &phi, &ctx.field, &ctx.damping, &ctx.u0, &q),
    )?;
    let mut table = CsvTable::new("tamper_check", &["solution", "residual", "test_mass"]);
    table.push(crate::row!["computed", clean.residual, clean.test_mass]);
    table.push(crate::row!["tampered", bad.residual, bad.test_mass]);
    let mut body = Body::new();
    body.measurements.push(Measurement::ge("tampered_residual_over_test_mass", bad.residual / bad.test_mass, 0.1));
    body.tables.push(table);
    Ok(body)
}

fn bmo_profile(ctx: &mut Context) -> StageResult<(BMOProfile, Lemma52Report, JnReport)> {
    if let Some(b) = &ctx.bmo {
        return Ok(b.clone());
    }
    let m = ctx.cfg.bmo_radius;
    let field = ctx.field.clone();
    let samples = SampledFunction::from_fn(ctx.dim, m, ctx.cfg.bmo_cells as usize, |x| {
        if x.iter().map(|v| v * v).sum::<f64>() <= m * m {
            field.eval_div_b(0.0, x)
        } else {
            0.0
        }
    });
    let family = dyadic_family(ctx.dim, m, 7, 4);
    let profile = stage("bmo_norm", bmo_norm(&samples, &family))?;
    let lemma = stage("lemma52_checks", lemma52_checks(&profile, &ctx.cfg.lambdas))?;
    let etas: Vec<f64> = (1..=8).map(|k| k as f64).collect();
    let jn = stage("jn_decay_check", jn_decay_check(&profile, &etas))?;
    ctx.bmo = Some((profile.clone(), lemma.clone(), jn.clone()));
    Ok((profile, lemma, jn))
}

fn bmo_suite(ctx: &mut Context) -> StageResult<Body> {
    let (profile, lemma, jn) = bmo_profile(ctx)?;
    let mut body = Body::new();
    let mut decay = CsvTable::new("bmo_superlevels", &["eta", "measure"]);
    for (e, m) in &jn.table {
        decay.push(crate::row![*e, *m]);
    }
    let mut tail = CsvTable::new("bmo_tail", &["lambda", "tail_integral", "envelope"]);
    for (l, t) in &lemma.tail {
        tail.push(crate::row![*l, *t, lemma.tail_envelope(*l)]);
    }
    let mut summary = CsvTable::new(
        "bmo_summary",
        &["norm_star", "average", "average_bound", "jn_rate", "tail_rate", "tail_const", "tail_r_squared"],
    );
    let jn_rate = jn.c_rate().unwrap_or(f64::INFINITY);
    summary.push(crate::row![
        profile.norm_star,
        lemma.average,
        lemma.average_bound,
        jn_rate,
        lemma.c_rate,
        lemma.c_const,
        lemma.r_squared
    ]);
    if matches!(ctx.analytic, AnalyticField::LogDivergence) && ctx.cfg.bmo_radius == 1.0 {
        body.measurements.push(Measurement::le("average_relative_error", (lemma.average - 1.0).abs(), 0.02));
    }
    body.measurements.push(Measurement::new(
        "average_over_bound",
        lemma.average / lemma.average_bound,
        "<=",
        1.0,
        lemma.average_ok,
    ));
    match jn.fit {
        DecayFit::Fitted { c_rate, .. } => body.measurements.push(Measurement::new("jn_rate", c_rate, ">", 0.0, c_rate > 0.0)),
        DecayFit::Trivial => body.note = Some("all superlevels empty: trivially decayed".into()),
    }
    let strictly = lemma.tail.windows(2).all(|w| w[1].1 < w[0].1);
    body.measurements.push(Measurement::flag("tail_strictly_decreasing", strictly));
    body.measurements.push(Measurement::flag("tail_convex", lemma.convex));
    body.measurements.push(Measurement::ge("tail_log_linear_r_squared", lemma.r_squared, 0.95));
    body.tables.extend([summary, decay, tail]);
    Ok(body)
}

fn bmo_gronwall(ctx: &mut Context) -> StageResult<Body> {
    let (profile, lemma, _) = bmo_profile(ctx)?;
    let sigma = profile.norm_star;
    let tau = choose_tau0(|t| sigma * t, lemma.c_rate, ctx.cfg.horizon);
    let (q, u, _) = ctx.twin(tau.tau0)?;
    // Whatever of ∇·b lies outside B_M is the bounded part.
    let s = &profile.samples;
    let mut x = vec![0.0; ctx.dim];
    let mut d1_sup = 0.0f64;
    for i in 0..s.grid.len() {
        s.grid.center_into(i, &mut x);
        d1_sup = d1_sup.max((ctx.field.eval_div_b(0.0, &x) - s.values[i]).abs());
    }
    let split = DivergenceSplit {
        d1_sup,
        d2: &profile,
        lemma: &lemma,
    };
    let mut body = Body::new();
    let mut trace_table = CsvTable::new("bmo_gronwall_trace", &["lambda", "delta", "R", "t", "gamma", "bound"]);
    let mut terms_table = CsvTable::new("bmo_gronwall_terms", &["lambda", "delta", "R", "A", "B", "C_R", "D", "exp_a_times_d"]);
    let mut tau_table = CsvTable::new("bmo_tau0", &["tau0", "sigma_integral", "target_rate", "capped"]);
    tau_table.push(crate::row![tau.tau0, tau.integral, lemma.c_rate, tau.capped]);
    let mut lambdas = ctx.cfg.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    let mut ead = Vec::new();
    for &lambda in &lambdas {
        for &delta in &ctx.cfg.deltas {
            for &r in &ctx.cfg.radii {
                let (trace, terms) = stage(
                    "bmo_gronwall",
                    bmo_gronwall_diagnostic(&u, delta, r, lambda, &ctx.field, &ctx.damping, &ctx.split, &split, &q),
                )?;
                for k in 0..trace.times.len() {
                    trace_table.push(crate::row![lambda, delta, r, trace.times[k], trace.gamma[k], trace.bound[k]]);
                }
                let last = terms.times.len() - 1;
                terms_table.push(crate::row![
                    lambda,
                    delta,
                    r,
                    terms.a[last],
                    terms.b[last],
                    terms.c_r[last],
                    terms.d[last],
                    terms.exp_a_times_d()
                ]);
                body.measurements.push(Measurement::le(
                    format!("gamma_over_bound[lambda={lambda},delta={delta:e},R={r}]"),
                    trace.worst_ratio(),
                    1.1,
                ));
                if delta == ctx.cfg.deltas[0] && r == ctx.cfg.radii[0] {
                    ead.push(terms.exp_a_times_d());
                }
            }
        }
    }
    let decreasing = ead.windows(2).all(|w| w[1] < w[0]);
    body.measurements.push(Measurement::flag("exp_a_times_d_decreasing_in_lambda", decreasing));
    if tau.capped {
        body.note = Some(format!("τ₀ capped at the horizon; ∫σ = {}", tau.integral));
    }
    body.tables.extend([tau_table, terms_table, trace_table]);
    Ok(body)
}

/// Runs the selected diagnostics without touching the file system.
pub fn execute(cfg: &ScenarioConfig) -> Result<RunOutput, RunError> {
    let start = Instant::now();
    let mut ctx = Context::new(cfg)?;
    let mut selected = cfg.selected();
    // The integrability verdict decides whether weak-form checks make sense.
    selected.sort_by_key(|d| *d != Diagnostic::Integrability);
    let mut outcomes = Vec::new();
    let mut tables = Vec::new();
    let mut summary = CsvTable::new("diagnostics", &["diagnostic", "quantity", "value", "relation", "tolerance", "pass"]);
    for diag in selected {
        let t0 = Instant::now();
        let result = if diag.needs_weak_solution() && ctx.divergent_damping.is_some() {
            Ok(Body::skipped(format!("skipped: {}", ctx.divergent_damping.as_ref().unwrap())))
        } else {
            match diag {
                Diagnostic::FlowAccuracy => flow_accuracy(&ctx),
                Diagnostic::JacobianIdentity => jacobian_identity(&ctx),
                Diagnostic::ChangeOfVariables => change_of_variables(&ctx),
                Diagnostic::Compressibility => compressibility(&ctx),
                Diagnostic::Representation => representation(&ctx),
                Diagnostic::WeakResidual => weak_residual_diag(&ctx),
                Diagnostic::L2Energy => l2_energy(&ctx),
                Diagnostic::Integrability => integrability(&mut ctx),
                Diagnostic::FlowConvergence => flow_convergence(&ctx),
                Diagnostic::GronwallLog => gronwall_log(&mut ctx),
                Diagnostic::Uniqueness => uniqueness(&mut ctx),
                Diagnostic::TamperCheck => tamper_check(&mut ctx),
                Diagnostic::BmoSuite => bmo_suite(&mut ctx),
                Diagnostic::BmoGronwall => bmo_gronwall(&mut ctx),
            }
        };
        let outcome = match result {
            Ok(body) => {
                let skipped = body.measurements.is_empty();
                for m in &body.measurements {
                    summary.push(vec![
                        Cell::from(diag.name()),
                        Cell::from(m.quantity.clone()),
                        Cell::from(m.value),
                        Cell::from(m.relation.clone()),
                        Cell::from(m.tolerance),
                        Cell::from(m.pass),
                    ]);
                }
                tables.extend(body.tables);
                DiagnosticOutcome {
                    name: diag.name().into(),
                    pass: body.measurements.iter().all(|m| m.pass),
                    skipped,
                    note: body.note,
                    measurements: body.measurements,
                    wall_time_s: t0.elapsed().as_secs_f64(),
                }
            }
            Err(message) => {
                summary.push(vec![
                    Cell::from(diag.name()),
                    Cell::from("error"),
                    Cell::from(f64::NAN),
                    Cell::from("=="),
                    Cell::from(0.0),
                    Cell::from(false),
                ]);
                DiagnosticOutcome {
                    name: diag.name().into(),
                    pass: false,
                    skipped: false,
                    note: Some(message),
                    measurements: Vec::new(),
                    wall_time_s: t0.elapsed().as_secs_f64(),
                }
            }
        };
        outcomes.push(outcome);
    }
    tables.insert(0, summary);
    let artifacts = tables.iter().map(|t| format!("{}.csv", t.name)).collect();
    Ok(RunOutput {
        report: RunReport {
            scenario_id: cfg.scenario_id.clone(),
            pass: outcomes.iter().all(|o| o.pass),
            diagnostics: outcomes,
            artifacts,
            provenance: Provenance {
                version: VERSION.into(),
                config: cfg.clone(),
            },
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        tables,
    })
}

/// Runs the scenario and writes every CSV table plus `report.json` to `output_dir`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, RunError> {
    let out = execute(cfg)?;
    let dir = &cfg.output_dir;
    let io = |source| RunError::Io {
        path: dir.clone(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(io)?;
    for t in &out.tables {
        t.write_to(dir).map_err(io)?;
    }
    let json = serde_json::to_string_pretty(&out.report).expect("report serializes");
    std::fs::write(dir.join("report.json"), json).map_err(io)?;
    Ok(out.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_ten_and_filters() {
        assert_eq!(list_scenarios(None).len(), 10);
        assert_eq!(list_scenarios(Some("bmo")).len(), 1);
        assert!(list_scenarios(Some("nope")).is_empty());
        for (id, _) in list_scenarios(None) {
            default_config(id).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(r#"{"scenario_id": "identity"}"#).unwrap();
        assert_eq!(c.seeds_per_axis, 64);
        assert_eq!(c, default_config("identity").unwrap());
    }

    #[test]
    fn negative_steps_is_a_validation_error() {
        match parse_config(r#"{"scenario_id": "identity", "steps": -1, "horizon": 0}"#) {
            Err(ConfigError::Validation(v)) => {
                assert!(v.iter().any(|m| m.starts_with("steps")));
                assert!(v.iter().any(|m| m.starts_with("horizon")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        match parse_config("{\n  \"scenario_id\": \"identity\",\n  \"stepz\": 10\n}") {
            Err(ConfigError::Parse { line, suggestion, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(suggestion.as_deref(), Some("steps"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_position() {
        match parse_config("{\"scenario_id\": }") {
            Err(ConfigError::Parse { line: 1, column, .. }) => assert!(column > 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = parse_config(r#"{"scenario_id": "identity", "field_id": "rotation"}"#).unwrap_err();
        assert!(err.to_string().contains("field_id"));
    }
}
