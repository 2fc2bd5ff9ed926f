//! Lagrangian-flow laboratory for the damped continuity equation
//!
//! ```text
//! ∂ₜu + ∇·(b u) = c u,    u(0, ·) = u₀
//! ```
//!
//! with rough velocity fields `b` and integrable (possibly singular) damping `c`.
//! Solutions are built from characteristics, then checked against the
//! renormalized weak formulation, the logarithmic Gronwall estimates and the
//! mean-oscillation bounds used when `∇·b` is only BMO.
//!
//! Module map:
//!
//! * [`field`]: analytic velocity/damping fields, mollification, growth splits
//! * [`flow`]: RK4 flow maps, Jacobians and flow-level identities
//! * [`solution`]: pointwise and pushforward representations of the solution
//! * [`renorm`]: renormalization functions `β` and decaying test functions `φ_R`
//! * [`weak_form`]: weak residuals, `Γ(t)` traces and Gronwall diagnostics
//! * [`bmo`]: mean-oscillation norms and superlevel decay
//! * [`scenario`]: scenario registry, JSON configs, orchestration and CSV output

pub mod bmo;
pub mod export;
pub mod field;
pub mod flow;
pub mod grid;
pub mod quadrature;
pub mod renorm;
pub mod scenario;
pub mod solution;
pub mod weak_form;

pub(crate) mod par;

pub use field::{DampingFieldSpec, GrowthSplit, MollifierSpec, Regularity, VelocityFieldSpec};
pub use flow::{Direction, FlowMap, JacobianTrack, SeedGrid};
pub use renorm::{Renormalizer, TestFunctionPhiR};
pub use solution::{DampingAccumulator, DensityRepresentation};

