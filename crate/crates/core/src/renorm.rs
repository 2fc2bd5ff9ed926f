//! Admissible renormalization functions and the decaying test functions `φ_R`.
//!
//! A function `β` is admissible when `β ∈ C¹ ∩ L^∞`, `β(0) = 0` and
//! `r β'(r)` is bounded.

use std::f64::consts::PI;
use std::fmt;

use serde::Serialize;

use crate::field::unit_ball_volume;

#[derive(Clone, Copy)]
enum Kind {
    Arctan { m: f64 },
    Log { delta: f64 },
    Raw { beta: fn(f64) -> f64, beta_prime: fn(f64) -> f64 },
}

/// A renormalization function with its derivative and declared bounds.
#[derive(Clone)]
pub struct Renormalizer {
    pub label: String,
    pub sup_beta: f64,
    pub sup_rbeta_prime: f64,
    kind: Kind,
}

impl fmt::Debug for Renormalizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Renormalizer")
            .field("label", &self.label)
            .field("sup_beta", &self.sup_beta)
            .field("sup_rbeta_prime", &self.sup_rbeta_prime)
            .finish()
    }
}

impl Renormalizer {
    #[inline]
    pub fn beta(&self, r: f64) -> f64 {
        match self.kind {
            Kind::Arctan { m } => m * (r / m).atan(),
            Kind::Log { delta } => {
                let a = r.atan();
                (a * a / delta).ln_1p()
            }
            Kind::Raw { beta, .. } => beta(r),
        }
    }

    #[inline]
    pub fn beta_prime(&self, r: f64) -> f64 {
        match self.kind {
            Kind::Arctan { m } => {
                let s = r / m;
                1.0 / (1.0 + s * s)
            }
            Kind::Log { delta } => {
                let a = r.atan();
                2.0 * a / ((1.0 + r * r) * (delta + a * a))
            }
            Kind::Raw { beta_prime, .. } => beta_prime(r),
        }
    }

    /// `r β'(r)`, evaluated without overflow for large `|r|`.
    #[inline]
    pub fn r_beta_prime(&self, r: f64) -> f64 {
        match self.kind {
            Kind::Arctan { m } => {
                let s = r / m;
                r / (1.0 + s * s)
            }
            Kind::Log { delta } => {
                let a = r.atan();
                // r/(1+r²) = sin(a) cos(a)
                2.0 * a * a.sin() * a.cos() / (delta + a * a)
            }
            Kind::Raw { beta_prime, .. } => r * beta_prime(r),
        }
    }

    /// Wraps an arbitrary `(β, β')` pair; only used to exercise the admissibility check.
    pub fn raw(label: &str, beta: fn(f64) -> f64, beta_prime: fn(f64) -> f64, sup_beta: f64, sup_rbeta_prime: f64) -> Self {
        Self {
            label: label.to_string(),
            sup_beta,
            sup_rbeta_prime,
            kind: Kind::Raw { beta, beta_prime },
        }
    }
}

/// `β_M(r) = M arctan(r / M)`.
pub fn make_beta_arctan(m: f64) -> Renormalizer {
    assert!(m > 0.0, "M must be positive");
    Renormalizer {
        label: format!("arctan(M={m})"),
        sup_beta: m * PI / 2.0,
        sup_rbeta_prime: m,
        kind: Kind::Arctan { m },
    }
}

/// Declared bound on `|r β_δ'(r)|`; the supremum tends to 2 as `δ → 0`.
pub const LOG_RBETA_PRIME_BOUND: f64 = 2.0;

/// `β_δ(r) = ln(1 + arctan²(r)/δ)`.
pub fn make_beta_log(delta: f64) -> Renormalizer {
    assert!(delta > 0.0, "delta must be positive");
    Renormalizer {
        label: format!("log(delta={delta:e})"),
        sup_beta: (PI * PI / (4.0 * delta)).ln_1p(),
        sup_rbeta_prime: LOG_RBETA_PRIME_BOUND,
        kind: Kind::Log { delta },
    }
}

/// `|β_M(r₁) − β_M(r₂)| − |r₁β_M'(r₁) − r₂β_M'(r₂)|`, nonnegative in exact arithmetic.
pub fn arctan_contraction_gap(r1: f64, r2: f64, m: f64) -> f64 {
    let b = make_beta_arctan(m);
    (b.beta(r1) - b.beta(r2)).abs() - (b.r_beta_prime(r1) - b.r_beta_prime(r2)).abs()
}

/// Log-spaced symmetric sweep: `n/2` points per sign in `[1e-6, 1e6]` plus zero.
pub fn standard_sweep(n: usize) -> Vec<f64> {
    let half = (n / 2).max(2);
    let (lo, hi) = (-6.0_f64, 6.0_f64);
    let mut out = Vec::with_capacity(2 * half + 1);
    out.push(0.0);
    for k in 0..half {
        let r = 10f64.powf(lo + (hi - lo) * k as f64 / (half - 1) as f64);
        out.push(r);
        out.push(-r);
    }
    out
}

pub const STANDARD_SWEEP_POINTS: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Condition {
    pub pass: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    /// Where the worst value occurred.
    pub witness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub vanishes_at_zero: Condition,
    pub bounded: Condition,
    pub r_beta_prime_bounded: Condition,
    pub derivative_consistent: Condition,
}

impl AdmissibilityReport {
    pub fn pass(&self) -> bool {
        self.vanishes_at_zero.pass && self.bounded.pass && self.r_beta_prime_bounded.pass && self.derivative_consistent.pass
    }
}

fn worst_of(points: &[f64], f: impl Fn(f64) -> f64) -> (f64, f64) {
    points.iter().fold((f64::NEG_INFINITY, 0.0), |(w, at), &r| {
        let v = f(r);
        if v > w || v.is_nan() {
            (v, r)
        } else {
            (w, at)
        }
    })
}

/// Evaluates the admissibility conditions on the standard sweep.
pub fn check_admissible(beta: &Renormalizer) -> AdmissibilityReport {
    let sweep = standard_sweep(STANDARD_SWEEP_POINTS);
    let b0 = beta.beta(0.0);
    let vanishes_at_zero = Condition {
        pass: b0 == 0.0,
        worst: b0.abs(),
        witness: 0.0,
    };
    let (wb, atb) = worst_of(&sweep, |r| beta.beta(r).abs());
    let bounded = Condition {
        pass: beta.sup_beta.is_finite() && wb <= beta.sup_beta * (1.0 + 1e-12),
        worst: wb,
        witness: atb,
    };
    let (wr, atr) = worst_of(&sweep, |r| beta.r_beta_prime(r).abs());
    let r_beta_prime_bounded = Condition {
        pass: beta.sup_rbeta_prime.is_finite() && wr <= beta.sup_rbeta_prime * (1.0 + 1e-12),
        worst: wr,
        witness: atr,
    };
    let near: Vec<f64> = sweep.iter().copied().filter(|r| r.abs() <= 1e3).collect();
    let (wd, atd) = worst_of(&near, |r| {
        let h = 1e-5 * r.abs().max(1e-2);
        let fd = (beta.beta(r + h) - beta.beta(r - h)) / (2.0 * h);
        let exact = beta.beta_prime(r);
        (fd - exact).abs() / exact.abs().max(1e-3)
    });
    let derivative_consistent = Condition {
        pass: wd <= 1e-6,
        worst: wd,
        witness: atd,
    };
    AdmissibilityReport {
        vanishes_at_zero,
        bounded,
        r_beta_prime_bounded,
        derivative_consistent,
    }
}

/// Radial test function equal to `2^{-(d+1)}` on `B_R` and `R^{d+1}/(R+|x|)^{d+1}` outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestFunctionPhiR {
    pub r: f64,
    pub dim: usize,
}

/// Builds `φ_R` and checks its invariants on a radial sample.
pub fn make_phi_r(r: f64, dim: usize) -> TestFunctionPhiR {
    assert!(r > 0.0 && dim >= 1, "φ_R needs R > 0 and d ≥ 1");
    let phi = TestFunctionPhiR { r, dim };
    debug_assert!(phi.check_invariants().is_ok());
    phi
}

impl TestFunctionPhiR {
    fn p(&self) -> i32 {
        self.dim as i32 + 1
    }

    #[inline]
    pub fn eval_radial(&self, s: f64) -> f64 {
        if s < self.r {
            0.5f64.powi(self.p())
        } else {
            (self.r / (self.r + s)).powi(self.p())
        }
    }

    /// Radial derivative; the outer branch is used at `|x| = R`.
    #[inline]
    pub fn radial_derivative(&self, s: f64) -> f64 {
        if s < self.r {
            0.0
        } else {
            -(self.p() as f64) * self.eval_radial(s) / (self.r + s)
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_radial(x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    pub fn eval_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.eval_grad_into(x, &mut g);
        g
    }

    pub fn eval_grad_into(&self, x: &[f64], out: &mut [f64]) {
        let s = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dr = self.radial_derivative(s);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = if s > 0.0 { dr * xi / s } else { 0.0 };
        }
    }

    /// `C` in `φ ≤ C/(1+|x|)^{d+1}`, `|∇φ| ≤ C/(1+|x|)^{d+2}`: `(d+1)(2R)^{d+1}`
    /// for `R ≥ 1`, with `R` replaced by `1/R` below one.
    pub fn decay_constant(&self) -> f64 {
        let scale = self.r.max(1.0 / self.r);
        (2.0 * scale).powi(self.p()) * self.p() as f64
    }

    /// `‖φ_R‖_{L¹} = ω_d R^d (2^{-(d+1)} + 1 − 2^{-d})`.
    pub fn l1_norm(&self) -> f64 {
        let d = self.dim as i32;
        unit_ball_volume(self.dim) * self.r.powi(d) * (0.5f64.powi(d + 1) + 1.0 - 0.5f64.powi(d))
    }

    /// `∫_{|x| > ρ} φ_R` for `ρ ≥ R`.
    pub fn tail_mass(&self, rho: f64) -> f64 {
        let d = self.dim as i32;
        if rho < self.r {
            return self.l1_norm() - unit_ball_volume(self.dim) * rho.powi(d) * 0.5f64.powi(d + 1);
        }
        unit_ball_volume(self.dim) * self.r.powi(d) * (1.0 - (rho / (self.r + rho)).powi(d))
    }

    /// Checks value, continuity, decay and gradient bounds on a radial sample.
    pub fn check_invariants(&self) -> Result<(), String> {
        let p = self.p();
        let c = self.decay_constant();
        let inner = 0.5f64.powi(p);
        if (self.eval_radial(self.r) - inner).abs() > 1e-15 {
            return Err("discontinuous at |x| = R".into());
        }
        for k in 0..400 {
            let s = self.r * 10f64.powf(-3.0 + 7.0 * k as f64 / 399.0);
            let v = self.eval_radial(s);
            let g = self.radial_derivative(s).abs();
            if v > c / (1.0 + s).powi(p) * (1.0 + 1e-12) {
                return Err(format!("value decay fails at |x| = {s}"));
            }
            if g > c / (1.0 + s).powi(p + 1) * (1.0 + 1e-12) {
                return Err(format!("gradient decay fails at |x| = {s}"));
            }
            if s > self.r && g > p as f64 * v / (self.r + s) * (1.0 + 1e-12) {
                return Err(format!("gradient bound fails at |x| = {s}"));
            }
            if s < self.r && (g != 0.0 || v != inner) {
                return Err(format!("inner branch wrong at |x| = {s}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;
    use proptest::prelude::*;

    #[test]
    fn arctan_examples() {
        assert_eq!(make_beta_arctan(3.0).beta(0.0), 0.0);
        assert!((make_beta_arctan(1.0).beta(1.0) - PI / 4.0).abs() < 1e-15);
        assert!((make_beta_arctan(1e6).beta(5.0) - 5.0).abs() < 1e-10);
        assert!((arctan_contraction_gap(1.0, 0.0, 1.0) - (PI / 4.0 - 0.5)).abs() < 1e-15);
        assert_eq!(arctan_contraction_gap(2.5, 2.5, 1.0), 0.0);
    }

    #[test]
    fn log_examples() {
        for delta in [1.0, 1e-2, 1e-4] {
            assert_eq!(make_beta_log(delta).beta(0.0), 0.0);
        }
        assert!((make_beta_log(1.0).sup_beta - 1.243_405_350_888_726).abs() < 1e-12);
    }

    #[test]
    fn r_beta_prime_of_log_family_stays_below_two() {
        for delta in [1.0, 1e-2, 1e-4] {
            let b = make_beta_log(delta);
            for r in [0.1, 1.0, 10.0, 1e3] {
                for s in [r, -r] {
                    let v = b.r_beta_prime(s);
                    assert!(v.abs() < 2.0);
                    assert!((v - s * b.beta_prime(s)).abs() < 1e-12 * (1.0 + v.abs()));
                }
            }
        }
        // at δ = 1 the product stays below one half
        assert!(make_beta_log(1.0).r_beta_prime(1.0) < 0.5);
    }

    #[test]
    fn admissibility_verdicts() {
        assert!(check_admissible(&make_beta_arctan(1.0)).pass());
        assert!(check_admissible(&make_beta_arctan(10.0)).pass());
        for delta in [1.0, 1e-2, 1e-4] {
            assert!(check_admissible(&make_beta_log(delta)).pass());
        }
        let id = Renormalizer::raw("identity", |r| r, |_| 1.0, f64::INFINITY, f64::INFINITY);
        let rep = check_admissible(&id);
        assert!(!rep.pass() && !rep.bounded.pass);
        assert!(rep.vanishes_at_zero.pass);
    }

    #[test]
    fn phi_examples() {
        let p = make_phi_r(1.0, 1);
        assert_eq!(p.eval(&[0.5]), 0.25);
        assert_eq!(p.eval(&[1.0]), 0.25);
        assert_eq!(p.eval(&[-3.0]), 1.0 / 16.0);
        assert_eq!(p.eval_grad(&[0.5]), vec![0.0]);
        for d in [1, 2, 3] {
            for r in [0.5, 2.0, 8.0] {
                assert!(make_phi_r(r, d).check_invariants().is_ok());
            }
        }
    }

    #[test]
    fn phi_l1_norm_matches_radial_quadrature() {
        for (d, r) in [(1usize, 1.0), (2, 1.0), (2, 4.0), (1, 8.0)] {
            let p = make_phi_r(r, d);
            let surface = d as f64 * unit_ball_volume(d);
            let rho = 1e3 * r;
            let mut acc = 0.0;
            // inner ball exactly, then panels geometric in the radius
            acc += unit_ball_volume(d) * r.powi(d as i32) * 0.5f64.powi(d as i32 + 1);
            let mut a = r;
            while a < rho {
                let b = (a * 1.2).min(rho);
                for (s, w) in gauss_legendre(16, a, b) {
                    acc += surface * w * s.powi(d as i32 - 1) * p.eval_radial(s);
                }
                a = b;
            }
            acc += p.tail_mass(rho);
            assert!((acc - p.l1_norm()).abs() < 1e-10 * p.l1_norm(), "d={d} R={r}: {acc}");
        }
        assert!((make_phi_r(1.0, 1).l1_norm() - 1.5).abs() < 1e-15);
        assert!((make_phi_r(1.0, 2).l1_norm() - 7.0 * PI / 8.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn contraction_gap_is_nonnegative(r1 in -1e3f64..1e3, r2 in -1e3f64..1e3, mi in 0usize..3) {
            let m = [0.1, 1.0, 10.0][mi];
            prop_assert!(arctan_contraction_gap(r1, r2, m) >= -1e-12);
        }

        #[test]
        fn log_family_is_decreasing_in_delta(r in -1e3f64..1e3, d1 in 1e-8f64..1.0, f in 1.0f64..100.0) {
            prop_assert!(make_beta_log(d1 * f).beta(r) <= make_beta_log(d1).beta(r));
        }

        #[test]
        fn phi_gradient_bound(s in 0.0f64..1e4, r in 0.1f64..10.0, d in 1usize..4) {
            let p = make_phi_r(r, d);
            let g = p.radial_derivative(s).abs();
            if s > r {
                prop_assert!(g <= (d as f64 + 1.0) * p.eval_radial(s) / (r + s) * (1.0 + 1e-12));
            } else {
                prop_assert_eq!(g, 0.0);
            }
        }
    }
}
