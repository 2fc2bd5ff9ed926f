use proptest::prelude::*;
use rough_transport::bmo::{bmo_norm, dyadic_family, lemma52_checks, SampledFunction};
use rough_transport::export::format_f64;
use rough_transport::field::{fd_divergence, growth_split, mollify, AnalyticField, MollifierSpec};
use rough_transport::VelocityFieldSpec;

fn smooth_fields() -> Vec<VelocityFieldSpec> {
    vec![
        VelocityFieldSpec::analytic("expand", AnalyticField::Linear { dim: 2, rate: 0.7 }, 1.0),
        VelocityFieldSpec::analytic("rotation", AnalyticField::Rotation, 1.0),
        VelocityFieldSpec::analytic("swirl", AnalyticField::Swirl, 1.0),
        VelocityFieldSpec::analytic("bump", AnalyticField::CompactBump, 1.0),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_divergence_matches_finite_differences(t in 0.0..1.0f64, x in -3.0..3.0f64, y in -3.0..3.0f64) {
        for f in smooth_fields() {
            let p = if f.dim() == 1 { vec![x / 3.0] } else { vec![x, y] };
            let exact = f.eval_div_b(t, &p);
            let fd = fd_divergence(&f, t, &p, 1e-5);
            prop_assert!((fd - exact).abs() <= 1e-5 * exact.abs().max(1.0), "{} at {p:?}: {fd} vs {exact}", f.id);
            prop_assert!(exact.abs() <= f.div_sup(t) + 1e-12);
        }
    }

    #[test]
    fn growth_split_dominates(t in 0.0..1.0f64, x in -50.0..50.0f64, y in -50.0..50.0f64) {
        for f in smooth_fields() {
            let split = growth_split(&f).unwrap();
            let p = if f.dim() == 1 { vec![x] } else { vec![x, y] };
            let b = f.eval_b(t, &p);
            let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let lhs = b.iter().map(|v| v * v).sum::<f64>().sqrt() / (1.0 + r);
            prop_assert!(lhs <= split.b1(t, &p) + split.b2(t) + 1e-12);
        }
    }

    #[test]
    fn mollified_field_keeps_sup_bounds(eps in 0.01..0.5f64, x in -2.0..2.0f64, y in -2.0..2.0f64, t in 0.0..1.0f64) {
        let shear = VelocityFieldSpec::analytic("shear", AnalyticField::Shear, 1.0);
        let m = MollifierSpec::new(eps, 2).unwrap();
        let (kt, kx) = m.kernel_integrals();
        prop_assert!((kt - 1.0).abs() < 1e-10 && (kx - 1.0).abs() < 1e-10);
        let s = mollify(&shear, &m).unwrap();
        let b = s.eval_b(t, &[x, y]);
        // convolution with a probability kernel (zero-extended in time) cannot exceed sup |b| = 1
        prop_assert!(b[0].abs() <= 1.0 + 1e-12 && b[1] == 0.0);
        prop_assert!(s.eval_div_b(t, &[x, y]).abs() <= 1e-12);
    }

    #[test]
    fn csv_numbers_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        prop_assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn bmo_norm_ignores_constants_and_scales(a in 0.5..3.0f64, shift in -5.0..5.0f64, k in 0.1..4.0f64) {
        let s = SampledFunction::from_fn(1, 1.0, 1 << 12, |x| if x[0].abs() < 1.0 { (a * x[0]).sin().abs() } else { 0.0 });
        let fam = dyadic_family(1, 1.0, 5, 4);
        let base = bmo_norm(&s, &fam).unwrap().norm_star;
        let shifted = bmo_norm(&s.shifted(shift), &fam).unwrap().norm_star;
        let scaled = bmo_norm(&s.scaled(k), &fam).unwrap().norm_star;
        prop_assert!((shifted - base).abs() <= 1e-12 * base.max(1.0));
        prop_assert!((scaled - k * base).abs() <= 1e-12 * (k * base).max(1.0));
    }

    #[test]
    fn superlevel_tail_is_monotone_and_convex(p in 0.2..0.9f64) {
        let s = SampledFunction::from_fn(1, 1.0, 1 << 14, |x| {
            let r = x[0].abs();
            if r > 0.0 && r < 1.0 { r.powf(-p) - 1.0 } else { 0.0 }
        });
        let prof = bmo_norm(&s, &dyadic_family(1, 1.0, 6, 4)).unwrap();
        let rep = lemma52_checks(&prof, &[9.0, 10.0, 11.0, 12.0, 14.0]).unwrap();
        prop_assert!(rep.nonincreasing);
        prop_assert!(rep.convex);
        prop_assert!(rep.average_ok);
    }
}
