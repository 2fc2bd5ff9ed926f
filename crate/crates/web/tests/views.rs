use rough_transport_web::{density_view, renormalizer_curves, superlevel_decay};

#[test]
fn zero_field_keeps_the_datum_in_place() {
    let v = density_view("zero", "zero", "bump", 1.0, 4000, 60).unwrap();
    let diff = v
        .initial()
        .iter()
        .zip(v.transported())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(diff < 1e-12, "{diff}");
    assert!(v.lost_fraction() == 0.0);
}

#[test]
fn expansion_conserves_mass_and_flattens_the_peak() {
    let v = density_view("linear_expand", "zero", "bump", 1.0, 4000, 60).unwrap();
    let peak = |xs: Vec<f64>| xs.into_iter().fold(0.0f64, f64::max);
    let h = 6.0 / 60.0;
    let m0: f64 = v.initial().iter().sum::<f64>() * h;
    let m1: f64 = v.transported().iter().sum::<f64>() * h;
    assert!((m0 - m1).abs() < 1e-9 * m0, "{m0} {m1}");
    assert!(peak(v.transported()) < 0.5 * peak(v.initial()));
}

#[test]
fn constant_damping_scales_the_mass_by_e() {
    let plain = density_view("zero", "zero", "gaussian", 1.0, 2000, 40).unwrap();
    let damped = density_view("zero", "constant", "gaussian", 1.0, 2000, 40).unwrap();
    assert!((damped.mass() / plain.mass() - std::f64::consts::E).abs() < 1e-6);
}

#[test]
fn density_view_rejects_bad_inputs() {
    assert!(density_view("rotation", "zero", "bump", 1.0, 100, 20).is_err());
    assert!(density_view("nope", "zero", "bump", 1.0, 100, 20).is_err());
    assert!(density_view("zero", "zero", "bump", -1.0, 100, 20).is_err());
    assert!(density_view("zero", "zero", "bump", 1.0, 3, 20).is_err());
}

#[test]
fn renormalizer_curves_respect_their_bounds() {
    let c = renormalizer_curves(1e-2, 50.0, 2001).unwrap();
    assert_eq!(c.radii().len(), 2001);
    assert!(c.beta().iter().all(|&b| (0.0..=c.sup_beta() + 1e-12).contains(&b)));
    assert!(c.beta().windows(2).all(|w| w[1] >= w[0]));
    // the weight r β'(r) never exceeds 2
    assert!(c.max_r_beta_prime() > 1.0 && c.max_r_beta_prime() < 2.0);
    assert!(renormalizer_curves(0.0, 1.0, 10).is_err());
}

#[test]
fn logarithm_has_exponential_superlevel_decay() {
    let s = superlevel_decay(0.0, 1 << 14).unwrap();
    assert!(s.bmo_norm() > 0.0);
    let lm = s.log_measures();
    assert!(lm.windows(2).all(|w| w[1] <= w[0]));
    // |{log(1/|x|) > t}| = 2 e^{-t}: rate 1 in the raw threshold
    assert!((s.rate() - 1.0).abs() < 0.1, "{}", s.rate());
    assert!(superlevel_decay(1.5, 1 << 14).is_err());
}
