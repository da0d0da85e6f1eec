use proptest::prelude::*;
use stochastic_rbc::params::{
    build_background_profile, nondimensionalize, temperature_to_theta, theta_to_temperature, NondimParams,
    PhysicalParams,
};
use stochastic_rbc::stats::background_bound;
use stochastic_rbc::{Grid, ScalarField};

fn water(gamma: f64) -> PhysicalParams {
    PhysicalParams {
        nu: 1e-6,
        kappa: 1.4e-7,
        g: 9.81,
        alpha: 2e-4,
        gamma,
        gamma_tilde: 0.0,
        h: 1.0,
        t1: 1.0,
        l_phys: 2.0,
        d: 2,
    }
}

fn nondim(ra: f64, ra_tilde: f64, aspect: f64) -> NondimParams {
    NondimParams {
        pr: 1.0,
        ra,
        ra_tilde,
        aspect,
        n1: 0,
        n2: 1,
        sigma_tilde_norm: 0.0,
    }
}

fn bound(ra: f64, ra_tilde: f64) -> f64 {
    let g = Grid::new(8, 33, 2.0).unwrap();
    background_bound(&nondim(ra, ra_tilde, 2.0), &build_background_profile(ra, ra_tilde, &g))
}

#[test]
fn conduction_profile_is_zero_fluctuation() {
    let g = Grid::new(8, 17, 2.0).unwrap();
    let t = ScalarField::from_fn(g, |_, z| 7.0 * (1.0 - z));
    assert!(temperature_to_theta(&t, 7.0).max_abs() < 1e-14);
}

#[test]
fn layer_width_clamps_at_one() {
    let g = Grid::new(8, 17, 2.0).unwrap();
    assert_eq!(build_background_profile(0.25, 2.0, &g).delta, 1.0);
    assert_eq!(build_background_profile(0.01, 2.0, &g).delta, 1.0);
    let p = build_background_profile(50.0, 50.0, &g);
    assert!((p.delta - 1.0 / 5000f64.sqrt()).abs() < 1e-15);
}

#[test]
fn closed_form_bound_fixture() {
    // delta = 1, ra_tilde = 2, L = 2
    assert!((bound(0.25, 2.0) - 111.0 / 56.0).abs() < 1e-12);
}

#[test]
fn tau_prime_integral_matches_quadrature() {
    let g = Grid::new(8, 17, 2.0).unwrap();
    for (ra, rt) in [(0.25, 2.0), (50.0, 50.0), (1e3, 10.0)] {
        let p = build_background_profile(ra, rt, &g);
        let n = 200_000;
        let h = p.delta / n as f64;
        // composite Simpson on the layer; tau' vanishes above it
        let f = |z: f64| p.tau_prime(z).powi(2);
        let mut s = f(0.0) + f(p.delta);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let quad = s * h / 3.0;
        let exact = p.tau_prime_sq_integral();
        assert!((quad - exact).abs() <= 1e-8 * exact, "{quad} vs {exact}");
    }
}

#[test]
fn bound_grows_like_square_root_of_product() {
    let r = bound(4e6, 1e3) / bound(1e6, 1e3);
    assert!((r - 2.0).abs() <= 0.1, "{r}");
}

#[test]
fn ito_term_vanishes_at_fixed_product() {
    let product = 1e6;
    let g = Grid::new(8, 33, 2.0).unwrap();
    let mut last = f64::INFINITY;
    for rt in [1.0, 10.0, 100.0, 1000.0] {
        let p = build_background_profile(product / rt, rt, &g);
        let layer = 2.0 / (rt * rt) * p.tau_prime_sq_integral() - 1.0;
        let ito = bound(product / rt, rt) - layer;
        assert!((ito - 1.0 / (rt * rt * 2.0)).abs() < 1e-9 * layer.abs().max(1.0));
        assert!(ito < last);
        last = ito;
    }
    assert!(last < 1e-6);
}

proptest! {
    #[test]
    fn theta_round_trip(rt in 0.1..1e3f64, a in -5.0..5.0f64, b in 0.1..4.0f64) {
        let g = Grid::new(8, 17, 2.0).unwrap();
        let t = ScalarField::from_fn(g, |x, z| a * (b * x).sin() * z + rt * (1.0 - z));
        let back = theta_to_temperature(&temperature_to_theta(&t, rt), rt);
        for (x, y) in back.values.iter().zip(t.values.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
        // T takes the wall values, so theta vanishes there
        let bump = ScalarField::from_fn(g, |x, z| rt * (1.0 - z) + a * z * (1.0 - z) * x.cos());
        let theta = temperature_to_theta(&bump, rt);
        for i in 0..g.nx {
            prop_assert!(theta.values[[i, 0]].abs() <= 1e-12 * rt);
            prop_assert!(theta.values[[i, g.nz - 1]].abs() <= 1e-12 * rt);
        }
    }

    #[test]
    fn profile_endpoints(ra in 1e-3..1e8f64, rt in 1e-3..1e4f64) {
        let g = Grid::new(8, 17, 2.0).unwrap();
        let p = build_background_profile(ra, rt, &g);
        prop_assert!(p.delta > 0.0 && p.delta <= 1.0);
        prop_assert!((p.tau(0.0) - rt).abs() <= 1e-12 * rt);
        prop_assert!(p.tau(1.0).abs() <= 1e-12 * rt);
        prop_assert_eq!(p.tau_samples[0], rt);
        prop_assert_eq!(p.tau_samples[g.nz - 1], 0.0);
    }

    #[test]
    fn gamma_rescaling_keeps_product(c in 1e-3..1e3f64) {
        let base = nondimensionalize(&water(1.0)).unwrap();
        let scaled = nondimensionalize(&water(c)).unwrap();
        prop_assert!((scaled.ra / (c * base.ra) - 1.0).abs() < 1e-12);
        prop_assert!((scaled.ra_tilde * c / base.ra_tilde - 1.0).abs() < 1e-12);
        prop_assert!((scaled.ra * scaled.ra_tilde / (base.ra * base.ra_tilde) - 1.0).abs() < 1e-12);
        prop_assert_eq!(scaled.pr, base.pr);
    }
}
