use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stochastic_rbc::boussinesq::StepConfig;
use stochastic_rbc::infinite_pr::InfPrSolver;
use stochastic_rbc::noise::{build_temperature_basis, WienerStream};
use stochastic_rbc::params::{build_background_profile, temperature_to_theta, NondimParams};
use stochastic_rbc::stats::{
    exponential_moment_report, martingale_exceedance_test, nusselt_estimates, nusselt_functionals,
    pointwise_background_inequality, MartingaleTrace, TimeAverager, NUSSELT_FUNCTIONALS,
};
use stochastic_rbc::{grad_norm, Error, Grid, ScalarField, VelocityField};

fn nondim(ra: f64, ra_tilde: f64) -> NondimParams {
    NondimParams {
        pr: 1.0,
        ra,
        ra_tilde,
        aspect: 2.0,
        n1: 0,
        n2: 4,
        sigma_tilde_norm: 0.0,
    }
}

#[test]
fn piecewise_average_matches_exact_trapezoid() {
    // integer times and values on a 1/8 lattice make the oracle exact
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut avg = TimeAverager::new(&["f"], 3.0);
    let mut t = 0i64;
    let mut pts: Vec<(i64, i64)> = vec![];
    for _ in 0..400 {
        t += rng.random_range(1..5);
        let n = rng.random_range(-4000..4000);
        avg.update(t as f64, &[n as f64 / 8.0]).unwrap();
        if t >= 3 {
            pts.push((t, n));
        }
    }
    // sum of (t1 - t0)(n0 + n1) / 16
    let num: i128 = pts.windows(2).map(|w| ((w[1].0 - w[0].0) * (w[0].1 + w[1].1)) as i128).sum();
    let span = (pts.last().unwrap().0 - pts[0].0) as f64;
    let exact = num as f64 / 16.0 / span;
    let got = avg.average("f").unwrap();
    assert!((got - exact).abs() <= 1e-12 * exact.abs().max(1.0), "{got} vs {exact}");
}

#[test]
fn out_of_order_samples_are_rejected() {
    let mut avg = TimeAverager::new(&["f"], 0.0);
    avg.update(1.0, &[1.0]).unwrap();
    assert!(matches!(avg.update(0.5, &[1.0]), Err(Error::OutOfOrder { .. })));
}

#[test]
fn conduction_state_nusselt_values() {
    let g = Grid::new(16, 33, 2.0).unwrap();
    let rt = 3.0;
    let p = nondim(50.0, rt);
    let theta = ScalarField::zeros(g);
    let u = VelocityField::zeros(g);
    let mut avg = TimeAverager::new(&NUSSELT_FUNCTIONALS, 0.0);
    for i in 0..=40 {
        avg.update(i as f64 * 0.1, &nusselt_functionals(&theta, &u, rt)).unwrap();
    }
    let nu = nusselt_estimates(&avg, &p).unwrap();
    assert_eq!(nu.nu_flux, 1.0);
    assert_eq!(nu.nu_grad_u, 1.0);
    let want = 1.0 - 1.0 / (2.0 * rt * rt * p.aspect);
    assert!((nu.nu_grad_t - want).abs() < 1e-12, "{}", nu.nu_grad_t);
}

#[test]
fn inequality_residual_vanishes_on_trivial_states() {
    let g = Grid::new(16, 33, 2.0).unwrap();
    let p = nondim(40.0, 5.0);
    let profile = build_background_profile(p.ra, p.ra_tilde, &g);
    let theta = ScalarField::from_fn(g, |x, z| (PI * z).sin() * x.cos());
    assert_eq!(pointwise_background_inequality(&theta, &VelocityField::zeros(g), &profile, &p), 0.0);
    // theta such that T equals the background exactly
    let tau = ScalarField::from_fn(g, |_, z| profile.tau(z));
    let theta = temperature_to_theta(&tau, p.ra_tilde);
    let psi = g.from_fn(|x, z| (PI * z).sin().powi(2) * (PI * x).cos());
    let u = VelocityField::from_streamfunction(g, psi).unwrap();
    assert!(pointwise_background_inequality(&theta, &u, &profile, &p).abs() < 1e-12);
}

#[test]
fn inequality_holds_on_solver_snapshots() {
    let g = Grid::new(32, 33, 2.0).unwrap();
    let p = nondim(40.0, 30.0);
    let profile = build_background_profile(p.ra, p.ra_tilde, &g);
    let solver = InfPrSolver::new(g, p, build_temperature_basis(4, &g).unwrap(), StepConfig::new(1e-3)).unwrap();
    let theta0 = ScalarField::from_fn(g, |x, z| 5.0 * (PI * z).sin() * (PI * x).cos());
    let mut s = solver.initial_state(theta0, WienerStream::new(8, 0)).unwrap();
    for _ in 0..1000 {
        s = solver.step(&s).unwrap();
        let r = pointwise_background_inequality(&s.theta, &s.velocity, &profile, &p);
        let t = stochastic_rbc::params::theta_to_temperature(&s.theta, p.ra_tilde);
        let scale = grad_norm(&s.velocity) * grad_norm(&t) + 1e-300;
        assert!(r >= -1e-6 * scale, "residual {r}");
    }
}

#[test]
fn brownian_martingale_respects_exponential_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (steps, dt, scale) = (1000, 1e-2f64, 1.5);
    let traces: Vec<MartingaleTrace> = (0..2000)
        .map(|_| {
            let mut tr = MartingaleTrace::default();
            for _ in 0..steps {
                let g: f64 = rng.sample(StandardNormal);
                tr.push_increment(scale * g * dt.sqrt(), scale * scale * dt);
            }
            tr
        })
        .collect();
    for gamma in [0.25, 1.0] {
        let rows = martingale_exceedance_test(&traces, gamma, &[1.0, 2.0, 4.0]).unwrap();
        for r in rows {
            assert!(r.within_bound, "{r:?}");
            assert!(r.frequency > 0.0 || r.bound < 0.05);
        }
    }
    let trivial = martingale_exceedance_test(&traces, 0.0, &[1.0]).unwrap();
    assert_eq!(trivial[0].bound, 1.0);
    assert!(trivial[0].within_bound);
    assert!(matches!(
        martingale_exceedance_test(&traces[..50], 0.25, &[1.0]),
        Err(Error::Underpowered { .. })
    ));
}

#[test]
fn moment_estimate_is_stable_under_window_doubling() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples: Vec<f64> = (0..4000).map(|_| rng.sample::<f64, _>(StandardNormal).powi(2)).collect();
    let eta = 0.1;
    let half = exponential_moment_report(&samples[..2000], &[eta]).unwrap();
    let full = exponential_moment_report(&samples, &[eta]).unwrap();
    let (a, b) = (half[0].estimate.unwrap(), full[0].estimate.unwrap());
    assert!((a - b).abs() < 0.1 * b);
    let zeros = vec![0.0; 200];
    let rows = exponential_moment_report(&zeros, &[0.0, 1.0]).unwrap();
    assert!(rows.iter().all(|r| r.estimate == Some(1.0)));
    let rows = exponential_moment_report(&samples, &[0.0]).unwrap();
    assert_eq!(rows[0].estimate, Some(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn averages_are_linear(
        vals in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64, 0.01..1.0f64), 3..60),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let mut avg = TimeAverager::new(&["f", "g", "h"], 0.0);
        let mut t = 0.0;
        for (f, g, dt) in &vals {
            avg.update(t, &[*f, *g, a * f + b * g]).unwrap();
            t += dt;
        }
        let (f, g, h) = (avg.average("f").unwrap(), avg.average("g").unwrap(), avg.average("h").unwrap());
        prop_assert!((h - a * f - b * g).abs() <= 1e-9 * (1.0 + h.abs()));
        let c = vals[0].0;
        let mut konst = TimeAverager::new(&["c"], 0.0);
        let mut t = 0.0;
        for (_, _, dt) in &vals {
            konst.update(t, &[c]).unwrap();
            t += dt;
        }
        prop_assert_eq!(konst.average("c").unwrap(), c);
    }
}
