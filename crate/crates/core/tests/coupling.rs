use std::f64::consts::PI;

use proptest::prelude::*;
use rayon::prelude::*;
use stochastic_rbc::boussinesq::{Bases, FinitePrSolver, SolverState, StepConfig};
use stochastic_rbc::coupling::{
    couple_infinite_pr, estimate_decay, girsanov_log_density, step_coupled_pair, CouplingConfig, CouplingMode,
    CouplingRow, CouplingTrace, DecayOptions, GirsanovLedger,
};
use stochastic_rbc::infinite_pr::InfPrSolver;
use stochastic_rbc::noise::{build_temperature_basis, build_velocity_basis, WienerStream};
use stochastic_rbc::params::NondimParams;
use stochastic_rbc::{Grid, ScalarField};

fn params() -> NondimParams {
    NondimParams {
        pr: 1.0,
        ra: 20.0,
        ra_tilde: 10.0,
        aspect: 2.0,
        n1: 2,
        n2: 4,
        sigma_tilde_norm: 1.0,
    }
}

fn nudging(lambda1: f64, lambda2: f64, r_budget: f64) -> CouplingConfig {
    CouplingConfig {
        lambda1,
        lambda2,
        n1_nudge: if lambda1 > 0.0 { 2 } else { 0 },
        n2_nudge: 4,
        r_budget,
        mode: if lambda1 > 0.0 { CouplingMode::CaseI } else { CouplingMode::CaseII },
        auto_modes: false,
    }
}

fn finite_solver(grid: Grid) -> FinitePrSolver {
    let p = params();
    FinitePrSolver::new(grid, p, Bases::new(&p, &grid).unwrap(), StepConfig::new(1e-3)).unwrap()
}

fn theta0(grid: Grid, amp: f64, j: f64) -> ScalarField {
    ScalarField::from_fn(grid, |x, z| amp * (PI * z).sin() * (j * PI * x).cos())
}

#[test]
fn identical_data_stay_synchronized() {
    let g = Grid::new(16, 17, 2.0).unwrap();
    let solver = finite_solver(g);
    let stream = WienerStream::new(3, 0);
    let mut u = SolverState::new(theta0(g, 1.0, 1.0), g.zeros(), stream).unwrap();
    let mut v = u.clone();
    let mut ledger = GirsanovLedger::default();
    let ccfg = nudging(5.0, 5.0, 10.0);
    for _ in 0..50 {
        let (a, b, row) = step_coupled_pair(&solver, &ccfg, &u, &v, &mut ledger).unwrap();
        assert_eq!(row.diff_u_sq, 0.0);
        assert_eq!(row.diff_theta_sq, 0.0);
        assert_eq!(row.girsanov_cost, 0.0);
        assert_eq!(row.log_density, 0.0);
        (u, v) = (a, b);
    }
}

#[test]
fn zero_nudging_is_the_uncoupled_solution() {
    let g = Grid::new(16, 17, 2.0).unwrap();
    let solver = finite_solver(g);
    let stream = WienerStream::new(3, 0);
    let mut u = SolverState::new(theta0(g, 1.0, 1.0), g.zeros(), stream).unwrap();
    let mut v = SolverState::new(theta0(g, -0.5, 2.0), g.zeros(), stream).unwrap();
    let mut alone = v.clone();
    let mut ledger = GirsanovLedger::default();
    for _ in 0..50 {
        let (a, b, row) = step_coupled_pair(&solver, &nudging(0.0, 0.0, 10.0), &u, &v, &mut ledger).unwrap();
        alone = solver.step(&alone).unwrap();
        assert_eq!(b.theta, alone.theta);
        assert_eq!(b.velocity, alone.velocity);
        assert_eq!(row.log_density, 0.0);
        (u, v) = (a, b);
    }
}

#[test]
fn unshared_noise_is_rejected() {
    let g = Grid::new(16, 17, 2.0).unwrap();
    let solver = finite_solver(g);
    let u = SolverState::new(theta0(g, 1.0, 1.0), g.zeros(), WienerStream::new(1, 0)).unwrap();
    let v = SolverState::new(theta0(g, 1.0, 1.0), g.zeros(), WienerStream::new(1, 1)).unwrap();
    assert!(step_coupled_pair(&solver, &nudging(1.0, 1.0, 1.0), &u, &v, &mut GirsanovLedger::default()).is_err());
}

#[test]
fn girsanov_density_has_unit_mean() {
    let g = Grid::new(16, 9, 2.0).unwrap();
    let mut p = params();
    (p.n1, p.sigma_tilde_norm, p.ra) = (0, 0.0, 10.0);
    let solver =
        InfPrSolver::new(g, p, build_temperature_basis(4, &g).unwrap(), StepConfig::new(2e-3)).unwrap();
    let ccfg = nudging(0.0, 20.0, 1.0);
    let members = 1000u64;
    let densities: Vec<f64> = (0..members)
        .into_par_iter()
        .map(|m| {
            let stream = WienerStream::new(17, m);
            let mut u = solver.initial_state(theta0(g, 0.03, 1.0), stream).unwrap();
            let mut v = solver.initial_state(theta0(g, -0.03, 1.0), stream).unwrap();
            let mut ledger = GirsanovLedger::default();
            let mut rows = vec![];
            for _ in 0..100 {
                let (a, b, row) = couple_infinite_pr(&solver, &ccfg, &u, &v, &mut ledger).unwrap();
                assert!(row.girsanov_cost <= ccfg.r_budget);
                rows.push(row);
                (u, v) = (a, b);
            }
            girsanov_log_density(&CouplingTrace { rows }).exp()
        })
        .collect();
    let n = members as f64;
    let mean = densities.iter().sum::<f64>() / n;
    let sd = (densities.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(sd > 0.0);
    assert!((mean - 1.0).abs() <= 3.0 * sd / n.sqrt(), "mean {mean}, sd {sd}");
}

#[test]
fn auto_modes_meet_the_mode_rule() {
    let g = Grid::new(32, 33, 2.0).unwrap();
    let temp = build_temperature_basis(16, &g).unwrap();
    let vel = build_velocity_basis(4, &g).unwrap();
    let cfg = CouplingConfig {
        auto_modes: true,
        n1_nudge: 0,
        n2_nudge: 0,
        ..nudging(0.0, 30.0, 10.0)
    };
    let resolved = cfg.resolve_modes(&temp, Some(&vel)).unwrap();
    let c = temp.inverse_poincare_constant(temp.len());
    let n = resolved.n2_nudge as f64;
    assert!(n * n * c >= 2.0 * 30.0);
    assert!((n - 1.0) * (n - 1.0) * c < 2.0 * 30.0);
    assert_eq!(resolved.n1_nudge, 0);
    assert!(!resolved.auto_modes);

    let greedy = CouplingConfig { lambda2: 1e6, ..cfg };
    assert!(greedy.resolve_modes(&temp, Some(&vel)).is_err());
}

fn synthetic(rate: f64, offset: f64) -> CouplingTrace {
    CouplingTrace {
        rows: (0..200)
            .map(|i| {
                let t = i as f64 * 0.01;
                CouplingRow {
                    t,
                    diff_u_sq: 0.0,
                    diff_theta_sq: offset * (rate * t).exp(),
                    girsanov_cost: 0.0,
                    log_density: 0.0,
                    stopped: false,
                }
            })
            .collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ledger_never_exceeds_budget(
        shifts in prop::collection::vec(prop::collection::vec(-50.0..50.0f64, 3), 1..200),
        budget in 0.01..10.0f64,
    ) {
        let mut ledger = GirsanovLedger::default();
        let dw = [0.01, -0.02, 0.005];
        let mut was_stopped = false;
        for a in &shifts {
            let active = ledger.book(a, &dw, 1e-2, budget);
            prop_assert!(ledger.cost <= budget);
            if was_stopped {
                prop_assert!(!active);
            }
            was_stopped = ledger.stopped;
        }
    }

    #[test]
    fn exponential_rates_are_recovered(rate in -20.0..-0.5f64, offset in 1e-3..1e3f64) {
        let est = estimate_decay(&synthetic(rate, offset), &DecayOptions::default()).unwrap();
        let fitted = est.rate.unwrap();
        prop_assert!((fitted - rate).abs() <= 1e-6 * rate.abs(), "{fitted} vs {rate}");
        prop_assert!(est.r_squared.unwrap() > 1.0 - 1e-9);
    }
}
