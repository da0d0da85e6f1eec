//! Finite-Prandtl stepper, the passive drift-diffusion stepper and the
//! comparison solution, all in homogeneous (wall-vanishing) variables.
//!
//! Diffusion is implicit (Crank-Nicolson, optionally preceded by a few
//! backward-Euler steps), advection and buoyancy are explicit with
//! second-order Adams-Bashforth after a first Euler step, and the additive
//! noise enters as an exact Gaussian increment after the implicit solve.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{grad_sq, ensure_same, Grid, Normed, ScalarField, VelocityField};
use crate::implicit::{Implicit, Weighting};
use crate::noise::{build_temperature_basis, build_velocity_basis, Channel, NoiseBasis, WienerStream};
use crate::params::NondimParams;
use crate::spectral::{self, Advector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    /// Number of initial steps taken with backward-Euler diffusion, which
    /// damps the high-wavenumber ringing Crank-Nicolson leaves on rough data.
    pub startup_steps: u64,
}

impl Default for Scheme {
    fn default() -> Self {
        Scheme { startup_steps: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub dt: f64,
    pub cfl_max: f64,
    pub dealias: bool,
    /// Whether the stochastic forcing is applied.
    pub noise: bool,
    pub scheme: Scheme,
}

impl StepConfig {
    pub fn new(dt: f64) -> Self {
        StepConfig {
            dt,
            cfl_max: 0.5,
            dealias: true,
            noise: true,
            scheme: Scheme::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain("dt", format!("{} must be positive", self.dt)));
        }
        if !(self.cfl_max > 0.0 && self.cfl_max < 1.0) {
            return Err(Error::domain("cfl_max", format!("{} must lie in (0, 1)", self.cfl_max)));
        }
        Ok(())
    }

    pub(crate) fn weighting(&self, step: u64) -> Weighting {
        if step < self.scheme.startup_steps {
            Weighting::Backward
        } else {
            Weighting::Trapezoidal
        }
    }
}

/// Forcing bases for both equations, built from the parameter set.
#[derive(Debug, Clone)]
pub struct Bases {
    pub temperature: NoiseBasis,
    pub velocity: NoiseBasis,
}

impl Bases {
    pub fn new(params: &NondimParams, grid: &Grid) -> Result<Self> {
        params.validate()?;
        Ok(Bases {
            temperature: build_temperature_basis(params.n2, grid)?,
            velocity: build_velocity_basis(params.n1, grid)?.rescaled(params.sigma_tilde_norm),
        })
    }
}

/// Explicit tendencies of the previous step, kept for Adams-Bashforth.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub theta: Array2<f64>,
    pub omega: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: f64,
    pub step: u64,
    pub theta: ScalarField,
    pub velocity: VelocityField,
    pub stream: WienerStream,
    pub history: Option<History>,
}

impl SolverState {
    /// Fresh state; `theta` wall rows and `psi` wall rows are forced to zero.
    pub fn new(mut theta: ScalarField, psi: Array2<f64>, stream: WienerStream) -> Result<Self> {
        theta.zero_walls();
        let velocity = VelocityField::from_streamfunction(theta.grid, psi)?;
        Ok(SolverState {
            t: 0.0,
            step: 0,
            theta,
            velocity,
            stream,
            history: None,
        })
    }

    pub fn rest(grid: Grid, stream: WienerStream) -> Self {
        SolverState {
            t: 0.0,
            step: 0,
            theta: ScalarField::zeros(grid),
            velocity: VelocityField::zeros(grid),
            stream,
            history: None,
        }
    }
}

/// Extra increments applied after the implicit solve (used for nudging).
#[derive(Debug, Clone, Default)]
pub struct Increments {
    pub theta: Option<Array2<f64>>,
    pub psi: Option<Array2<f64>>,
}

pub(crate) fn check_cfl(u: &VelocityField, config: &StepConfig, step: u64) -> Result<f64> {
    let g = &u.grid;
    let m1 = u.u1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let m2 = u.u2.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rate = (m1 / g.dx()).max(m2 / g.dz());
    let cfl = rate * config.dt;
    if !cfl.is_finite() {
        return Err(Error::NonFinite { step });
    }
    if cfl > config.cfl_max {
        return Err(Error::Cfl {
            step,
            cfl,
            cfl_max: config.cfl_max,
            suggested_dt: 0.9 * config.cfl_max / rate,
        });
    }
    Ok(cfl)
}

pub(crate) fn check_finite(a: &Array2<f64>, step: u64) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

fn ab2(now: &Array2<f64>, prev: Option<&Array2<f64>>) -> Array2<f64> {
    match prev {
        Some(p) => now * 1.5 - p * 0.5,
        None => now.clone(),
    }
}

fn zero_walls(a: &mut Array2<f64>) {
    let nz = a.dim().1;
    for i in 0..a.dim().0 {
        a[[i, 0]] = 0.0;
        a[[i, nz - 1]] = 0.0;
    }
}

/// Explicit temperature tendency `-u . grad theta + ra_tilde u2`.
pub(crate) fn theta_tendency(adv: &Advector, theta: &Array2<f64>, u2: &Array2<f64>, ra_tilde: f64) -> Array2<f64> {
    let mut e = adv.apply(theta);
    e.mapv_inplace(|v| -v);
    e.scaled_add(ra_tilde, u2);
    zero_walls(&mut e);
    e
}

/// Stepper for the finite-Prandtl system with factorizations cached.
#[derive(Debug, Clone)]
pub struct FinitePrSolver {
    pub grid: Grid,
    pub params: NondimParams,
    pub bases: Bases,
    pub config: StepConfig,
    implicit: Implicit,
}

impl FinitePrSolver {
    pub fn new(grid: Grid, params: NondimParams, bases: Bases, config: StepConfig) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        ensure_same(&grid, bases.temperature.grid())?;
        ensure_same(&grid, bases.velocity.grid())?;
        Ok(FinitePrSolver {
            implicit: Implicit::new(grid, config.dt, Some(params.pr)),
            grid,
            params,
            bases,
            config,
        })
    }

    pub fn step(&self, state: &SolverState) -> Result<SolverState> {
        self.step_with(state, &Increments::default())
    }

    /// One step, adding `extra` (already multiplied by `dt`) after the noise.
    pub fn step_with(&self, state: &SolverState, extra: &Increments) -> Result<SolverState> {
        ensure_same(&self.grid, &state.theta.grid)?;
        let cfg = &self.config;
        let p = &self.params;
        let n = state.step;
        check_cfl(&state.velocity, cfg, n)?;
        let u = &state.velocity;
        let adv = Advector::new(u, cfg.dealias);
        let e_theta = theta_tendency(&adv, &state.theta.values, &u.u2, p.ra_tilde);
        let mut e_omega = adv.apply(&u.omega);
        e_omega.mapv_inplace(|v| -v);
        e_omega.scaled_add(p.pr * p.ra, &spectral::ddx(&self.grid, &state.theta.values));
        zero_walls(&mut e_omega);

        let hist = state.history.as_ref();
        let w = cfg.weighting(n);
        let mut theta = self.implicit.scalar(
            &state.theta.values,
            &ab2(&e_theta, hist.map(|h| &h.theta)),
            w,
        );
        let mut psi = self
            .implicit
            .streamfunction(&u.psi, &ab2(&e_omega, hist.map(|h| &h.omega)), w);

        if cfg.noise {
            let tb = &self.bases.temperature;
            let g = tb.draws(&state.stream, Channel::Temperature);
            theta += &tb.scalar_increment(cfg.dt, &g).values;
            let vb = &self.bases.velocity;
            if !vb.is_empty() {
                let g = vb.draws(&state.stream, Channel::Velocity);
                psi.scaled_add(p.pr, &vb.streamfunction_increment(cfg.dt, &g));
            }
        }
        if let Some(d) = &extra.theta {
            theta += d;
        }
        if let Some(d) = &extra.psi {
            psi += d;
        }
        zero_walls(&mut theta);
        check_finite(&theta, n)?;
        check_finite(&psi, n)?;
        Ok(SolverState {
            t: state.t + cfg.dt,
            step: n + 1,
            theta: ScalarField {
                grid: self.grid,
                values: theta,
            },
            velocity: VelocityField::from_streamfunction(self.grid, psi)?,
            stream: state.stream.advanced(),
            history: Some(History {
                theta: e_theta,
                omega: e_omega,
            }),
        })
    }
}

/// One finite-Prandtl step. Builds the factorizations on every call; use
/// [`FinitePrSolver`] for repeated stepping.
pub fn step_finite_pr(
    state: &SolverState,
    params: &NondimParams,
    bases: &Bases,
    config: &StepConfig,
) -> Result<SolverState> {
    FinitePrSolver::new(state.theta.grid, *params, bases.clone(), *config)?.step(state)
}

/// State of a scalar advected by a frozen velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct PassiveState {
    pub t: f64,
    pub step: u64,
    pub field: ScalarField,
    pub stream: WienerStream,
    pub history: Option<Array2<f64>>,
}

impl PassiveState {
    pub fn new(mut field: ScalarField, stream: WienerStream) -> Self {
        field.zero_walls();
        PassiveState {
            t: 0.0,
            step: 0,
            field,
            stream,
            history: None,
        }
    }
}

/// Stepper for `ds + v . grad s dt = (c v2 + lap s) dt + sum sigma_k dW^k`
/// with `s = 0` on the walls and `v` frozen. `c = ra_tilde` gives the drift-
/// diffusion equation, `c = 0` the comparison equation.
#[derive(Debug, Clone)]
pub struct PassiveSolver {
    pub grid: Grid,
    pub source: f64,
    pub basis: NoiseBasis,
    pub config: StepConfig,
    velocity: VelocityField,
    advector: Advector,
    implicit: Implicit,
}

impl PassiveSolver {
    pub fn new(velocity: VelocityField, source: f64, basis: NoiseBasis, config: StepConfig) -> Result<Self> {
        config.validate()?;
        let grid = velocity.grid;
        ensure_same(&grid, basis.grid())?;
        check_cfl(&velocity, &config, 0)?;
        Ok(PassiveSolver {
            grid,
            source,
            basis,
            config,
            advector: Advector::new(&velocity, config.dealias),
            implicit: Implicit::new(grid, config.dt, None),
            velocity,
        })
    }

    pub fn velocity(&self) -> &VelocityField {
        &self.velocity
    }

    pub fn step(&self, state: &PassiveState) -> Result<PassiveState> {
        ensure_same(&self.grid, &state.field.grid)?;
        let cfg = &self.config;
        let n = state.step;
        let e = theta_tendency(&self.advector, &state.field.values, &self.velocity.u2, self.source);
        let mut s = self
            .implicit
            .scalar(&state.field.values, &ab2(&e, state.history.as_ref()), cfg.weighting(n));
        if cfg.noise {
            let g = self.basis.draws(&state.stream, Channel::Temperature);
            s += &self.basis.scalar_increment(cfg.dt, &g).values;
        }
        zero_walls(&mut s);
        check_finite(&s, n)?;
        Ok(PassiveState {
            t: state.t + cfg.dt,
            step: n + 1,
            field: ScalarField {
                grid: self.grid,
                values: s,
            },
            stream: state.stream.advanced(),
            history: Some(e),
        })
    }
}

/// One drift-diffusion step for `xi` under the frozen velocity `v`.
pub fn step_drift_diffusion(
    xi: &PassiveState,
    v: &VelocityField,
    params: &NondimParams,
    basis: &NoiseBasis,
    config: &StepConfig,
) -> Result<PassiveState> {
    PassiveSolver::new(v.clone(), params.ra_tilde, basis.clone(), *config)?.step(xi)
}

/// One comparison-equation step for `S` under the frozen velocity `v`.
pub fn step_comparison_s(
    s: &PassiveState,
    v: &VelocityField,
    basis: &NoiseBasis,
    config: &StepConfig,
) -> Result<PassiveState> {
    PassiveSolver::new(v.clone(), 0.0, basis.clone(), *config)?.step(s)
}

/// `S(0) = xi_0 + ra_tilde (1 - x2)` in the interior, zero on both walls.
pub fn comparison_initial(xi0: &ScalarField, ra_tilde: f64) -> ScalarField {
    let mut s = crate::params::theta_to_temperature(xi0, ra_tilde);
    s.zero_walls();
    s
}

/// Pointwise margin `min (|S| + 2 ra_tilde - |xi|)` over the grid.
pub fn comparison_margin(xi: &ScalarField, s: &ScalarField, ra_tilde: f64) -> f64 {
    xi.values
        .iter()
        .zip(s.values.iter())
        .map(|(x, s)| s.abs() + 2.0 * ra_tilde - x.abs())
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub t: f64,
    pub norm_u_sq: f64,
    pub norm_theta_sq: f64,
    pub grad_u_sq: f64,
    pub grad_theta_sq: f64,
    pub theta_l4: f64,
    /// `<theta, u2>`.
    pub flux_term: f64,
}

impl EnergyRecord {
    pub const CSV_HEADER: &'static str = "t,norm_u_sq,norm_theta_sq,grad_u_sq,grad_theta_sq,theta_l4,flux_term";

    pub fn csv_row(&self) -> String {
        format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.t, self.norm_u_sq, self.norm_theta_sq, self.grad_u_sq, self.grad_theta_sq, self.theta_l4, self.flux_term
        )
    }
}

/// Quadrature values of the energy functionals of `(theta, u)` at time `t`.
pub fn energy_record(t: f64, theta: &ScalarField, u: &VelocityField) -> EnergyRecord {
    let g = &theta.grid;
    EnergyRecord {
        t,
        norm_u_sq: u.l2_norm().powi(2),
        norm_theta_sq: theta.l2_norm().powi(2),
        grad_u_sq: grad_sq(g, &u.u1) + grad_sq(g, &u.u2),
        grad_theta_sq: grad_sq(g, &theta.values),
        theta_l4: theta.lp_norm(4.0).expect("p = 4 is admissible"),
        flux_term: g.inner(&theta.values, &u.u2),
    }
}

pub fn energy_diagnostics(state: &SolverState) -> EnergyRecord {
    energy_record(state.t, &state.theta, &state.velocity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params(ra: f64, ra_tilde: f64) -> NondimParams {
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
    fn rest_state_is_fixed_without_noise() {
        let g = Grid::new(16, 17, 2.0).unwrap();
        let p = params(1e3, 1.0);
        let mut cfg = StepConfig::new(1e-3);
        cfg.noise = false;
        let solver = FinitePrSolver::new(g, p, Bases::new(&p, &g).unwrap(), cfg).unwrap();
        let mut s = SolverState::rest(g, WienerStream::new(1, 0));
        for _ in 0..20 {
            s = solver.step(&s).unwrap();
        }
        assert_eq!(s.theta.max_abs(), 0.0);
        assert_eq!(s.velocity.max_abs(), 0.0);
        assert_eq!(s.step, 20);
    }

    #[test]
    fn cfl_violation_reports_suggested_dt() {
        let g = Grid::new(16, 17, 2.0).unwrap();
        let p = params(1e3, 1.0);
        let solver = FinitePrSolver::new(g, p, Bases::new(&p, &g).unwrap(), StepConfig::new(0.1)).unwrap();
        let psi = g.from_fn(|x, z| 50.0 * (z * (1.0 - z)).powi(2) * (PI * x).sin());
        let s = SolverState::new(ScalarField::zeros(g), psi, WienerStream::new(1, 0)).unwrap();
        match solver.step(&s) {
            Err(Error::Cfl { suggested_dt, .. }) => assert!(suggested_dt < 0.1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn energy_record_of_sine() {
        let g = Grid::new(16, 129, 2.0).unwrap();
        let th = ScalarField::from_fn(g, |_, z| (PI * z).sin());
        let r = energy_record(0.0, &th, &VelocityField::zeros(g));
        assert!((r.norm_theta_sq - 1.0).abs() < 1e-12);
        assert!((r.grad_theta_sq - PI * PI).abs() / (PI * PI) < 1e-3);
        assert_eq!(r.flux_term, 0.0);
        assert_eq!(r.norm_u_sq, 0.0);
    }
}
