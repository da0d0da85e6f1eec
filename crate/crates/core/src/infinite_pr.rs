//! Infinite-Prandtl stepper: the velocity is the Stokes response to the
//! current temperature and only `theta` is prognostic.

use ndarray::Array2;

use crate::boussinesq::{check_cfl, check_finite, theta_tendency, StepConfig};
use crate::error::Result;
use crate::grid::{ensure_same, Grid, ScalarField, VelocityField};
use crate::implicit::Implicit;
use crate::noise::{Channel, NoiseBasis, WienerStream};
use crate::params::NondimParams;
use crate::spectral::{Advector, StokesSolver};

#[derive(Debug, Clone, PartialEq)]
pub struct InfPrState {
    pub t: f64,
    pub step: u64,
    pub theta: ScalarField,
    /// Stokes response to `theta`; recomputed after every update.
    pub velocity: VelocityField,
    pub stream: WienerStream,
    pub history: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct InfPrSolver {
    pub grid: Grid,
    pub params: NondimParams,
    pub basis: NoiseBasis,
    pub config: StepConfig,
    stokes: StokesSolver,
    implicit: Implicit,
}

impl InfPrSolver {
    pub fn new(grid: Grid, params: NondimParams, basis: NoiseBasis, config: StepConfig) -> Result<Self> {
        params.validate()?;
        config.validate()?;
        ensure_same(&grid, basis.grid())?;
        Ok(InfPrSolver {
            stokes: StokesSolver::new(grid),
            implicit: Implicit::new(grid, config.dt, None),
            grid,
            params,
            basis,
            config,
        })
    }

    pub fn velocity_of(&self, theta: &ScalarField) -> Result<VelocityField> {
        self.stokes.solve(theta, self.params.ra)
    }

    /// State at `t = 0` with the velocity enslaved to `theta`.
    pub fn initial_state(&self, mut theta: ScalarField, stream: WienerStream) -> Result<InfPrState> {
        theta.zero_walls();
        Ok(InfPrState {
            t: 0.0,
            step: 0,
            velocity: self.velocity_of(&theta)?,
            theta,
            stream,
            history: None,
        })
    }

    pub fn step(&self, state: &InfPrState) -> Result<InfPrState> {
        self.step_with(state, None)
    }

    /// One step, adding `extra` (already multiplied by `dt`) after the noise.
    pub fn step_with(&self, state: &InfPrState, extra: Option<&Array2<f64>>) -> Result<InfPrState> {
        ensure_same(&self.grid, &state.theta.grid)?;
        let cfg = &self.config;
        let n = state.step;
        check_cfl(&state.velocity, cfg, n)?;
        let adv = Advector::new(&state.velocity, cfg.dealias);
        let e = theta_tendency(&adv, &state.theta.values, &state.velocity.u2, self.params.ra_tilde);
        let explicit = match &state.history {
            Some(prev) => &e * 1.5 - prev * 0.5,
            None => e.clone(),
        };
        let mut theta = self.implicit.scalar(&state.theta.values, &explicit, cfg.weighting(n));
        if cfg.noise {
            let g = self.basis.draws(&state.stream, Channel::Temperature);
            theta += &self.basis.scalar_increment(cfg.dt, &g).values;
        }
        if let Some(d) = extra {
            theta += d;
        }
        let nz = self.grid.nz;
        for i in 0..self.grid.nx {
            theta[[i, 0]] = 0.0;
            theta[[i, nz - 1]] = 0.0;
        }
        check_finite(&theta, n)?;
        let theta = ScalarField {
            grid: self.grid,
            values: theta,
        };
        Ok(InfPrState {
            t: state.t + cfg.dt,
            step: n + 1,
            velocity: self.velocity_of(&theta)?,
            theta,
            stream: state.stream.advanced(),
            history: Some(e),
        })
    }
}

/// One infinite-Prandtl step. Builds the solver on every call; use
/// [`InfPrSolver`] for repeated stepping.
pub fn step_infinite_pr(
    state: &InfPrState,
    params: &NondimParams,
    basis: &NoiseBasis,
    config: &StepConfig,
) -> Result<InfPrState> {
    InfPrSolver::new(state.theta.grid, *params, basis.clone(), *config)?.step(state)
}
