//! Nudged coupling of paired trajectories under shared noise, with the
//! Girsanov shift bookkeeping and exponential decay estimation.
//!
//! The shift on forced mode `k` is `a_k = lambda c_k / amplitude_k` where
//! `c_k` is the modal coefficient of the projected difference. Its squared
//! norm is accumulated into the cost; once a step would push the cost past
//! the budget `R` the nudging stops for good, so the cost never exceeds `R`.

use serde::{Deserialize, Serialize};

use crate::boussinesq::{FinitePrSolver, Increments, SolverState};
use crate::error::{Error, Result};
use crate::grid::{Normed, ScalarField, VelocityField};
use crate::infinite_pr::{InfPrSolver, InfPrState};
use crate::noise::{Channel, NoiseBasis, Projectable, WienerStream};
use crate::params::NondimParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Velocity and temperature nudging.
    #[serde(rename = "case_i")]
    CaseI,
    /// Temperature nudging only (`lambda1 = 0`).
    #[serde(rename = "case_ii")]
    CaseII,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub n1_nudge: usize,
    pub n2_nudge: usize,
    pub r_budget: f64,
    pub mode: CouplingMode,
    /// Derive the mode counts from the nudging strengths.
    pub auto_modes: bool,
}

/// Smallest `n` with `n >= sqrt(2 lambda / c)`.
pub fn modes_for(lambda: f64, c: f64) -> usize {
    if lambda <= 0.0 {
        0
    } else {
        (2.0 * lambda / c).sqrt().ceil() as usize
    }
}

impl CouplingConfig {
    pub fn validate(&self, params: &NondimParams) -> Result<()> {
        let mut errs = vec![];
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            errs.push(format!("lambda1 = {} must be >= 0", self.lambda1));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            errs.push(format!("lambda2 = {} must be >= 0", self.lambda2));
        }
        if !(self.r_budget > 0.0) {
            errs.push(format!("r_budget = {} must be positive", self.r_budget));
        }
        if self.mode == CouplingMode::CaseII && self.lambda1 != 0.0 {
            errs.push("case_ii requires lambda1 = 0".into());
        }
        if self.n1_nudge > params.n1 {
            errs.push(format!(
                "n1_nudge = {} exceeds the {} forced velocity modes",
                self.n1_nudge, params.n1
            ));
        }
        if self.n2_nudge > params.n2 {
            errs.push(format!(
                "n2_nudge = {} exceeds the {} forced temperature modes",
                self.n2_nudge, params.n2
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Applies the mode-count rule when `auto_modes` is set: `n` is the least
    /// integer above `sqrt(2 lambda / C)` with `C` the inverse-Poincare
    /// constant measured on the forced modes. Without a velocity basis no
    /// velocity modes are nudged.
    pub fn resolve_modes(&self, temperature: &NoiseBasis, velocity: Option<&NoiseBasis>) -> Result<CouplingConfig> {
        if !self.auto_modes {
            return Ok(*self);
        }
        let pick = |lambda: f64, basis: &NoiseBasis, what: &str| -> Result<usize> {
            if lambda <= 0.0 {
                return Ok(0);
            }
            let c = basis.inverse_poincare_constant(basis.len());
            if !c.is_finite() {
                return Err(Error::Validation(vec![format!(
                    "auto_modes needs at least two forced {what} modes"
                )]));
            }
            let n = modes_for(lambda, c);
            if n > basis.len() {
                return Err(Error::Validation(vec![format!(
                    "auto_modes asks for {n} {what} modes for lambda = {lambda} but only {} are forced",
                    basis.len()
                )]));
            }
            Ok(n)
        };
        Ok(CouplingConfig {
            n1_nudge: match velocity {
                Some(b) => pick(self.lambda1, b, "velocity")?,
                None => 0,
            },
            n2_nudge: pick(self.lambda2, temperature, "temperature")?,
            auto_modes: false,
            ..*self
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub t: f64,
    pub diff_u_sq: f64,
    pub diff_theta_sq: f64,
    pub girsanov_cost: f64,
    pub log_density: f64,
    pub stopped: bool,
}

impl CouplingRow {
    pub const CSV_HEADER: &'static str = "t,diff_u_sq,diff_theta_sq,girsanov_cost,log_density,stopped";

    pub fn csv_row(&self) -> String {
        format!(
            "{:e},{:e},{:e},{:e},{:e},{}",
            self.t, self.diff_u_sq, self.diff_theta_sq, self.girsanov_cost, self.log_density, self.stopped as u8
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CouplingTrace {
    pub rows: Vec<CouplingRow>,
}

/// Running Girsanov quantities of one coupled pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GirsanovLedger {
    pub cost: f64,
    pub log_density: f64,
    pub stopped: bool,
}

impl GirsanovLedger {
    /// Books the shift `a` against the Wiener increments `dw` over `dt`.
    /// Returns whether nudging is active on this step.
    pub fn book(&mut self, a: &[f64], dw: &[f64], dt: f64, budget: f64) -> bool {
        if self.stopped {
            return false;
        }
        let a_sq: f64 = a.iter().map(|v| v * v).sum();
        if a_sq == 0.0 {
            return true;
        }
        if self.cost + a_sq * dt > budget {
            self.stopped = true;
            return false;
        }
        self.cost += a_sq * dt;
        let a_dw: f64 = a.iter().zip(dw).map(|(a, w)| a * w).sum();
        self.log_density += a_dw - 0.5 * a_sq * dt;
        true
    }
}

/// Shift components and nudging drift coefficients for one basis.
fn shift(basis: &NoiseBasis, coeffs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    coeffs
        .iter()
        .zip(&basis.modes)
        .map(|(c, m)| {
            if *c == 0.0 || lambda == 0.0 {
                Ok(0.0)
            } else if m.amplitude > 0.0 {
                Ok(lambda * c / m.amplitude)
            } else {
                Err(Error::NotRepresentable(format!(
                    "mode (j={}, m={}) is nudged but carries no noise",
                    m.j, m.m
                )))
            }
        })
        .collect()
}

fn check_shared(a: &WienerStream, b: &WienerStream) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::domain("stream", "coupled trajectories must share the noise stream"))
    }
}

fn increments(g: &[f64], dt: f64) -> Vec<f64> {
    g.iter().map(|g| g * dt.sqrt()).collect()
}

/// Advances the reference `u` and the nudged `v` by one step.
pub fn step_coupled_pair(
    solver: &FinitePrSolver,
    ccfg: &CouplingConfig,
    u: &SolverState,
    v: &SolverState,
    ledger: &mut GirsanovLedger,
) -> Result<(SolverState, SolverState, CouplingRow)> {
    check_shared(&u.stream, &v.stream)?;
    let dt = solver.config.dt;
    let bases = &solver.bases;
    let dv = velocity_difference(&v.velocity, &u.velocity);
    let mut dphi = v.theta.clone();
    dphi.axpy(-1.0, &u.theta);

    let c1 = if ccfg.lambda1 > 0.0 && ccfg.n1_nudge > 0 {
        dv.coefficients(&bases.velocity, ccfg.n1_nudge)?
    } else {
        vec![]
    };
    let c2 = if ccfg.lambda2 > 0.0 && ccfg.n2_nudge > 0 {
        dphi.coefficients(&bases.temperature, ccfg.n2_nudge)?
    } else {
        vec![]
    };
    let mut a = shift(&bases.velocity, &c1, ccfg.lambda1)?;
    a.extend(shift(&bases.temperature, &c2, ccfg.lambda2)?);
    let mut dw = increments(&bases.velocity.draws(&u.stream, Channel::Velocity), dt);
    dw.truncate(c1.len());
    let mut dw2 = increments(&bases.temperature.draws(&u.stream, Channel::Temperature), dt);
    dw2.truncate(c2.len());
    dw.extend(dw2);

    let active = ledger.book(&a, &dw, dt, ccfg.r_budget);
    let mut extra = Increments::default();
    if active && !c1.is_empty() {
        let w: Vec<f64> = c1.iter().map(|c| -solver.params.pr * ccfg.lambda1 * dt * c).collect();
        extra.psi = Some(bases.velocity.combine(&w));
    }
    if active && !c2.is_empty() {
        let w: Vec<f64> = c2.iter().map(|c| -ccfg.lambda2 * dt * c).collect();
        extra.theta = Some(bases.temperature.combine(&w));
    }
    let u1 = solver.step(u)?;
    let v1 = solver.step_with(v, &extra)?;
    let row = difference_row(&u1.theta, &u1.velocity, &v1.theta, &v1.velocity, u1.t, ledger);
    Ok((u1, v1, row))
}

/// Infinite-Prandtl pair: only the temperature is nudged.
pub fn couple_infinite_pr(
    solver: &InfPrSolver,
    ccfg: &CouplingConfig,
    u: &InfPrState,
    v: &InfPrState,
    ledger: &mut GirsanovLedger,
) -> Result<(InfPrState, InfPrState, CouplingRow)> {
    check_shared(&u.stream, &v.stream)?;
    let dt = solver.config.dt;
    let basis = &solver.basis;
    let mut dphi = v.theta.clone();
    dphi.axpy(-1.0, &u.theta);
    let c2 = if ccfg.lambda2 > 0.0 && ccfg.n2_nudge > 0 {
        dphi.coefficients(basis, ccfg.n2_nudge)?
    } else {
        vec![]
    };
    let a = shift(basis, &c2, ccfg.lambda2)?;
    let mut dw = increments(&basis.draws(&u.stream, Channel::Temperature), dt);
    dw.truncate(c2.len());
    let active = ledger.book(&a, &dw, dt, ccfg.r_budget);
    let extra = if active && !c2.is_empty() {
        let w: Vec<f64> = c2.iter().map(|c| -ccfg.lambda2 * dt * c).collect();
        Some(basis.combine(&w))
    } else {
        None
    };
    let u1 = solver.step(u)?;
    let v1 = solver.step_with(v, extra.as_ref())?;
    let row = difference_row(&u1.theta, &u1.velocity, &v1.theta, &v1.velocity, u1.t, ledger);
    Ok((u1, v1, row))
}

fn velocity_difference(a: &VelocityField, b: &VelocityField) -> VelocityField {
    VelocityField {
        grid: a.grid,
        psi: &a.psi - &b.psi,
        u1: &a.u1 - &b.u1,
        u2: &a.u2 - &b.u2,
        omega: &a.omega - &b.omega,
    }
}

fn difference_row(
    th_u: &ScalarField,
    vel_u: &VelocityField,
    th_v: &ScalarField,
    vel_v: &VelocityField,
    t: f64,
    ledger: &GirsanovLedger,
) -> CouplingRow {
    let mut dphi = th_v.clone();
    dphi.axpy(-1.0, th_u);
    CouplingRow {
        t,
        diff_u_sq: velocity_difference(vel_v, vel_u).l2_norm().powi(2),
        diff_theta_sq: dphi.l2_norm().powi(2),
        girsanov_cost: ledger.cost,
        log_density: ledger.log_density,
        stopped: ledger.stopped,
    }
}

/// `log D(t)` at the end of the trace; zero for an empty trace.
pub fn girsanov_log_density(trace: &CouplingTrace) -> f64 {
    trace.rows.last().map_or(0.0, |r| r.log_density)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayOptions {
    /// Trailing fraction of the trace used for the fit.
    pub window_fraction: f64,
    pub sync_eps: f64,
    /// Points below this value are left out of the log-linear fit.
    pub floor: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        DecayOptions {
            window_fraction: 0.5,
            sync_eps: 1e-10,
            floor: 1e-28,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    /// Slope of `log(|v|^2 + |phi|^2)` in time; `None` when undefined.
    pub rate: Option<f64>,
    pub r_squared: Option<f64>,
    pub synced: bool,
}

/// Least-squares slope of `log(|v|^2 + |phi|^2)` over the trailing window of
/// the approach to synchronization: when the difference drops below
/// `sync_eps`, only rows up to that first crossing are fitted, so the
/// round-off plateau that follows does not mask the decay.
pub fn estimate_decay(trace: &CouplingTrace, opts: &DecayOptions) -> Result<DecayEstimate> {
    let n = trace.rows.len();
    if n < 2 {
        return Err(Error::WindowTooShort(format!("{n} rows, need at least 2")));
    }
    let total = |r: &CouplingRow| r.diff_u_sq + r.diff_theta_sq;
    let crossing = trace.rows.iter().position(|r| total(r) < opts.sync_eps);
    let synced = crossing.is_some() && total(&trace.rows[n - 1]) < opts.sync_eps;
    let end = crossing.map_or(n, |c| (c + 1).max(2));
    let start = ((1.0 - opts.window_fraction.clamp(0.0, 1.0)) * end as f64).floor() as usize;
    let window = &trace.rows[start.min(end - 2)..end];
    let pts: Vec<(f64, f64)> = window
        .iter()
        .filter(|r| total(r) > opts.floor)
        .map(|r| (r.t, total(r).ln()))
        .collect();
    if pts.len() < 2 {
        return Ok(DecayEstimate {
            rate: None,
            r_squared: None,
            synced: true,
        });
    }
    if pts.iter().all(|p| p.1 == pts[0].1) {
        return Ok(DecayEstimate {
            rate: Some(0.0),
            r_squared: Some(1.0),
            synced,
        });
    }
    let m = pts.len() as f64;
    let tx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ty = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - tx) * (p.1 - ty)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - ty).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - ty - slope * (p.0 - tx)).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(DecayEstimate {
        rate: Some(slope),
        r_squared: Some(r2),
        synced,
    })
}
