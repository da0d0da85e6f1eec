//! Time averaging, Nusselt estimators, the background bound and the
//! martingale and exponential-moment monitors.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::grid::{grad_sq, Grid, ScalarField, VelocityField};
use crate::noise::NoiseBasis;
use crate::params::{BackgroundProfile, NondimParams};

/// Trapezoidal time averages of named functionals over `[t_start, t_now]`.
///
/// Rows timestamped before `t_start` are ignored; the window opens at the
/// first accepted row. Deviations from that first row are integrated, so a
/// constant functional averages to itself exactly. All rows inside the window
/// are kept so that batch means can be formed and the averager can be
/// checkpointed exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeAverager {
    pub names: Vec<String>,
    pub t_start: f64,
    pub t_now: Option<f64>,
    /// Integrals of `f - f(first row)` over the window.
    pub integrals: Vec<f64>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl TimeAverager {
    pub fn new(names: &[&str], t_start: f64) -> Self {
        TimeAverager {
            names: names.iter().map(|s| s.to_string()).collect(),
            t_start,
            t_now: None,
            integrals: vec![0.0; names.len()],
            times: vec![],
            rows: vec![],
        }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn sample_count(&self) -> usize {
        self.times.len()
    }

    /// Adds the row `values` observed at time `t`.
    pub fn update(&mut self, t: f64, values: &[f64]) -> Result<()> {
        if values.len() != self.names.len() {
            return Err(Error::domain(
                "values",
                format!("{} values for {} functionals", values.len(), self.names.len()),
            ));
        }
        if let Some(now) = self.t_now {
            if t < now {
                return Err(Error::OutOfOrder { t, t_now: now });
            }
            if t == now {
                return Ok(());
            }
        }
        self.t_now = Some(t);
        if t < self.t_start {
            return Ok(());
        }
        if let (Some(&t0), Some(prev), Some(base)) = (self.times.last(), self.rows.last(), self.rows.first()) {
            let dt = t - t0;
            for (k, acc) in self.integrals.iter_mut().enumerate() {
                *acc += 0.5 * dt * ((prev[k] - base[k]) + (values[k] - base[k]));
            }
        }
        self.times.push(t);
        self.rows.push(values.to_vec());
        Ok(())
    }

    pub fn window(&self) -> Option<(f64, f64)> {
        match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) if b > a => Some((a, b)),
            _ => None,
        }
    }

    pub fn average(&self, name: &str) -> Result<f64> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::domain("name", format!("functional `{name}` is not registered")))?;
        let (a, b) = self
            .window()
            .ok_or_else(|| Error::WindowTooShort("averaging window is empty".into()))?;
        Ok(self.rows[0][i] + self.integrals[i] / (b - a))
    }

    /// Averages of functional `name` over `n` consecutive batches of rows.
    pub fn batch_means(&self, name: &str, n: usize) -> Result<Vec<f64>> {
        let i = self
            .index(name)
            .ok_or_else(|| Error::domain("name", format!("functional `{name}` is not registered")))?;
        let m = self.times.len();
        if m < 2 * n + 1 {
            return Err(Error::WindowTooShort(format!(
                "{m} samples cannot form {n} batches of at least two"
            )));
        }
        let intervals = m - 1;
        (0..n)
            .map(|b| {
                let lo = b * intervals / n;
                let hi = (b + 1) * intervals / n;
                let base = self.rows[0][i];
                let mut acc = 0.0;
                for r in lo..hi {
                    let dev = (self.rows[r][i] - base) + (self.rows[r + 1][i] - base);
                    acc += 0.5 * (self.times[r + 1] - self.times[r]) * dev;
                }
                let span = self.times[hi] - self.times[lo];
                if span > 0.0 {
                    Ok(base + acc / span)
                } else {
                    Err(Error::WindowTooShort("batch of zero duration".into()))
                }
            })
            .collect()
    }
}

/// Mean and 95% Student-t halfwidth of batch means.
pub fn batch_halfwidth(means: &[f64]) -> f64 {
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0)
        .expect("valid degrees of freedom")
        .inverse_cdf(0.975);
    t * (var / n).sqrt()
}

pub const FLUX: &str = "flux";
pub const GRAD_T_SQ: &str = "grad_t_sq";
pub const GRAD_U_SQ: &str = "grad_u_sq";
pub const NUSSELT_FUNCTIONALS: [&str; 3] = [FLUX, GRAD_T_SQ, GRAD_U_SQ];
pub const NUSSELT_BATCHES: usize = 8;

/// Nusselt functionals `[int u2 T, |grad T|^2, |grad u|^2]` of a homogeneous state.
pub fn nusselt_functionals(theta: &ScalarField, u: &VelocityField, ra_tilde: f64) -> [f64; 3] {
    let g = &theta.grid;
    let t = crate::params::theta_to_temperature(theta, ra_tilde);
    [
        g.inner(&u.u2, &t.values),
        grad_sq(g, &t.values),
        grad_sq(g, &u.u1) + grad_sq(g, &u.u2),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NusseltEstimates {
    pub nu_flux: f64,
    pub nu_grad_t: f64,
    pub nu_grad_u: f64,
    /// Halfwidths in the order flux, grad_t, grad_u.
    pub mc_halfwidths: [f64; 3],
    /// `nu_flux - nu_grad_u` and `nu_flux - nu_grad_t`.
    pub residual_flux_grad_u: f64,
    pub residual_flux_grad_t: f64,
}

pub fn nusselt_estimates(avg: &TimeAverager, params: &NondimParams) -> Result<NusseltEstimates> {
    let area = params.aspect;
    let rt = params.ra_tilde;
    let f_flux = |v: f64| 1.0 + v / (rt * area);
    let f_gt = |v: f64| v / (rt * rt * area) - 1.0 / (2.0 * rt * rt * area);
    let f_gu = |v: f64| v / (params.ra * rt * area) + 1.0;
    let fs: [&dyn Fn(f64) -> f64; 3] = [&f_flux, &f_gt, &f_gu];
    let mut est = [0.0; 3];
    let mut hw = [0.0; 3];
    for (k, name) in NUSSELT_FUNCTIONALS.iter().enumerate() {
        let batches: Vec<f64> = avg.batch_means(name, NUSSELT_BATCHES)?.into_iter().map(fs[k]).collect();
        est[k] = fs[k](avg.average(name)?);
        hw[k] = batch_halfwidth(&batches);
    }
    if est.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(NusseltEstimates {
        nu_flux: est[0],
        nu_grad_t: est[1],
        nu_grad_u: est[2],
        mc_halfwidths: hw,
        residual_flux_grad_u: est[0] - est[2],
        residual_flux_grad_t: est[0] - est[1],
    })
}

/// `(2 / ra_tilde^2) int (tau')^2 + 1 / (ra_tilde^2 |D|) - 1`.
pub fn background_bound(params: &NondimParams, profile: &BackgroundProfile) -> f64 {
    let rt2 = params.ra_tilde * params.ra_tilde;
    2.0 / rt2 * profile.tau_prime_sq_integral() + 1.0 / (rt2 * params.aspect) - 1.0
}

/// `sqrt(ra_tilde / 2 ra) |grad u| |grad theta| - |int u2 tau' theta|` where
/// `theta = T - tau` is the fluctuation about the background.
pub fn pointwise_background_inequality(
    theta_h: &ScalarField,
    u: &VelocityField,
    profile: &BackgroundProfile,
    params: &NondimParams,
) -> f64 {
    let g: &Grid = &theta_h.grid;
    let t = crate::params::theta_to_temperature(theta_h, params.ra_tilde);
    let mut fluct = t.values.clone();
    let mut weight = g.zeros();
    for ((i, k), v) in fluct.indexed_iter_mut() {
        let z = g.x2(k);
        *v -= profile.tau(z);
        weight[[i, k]] = profile.tau_prime(z) * u.u2[[i, k]];
    }
    let cross = g.inner(&weight, &fluct).abs();
    let grad_u = (grad_sq(g, &u.u1) + grad_sq(g, &u.u2)).sqrt();
    let grad_th = grad_sq(g, &fluct).sqrt();
    (params.ra_tilde / (2.0 * params.ra)).sqrt() * grad_u * grad_th - cross
}

/// Cumulative martingale `M` and its quadratic variation along one path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTrace {
    pub m: Vec<f64>,
    pub qv: Vec<f64>,
}

impl MartingaleTrace {
    pub fn push_increment(&mut self, dm: f64, dqv: f64) {
        let (m, q) = (self.m.last().copied().unwrap_or(0.0), self.qv.last().copied().unwrap_or(0.0));
        self.m.push(m + dm);
        self.qv.push(q + dqv);
    }

    /// `sup_t (M_t - gamma/2 <M>_t)` including `t = 0`.
    pub fn sup_excess(&self, gamma: f64) -> f64 {
        self.m
            .iter()
            .zip(&self.qv)
            .map(|(m, q)| m - 0.5 * gamma * q)
            .fold(0.0, f64::max)
    }
}

/// Increments `(dM, d<M>)` of the Ito martingale in `|theta|^2` driven by
/// temperature noise with standard normals `g` over one step of length `dt`.
pub fn theta_martingale_increment(theta: &ScalarField, basis: &NoiseBasis, g: &[f64], dt: f64) -> (f64, f64) {
    let mut dm = 0.0;
    let mut dq = 0.0;
    for (k, (mode, g)) in basis.modes.iter().zip(g).enumerate() {
        let c = mode.amplitude * theta.grid.inner(&theta.values, basis.scalar_shape(k));
        dm += 2.0 * c * g * dt.sqrt();
        dq += 4.0 * c * c * dt;
    }
    (dm, dq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceRow {
    pub k: f64,
    pub frequency: f64,
    pub bound: f64,
    pub binomial_sigma: f64,
    pub within_bound: bool,
}

pub const MIN_TRACES: usize = 100;

/// Empirical `P(sup (M - gamma/2 <M>) >= K)` against `exp(-gamma K)`.
pub fn martingale_exceedance_test(
    traces: &[MartingaleTrace],
    gamma: f64,
    k_list: &[f64],
) -> Result<Vec<ExceedanceRow>> {
    if traces.len() < MIN_TRACES {
        return Err(Error::Underpowered {
            found: traces.len(),
            required: MIN_TRACES,
        });
    }
    let n = traces.len() as f64;
    let sups: Vec<f64> = traces.iter().map(|t| t.sup_excess(gamma)).collect();
    Ok(k_list
        .iter()
        .map(|&k| {
            let freq = sups.iter().filter(|&&s| s >= k).count() as f64 / n;
            let bound = (-gamma * k).exp();
            let sigma = (bound * (1.0 - bound) / n).sqrt();
            ExceedanceRow {
                k,
                frequency: freq,
                bound,
                binomial_sigma: sigma,
                within_bound: freq <= bound + 3.0 * sigma,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub eta: f64,
    pub estimate: Option<f64>,
    pub jackknife_se: Option<f64>,
    /// `"ok"` or `"eta too large"`.
    pub status: String,
}

/// Empirical `E exp(eta X)` with jackknife standard errors for each `eta`,
/// `X = |u|^2 + |theta|_{Lp}^2` per sample.
pub fn exponential_moment_report(samples: &[f64], eta_list: &[f64]) -> Result<Vec<MomentRow>> {
    if samples.len() < MIN_TRACES {
        return Err(Error::Underpowered {
            found: samples.len(),
            required: MIN_TRACES,
        });
    }
    let n = samples.len() as f64;
    Ok(eta_list
        .iter()
        .map(|&eta| {
            let vals: Vec<f64> = samples.iter().map(|x| (eta * x).exp()).collect();
            let total: f64 = vals.iter().sum();
            if !total.is_finite() {
                return MomentRow {
                    eta,
                    estimate: None,
                    jackknife_se: None,
                    status: "eta too large".into(),
                };
            }
            let mean = total / n;
            let loo: Vec<f64> = vals.iter().map(|v| (total - v) / (n - 1.0)).collect();
            let loo_mean = loo.iter().sum::<f64>() / n;
            let var = (n - 1.0) / n * loo.iter().map(|l| (l - loo_mean).powi(2)).sum::<f64>();
            MomentRow {
                eta,
                estimate: Some(mean),
                jackknife_se: Some(var.sqrt()),
                status: "ok".into(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_and_linear_averages() {
        let mut a = TimeAverager::new(&["c", "t"], 0.0);
        for i in 0..=10 {
            let t = i as f64 * 0.3;
            a.update(t, &[2.5, t]).unwrap();
        }
        assert_eq!(a.average("c").unwrap(), 2.5);
        assert!((a.average("t").unwrap() - 1.5).abs() < 1e-15);
        assert!(matches!(a.update(1.0, &[0.0, 0.0]), Err(Error::OutOfOrder { .. })));
        let before = a.clone();
        a.update(3.0, &[9.0, 9.0]).unwrap();
        assert_eq!(a, before);
    }

    #[test]
    fn short_window_is_rejected() {
        let mut a = TimeAverager::new(&NUSSELT_FUNCTIONALS, 0.0);
        for i in 0..10 {
            a.update(i as f64, &[0.0, 1.0, 0.0]).unwrap();
        }
        let p = NondimParams {
            pr: 1.0,
            ra: 1.0,
            ra_tilde: 1.0,
            aspect: 1.0,
            n1: 0,
            n2: 1,
            sigma_tilde_norm: 0.0,
        };
        assert!(matches!(nusselt_estimates(&a, &p), Err(Error::WindowTooShort(_))));
    }

    #[test]
    fn exceedance_trivial_gamma() {
        let traces = vec![
            MartingaleTrace {
                m: vec![5.0],
                qv: vec![1.0]
            };
            100
        ];
        let rows = martingale_exceedance_test(&traces, 0.0, &[1.0, 2.0]).unwrap();
        assert!(rows.iter().all(|r| r.bound == 1.0 && r.within_bound));
        assert!(martingale_exceedance_test(&traces[..99], 0.25, &[1.0]).is_err());
    }

    #[test]
    fn moments_of_trivial_inputs() {
        let zeros = vec![0.0; 100];
        let rows = exponential_moment_report(&zeros, &[0.0, 1.0]).unwrap();
        assert!(rows.iter().all(|r| r.estimate == Some(1.0)));
        let big = vec![1e6; 100];
        let rows = exponential_moment_report(&big, &[0.0, 1.0]).unwrap();
        assert_eq!(rows[0].estimate, Some(1.0));
        assert_eq!(rows[1].status, "eta too large");
    }
}
