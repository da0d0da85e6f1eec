//! Physical and non-dimensional parameters, the shifted temperature variable
//! and the boundary-layer background profile.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

/// Dimensional inputs in SI units. `gamma` and `gamma_tilde` are raw flux
/// coefficients whose units are whatever makes the rescaling consistent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub nu: f64,
    pub kappa: f64,
    pub g: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub gamma_tilde: f64,
    pub h: f64,
    pub t1: f64,
    pub l_phys: f64,
    pub d: u32,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nu", self.nu),
            ("kappa", self.kappa),
            ("g", self.g),
            ("alpha", self.alpha),
            ("gamma", self.gamma),
            ("h", self.h),
            ("t1", self.t1),
            ("l_phys", self.l_phys),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(name, format!("{v} must be positive and finite")));
            }
        }
        if !(self.gamma_tilde >= 0.0 && self.gamma_tilde.is_finite()) {
            return Err(Error::domain("gamma_tilde", format!("{} must be >= 0", self.gamma_tilde)));
        }
        if self.d != 2 && self.d != 3 {
            return Err(Error::domain("d", format!("{} must be 2 or 3", self.d)));
        }
        Ok(())
    }

    /// Factor absorbed into the velocity forcing basis by the rescaling,
    /// `gamma_tilde / (nu sqrt(kappa) h^(d/2 - 2))`.
    pub fn velocity_noise_scale(&self) -> Result<f64> {
        self.validate()?;
        let d = self.d as f64;
        Ok(self.gamma_tilde / (self.nu * self.kappa.sqrt() * self.h.powf(d / 2.0 - 2.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondimParams {
    pub pr: f64,
    pub ra: f64,
    pub ra_tilde: f64,
    pub aspect: f64,
    /// Number of forced velocity modes.
    pub n1: usize,
    /// Number of forced temperature modes.
    pub n2: usize,
    /// Total strength of the velocity forcing; zero exactly when `n1 == 0`.
    pub sigma_tilde_norm: f64,
}

impl NondimParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pr", self.pr),
            ("ra", self.ra),
            ("ra_tilde", self.ra_tilde),
            ("aspect", self.aspect),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(name, format!("{v} must be positive and finite")));
            }
        }
        if self.n2 < 1 {
            return Err(Error::domain("n2", "at least one temperature mode must be forced"));
        }
        if !(self.sigma_tilde_norm >= 0.0 && self.sigma_tilde_norm.is_finite()) {
            return Err(Error::domain("sigma_tilde_norm", "must be finite and >= 0"));
        }
        if (self.n1 == 0) != (self.sigma_tilde_norm == 0.0) {
            return Err(Error::domain(
                "sigma_tilde_norm",
                "must be zero exactly when n1 = 0",
            ));
        }
        Ok(())
    }
}

/// Rescales the dimensional system to unit height and diffusive time.
///
/// The mode counts are not part of the physical description; the result has
/// `n1 = 0`, `n2 = 1` and no velocity forcing, to be overridden by the caller.
pub fn nondimensionalize(p: &PhysicalParams) -> Result<NondimParams> {
    p.validate()?;
    let d = p.d as f64;
    Ok(NondimParams {
        pr: p.nu / p.kappa,
        ra: p.g * p.alpha * p.gamma * p.h.powf(4.0 - d / 2.0) / (p.nu * p.kappa.powf(1.5)),
        ra_tilde: p.kappa.sqrt() * p.h.powf(d / 2.0 - 1.0) * p.t1 / p.gamma,
        aspect: p.l_phys / p.h,
        n1: 0,
        n2: 1,
        sigma_tilde_norm: 0.0,
    })
}

/// `theta = T - ra_tilde (1 - x2)`.
pub fn temperature_to_theta(t: &ScalarField, ra_tilde: f64) -> ScalarField {
    let g = t.grid;
    let mut out = t.clone();
    for ((_, k), v) in out.values.indexed_iter_mut() {
        *v -= ra_tilde * (1.0 - g.x2(k));
    }
    out
}

/// `T = theta + ra_tilde (1 - x2)`.
pub fn theta_to_temperature(theta: &ScalarField, ra_tilde: f64) -> ScalarField {
    let g = theta.grid;
    let mut out = theta.clone();
    for ((_, k), v) in out.values.indexed_iter_mut() {
        *v += ra_tilde * (1.0 - g.x2(k));
    }
    out
}

/// `int_0^1 psi^2` for the bump `30 z^2 (1 - z)^2`.
pub const BUMP_SQ_INTEGRAL: f64 = 10.0 / 7.0;

/// Unit-mass bump `30 z^2 (1 - z)^2` on `[0, 1]`, zero outside.
pub fn bump(z: f64) -> f64 {
    if (0.0..=1.0).contains(&z) {
        30.0 * z * z * (1.0 - z) * (1.0 - z)
    } else {
        0.0
    }
}

/// Antiderivative of the bump, `10 s^3 - 15 s^4 + 6 s^5`, clamped to `[0, 1]`.
pub fn bump_cdf(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Background temperature `tau` falling from `ra_tilde` to 0 across a layer of
/// width `delta` at the bottom wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundProfile {
    pub delta: f64,
    pub ra_tilde: f64,
    /// Bump `psi(z)` sampled on the vertical grid nodes.
    pub psi_samples: Vec<f64>,
    /// `tau(x2)` sampled on the vertical grid nodes.
    pub tau_samples: Vec<f64>,
}

impl BackgroundProfile {
    pub fn tau(&self, x2: f64) -> f64 {
        self.ra_tilde * (1.0 - bump_cdf(x2 / self.delta))
    }

    pub fn tau_prime(&self, x2: f64) -> f64 {
        -self.ra_tilde / self.delta * bump(x2 / self.delta)
    }

    /// `int_0^1 (tau')^2 dx2` in closed form.
    pub fn tau_prime_sq_integral(&self) -> f64 {
        self.ra_tilde * self.ra_tilde / self.delta * BUMP_SQ_INTEGRAL
    }
}

pub fn build_background_profile(ra: f64, ra_tilde: f64, grid: &Grid) -> BackgroundProfile {
    let delta = (1.0 / (2.0 * ra_tilde * ra).sqrt()).min(1.0);
    let mut profile = BackgroundProfile {
        delta,
        ra_tilde,
        psi_samples: (0..grid.nz).map(|k| bump(grid.x2(k))).collect(),
        tau_samples: Vec::with_capacity(grid.nz),
    };
    profile.tau_samples = (0..grid.nz).map(|k| profile.tau(grid.x2(k))).collect();
    profile.tau_samples[0] = ra_tilde;
    profile.tau_samples[grid.nz - 1] = 0.0;
    profile
}

#[cfg(test)]
mod tests {
    use super::*;

    fn water() -> PhysicalParams {
        PhysicalParams {
            nu: 1e-6,
            kappa: 1.4e-7,
            g: 9.81,
            alpha: 2e-4,
            gamma: 1.0,
            gamma_tilde: 0.0,
            h: 1.0,
            t1: 1.0,
            l_phys: 2.0,
            d: 2,
        }
    }

    #[test]
    fn equal_diffusivities_give_unit_prandtl() {
        let p = PhysicalParams { kappa: 1e-6, ..water() };
        assert_eq!(nondimensionalize(&p).unwrap().pr, 1.0);
    }

    #[test]
    fn water_fixture() {
        // frozen from a 40-digit evaluation
        let n = nondimensionalize(&water()).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-14 * b.abs();
        assert!(close(n.pr, 7.142_857_142_857_143));
        assert!(close(n.ra, 37_454_754_045_155.48));
        assert!(close(n.ra_tilde, 0.000_374_165_738_677_394_14));
        assert!(close(n.ra * n.ra_tilde, 14_014_285_714.285_714));
        assert_eq!(n.aspect, 2.0);
    }

    #[test]
    fn gamma_scaling_preserves_product() {
        let base = nondimensionalize(&water()).unwrap();
        let scaled = nondimensionalize(&PhysicalParams { gamma: 3.0, ..water() }).unwrap();
        assert!((scaled.ra / base.ra - 3.0).abs() < 1e-14);
        assert!((scaled.ra_tilde * 3.0 / base.ra_tilde - 1.0).abs() < 1e-14);
        let prod = |n: &NondimParams| n.ra * n.ra_tilde;
        assert!((prod(&scaled) / prod(&base) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rescaling_height_and_time_is_consistent() {
        // the dimensional problem with every length scaled by c and the
        // temperature unit adjusted keeps the derived groups fixed when
        // gamma ~ c^(d/2 - 1) T1 and g alpha ~ c^(-3) hold the ratios
        for d in [2u32, 3] {
            let p = PhysicalParams { d, ..water() };
            let c: f64 = 2.5;
            let dd = d as f64;
            let q = PhysicalParams {
                h: p.h * c,
                l_phys: p.l_phys * c,
                gamma: p.gamma * c.powf(dd / 2.0 - 1.0),
                g: p.g * c.powf(-3.0),
                ..p
            };
            let (a, b) = (nondimensionalize(&p).unwrap(), nondimensionalize(&q).unwrap());
            assert!((a.ra / b.ra - 1.0).abs() < 1e-13);
            assert!((a.ra_tilde / b.ra_tilde - 1.0).abs() < 1e-13);
            assert_eq!(a.aspect, b.aspect);
        }
    }

    #[test]
    fn rejects_nonpositive_fields() {
        let err = nondimensionalize(&PhysicalParams { kappa: 0.0, ..water() }).unwrap_err();
        assert!(err.to_string().contains("kappa"));
        let err = nondimensionalize(&PhysicalParams { gamma_tilde: -1.0, ..water() }).unwrap_err();
        assert!(err.to_string().contains("gamma_tilde"));
        assert!(nondimensionalize(&PhysicalParams { gamma_tilde: 2.0, ..water() }).is_ok());
    }

    #[test]
    fn theta_round_trip() {
        let g = Grid::new(8, 9, 1.0).unwrap();
        let cond = ScalarField::from_fn(g, |_, z| 3.0 * (1.0 - z));
        assert_eq!(temperature_to_theta(&cond, 3.0).max_abs(), 0.0);
        let t = ScalarField::from_fn(g, |x, z| (7.0 * x + 3.0 * z).sin() * 1e3);
        let back = theta_to_temperature(&temperature_to_theta(&t, 0.7), 0.7);
        for (a, b) in back.values.iter().zip(t.values.iter()) {
            assert!((a - b).abs() <= f64::EPSILON * b.abs().max(1.0));
        }
    }

    #[test]
    fn profile_endpoints_and_integrals() {
        let g = Grid::new(8, 129, 1.0).unwrap();
        let p = build_background_profile(0.5, 1.0, &g);
        assert_eq!(p.delta, 1.0);
        let p = build_background_profile(50.0, 50.0, &g);
        assert!((p.delta - 1.0 / 5000f64.sqrt()).abs() < 1e-16);
        assert_eq!(p.tau_samples[0], 50.0);
        assert_eq!(*p.tau_samples.last().unwrap(), 0.0);
        assert!(p.tau_samples.windows(2).all(|w| w[1] <= w[0]));
        let mass: f64 = (0..g.nz).map(|k| g.wz(k) * p.psi_samples[k]).sum();
        assert!((mass - 1.0).abs() < 1e-3);
    }
}
