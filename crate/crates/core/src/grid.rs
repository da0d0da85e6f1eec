//! Grid geometry and the two field types that live on it.
//!
//! The domain is `[0, L) x [0, 1]`, periodic in `x1` and bounded by rigid walls
//! at `x2 = 0` and `x2 = 1`. Arrays have shape `(nx, nz)` and are indexed
//! `[i, k]` with `i` the periodic horizontal index and `k` the vertical index;
//! rows `k = 0` and `k = nz - 1` are the walls.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub nz: usize,
    pub aspect: f64,
}

impl Grid {
    pub fn new(nx: usize, nz: usize, aspect: f64) -> Result<Self> {
        if nx < 8 || !nx.is_power_of_two() {
            return Err(Error::domain("nx", format!("{nx} must be a power of two >= 8")));
        }
        if nz < 9 || nz.is_multiple_of(2) {
            return Err(Error::domain("nz", format!("{nz} must be odd and >= 9")));
        }
        if !(aspect > 0.0 && aspect.is_finite()) {
            return Err(Error::domain("aspect", format!("{aspect} must be positive")));
        }
        Ok(Grid { nx, nz, aspect })
    }

    pub fn dx(&self) -> f64 {
        self.aspect / self.nx as f64
    }

    pub fn dz(&self) -> f64 {
        1.0 / (self.nz - 1) as f64
    }

    pub fn x1(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn x2(&self, k: usize) -> f64 {
        k as f64 * self.dz()
    }

    /// `|D| = L`.
    pub fn area(&self) -> f64 {
        self.aspect
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.nz)
    }

    /// Trapezoidal weight of vertical node `k`.
    pub fn wz(&self, k: usize) -> f64 {
        if k == 0 || k == self.nz - 1 {
            0.5 * self.dz()
        } else {
            self.dz()
        }
    }

    /// Signed horizontal wavenumber index of FFT bin `j`.
    pub fn signed_index(&self, j: usize) -> i64 {
        if j <= self.nx / 2 {
            j as i64
        } else {
            j as i64 - self.nx as i64
        }
    }

    /// Physical wavenumber `2 pi j / L` of FFT bin `j`.
    pub fn wavenumber(&self, j: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.signed_index(j) as f64 / self.aspect
    }

    /// Bins kept by the 2/3 rule.
    pub fn dealias_keep(&self, j: usize) -> bool {
        3 * self.signed_index(j).unsigned_abs() as usize <= self.nx
    }

    pub fn zeros(&self) -> Array2<f64> {
        Array2::zeros(self.shape())
    }

    pub fn from_fn(&self, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        Array2::from_shape_fn(self.shape(), |(i, k)| f(self.x1(i), self.x2(k)))
    }

    /// Trapezoidal quadrature of a grid array over the domain.
    pub fn integrate(&self, a: &Array2<f64>) -> f64 {
        let dx = self.dx();
        let mut total = 0.0;
        for k in 0..self.nz {
            let w = self.wz(k) * dx;
            let mut row = 0.0;
            for i in 0..self.nx {
                row += a[[i, k]];
            }
            total += w * row;
        }
        total
    }

    /// Trapezoidal inner product of two grid arrays.
    pub fn inner(&self, a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let dx = self.dx();
        let mut total = 0.0;
        for k in 0..self.nz {
            let w = self.wz(k) * dx;
            let mut row = 0.0;
            for i in 0..self.nx {
                row += a[[i, k]] * b[[i, k]];
            }
            total += w * row;
        }
        total
    }
}

/// Grid-sampled scalar (temperature, theta, S, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Array2<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            values: grid.zeros(),
        }
    }

    pub fn from_values(grid: Grid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::GridMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("values", "non-finite entry"));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        ScalarField {
            grid,
            values: grid.from_fn(f),
        }
    }

    /// Sets both wall rows to zero.
    pub fn zero_walls(&mut self) {
        let nz = self.grid.nz;
        for i in 0..self.grid.nx {
            self.values[[i, 0]] = 0.0;
            self.values[[i, nz - 1]] = 0.0;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        ensure_same(&self.grid, &other.grid)?;
        Ok(self.grid.inner(&self.values, &other.values))
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: &self.values * c,
        }
    }

    pub fn axpy(&mut self, a: f64, x: &ScalarField) {
        self.values.scaled_add(a, &x.values);
    }

    /// Horizontal mean profile, one value per vertical node.
    pub fn horizontal_mean(&self) -> Vec<f64> {
        (0..self.grid.nz)
            .map(|k| (0..self.grid.nx).map(|i| self.values[[i, k]]).sum::<f64>() / self.grid.nx as f64)
            .collect()
    }
}

/// Divergence-free velocity carried by its streamfunction.
///
/// `u1 = d psi / d x2` (centered differences), `u2 = -d psi / d x1` (spectral),
/// `omega = -lap psi` with the wall rows closed by Thom's formula. Velocity wall
/// rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: Grid,
    pub psi: Array2<f64>,
    pub u1: Array2<f64>,
    pub u2: Array2<f64>,
    pub omega: Array2<f64>,
}

impl VelocityField {
    pub fn zeros(grid: Grid) -> Self {
        VelocityField {
            grid,
            psi: grid.zeros(),
            u1: grid.zeros(),
            u2: grid.zeros(),
            omega: grid.zeros(),
        }
    }

    /// Builds the velocity from a streamfunction; wall rows of `psi` are forced to zero.
    pub fn from_streamfunction(grid: Grid, mut psi: Array2<f64>) -> Result<Self> {
        if psi.dim() != grid.shape() {
            return Err(Error::GridMismatch);
        }
        let (nx, nz) = grid.shape();
        for i in 0..nx {
            psi[[i, 0]] = 0.0;
            psi[[i, nz - 1]] = 0.0;
        }
        let dz = grid.dz();
        let mut u1 = grid.zeros();
        for i in 0..nx {
            for k in 1..nz - 1 {
                u1[[i, k]] = (psi[[i, k + 1]] - psi[[i, k - 1]]) / (2.0 * dz);
            }
        }
        let mut u2 = spectral::ddx(&grid, &psi);
        u2.mapv_inplace(|v| -v);
        for i in 0..nx {
            u2[[i, 0]] = 0.0;
            u2[[i, nz - 1]] = 0.0;
        }
        let omega = spectral::clamped_vorticity(&grid, &psi);
        Ok(VelocityField {
            grid,
            psi,
            u1,
            u2,
            omega,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.u1
            .iter()
            .chain(self.u2.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn inner(&self, other: &VelocityField) -> Result<f64> {
        ensure_same(&self.grid, &other.grid)?;
        Ok(self.grid.inner(&self.u1, &other.u1) + self.grid.inner(&self.u2, &other.u2))
    }

    /// Discrete divergence at interior rows (wall rows are zero).
    pub fn divergence(&self) -> Array2<f64> {
        let g = self.grid;
        let (nx, nz) = g.shape();
        let du1 = spectral::ddx(&g, &self.u1);
        let dz = g.dz();
        let mut div = g.zeros();
        for i in 0..nx {
            for k in 1..nz - 1 {
                div[[i, k]] = du1[[i, k]] + (self.u2[[i, k + 1]] - self.u2[[i, k - 1]]) / (2.0 * dz);
            }
        }
        div
    }
}

pub(crate) fn ensure_same(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// `L2` norm of a scalar or velocity field.
pub fn l2_norm<F: Normed>(f: &F) -> f64 {
    f.l2_norm()
}

/// `L2` norm of the gradient.
pub fn grad_norm<F: Normed>(f: &F) -> f64 {
    f.grad_norm()
}

/// `Lp` norm for `p >= 1`.
pub fn lp_norm<F: Normed>(f: &F, p: f64) -> Result<f64> {
    f.lp_norm(p)
}

pub trait Normed {
    fn l2_norm(&self) -> f64;
    fn grad_norm(&self) -> f64;
    fn lp_norm(&self, p: f64) -> Result<f64>;
}

fn check_p(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::domain("p", format!("{p} must be a finite value >= 1")))
    }
}

/// Squared gradient magnitude summed over the domain: spectral in `x1`,
/// centered in `x2` at interior rows and second-order one-sided at the walls.
pub(crate) fn grad_sq(grid: &Grid, a: &Array2<f64>) -> f64 {
    let d1 = spectral::ddx(grid, a);
    let d2 = ddz(grid, a);
    grid.inner(&d1, &d1) + grid.inner(&d2, &d2)
}

/// Vertical derivative: centered inside, second-order one-sided on the walls.
pub(crate) fn ddz(grid: &Grid, a: &Array2<f64>) -> Array2<f64> {
    let (nx, nz) = grid.shape();
    let dz = grid.dz();
    let mut out = grid.zeros();
    for i in 0..nx {
        out[[i, 0]] = (-3.0 * a[[i, 0]] + 4.0 * a[[i, 1]] - a[[i, 2]]) / (2.0 * dz);
        for k in 1..nz - 1 {
            out[[i, k]] = (a[[i, k + 1]] - a[[i, k - 1]]) / (2.0 * dz);
        }
        out[[i, nz - 1]] = (3.0 * a[[i, nz - 1]] - 4.0 * a[[i, nz - 2]] + a[[i, nz - 3]]) / (2.0 * dz);
    }
    out
}

fn lp_of(grid: &Grid, arrays: &[&Array2<f64>], p: f64) -> f64 {
    // |u|^p with |u| the pointwise Euclidean magnitude
    let dx = grid.dx();
    let mut total = 0.0;
    for k in 0..grid.nz {
        let w = grid.wz(k) * dx;
        for i in 0..grid.nx {
            let m2: f64 = arrays.iter().map(|a| a[[i, k]] * a[[i, k]]).sum();
            total += w * m2.sqrt().powf(p);
        }
    }
    total.powf(1.0 / p)
}

impl Normed for ScalarField {
    fn l2_norm(&self) -> f64 {
        self.grid.inner(&self.values, &self.values).sqrt()
    }

    fn grad_norm(&self) -> f64 {
        grad_sq(&self.grid, &self.values).sqrt()
    }

    fn lp_norm(&self, p: f64) -> Result<f64> {
        check_p(p)?;
        Ok(lp_of(&self.grid, &[&self.values], p))
    }
}

impl Normed for VelocityField {
    fn l2_norm(&self) -> f64 {
        (self.grid.inner(&self.u1, &self.u1) + self.grid.inner(&self.u2, &self.u2)).sqrt()
    }

    fn grad_norm(&self) -> f64 {
        (grad_sq(&self.grid, &self.u1) + grad_sq(&self.grid, &self.u2)).sqrt()
    }

    fn lp_norm(&self, p: f64) -> Result<f64> {
        check_p(p)?;
        Ok(lp_of(&self.grid, &[&self.u1, &self.u2], p))
    }
}
