//! Horizontal Fourier transforms and the per-wavenumber vertical solvers.
//!
//! Spectra are `(nx/2 + 1, nz)` complex arrays holding, for every vertical
//! node, the real-to-complex FFT of that row normalized by `1/nx`. Each
//! horizontal bin `j` is then an independent vertical problem discretized with
//! second-order differences.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use ndarray::Array2;
use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::banded::{BandCholesky, SymBand};
use crate::error::{Error, Result};
use crate::grid::{ensure_same, Grid, ScalarField, VelocityField};

type Plans = (Arc<dyn RealToComplex<f64>>, Arc<dyn ComplexToReal<f64>>);

thread_local! {
    static PLANS: RefCell<HashMap<usize, Plans>> = RefCell::new(HashMap::new());
}

fn plans(n: usize) -> Plans {
    PLANS.with(|cell| {
        cell.borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let mut planner = RealFftPlanner::new();
                (planner.plan_fft_forward(n), planner.plan_fft_inverse(n))
            })
            .clone()
    })
}

/// Number of stored horizontal bins, `nx/2 + 1`.
pub(crate) fn bins(grid: &Grid) -> usize {
    grid.nx / 2 + 1
}

pub(crate) fn forward(grid: &Grid, a: &Array2<f64>) -> Array2<Complex64> {
    let (nx, nz) = grid.shape();
    let nb = bins(grid);
    let (fwd, _) = plans(nx);
    let scale = 1.0 / nx as f64;
    let src = a.as_slice().expect("standard layout");
    let mut out = vec![Complex64::new(0.0, 0.0); nb * nz];
    let mut row = fwd.make_input_vec();
    let mut spec = fwd.make_output_vec();
    let mut scratch = fwd.make_scratch_vec();
    for k in 0..nz {
        for (i, r) in row.iter_mut().enumerate() {
            *r = src[i * nz + k];
        }
        fwd.process_with_scratch(&mut row, &mut spec, &mut scratch)
            .expect("buffer sizes match the plan");
        for (j, c) in spec.iter().enumerate() {
            out[j * nz + k] = c * scale;
        }
    }
    Array2::from_shape_vec((nb, nz), out).expect("shape")
}

pub(crate) fn inverse(grid: &Grid, s: &Array2<Complex64>) -> Array2<f64> {
    let (nx, nz) = grid.shape();
    let (_, inv) = plans(nx);
    let src = s.as_slice().expect("standard layout");
    let mut out = vec![0.0; nx * nz];
    let mut spec = inv.make_input_vec();
    let mut row = inv.make_output_vec();
    let mut scratch = inv.make_scratch_vec();
    let last = spec.len() - 1;
    for k in 0..nz {
        for (j, c) in spec.iter_mut().enumerate() {
            *c = src[j * nz + k];
        }
        spec[0].im = 0.0;
        spec[last].im = 0.0;
        inv.process_with_scratch(&mut spec, &mut row, &mut scratch)
            .expect("buffer sizes match the plan");
        for (i, r) in row.iter().enumerate() {
            out[i * nz + k] = *r;
        }
    }
    Array2::from_shape_vec((nx, nz), out).expect("shape")
}

/// Multiplier of `d/dx1` for bin `j`; the Nyquist bin is dropped.
pub(crate) fn ik(grid: &Grid, j: usize) -> Complex64 {
    if j == grid.nx / 2 {
        Complex64::new(0.0, 0.0)
    } else {
        Complex64::new(0.0, grid.wavenumber(j))
    }
}

fn apply_multiplier(grid: &Grid, a: &Array2<f64>, m: impl Fn(usize) -> Complex64) -> Array2<f64> {
    let mut s = forward(grid, a);
    for (j, mut row) in s.outer_iter_mut().enumerate() {
        let f = m(j);
        row.mapv_inplace(|v| v * f);
    }
    inverse(grid, &s)
}

/// Spectral `d/dx1`.
pub fn ddx(grid: &Grid, a: &Array2<f64>) -> Array2<f64> {
    apply_multiplier(grid, a, |j| ik(grid, j))
}

/// Spectral `d^2/dx1^2`.
pub fn d2dx2(grid: &Grid, a: &Array2<f64>) -> Array2<f64> {
    apply_multiplier(grid, a, |j| {
        let k = grid.wavenumber(j);
        Complex64::new(-k * k, 0.0)
    })
}

/// Zeroes the horizontal modes removed by the 2/3 rule.
pub fn dealias(grid: &Grid, a: &Array2<f64>) -> Array2<f64> {
    apply_multiplier(grid, a, |j| {
        if grid.dealias_keep(j) {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// `omega = -lap psi` for a streamfunction clamped at both walls, with
/// `omega_wall = -2 psi_1 / dz^2` (Thom).
pub(crate) fn clamped_vorticity(grid: &Grid, psi: &Array2<f64>) -> Array2<f64> {
    let (nx, nz) = grid.shape();
    let dz2 = grid.dz() * grid.dz();
    let pxx = d2dx2(grid, psi);
    let mut omega = grid.zeros();
    for i in 0..nx {
        omega[[i, 0]] = -2.0 * psi[[i, 1]] / dz2;
        omega[[i, nz - 1]] = -2.0 * psi[[i, nz - 2]] / dz2;
        for k in 1..nz - 1 {
            omega[[i, k]] = -(psi[[i, k + 1]] - 2.0 * psi[[i, k]] + psi[[i, k - 1]]) / dz2 - pxx[[i, k]];
        }
    }
    omega
}

/// Dirichlet operator `d^2/dz^2 - k^2` on the `nz - 2` interior nodes.
pub(crate) fn dirichlet_laplacian(grid: &Grid, k2: f64) -> SymBand {
    let n = grid.nz - 2;
    let h2 = grid.dz() * grid.dz();
    let mut a = SymBand::zeros(n, 1);
    for r in 0..n {
        a.add(r, r, -2.0 / h2 - k2);
        if r >= 1 {
            a.add(r, r - 1, 1.0 / h2);
        }
    }
    a
}

/// Clamped biharmonic `(d^2/dz^2 - k^2)^2` on interior nodes with
/// `psi = dpsi/dz = 0` at both walls, via the ghost value `psi_{-1} = psi_1`.
pub(crate) fn clamped_biharmonic(grid: &Grid, k2: f64) -> SymBand {
    let nz = grid.nz;
    let n = nz - 2;
    let h2 = grid.dz() * grid.dz();
    let diag = -2.0 / h2 - k2;
    let off = 1.0 / h2;
    // column of the clamped Laplacian for interior unknown at full row c
    let lc_col = |c: usize| -> Vec<(usize, f64)> {
        let lower = if c == 1 { 2.0 * off } else { off };
        let upper = if c == nz - 2 { 2.0 * off } else { off };
        vec![(c - 1, lower), (c, diag), (c + 1, upper)]
    };
    let l_row = |r: usize, s: usize| -> f64 {
        if s == r {
            diag
        } else if s + 1 == r || s == r + 1 {
            off
        } else {
            0.0
        }
    };
    let mut b = SymBand::zeros(n, 2);
    for c in 1..nz - 1 {
        for r in c..(c + 3).min(nz - 1) {
            let v: f64 = lc_col(c).iter().map(|&(s, w)| l_row(r, s) * w).sum();
            b.add(r - 1, c - 1, v);
        }
    }
    b
}

pub(crate) fn interior_column(s: &Array2<Complex64>, j: usize) -> Vec<Complex64> {
    let nz = s.dim().1;
    (1..nz - 1).map(|k| s[[j, k]]).collect()
}

pub(crate) fn set_interior_column(s: &mut Array2<Complex64>, j: usize, col: &[Complex64]) {
    let nz = s.dim().1;
    s[[j, 0]] = Complex64::new(0.0, 0.0);
    s[[j, nz - 1]] = Complex64::new(0.0, 0.0);
    for (k, v) in col.iter().enumerate() {
        s[[j, k + 1]] = *v;
    }
}

/// One item per stored horizontal bin.
#[derive(Debug, Clone)]
pub(crate) struct PerWavenumber<T> {
    items: Vec<T>,
}

impl<T> PerWavenumber<T> {
    pub(crate) fn build(grid: &Grid, f: impl Fn(f64) -> T) -> Self {
        let items = (0..=grid.nx / 2)
            .map(|j| {
                let k = grid.wavenumber(j);
                f(k * k)
            })
            .collect();
        PerWavenumber { items }
    }

    pub(crate) fn get(&self, j: usize) -> &T {
        &self.items[j]
    }
}

fn factor(a: &SymBand, what: &str) -> BandCholesky {
    a.cholesky()
        .unwrap_or_else(|| panic!("{what} operator lost positive definiteness"))
}

/// Solves `lap psi = -omega` with `psi = 0` on both walls.
pub fn poisson_streamfunction(omega: &ScalarField) -> Result<ScalarField> {
    let grid = omega.grid;
    let facs = PerWavenumber::build(&grid, |k2| {
        let t = dirichlet_laplacian(&grid, k2);
        factor(&SymBand::combine(-1.0, &t, 0.0, &t), "Poisson")
    });
    let mut s = forward(&grid, &omega.values);
    for j in 0..bins(&grid) {
        let mut col = interior_column(&s, j);
        facs.get(j).solve_in_place(&mut col);
        set_interior_column(&mut s, j, &col);
    }
    let mut psi = ScalarField {
        grid,
        values: inverse(&grid, &s),
    };
    psi.zero_walls();
    Ok(psi)
}

/// Infinite-Prandtl Stokes problem `-lap u + grad p = Ra e2 theta`, no-slip walls.
#[derive(Debug, Clone)]
pub struct StokesSolver {
    grid: Grid,
    facs: PerWavenumber<BandCholesky>,
}

impl StokesSolver {
    pub fn new(grid: Grid) -> Self {
        let facs = PerWavenumber::build(&grid, |k2| factor(&clamped_biharmonic(&grid, k2), "Stokes"));
        StokesSolver { grid, facs }
    }

    pub fn solve(&self, theta: &ScalarField, ra: f64) -> Result<VelocityField> {
        ensure_same(&self.grid, &theta.grid)?;
        let grid = self.grid;
        let th = forward(&grid, &theta.values);
        let mut s = Array2::<Complex64>::zeros((bins(&grid), grid.nz));
        for j in 1..bins(&grid) {
            let m = ik(&grid, j) * ra;
            if m.im == 0.0 {
                continue;
            }
            let mut col: Vec<Complex64> = interior_column(&th, j).into_iter().map(|v| v * m).collect();
            self.facs.get(j).solve_in_place(&mut col);
            set_interior_column(&mut s, j, &col);
        }
        VelocityField::from_streamfunction(grid, inverse(&grid, &s))
    }
}

/// Velocity enslaved to `theta` through the Stokes problem.
pub fn stokes_solve(theta: &ScalarField, ra: f64) -> Result<VelocityField> {
    StokesSolver::new(theta.grid).solve(theta, ra)
}

/// Advection operator `u . grad s` for a fixed velocity.
///
/// Evaluated as the average of the conservative and advective forms, which
/// coincide for divergence-free `u` and make the discrete operator exactly
/// skew-adjoint for fields vanishing on the walls. With dealiasing, both
/// factors are truncated by the 2/3 rule before the products are formed and
/// the result is truncated again.
#[derive(Debug, Clone)]
pub struct Advector {
    grid: Grid,
    dealias: bool,
    u1: Array2<f64>,
    u2: Array2<f64>,
}

impl Advector {
    pub fn new(u: &VelocityField, dealias: bool) -> Self {
        let grid = u.grid;
        let (u1, u2) = if dealias {
            (self::dealias(&grid, &u.u1), self::dealias(&grid, &u.u2))
        } else {
            (u.u1.clone(), u.u2.clone())
        };
        Advector { grid, dealias, u1, u2 }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn apply(&self, s: &Array2<f64>) -> Array2<f64> {
        let grid = &self.grid;
        let (nx, nz) = grid.shape();
        let mut trunc = forward(grid, s);
        let mut dtrunc = trunc.clone();
        for j in 0..bins(grid) {
            let keep = !self.dealias || grid.dealias_keep(j);
            let m = if keep { ik(grid, j) } else { Complex64::new(0.0, 0.0) };
            for k in 0..nz {
                if !keep {
                    trunc[[j, k]] = Complex64::new(0.0, 0.0);
                }
                dtrunc[[j, k]] *= m;
            }
        }
        let st = inverse(grid, &trunc);
        let dst = inverse(grid, &dtrunc);
        let flux1 = &self.u1 * &st;
        // everything except d(u1 s)/dx1, which is added in spectral space
        let h = 2.0 * grid.dz();
        let mut rest = grid.zeros();
        for i in 0..nx {
            for k in 1..nz - 1 {
                let f2p = self.u2[[i, k + 1]] * st[[i, k + 1]];
                let f2m = self.u2[[i, k - 1]] * st[[i, k - 1]];
                let advective =
                    self.u1[[i, k]] * dst[[i, k]] + self.u2[[i, k]] * (st[[i, k + 1]] - st[[i, k - 1]]) / h;
                rest[[i, k]] = 0.5 * ((f2p - f2m) / h + advective);
            }
        }
        let f1 = forward(grid, &flux1);
        let mut out = forward(grid, &rest);
        for j in 0..bins(grid) {
            let keep = !self.dealias || grid.dealias_keep(j);
            let m = ik(grid, j) * 0.5;
            for k in 1..nz - 1 {
                out[[j, k]] = if keep {
                    out[[j, k]] + f1[[j, k]] * m
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            out[[j, 0]] = Complex64::new(0.0, 0.0);
            out[[j, nz - 1]] = Complex64::new(0.0, 0.0);
        }
        inverse(grid, &out)
    }
}

/// `u . grad scalar` with 2/3-rule dealiasing.
pub fn advect(scalar: &ScalarField, u: &VelocityField) -> Result<ScalarField> {
    if scalar.grid != u.grid {
        return Err(Error::GridMismatch);
    }
    Ok(ScalarField {
        grid: scalar.grid,
        values: Advector::new(u, true).apply(&scalar.values),
    })
}
