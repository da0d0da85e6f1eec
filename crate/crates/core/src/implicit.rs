//! Per-wavenumber implicit diffusion solves shared by all steppers.
//!
//! Temperature-like scalars use `(I - a dt T) s' = (I + (1 - a) dt T) s + dt E`
//! with `T = d^2/dz^2 - k^2` (Dirichlet). The vorticity equation is solved
//! directly for the streamfunction: with `omega = -T psi` in the interior and
//! Thom's closure at the walls, `lap omega = -B psi` for the clamped
//! biharmonic `B`, so
//! `(a Pr dt B - T) psi' = -(T + (1 - a) Pr dt B) psi + dt E`.

use ndarray::Array2;
use realfft::num_complex::Complex64;

use crate::banded::{BandCholesky, SymBand};
use crate::grid::Grid;
use crate::spectral::{
    bins, clamped_biharmonic, dirichlet_laplacian, forward, interior_column, inverse, set_interior_column, PerWavenumber,
};

/// Crank-Nicolson or backward Euler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Weighting {
    Trapezoidal,
    Backward,
}

#[derive(Debug, Clone)]
struct Ops {
    t: SymBand,
    b: Option<SymBand>,
    scalar: [BandCholesky; 2],
    psi: Option<[BandCholesky; 2]>,
}

#[derive(Debug, Clone)]
pub(crate) struct Implicit {
    grid: Grid,
    dt: f64,
    pr: Option<f64>,
    ops: PerWavenumber<Ops>,
}

fn factor(a: SymBand) -> BandCholesky {
    a.cholesky().expect("implicit operator is positive definite")
}

fn alpha(w: Weighting) -> f64 {
    match w {
        Weighting::Trapezoidal => 0.5,
        Weighting::Backward => 1.0,
    }
}

impl Implicit {
    /// `pr = None` builds the scalar operators only.
    pub(crate) fn new(grid: Grid, dt: f64, pr: Option<f64>) -> Self {
        let ops = PerWavenumber::build(&grid, |k2| {
            let t = dirichlet_laplacian(&grid, k2);
            let id = SymBand::identity(grid.nz - 2);
            let scalar = [0.5, 1.0].map(|a| factor(SymBand::combine(1.0, &id, -a * dt, &t)));
            let (b, psi) = match pr {
                Some(pr) => {
                    let b = clamped_biharmonic(&grid, k2);
                    let psi = [0.5, 1.0].map(|a| factor(SymBand::combine(a * pr * dt, &b, -1.0, &t)));
                    (Some(b), Some(psi))
                }
                None => (None, None),
            };
            Ops { t, b, scalar, psi }
        });
        Implicit { grid, dt, pr, ops }
    }

    fn slot(w: Weighting) -> usize {
        match w {
            Weighting::Trapezoidal => 0,
            Weighting::Backward => 1,
        }
    }

    /// Advances a wall-vanishing scalar by one implicit diffusion step with
    /// explicit tendency `e`.
    pub(crate) fn scalar(&self, s: &Array2<f64>, e: &Array2<f64>, w: Weighting) -> Array2<f64> {
        let grid = &self.grid;
        let a = alpha(w);
        let dt = self.dt;
        let sh = forward(grid, s);
        let eh = forward(grid, e);
        let mut out = Array2::<Complex64>::zeros((bins(grid), grid.nz));
        for j in 0..bins(grid) {
            let ops = self.ops.get(j);
            let col = interior_column(&sh, j);
            let ecol = interior_column(&eh, j);
            let tcol = ops.t.matvec(&col);
            let mut rhs: Vec<Complex64> = (0..col.len())
                .map(|r| col[r] + tcol[r] * ((1.0 - a) * dt) + ecol[r] * dt)
                .collect();
            ops.scalar[Self::slot(w)].solve_in_place(&mut rhs);
            set_interior_column(&mut out, j, &rhs);
        }
        inverse(grid, &out)
    }

    /// Advances the streamfunction through one vorticity step with explicit
    /// vorticity tendency `e`.
    pub(crate) fn streamfunction(&self, psi: &Array2<f64>, e: &Array2<f64>, w: Weighting) -> Array2<f64> {
        let grid = &self.grid;
        let pr = self.pr.expect("vorticity operators were not built");
        let a = alpha(w);
        let dt = self.dt;
        let ph = forward(grid, psi);
        let eh = forward(grid, e);
        let mut out = Array2::<Complex64>::zeros((bins(grid), grid.nz));
        for j in 0..bins(grid) {
            let ops = self.ops.get(j);
            let col = interior_column(&ph, j);
            let ecol = interior_column(&eh, j);
            let tcol = ops.t.matvec(&col);
            let bcol = ops.b.as_ref().expect("biharmonic").matvec(&col);
            let mut rhs: Vec<Complex64> = (0..col.len())
                .map(|r| -(tcol[r] + bcol[r] * ((1.0 - a) * pr * dt)) + ecol[r] * dt)
                .collect();
            ops.psi.as_ref().expect("vorticity factors")[Self::slot(w)].solve_in_place(&mut rhs);
            set_interior_column(&mut out, j, &rhs);
        }
        inverse(grid, &out)
    }
}
