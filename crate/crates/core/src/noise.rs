//! Forcing bases, counter-based Wiener increments and low-mode projections.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ensure_same, Grid, ScalarField, VelocityField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Temperature,
    Velocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMode {
    pub j: usize,
    pub m: usize,
    pub parity: Parity,
    /// Dirichlet eigenvalue for temperature modes, Dirichlet-form Rayleigh
    /// quotient for velocity modes.
    pub eigenvalue: f64,
    pub amplitude: f64,
}

/// Ordered forcing basis. Mode shapes are unit vectors in the discrete `L2`
/// inner product; mode `k` forces with `amplitude * shape`.
#[derive(Debug, Clone)]
pub struct NoiseBasis {
    pub kind: BasisKind,
    pub modes: Vec<NoiseMode>,
    pub total_norm_sq: f64,
    grid: Grid,
    /// Temperature: the scalar shapes. Velocity: the streamfunctions.
    shapes: Vec<Array2<f64>>,
    velocities: Vec<VelocityField>,
}

fn trig(parity: Parity, k: f64, x: f64) -> f64 {
    match parity {
        Parity::Cos => (k * x).cos(),
        Parity::Sin => (k * x).sin(),
    }
}

fn max_j(grid: &Grid) -> usize {
    // j < nx / 3
    (grid.nx - 1) / 3
}

fn max_m(grid: &Grid) -> usize {
    // m < nz / 2
    (grid.nz - 1) / 2
}

fn candidates(grid: &Grid) -> Vec<(usize, usize, Parity)> {
    let mut out = vec![];
    for j in 0..=max_j(grid) {
        for m in 1..=max_m(grid) {
            out.push((j, m, Parity::Cos));
            if j > 0 {
                out.push((j, m, Parity::Sin));
            }
        }
    }
    out
}

fn order(a: &NoiseMode, b: &NoiseMode) -> std::cmp::Ordering {
    a.eigenvalue
        .total_cmp(&b.eigenvalue)
        .then(a.m.cmp(&b.m))
        .then(a.j.cmp(&b.j))
        .then(a.parity.cmp(&b.parity))
}

fn under_resolved(kind: &str, n: usize, available: usize, grid: &Grid) -> Error {
    Error::UnderResolved(format!(
        "{n} {kind} modes requested but a {}x{} grid resolves only {available} (m < nz/2, j < nx/3)",
        grid.nx, grid.nz
    ))
}

pub fn build_temperature_basis(n2: usize, grid: &Grid) -> Result<NoiseBasis> {
    if n2 < 1 {
        return Err(Error::domain("n2", "at least one mode is required"));
    }
    let l = grid.aspect;
    let pi = std::f64::consts::PI;
    let mut modes: Vec<NoiseMode> = candidates(grid)
        .into_iter()
        .map(|(j, m, parity)| NoiseMode {
            j,
            m,
            parity,
            eigenvalue: (2.0 * pi * j as f64 / l).powi(2) + (pi * m as f64).powi(2),
            amplitude: 1.0 / (n2 as f64).sqrt(),
        })
        .collect();
    if n2 > modes.len() {
        return Err(under_resolved("temperature", n2, modes.len(), grid));
    }
    modes.sort_by(order);
    modes.truncate(n2);
    let shapes = modes
        .iter()
        .map(|md| {
            let kx = 2.0 * pi * md.j as f64 / l;
            let mut s = grid.from_fn(|x, z| trig(md.parity, kx, x) * (pi * md.m as f64 * z).sin());
            for i in 0..grid.nx {
                s[[i, 0]] = 0.0;
                s[[i, grid.nz - 1]] = 0.0;
            }
            let norm = grid.inner(&s, &s).sqrt();
            s.mapv_inplace(|v| v / norm);
            s
        })
        .collect();
    let total_norm_sq = modes.iter().map(|m| m.amplitude * m.amplitude).sum();
    Ok(NoiseBasis {
        kind: BasisKind::Temperature,
        modes,
        total_norm_sq,
        grid: *grid,
        shapes,
        velocities: vec![],
    })
}

/// Legendre polynomial `P_n(s)` by the three-term recurrence.
fn legendre(n: usize, s: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, s);
    if n == 0 {
        return p0;
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * s * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Clamped vertical profile `z^2 (1 - z)^2 P_{m-1}(2z - 1)`.
fn clamped_profile(m: usize, z: f64) -> f64 {
    z * z * (1.0 - z) * (1.0 - z) * legendre(m - 1, 2.0 * z - 1.0)
}

fn scale_velocity(v: &VelocityField, c: f64) -> VelocityField {
    VelocityField {
        grid: v.grid,
        psi: &v.psi * c,
        u1: &v.u1 * c,
        u2: &v.u2 * c,
        omega: &v.omega * c,
    }
}

fn axpy_velocity(y: &mut VelocityField, a: f64, x: &VelocityField) {
    y.psi.scaled_add(a, &x.psi);
    y.u1.scaled_add(a, &x.u1);
    y.u2.scaled_add(a, &x.u2);
    y.omega.scaled_add(a, &x.omega);
}

/// Divergence-free, no-slip velocity modes: curls of clamped streamfunctions
/// `trig(2 pi j x1 / L) q_m(x2)`, orthonormalized within each horizontal
/// harmonic and ordered by their Dirichlet-form Rayleigh quotient.
pub fn build_velocity_basis(n1: usize, grid: &Grid) -> Result<NoiseBasis> {
    if n1 == 0 {
        return Ok(NoiseBasis {
            kind: BasisKind::Velocity,
            modes: vec![],
            total_norm_sq: 0.0,
            grid: *grid,
            shapes: vec![],
            velocities: vec![],
        });
    }
    let l = grid.aspect;
    let pi = std::f64::consts::PI;
    let mut built: Vec<(NoiseMode, VelocityField)> = vec![];
    for j in 0..=max_j(grid) {
        let parities: &[Parity] = if j == 0 { &[Parity::Cos] } else { &[Parity::Cos, Parity::Sin] };
        for &parity in parities {
            let kx = 2.0 * pi * j as f64 / l;
            let mut group: Vec<VelocityField> = vec![];
            for m in 1..=max_m(grid) {
                let psi = grid.from_fn(|x, z| trig(parity, kx, x) * clamped_profile(m, z));
                let mut v = VelocityField::from_streamfunction(*grid, psi)?;
                // modified Gram-Schmidt, applied twice for stability
                for _ in 0..2 {
                    for e in &group {
                        let c = v.inner(e)?;
                        axpy_velocity(&mut v, -c, e);
                    }
                }
                let norm = v.inner(&v)?.sqrt();
                if !(norm > 1e-10) {
                    return Err(Error::UnderResolved(format!(
                        "velocity mode (j={j}, m={m}) is not resolved on a {}x{} grid",
                        grid.nx, grid.nz
                    )));
                }
                let v = scale_velocity(&v, 1.0 / norm);
                let rq = crate::grid::grad_sq(grid, &v.u1) + crate::grid::grad_sq(grid, &v.u2);
                built.push((
                    NoiseMode {
                        j,
                        m,
                        parity,
                        eigenvalue: rq,
                        amplitude: 1.0,
                    },
                    v.clone(),
                ));
                group.push(v);
            }
        }
    }
    if n1 > built.len() {
        return Err(under_resolved("velocity", n1, built.len(), grid));
    }
    built.sort_by(|a, b| order(&a.0, &b.0));
    built.truncate(n1);
    let (modes, velocities): (Vec<_>, Vec<_>) = built.into_iter().unzip();
    let shapes = velocities.iter().map(|v| v.psi.clone()).collect();
    Ok(NoiseBasis {
        kind: BasisKind::Velocity,
        total_norm_sq: n1 as f64,
        modes,
        grid: *grid,
        shapes,
        velocities,
    })
}

impl NoiseBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Same shapes with equal amplitudes rescaled so that the total norm is `total`.
    pub fn rescaled(&self, total: f64) -> NoiseBasis {
        let mut out = self.clone();
        if out.modes.is_empty() {
            return out;
        }
        let amp = total / (out.modes.len() as f64).sqrt();
        for m in &mut out.modes {
            m.amplitude = amp;
        }
        out.total_norm_sq = total * total;
        out
    }

    /// Unit-norm scalar shape of temperature mode `k`.
    pub fn scalar_shape(&self, k: usize) -> &Array2<f64> {
        assert_eq!(self.kind, BasisKind::Temperature);
        &self.shapes[k]
    }

    /// Unit-norm velocity of velocity mode `k`.
    pub fn velocity_shape(&self, k: usize) -> &VelocityField {
        &self.velocities[k]
    }

    /// `sum_k w_k * shape_k` as a scalar array (temperature) or streamfunction (velocity).
    pub fn combine(&self, weights: &[f64]) -> Array2<f64> {
        let mut out = self.grid.zeros();
        for (w, s) in weights.iter().zip(&self.shapes) {
            if *w != 0.0 {
                out.scaled_add(*w, s);
            }
        }
        out
    }

    /// Inverse-Poincare constant on the first `n_max` modes: the largest `C`
    /// with `eigenvalue(N + 1) >= C N^2` for every `1 <= N < n_max`.
    pub fn inverse_poincare_constant(&self, n_max: usize) -> f64 {
        let n_max = n_max.min(self.modes.len());
        (1..n_max)
            .map(|n| self.modes[n].eigenvalue / (n * n) as f64)
            .fold(f64::INFINITY, f64::min)
    }

    /// Provenance listing of the modes.
    pub fn manifest_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "total_norm_sq": self.total_norm_sq,
            "modes": self.modes,
        })
    }

    /// Standard normals `g_k` for this basis at the given stream coordinates.
    pub fn draws(&self, stream: &WienerStream, channel: Channel) -> Vec<f64> {
        stream.normals(channel, self.modes.len())
    }

    /// Temperature increment `sum_k sigma_k sqrt(dt) g_k`.
    pub fn scalar_increment(&self, dt: f64, g: &[f64]) -> ScalarField {
        let sq = dt.sqrt();
        let w: Vec<f64> = self.modes.iter().zip(g).map(|(m, g)| m.amplitude * sq * g).collect();
        ScalarField {
            grid: self.grid,
            values: self.combine(&w),
        }
    }

    /// Streamfunction of the velocity increment `sum_k sigma_k sqrt(dt) g_k`.
    pub fn streamfunction_increment(&self, dt: f64, g: &[f64]) -> Array2<f64> {
        let sq = dt.sqrt();
        let w: Vec<f64> = self.modes.iter().zip(g).map(|(m, g)| m.amplitude * sq * g).collect();
        self.combine(&w)
    }
}

/// Which family of Wiener processes a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Temperature = 0,
    Velocity = 1,
}

/// Position in a counter-based Gaussian stream. Draws are a pure function of
/// `(seed, trajectory_id, step_index, channel)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WienerStream {
    pub seed: u64,
    pub trajectory_id: u64,
    pub step_index: u64,
}

impl WienerStream {
    pub fn new(seed: u64, trajectory_id: u64) -> Self {
        WienerStream {
            seed,
            trajectory_id,
            step_index: 0,
        }
    }

    pub fn advanced(self) -> Self {
        WienerStream {
            step_index: self.step_index + 1,
            ..self
        }
    }

    pub fn normals(&self, channel: Channel, n: usize) -> Vec<f64> {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.trajectory_id.to_le_bytes());
        key[16..24].copy_from_slice(&self.step_index.to_le_bytes());
        key[24..32].copy_from_slice(&(channel as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }
}

/// A sampled increment of either family.
#[derive(Debug, Clone, PartialEq)]
pub enum Increment {
    Scalar(ScalarField),
    Velocity(VelocityField),
}

/// `sum_k sigma_k sqrt(dt) g_k` for the stream's current step.
pub fn sample_increment(basis: &NoiseBasis, dt: f64, stream: &WienerStream) -> Result<Increment> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain("dt", format!("{dt} must be positive")));
    }
    Ok(match basis.kind {
        BasisKind::Temperature => {
            let g = basis.draws(stream, Channel::Temperature);
            Increment::Scalar(basis.scalar_increment(dt, &g))
        }
        BasisKind::Velocity => {
            let g = basis.draws(stream, Channel::Velocity);
            Increment::Velocity(VelocityField::from_streamfunction(
                basis.grid,
                basis.streamfunction_increment(dt, &g),
            )?)
        }
    })
}

/// Fields that can be expanded in a forcing basis.
pub trait Projectable: Sized {
    /// Coefficients on the first `n` unit shapes.
    fn coefficients(&self, basis: &NoiseBasis, n: usize) -> Result<Vec<f64>>;
    /// `sum_k c_k shape_k`.
    fn synthesize(basis: &NoiseBasis, c: &[f64]) -> Result<Self>;
}

fn check_family(basis: &NoiseBasis, want: BasisKind, n: usize, grid: &Grid) -> Result<()> {
    ensure_same(&basis.grid, grid)?;
    if basis.kind != want {
        return Err(Error::domain("basis", format!("expected a {want:?} basis")));
    }
    if n > basis.len() {
        return Err(Error::domain(
            "n",
            format!("{n} exceeds the {} available modes", basis.len()),
        ));
    }
    Ok(())
}

impl Projectable for ScalarField {
    fn coefficients(&self, basis: &NoiseBasis, n: usize) -> Result<Vec<f64>> {
        check_family(basis, BasisKind::Temperature, n, &self.grid)?;
        Ok(basis.shapes[..n].iter().map(|s| basis.grid.inner(&self.values, s)).collect())
    }

    fn synthesize(basis: &NoiseBasis, c: &[f64]) -> Result<Self> {
        check_family(basis, BasisKind::Temperature, c.len(), &basis.grid)?;
        Ok(ScalarField {
            grid: basis.grid,
            values: basis.combine(c),
        })
    }
}

impl Projectable for VelocityField {
    fn coefficients(&self, basis: &NoiseBasis, n: usize) -> Result<Vec<f64>> {
        check_family(basis, BasisKind::Velocity, n, &self.grid)?;
        basis.velocities[..n].iter().map(|e| self.inner(e)).collect()
    }

    fn synthesize(basis: &NoiseBasis, c: &[f64]) -> Result<Self> {
        check_family(basis, BasisKind::Velocity, c.len(), &basis.grid)?;
        VelocityField::from_streamfunction(basis.grid, basis.combine(c))
    }
}

/// Orthogonal projection onto the span of the first `n` modes.
pub fn project_low_modes<F: Projectable>(f: &F, basis: &NoiseBasis, n: usize) -> Result<F> {
    let c = f.coefficients(basis, n)?;
    F::synthesize(basis, &c)
}
