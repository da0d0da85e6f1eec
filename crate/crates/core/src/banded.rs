//! Symmetric positive-definite band matrices and their Cholesky factors.
//!
//! All vertical operators in the solver (Dirichlet Helmholtz, clamped
//! biharmonic, Crank-Nicolson vorticity) are real SPD with half-bandwidth
//! at most two, so one factorization serves real and complex right-hand sides.

use std::ops::{Div, Mul, Sub};

/// Lower band storage: `lower[i * (p + 1) + d]` holds `A[i][i - d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymBand {
    n: usize,
    p: usize,
    lower: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, p: usize) -> Self {
        SymBand {
            n,
            p,
            lower: vec![0.0; n * (p + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Adds `v` to `A[r][c]` (and implicitly `A[c][r]`). Requires `r >= c`.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r >= c && r - c <= self.p);
        self.lower[r * (self.p + 1) + (r - c)] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        if r - c > self.p {
            0.0
        } else {
            self.lower[r * (self.p + 1) + (r - c)]
        }
    }

    /// `self * a + other * b` entrywise; bandwidth is the larger of the two.
    pub fn combine(a: f64, lhs: &SymBand, b: f64, rhs: &SymBand) -> SymBand {
        assert_eq!(lhs.n, rhs.n);
        let p = lhs.p.max(rhs.p);
        let mut out = SymBand::zeros(lhs.n, p);
        for r in 0..lhs.n {
            for d in 0..=p.min(r) {
                let c = r - d;
                out.lower[r * (p + 1) + d] = a * lhs.get(r, c) + b * rhs.get(r, c);
            }
        }
        out
    }

    pub fn identity(n: usize) -> SymBand {
        let mut m = SymBand::zeros(n, 0);
        for i in 0..n {
            m.add(i, i, 1.0);
        }
        m
    }

    pub fn matvec<T>(&self, x: &[T]) -> Vec<T>
    where
        T: Copy + Default + std::ops::Add<Output = T> + Mul<f64, Output = T>,
    {
        assert_eq!(x.len(), self.n);
        let mut y = vec![T::default(); self.n];
        for r in 0..self.n {
            let lo = r.saturating_sub(self.p);
            let hi = (r + self.p).min(self.n - 1);
            let mut acc = T::default();
            for c in lo..=hi {
                acc = acc + x[c] * self.get(r, c);
            }
            y[r] = acc;
        }
        y
    }

    /// Band Cholesky `A = L L^T`. Returns `None` when `A` is not positive definite.
    pub fn cholesky(&self) -> Option<BandCholesky> {
        let (n, p) = (self.n, self.p);
        let w = p + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let lo = i.saturating_sub(p);
            for j in lo..=i {
                let mut sum = self.get(i, j);
                let mlo = lo.max(j.saturating_sub(p));
                for m in mlo..j {
                    sum -= l[i * w + (i - m)] * l[j * w + (j - m)];
                }
                if i == j {
                    if !(sum > 0.0) {
                        return None;
                    }
                    l[i * w] = sum.sqrt();
                } else {
                    l[i * w + (i - j)] = sum / l[j * w];
                }
            }
        }
        Some(BandCholesky { n, p, l })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandCholesky {
    n: usize,
    p: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Solves `A x = b` in place for real or complex `b`.
    pub fn solve_in_place<T>(&self, b: &mut [T])
    where
        T: Copy + Sub<Output = T> + Mul<f64, Output = T> + Div<f64, Output = T>,
    {
        assert_eq!(b.len(), self.n);
        let w = self.p + 1;
        for i in 0..self.n {
            let mut s = b[i];
            for m in i.saturating_sub(self.p)..i {
                s = s - b[m] * self.l[i * w + (i - m)];
            }
            b[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for m in i + 1..=(i + self.p).min(self.n - 1) {
                s = s - b[m] * self.l[m * w + (m - i)];
            }
            b[i] = s / self.l[i * w];
        }
    }
}
