//! Linear complementarity on tridiagonal M-matrices:
//! find `v` with `min(Av − f, v − g) = 0` componentwise.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Tridiag {
    /// Coefficient of `v[i-1]` in row `i` (`sub[0]` unused).
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    /// Coefficient of `v[i+1]` in row `i` (last entry unused).
    pub sup: Vec<f64>,
}

impl Tridiag {
    pub fn zeros(n: usize) -> Self {
        Tridiag {
            sub: vec![0.0; n],
            diag: vec![0.0; n],
            sup: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn row(&self, v: &[f64], i: usize) -> f64 {
        let mut r = self.diag[i] * v[i];
        if i > 0 {
            r += self.sub[i] * v[i - 1];
        }
        if i + 1 < v.len() {
            r += self.sup[i] * v[i + 1];
        }
        r
    }

    /// Off-diagonals nonpositive and rows weakly diagonally dominant.
    pub fn check_monotone(&self) -> Result<()> {
        for i in 0..self.len() {
            let off = -self.sub[i] - self.sup[i];
            if self.sub[i] > 0.0 || self.sup[i] > 0.0 || !(self.diag[i] >= off) || !(self.diag[i] > 0.0) {
                return Err(Error::NonMonotone { node: i });
            }
        }
        Ok(())
    }
}

/// `(Av − f)_i / A_ii`.
pub(crate) fn scaled_residual(m: &Tridiag, f: &[f64], v: &[f64]) -> Vec<f64> {
    (0..m.len()).map(|i| (m.row(v, i) - f[i]) / m.diag[i]).collect()
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64], out: &mut [f64], cp: &mut [f64]) {
    let n = diag.len();
    cp[0] = sup[0] / diag[0];
    out[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub[i] * cp[i - 1];
        cp[i] = if i + 1 < n { sup[i] / denom } else { 0.0 };
        out[i] = (rhs[i] - sub[i] * out[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        out[i] -= cp[i] * out[i + 1];
    }
}

/// Policy iteration: each step freezes the active set, solves the resulting
/// tridiagonal system exactly, and re-selects the active set. Terminates
/// once the active set repeats. `v` holds the warm start on entry.
pub(crate) fn policy_iteration(
    m: &Tridiag,
    f: &[f64],
    g: &[f64],
    v: &mut [f64],
    max_iter: usize,
) -> Result<usize> {
    let n = m.len();
    let mut active = vec![false; n];
    let choose = |v: &[f64], active: &mut [bool]| -> bool {
        let mut changed = false;
        for i in 0..n {
            let r = (m.row(v, i) - f[i]) / m.diag[i];
            let a = v[i] - g[i] <= r;
            changed |= a != active[i];
            active[i] = a;
        }
        changed
    };
    choose(v, &mut active);
    let (mut sub, mut diag, mut sup, mut rhs) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut cp = vec![0.0; n];
    for it in 1..=max_iter {
        for i in 0..n {
            if active[i] {
                sub[i] = 0.0;
                diag[i] = 1.0;
                sup[i] = 0.0;
                rhs[i] = g[i];
            } else {
                sub[i] = m.sub[i];
                diag[i] = m.diag[i];
                sup[i] = m.sup[i];
                rhs[i] = f[i];
            }
        }
        thomas(&sub, &diag, &sup, &rhs, v, &mut cp);
        if !choose(v, &mut active) {
            return Ok(it);
        }
    }
    Err(Error::NonConvergence {
        what: "policy iteration",
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Projected successive over-relaxation; stops when a sweep moves no node
/// by more than `tol`.
pub(crate) fn psor(
    m: &Tridiag,
    f: &[f64],
    g: &[f64],
    v: &mut [f64],
    omega: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<usize> {
    let n = m.len();
    for (vi, &gi) in v.iter_mut().zip(g) {
        *vi = vi.max(gi);
    }
    let mut last = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        let mut moved: f64 = 0.0;
        for i in 0..n {
            let mut s = f[i];
            if i > 0 {
                s -= m.sub[i] * v[i - 1];
            }
            if i + 1 < n {
                s -= m.sup[i] * v[i + 1];
            }
            let gs = s / m.diag[i];
            let new = (v[i] + omega * (gs - v[i])).max(g[i]);
            moved = moved.max((new - v[i]).abs());
            v[i] = new;
        }
        last = moved;
        if moved < tol {
            return Ok(sweep);
        }
    }
    Err(Error::NonConvergence {
        what: "projected SOR",
        iterations: max_sweeps,
        residual: last,
    })
}
