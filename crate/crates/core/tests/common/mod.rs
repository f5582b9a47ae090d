//! Independent reference implementations used as test oracles.
//!
//! Plain `[[Complex64; 3]; 3]` arithmetic, written without the crate's
//! matrix types or cached path amplitudes.

#![allow(dead_code)]

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use num_complex::Complex64;

pub type M3 = [[Complex64; 3]; 3];

pub fn mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[Complex64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn fourier() -> M3 {
    let s = 1.0 / 3f64.sqrt();
    let mut u = [[Complex64::new(0.0, 0.0); 3]; 3];
    for (j, row) in u.iter_mut().enumerate() {
        for (k, x) in row.iter_mut().enumerate() {
            *x = Complex64::from_polar(s, TAU * (j * k) as f64 / 3.0);
        }
    }
    u
}

fn identity() -> M3 {
    let mut u = [[Complex64::new(0.0, 0.0); 3]; 3];
    for (i, row) in u.iter_mut().enumerate() {
        row[i] = Complex64::new(1.0, 0.0);
    }
    u
}

fn coupler(a: usize, b: usize) -> M3 {
    let mut u = identity();
    u[a][a] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    u[b][b] = Complex64::new(FRAC_1_SQRT_2, 0.0);
    u[a][b] = Complex64::new(0.0, FRAC_1_SQRT_2);
    u[b][a] = Complex64::new(0.0, FRAC_1_SQRT_2);
    u
}

/// Planar cascade: coupler(1,2) · coupler(2,3) · phase on mode 2 · coupler(1,2).
pub fn reck(phi_t: f64) -> M3 {
    let mut p = identity();
    p[1][1] = Complex64::from_polar(1.0, phi_t);
    mul(&mul(&mul(&coupler(0, 1), &coupler(1, 2)), &p), &coupler(0, 1))
}

/// A device given directly by its matrices (modes 0-based here).
#[derive(Debug, Clone, Copy)]
pub struct OracleDevice {
    pub ua: M3,
    pub ub: M3,
    pub input: usize,
    pub reference: usize,
    pub visibility: f64,
    pub background: f64,
}

impl OracleDevice {
    pub fn ideal() -> Self {
        Self {
            ua: fourier(),
            ub: fourier(),
            input: 0,
            reference: 1,
            visibility: 1.0,
            background: 0.0,
        }
    }

    pub fn probabilities(&self, phi: [f64; 2]) -> [f64; 3] {
        let others: Vec<usize> = (0..3).filter(|&m| m != self.reference).collect();
        let mut d = identity();
        d[others[0]][others[0]] = Complex64::from_polar(1.0, phi[0]);
        d[others[1]][others[1]] = Complex64::from_polar(1.0, phi[1]);
        let u = mul(&mul(&self.ub, &d), &self.ua);
        let mut p = [0.0; 3];
        for (out, q) in p.iter_mut().enumerate() {
            let ideal = u[out][self.input].norm_sqr();
            *q = (self.visibility * ideal + (1.0 - self.visibility) / 3.0 + self.background)
                / (1.0 + 3.0 * self.background);
        }
        p
    }

    /// Fisher matrix from fourth-order central differences of the
    /// probabilities, with the same `1e-12` regulariser as the library.
    pub fn fisher_fd(&self, phi: [f64; 2], h: f64) -> [[f64; 2]; 2] {
        let mut grad = [[0.0; 2]; 3];
        for axis in 0..2 {
            let at = |s: f64| {
                let mut x = phi;
                x[axis] += s;
                self.probabilities(x)
            };
            let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
            for d in 0..3 {
                grad[d][axis] = (-p2[d] + 8.0 * p1[d] - 8.0 * m1[d] + m2[d]) / (12.0 * h);
            }
        }
        let p = self.probabilities(phi);
        let mut f = [[0.0; 2]; 2];
        for d in 0..3 {
            for i in 0..2 {
                for j in 0..2 {
                    f[i][j] += grad[d][i] * grad[d][j] / (p[d] + 1e-12);
                }
            }
        }
        f
    }
}

/// Unnormalised grid-Bayes weights after a sequence of `(controls, outcome)`
/// probes, starting from equal weights.
pub fn grid_bayes(dev: &OracleDevice, grid: &[[f64; 2]], probes: &[([f64; 2], usize)]) -> Vec<f64> {
    let mut w: Vec<f64> = vec![1.0; grid.len()];
    for &(ctl, d) in probes {
        for (wi, phi) in w.iter_mut().zip(grid) {
            *wi *= dev.probabilities([phi[0] + ctl[0], phi[1] + ctl[1]])[d];
        }
        let s: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= s;
        }
    }
    w
}
