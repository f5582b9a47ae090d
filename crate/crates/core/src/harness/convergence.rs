//! Convergence time towards the CRB: least-squares fit of
//! `L(N) − CRB(N) ≈ a + b·exp(−N/τ)`.
//!
//! For fixed τ the model is linear in `(a, b)`, so the fit scans τ on a
//! log grid, solves the 2×2 normal equations at each τ and polishes the
//! best τ with a golden-section search.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::optimize::golden_section;

/// First probe count included in the fit (fits use `N ≥ 3`, i.e. `N > 2`).
pub const DEFAULT_FIT_START: usize = 3;

const TAU_GRID: usize = 400;
const TAU_MIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceFit {
    pub a: f64,
    pub b: f64,
    pub tau: f64,
    /// Sum of squared residuals of the exponential model.
    pub residual: f64,
    /// Sum of squared residuals of the best constant.
    pub constant_residual: f64,
    pub points: usize,
}

fn linear_fit(ns: &[f64], ys: &[f64], tau: f64) -> Option<(f64, f64, f64)> {
    let (mut s1, mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&n, &y) in ns.iter().zip(ys) {
        let e = (-n / tau).exp();
        s1 += 1.0;
        se += e;
        see += e * e;
        sy += y;
        sey += e * y;
    }
    let det = s1 * see - se * se;
    if !(det > 1e-300) || det < 1e-13 * s1 * see {
        return None;
    }
    let a = (see * sy - se * sey) / det;
    let b = (s1 * sey - se * sy) / det;
    let residual = ns
        .iter()
        .zip(ys)
        .map(|(&n, &y)| (y - a - b * (-n / tau).exp()).powi(2))
        .sum();
    Some((a, b, residual))
}

/// Fits `loss[k] − crb[k]` for `N = k + 1 ≥ n_min`.
pub fn fit_convergence_time(loss: &[f64], crb: &[f64], n_min: usize) -> Result<ConvergenceFit> {
    if loss.len() != crb.len() {
        return Err(Error::FitFailed(format!(
            "loss and CRB curves differ in length ({} vs {})",
            loss.len(),
            crb.len()
        )));
    }
    let (ns, ys): (Vec<f64>, Vec<f64>) = loss
        .iter()
        .zip(crb)
        .enumerate()
        .map(|(k, (l, c))| ((k + 1) as f64, l - c))
        .filter(|(n, _)| *n >= n_min as f64)
        .unzip();
    if ns.len() < 3 {
        return Err(Error::FitFailed(format!(
            "need at least 3 points with N >= {n_min}, got {}",
            ns.len()
        )));
    }
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::FitFailed("curve contains non-finite values".into()));
    }

    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let constant_residual: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let tau_max = 10.0 * ns[ns.len() - 1];

    let profile = |tau: f64| linear_fit(&ns, &ys, tau).map_or(f64::INFINITY, |r| r.2);
    let ratio = (tau_max / TAU_MIN).powf(1.0 / (TAU_GRID - 1) as f64);
    let grid: Vec<f64> = (0..TAU_GRID).map(|i| TAU_MIN * ratio.powi(i as i32)).collect();
    let (best_idx, _) = grid
        .iter()
        .map(|&t| profile(t))
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let lo = grid[best_idx.saturating_sub(1)];
    let hi = grid[(best_idx + 1).min(TAU_GRID - 1)];
    let (tau, _) = golden_section(profile, lo, hi, 1e-13, 500);

    let (a, b, residual) = linear_fit(&ns, &ys, tau)
        .ok_or_else(|| Error::FitFailed(format!("degenerate design at tau = {tau}")))?;
    if !(residual.is_finite() && a.is_finite() && b.is_finite()) {
        return Err(Error::FitFailed("non-finite fit parameters".into()));
    }
    if !(tau > 0.0 && tau < tau_max * (1.0 - 1e-9)) {
        return Err(Error::FitFailed(format!(
            "tau = {tau} outside (0, {tau_max})"
        )));
    }
    let scale: f64 = ys.iter().map(|y| y * y).sum::<f64>().max(f64::MIN_POSITIVE);
    if !(residual < constant_residual * (1.0 - 1e-9)) || constant_residual - residual < 1e-20 * scale {
        return Err(Error::FitFailed(
            "exponential term does not improve on a constant; tau is unidentifiable".into(),
        ));
    }
    Ok(ConvergenceFit {
        a,
        b,
        tau,
        residual,
        constant_residual,
        points: ns.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_synthetic_parameters() {
        let crb: Vec<f64> = (1..=100).map(|n| 3.866 / n as f64).collect();
        let loss: Vec<f64> = crb
            .iter()
            .enumerate()
            .map(|(k, c)| c + 0.01 + 0.5 * (-((k + 1) as f64) / 5.6).exp())
            .collect();
        let fit = fit_convergence_time(&loss, &crb, DEFAULT_FIT_START).unwrap();
        assert!((fit.tau - 5.6).abs() < 1e-6, "{fit:?}");
        assert!((fit.a - 0.01).abs() < 1e-8);
        assert!((fit.b - 0.5).abs() < 1e-6);
        assert_eq!(fit.points, 98);
    }

    #[test]
    fn constant_difference_fails() {
        let crb = vec![0.0; 50];
        let loss = vec![0.3; 50];
        assert!(matches!(
            fit_convergence_time(&loss, &crb, 3),
            Err(Error::FitFailed(_))
        ));
    }

    #[test]
    fn short_or_broken_curves_fail() {
        assert!(fit_convergence_time(&[1.0, 2.0, 3.0], &[0.0; 3], 3).is_err());
        assert!(fit_convergence_time(&[1.0; 10], &[0.0; 9], 3).is_err());
        let mut l = vec![1.0; 10];
        l[5] = f64::NAN;
        assert!(fit_convergence_time(&l, &[0.0; 10], 3).is_err());
    }
}
