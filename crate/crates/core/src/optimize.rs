//! Small derivative-free minimizers used by the Fisher landscape search,
//! the utility refinement, the control-current inversion and the
//! convergence-time fit.

/// Options for [`nelder_mead`].
#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Edge length of the initial simplex along every axis.
    pub initial_step: f64,
    /// Stop when every vertex is within this distance of the best one.
    pub x_tol: f64,
    /// Stop when the spread of objective values falls below this.
    pub f_tol: f64,
    pub max_evals: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            x_tol: 1e-10,
            f_tol: 1e-15,
            max_evals: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult<const D: usize> {
    pub x: [f64; D],
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex minimization with the standard coefficients
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
///
/// Never evaluates `f` more than `opts.max_evals` times; the best point
/// seen is returned even if the simplex did not converge.
pub fn nelder_mead<const D: usize, F>(
    mut f: F,
    start: [f64; D],
    opts: SimplexOptions,
) -> SimplexResult<D>
where
    F: FnMut(&[f64; D]) -> f64,
{
    let mut evals = 0usize;
    let mut eval = |x: &[f64; D], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<([f64; D], f64)> = Vec::with_capacity(D + 1);
    simplex.push((start, eval(&start, &mut evals)));
    for i in 0..D {
        if evals >= opts.max_evals {
            break;
        }
        let mut x = start;
        x[i] += opts.initial_step;
        simplex.push((x, eval(&x, &mut evals)));
    }
    if simplex.len() < D + 1 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        return SimplexResult {
            x: simplex[0].0,
            value: simplex[0].1,
            evals,
            converged: false,
        };
    }

    let mut converged = false;
    while evals < opts.max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0];
        let worst = simplex[D];

        let spread_x = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(best.0.iter())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let spread_f = (worst.1 - best.1).abs();
        if spread_x <= opts.x_tol && spread_f <= opts.f_tol.max(f64::EPSILON * best.1.abs()) {
            converged = true;
            break;
        }
        if spread_x <= opts.x_tol * 1e-3 {
            // collapsed simplex with a flat-but-noisy objective
            converged = true;
            break;
        }

        let mut centroid = [0.0; D];
        for (x, _) in &simplex[..D] {
            for k in 0..D {
                centroid[k] += x[k] / D as f64;
            }
        }
        let along = |t: f64| {
            let mut x = [0.0; D];
            for k in 0..D {
                x[k] = centroid[k] + t * (worst.0[k] - centroid[k]);
            }
            x
        };

        let xr = along(-1.0);
        let fr = eval(&xr, &mut evals);
        if fr < best.1 {
            if evals >= opts.max_evals {
                simplex[D] = (xr, fr);
                break;
            }
            let xe = along(-2.0);
            let fe = eval(&xe, &mut evals);
            simplex[D] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[D - 1].1 {
            simplex[D] = (xr, fr);
            continue;
        }
        if evals >= opts.max_evals {
            break;
        }
        let (xc, fc) = if fr < worst.1 {
            let xc = along(-0.5);
            (xc, eval(&xc, &mut evals))
        } else {
            let xc = along(0.5);
            (xc, eval(&xc, &mut evals))
        };
        if fc < worst.1.min(fr) {
            simplex[D] = (xc, fc);
            continue;
        }
        // shrink towards the best vertex
        for v in simplex.iter_mut().skip(1) {
            if evals >= opts.max_evals {
                break;
            }
            for k in 0..D {
                v.0[k] = best.0[k] + 0.5 * (v.0[k] - best.0[k]);
            }
            v.1 = eval(&v.0, &mut evals);
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    SimplexResult {
        x: simplex[0].0,
        value: simplex[0].1,
        evals,
        converged,
    }
}

/// Golden-section search for a minimum of a unimodal function on `[lo, hi]`.
pub fn golden_section<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64, max_iter: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (hi - lo).abs() <= tol * (1.0 + c.abs()) {
            break;
        }
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_finds_rosenbrock_minimum() {
        let rosen = |x: &[f64; 2]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(
            rosen,
            [-1.2, 1.0],
            SimplexOptions {
                max_evals: 5000,
                ..Default::default()
            },
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn simplex_respects_eval_budget() {
        let mut calls = 0;
        let r = nelder_mead(
            |x: &[f64; 2]| {
                calls += 1;
                x[0].sin() + x[1].cos()
            },
            [0.3, 0.3],
            SimplexOptions {
                max_evals: 17,
                ..Default::default()
            },
        );
        assert!(r.evals <= 17);
        assert_eq!(calls, r.evals);
    }

    #[test]
    fn golden_section_on_parabola() {
        let (x, v) = golden_section(|x| (x - 2.5).powi(2) + 1.0, 0.0, 10.0, 1e-12, 200);
        assert!((x - 2.5).abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-12);
    }
}
