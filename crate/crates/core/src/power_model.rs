//! Thermo-optic phase response of the six internal resistors.
//!
//! The phase differences depend on the dissipated powers through
//!
//! ```text
//! Δφⱼ = φⱼ₀ + Σᵢ ( αⱼᵢ Pᵢ + Σ_{k≥i} α^{NL}ⱼᵢₖ Pᵢ Pₖ ),   j = 1, 2
//! ```
//!
//! with `Pᵢ = Rᵢ(Iᵢ)·Iᵢ²` and an affine resistance `R(I) = R₀ + κI`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, SimplexOptions};
use crate::phase::{wrap_pi, PhaseVector};

pub const RESISTORS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseCoefficients {
    /// Static phases `φ₁₀, φ₂₀` (rad).
    pub phi0: [f64; 2],
    /// Linear coefficients `alpha[j][i]` (rad/W).
    pub alpha: [[f64; RESISTORS]; 2],
    /// Quadratic and cross-talk coefficients `alpha_nl[j][i][k]` (rad/W²);
    /// only the upper triangle `k ≥ i` is used and the rest must be zero.
    pub alpha_nl: [[[f64; RESISTORS]; RESISTORS]; 2],
}

impl ResponseCoefficients {
    pub fn zero() -> Self {
        Self {
            phi0: [0.0; 2],
            alpha: [[0.0; RESISTORS]; 2],
            alpha_nl: [[[0.0; RESISTORS]; RESISTORS]; 2],
        }
    }

    /// Non-physical demo coefficients: strong diagonal response of R₁ on
    /// Δφ₁ and R₂ on Δφ₂ with weak cross-talk everywhere.
    pub fn demo() -> Self {
        let mut c = Self::zero();
        c.phi0 = [0.4, 1.1];
        c.alpha = [
            [9.0, 0.6, 0.3, 2.0, 0.4, 0.2],
            [0.5, 8.5, 0.3, 0.3, 2.2, 0.2],
        ];
        for (j, slab) in c.alpha_nl.iter_mut().enumerate() {
            for i in 0..RESISTORS {
                for k in i..RESISTORS {
                    slab[i][k] = if i == k { -0.4 } else { 0.05 * (1 + j) as f64 };
                }
            }
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..2 {
            for i in 0..RESISTORS {
                for k in 0..i {
                    if self.alpha_nl[j][i][k] != 0.0 {
                        return Err(Error::config(format!(
                            "power.coefficients.alpha_nl[{j}][{i}][{k}] is below the diagonal; only k >= i is allowed"
                        )));
                    }
                }
            }
        }
        let all_finite = self.phi0.iter().all(|v| v.is_finite())
            && self.alpha.iter().flatten().all(|v| v.is_finite())
            && self.alpha_nl.iter().flatten().flatten().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::config("power.coefficients must all be finite"));
        }
        Ok(())
    }

    /// Phase response without the power-limit check.
    pub fn response(&self, powers: &[f64; RESISTORS]) -> PhaseVector {
        let mut out = [0.0; 2];
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = self.phi0[j];
            for i in 0..RESISTORS {
                let mut inner = self.alpha[j][i];
                for k in i..RESISTORS {
                    inner += self.alpha_nl[j][i][k] * powers[k];
                }
                acc += inner * powers[i];
            }
            *o = acc;
        }
        PhaseVector::from_array(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResistorState {
    /// Currents (A).
    #[serde(default)]
    pub current: [f64; RESISTORS],
    /// Zero-current resistances `R₀` (Ω).
    #[serde(default = "default_resistance")]
    pub resistance: [f64; RESISTORS],
    /// Linear current dependence `κ` of the resistance (Ω/A).
    #[serde(default)]
    pub kappa: [f64; RESISTORS],
    /// Per-resistor power limit (W).
    #[serde(default = "default_max_power")]
    pub max_power: f64,
}

fn default_resistance() -> [f64; RESISTORS] {
    [100.0; RESISTORS]
}

fn default_max_power() -> f64 {
    1.0
}

impl Default for ResistorState {
    fn default() -> Self {
        Self {
            current: [0.0; RESISTORS],
            resistance: default_resistance(),
            kappa: [0.0; RESISTORS],
            max_power: default_max_power(),
        }
    }
}

impl ResistorState {
    pub fn validate(&self) -> Result<()> {
        for i in 0..RESISTORS {
            if !(self.resistance[i] > 0.0 && self.resistance[i].is_finite()) {
                return Err(Error::config(format!(
                    "power.resistors.resistance[{i}] = {} must be positive",
                    self.resistance[i]
                )));
            }
            if !(self.kappa[i] >= 0.0 && self.kappa[i].is_finite()) {
                return Err(Error::config(format!(
                    "power.resistors.kappa[{i}] = {} must be >= 0",
                    self.kappa[i]
                )));
            }
            if !(self.current[i] >= 0.0 && self.current[i].is_finite()) {
                return Err(Error::config(format!(
                    "power.resistors.current[{i}] = {} must be >= 0",
                    self.current[i]
                )));
            }
        }
        if !(self.max_power > 0.0) {
            return Err(Error::config("power.resistors.max_power must be positive"));
        }
        Ok(())
    }

    pub fn resistance_at(&self, i: usize, current: f64) -> f64 {
        self.resistance[i] + self.kappa[i] * current
    }

    pub fn power_at(&self, i: usize, current: f64) -> f64 {
        self.resistance_at(i, current) * current * current
    }

    pub fn powers(&self) -> [f64; RESISTORS] {
        std::array::from_fn(|i| self.power_at(i, self.current[i]))
    }

    /// Largest current on resistor `i` that stays within `max_power`.
    pub fn max_current(&self, i: usize) -> f64 {
        let mut hi = (self.max_power / self.resistance[i]).sqrt();
        let mut lo = 0.0;
        if self.kappa[i] == 0.0 {
            return hi;
        }
        // P is increasing in I, and R(I) ≥ R₀ puts the root below sqrt(P/R₀)
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.power_at(i, mid) > self.max_power {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }
}

/// Evaluates the phase response, rejecting powers above `max_power`.
pub fn phases_from_powers(
    coef: &ResponseCoefficients,
    powers: &[f64; RESISTORS],
    max_power: f64,
) -> Result<PhaseVector> {
    for (i, &p) in powers.iter().enumerate() {
        if p > max_power {
            return Err(Error::PowerLimitExceeded {
                resistor: i + 1,
                power: p,
                limit: max_power,
            });
        }
    }
    Ok(coef.response(powers))
}

/// Control phase produced by the control resistors: the response at the
/// current state minus the response with the control currents switched off.
pub fn control_phases(
    coef: &ResponseCoefficients,
    state: &ResistorState,
    control: [usize; 2],
) -> PhaseVector {
    let on = coef.response(&state.powers());
    let mut off_state = state.clone();
    for &c in &control {
        off_state.current[c] = 0.0;
    }
    on - coef.response(&off_state.powers())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub state: ResistorState,
    /// Control phase actually produced by `state`.
    pub achieved: PhaseVector,
    /// Both components within π/2 (wrapped) of the target.
    pub reachable: bool,
}

const COARSE_GRID: usize = 48;
const REFINE_STARTS: usize = 16;

/// Finds currents on the two `control` resistors (0-based) whose control
/// phase is closest to `target` on the torus, holding the other resistors
/// at their currents in `base`. With `quantum > 0` the currents are snapped
/// to multiples of `quantum`.
pub fn controls_for_target(
    coef: &ResponseCoefficients,
    base: &ResistorState,
    target: PhaseVector,
    control: [usize; 2],
    quantum: f64,
) -> ControlSolution {
    let limits = [base.max_current(control[0]), base.max_current(control[1])];
    let with_currents = |c: [f64; 2]| {
        let mut s = base.clone();
        s.current[control[0]] = c[0].clamp(0.0, limits[0]);
        s.current[control[1]] = c[1].clamp(0.0, limits[1]);
        s
    };
    let cell = |a: usize, b: usize| {
        [
            limits[0] * a as f64 / COARSE_GRID as f64,
            limits[1] * b as f64 / COARSE_GRID as f64,
        ]
    };
    let mismatch = |c: [f64; 2]| {
        let got = control_phases(coef, &with_currents(c), control);
        let d1 = wrap_pi(got.phi1 - target.phi1);
        let d2 = wrap_pi(got.phi2 - target.phi2);
        d1 * d1 + d2 * d2
    };

    let n = COARSE_GRID + 1;
    let mut values = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            values[a * n + b] = mismatch(cell(a, b));
        }
    }
    // every coarse local minimum is a candidate basin; the phase map wraps,
    // so the global one need not be among the lowest few cells
    let mut starts: Vec<([f64; 2], f64)> = Vec::new();
    for a in 0..n {
        for b in 0..n {
            let v = values[a * n + b];
            let lowest = (a.saturating_sub(1)..(a + 2).min(n))
                .flat_map(|x| (b.saturating_sub(1)..(b + 2).min(n)).map(move |y| (x, y)))
                .all(|(x, y)| values[x * n + y] >= v);
            if lowest {
                starts.push((cell(a, b), v));
            }
        }
    }
    // stable sort keeps grid order among ties
    starts.sort_by(|x, y| x.1.total_cmp(&y.1));
    let mut best = starts[0];

    let scale = limits[0].max(limits[1]);
    let clamp = |x: [f64; 2]| [x[0].clamp(0.0, limits[0]), x[1].clamp(0.0, limits[1])];
    for &(start, _) in starts.iter().take(REFINE_STARTS) {
        if best.1 == 0.0 {
            break;
        }
        // one restart from the first result shakes off simplex collapse
        let mut x = start;
        for _ in 0..2 {
            let r = nelder_mead(
                |x: &[f64; 2]| mismatch(clamp(*x)),
                x,
                SimplexOptions {
                    initial_step: scale / COARSE_GRID as f64,
                    x_tol: 1e-14 * scale,
                    f_tol: 1e-30,
                    max_evals: 4000,
                },
            );
            x = clamp(r.x);
            if r.value < best.1 {
                best = (x, r.value);
            }
        }
    }

    let currents = if quantum > 0.0 {
        let options = |k: usize| {
            let lo = (best.0[k] / quantum).floor();
            let hi = lo + 1.0;
            let mut v = vec![lo * quantum];
            if hi * quantum <= limits[k] {
                v.push(hi * quantum);
            }
            v
        };
        let mut pick = ([0.0, 0.0], f64::INFINITY);
        for &a in &options(0) {
            for &b in &options(1) {
                let v = mismatch([a, b]);
                if v < pick.1 {
                    pick = ([a, b], v);
                }
            }
        }
        pick.0
    } else {
        best.0
    };

    let state = with_currents(currents);
    let achieved = control_phases(coef, &state, control);
    let reachable = wrap_pi(achieved.phi1 - target.phi1).abs() < std::f64::consts::FRAC_PI_2
        && wrap_pi(achieved.phi2 - target.phi2).abs() < std::f64::consts::FRAC_PI_2;
    ControlSolution {
        state,
        achieved,
        reachable,
    }
}
