//! Forward model of the three-mode interferometer.
//!
//! A single photon enters `input_mode` of tritter A, picks up the phases
//! `(0, Δφ₁, Δφ₂)` (zero on the reference arm), and is detected at one of
//! the three outputs of tritter B. Detector imperfections are modelled by
//! a depolarizing visibility plus a constant background:
//!
//! ```text
//! p_meas(d) = [V·p_ideal(d) + (1 − V)/3 + b] / (1 + 3b)
//! ```

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use nalgebra::{Matrix2, Matrix3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{nelder_mead, SimplexOptions};
use crate::phase::PhaseVector;

/// Probability floor used in the Fisher sum.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Two minimizers closer than this (wrapped, in radians) are the same point.
pub const MINIMIZER_DISTINCTNESS: f64 = 1e-3;

pub type Unitary3 = Matrix3<Complex64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TritterKind {
    /// `U_jk = exp(2πi·jk/3)/√3`.
    #[default]
    Fourier,
    /// Three `[[1, i], [i, 1]]/√2` couplers on modes (1,2), (2,3), (1,2)
    /// with `phi_t` on the middle rail after the first coupler.
    ReckPlanar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TritterConfig {
    #[serde(default)]
    pub kind: TritterKind,
    /// Internal tritter phase, only used by [`TritterKind::ReckPlanar`].
    #[serde(default)]
    pub phi_t: f64,
}

impl TritterConfig {
    pub const FOURIER: TritterConfig = TritterConfig {
        kind: TritterKind::Fourier,
        phi_t: 0.0,
    };

    pub fn reck_planar(phi_t: f64) -> Self {
        Self {
            kind: TritterKind::ReckPlanar,
            phi_t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    #[serde(default = "one")]
    pub visibility: f64,
    #[serde(default)]
    pub background: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::IDEAL
    }
}

impl NoiseModel {
    pub const IDEAL: NoiseModel = NoiseModel {
        visibility: 1.0,
        background: 0.0,
    };

    /// `(scale, offset)` such that `p_meas = scale·p_ideal + offset`.
    fn affine(&self) -> (f64, f64) {
        let norm = 1.0 + 3.0 * self.background;
        (
            self.visibility / norm,
            ((1.0 - self.visibility) / 3.0 + self.background) / norm,
        )
    }
}

/// Device description as it appears in configuration files.
///
/// Modes are numbered 1..=3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceModel {
    #[serde(default)]
    pub tritter_a: TritterConfig,
    #[serde(default)]
    pub tritter_b: TritterConfig,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default = "default_input_mode")]
    pub input_mode: usize,
    #[serde(default = "default_reference_mode")]
    pub reference_mode: usize,
}

fn default_input_mode() -> usize {
    1
}

fn default_reference_mode() -> usize {
    2
}

impl Default for DeviceModel {
    fn default() -> Self {
        Self::ideal()
    }
}

impl DeviceModel {
    /// Two Fourier tritters, noiseless detection, photon in mode 1,
    /// mode 2 as reference arm.
    pub fn ideal() -> Self {
        Self {
            tritter_a: TritterConfig::FOURIER,
            tritter_b: TritterConfig::FOURIER,
            noise: NoiseModel::IDEAL,
            input_mode: default_input_mode(),
            reference_mode: default_reference_mode(),
        }
    }

    pub fn with_noise(mut self, visibility: f64, background: f64) -> Self {
        self.noise = NoiseModel {
            visibility,
            background,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.noise.visibility;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::config(format!(
                "device.noise.visibility = {v} is outside [0, 1]"
            )));
        }
        let b = self.noise.background;
        if !(b.is_finite() && b >= 0.0) {
            return Err(Error::config(format!(
                "device.noise.background = {b} must be finite and >= 0"
            )));
        }
        for (key, m) in [
            ("device.input_mode", self.input_mode),
            ("device.reference_mode", self.reference_mode),
        ] {
            if !(1..=3).contains(&m) {
                return Err(Error::config(format!("{key} = {m} must be 1, 2 or 3")));
            }
        }
        for (key, t) in [
            ("device.tritter_a.phi_t", self.tritter_a.phi_t),
            ("device.tritter_b.phi_t", self.tritter_b.phi_t),
        ] {
            if !t.is_finite() {
                return Err(Error::config(format!("{key} must be finite")));
            }
        }
        Ok(())
    }

    /// `U_B · diag(phases) · U_A` for the given phase differences.
    pub fn total_unitary(&self, delta_phi: PhaseVector) -> Unitary3 {
        let ua = tritter_unitary(&self.tritter_a);
        let ub = tritter_unitary(&self.tritter_b);
        let theta = mode_phases(self.reference_mode - 1, delta_phi);
        let ps = Matrix3::from_diagonal(&nalgebra::Vector3::from_fn(|k, _| {
            Complex64::from_polar(1.0, theta[k])
        }));
        ub * ps * ua
    }
}

/// Phases on the three modes: zero on the reference arm, `Δφ₁`, `Δφ₂` on the
/// remaining arms in increasing mode order.
fn mode_phases(reference: usize, delta_phi: PhaseVector) -> [f64; 3] {
    let [m1, m2] = phase_modes(reference);
    let mut theta = [0.0; 3];
    theta[m1] = delta_phi.phi1;
    theta[m2] = delta_phi.phi2;
    theta
}

fn phase_modes(reference: usize) -> [usize; 2] {
    match reference {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

fn coupler(a: usize, b: usize) -> Unitary3 {
    let mut m = Unitary3::identity();
    let r = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let t = Complex64::new(0.0, FRAC_1_SQRT_2);
    m[(a, a)] = r;
    m[(b, b)] = r;
    m[(a, b)] = t;
    m[(b, a)] = t;
    m
}

/// The 3×3 unitary of a tritter.
pub fn tritter_unitary(cfg: &TritterConfig) -> Unitary3 {
    match cfg.kind {
        TritterKind::Fourier => {
            let norm = 1.0 / 3f64.sqrt();
            Unitary3::from_fn(|j, k| Complex64::from_polar(norm, TAU * (j * k) as f64 / 3.0))
        }
        TritterKind::ReckPlanar => {
            let mut phase = Unitary3::identity();
            phase[(1, 1)] = Complex64::from_polar(1.0, cfg.phi_t);
            coupler(0, 1) * coupler(1, 2) * phase * coupler(0, 1)
        }
    }
}

/// A [`DeviceModel`] with its unitaries resolved, ready for repeated
/// likelihood evaluation.
#[derive(Debug, Clone)]
pub struct Interferometer {
    model: DeviceModel,
    /// `paths[d][k] = U_B[d,k]·U_A[k,input]`
    paths: [[Complex64; 3]; 3],
    modes: [usize; 2],
    reference: usize,
    scale: f64,
    offset: f64,
}

/// Fisher information at one phase point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherMatrix {
    pub entries: Matrix2<f64>,
    /// Some outcome probability fell below [`PROBABILITY_FLOOR`]; the matrix
    /// was computed with the floor added to the denominators.
    pub singular_point: bool,
}

impl FisherMatrix {
    /// Fisher matrix reconstructed at the experimental working point
    /// (fixture; inverse trace ≈ 4.2).
    pub fn experimental_fixture() -> Self {
        Self {
            entries: Matrix2::new(0.548, -0.226, -0.226, 0.585),
            singular_point: false,
        }
    }

    /// `Tr(F⁻¹)`; infinite when `F` is not invertible.
    pub fn trace_inverse(&self) -> f64 {
        let f = &self.entries;
        let det = f[(0, 0)] * f[(1, 1)] - f[(0, 1)] * f[(1, 0)];
        let tr = f[(0, 0)] + f[(1, 1)];
        if det <= 1e-14 * tr * tr || !det.is_finite() {
            f64::INFINITY
        } else {
            tr / det
        }
    }

    pub fn inverse(&self) -> Option<Matrix2<f64>> {
        self.entries.try_inverse()
    }

    pub fn eigenvalues(&self) -> [f64; 2] {
        let e = self.entries.symmetric_eigenvalues();
        [e[0].min(e[1]), e[0].max(e[1])]
    }
}

/// Outcome probabilities written as a trigonometric polynomial in the
/// total phases:
///
/// `p_d(θ) = c_d + Re(a_d e^{iθ₁}) + Re(b_d e^{iθ₂}) + Re(x_d e^{i(θ₁−θ₂)})`
///
/// Exact for every device (noise included), it lets posterior moments
/// under a hypothetical outcome be computed from a handful of particle
/// sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodExpansion {
    pub constant: [f64; 3],
    pub first: [Complex64; 3],
    pub second: [Complex64; 3],
    pub cross: [Complex64; 3],
}

impl LikelihoodExpansion {
    pub fn probability(&self, outcome: usize, delta_phi: PhaseVector) -> f64 {
        let e1 = Complex64::from_polar(1.0, delta_phi.phi1);
        let e2 = Complex64::from_polar(1.0, delta_phi.phi2);
        self.constant[outcome]
            + (self.first[outcome] * e1).re
            + (self.second[outcome] * e2).re
            + (self.cross[outcome] * e1 * e2.conj()).re
    }
}

impl Interferometer {
    pub fn new(model: DeviceModel) -> Result<Self> {
        model.validate()?;
        let ua = tritter_unitary(&model.tritter_a);
        let ub = tritter_unitary(&model.tritter_b);
        let input = model.input_mode - 1;
        let mut paths = [[Complex64::new(0.0, 0.0); 3]; 3];
        for (d, row) in paths.iter_mut().enumerate() {
            for (k, p) in row.iter_mut().enumerate() {
                *p = ub[(d, k)] * ua[(k, input)];
            }
        }
        let (scale, offset) = model.noise.affine();
        let reference = model.reference_mode - 1;
        Ok(Self {
            model,
            paths,
            modes: phase_modes(reference),
            reference,
            scale,
            offset,
        })
    }

    /// Noiseless Fourier device.
    pub fn ideal() -> Self {
        Self::new(DeviceModel::ideal()).expect("ideal device is valid")
    }

    pub fn model(&self) -> &DeviceModel {
        &self.model
    }

    fn amplitudes(&self, delta_phi: PhaseVector) -> ([Complex64; 3], [Complex64; 3]) {
        let mut phasor = [Complex64::new(1.0, 0.0); 3];
        phasor[self.modes[0]] = Complex64::from_polar(1.0, delta_phi.phi1);
        phasor[self.modes[1]] = Complex64::from_polar(1.0, delta_phi.phi2);
        let mut amp = [Complex64::new(0.0, 0.0); 3];
        for d in 0..3 {
            amp[d] = self.paths[d][0] * phasor[0]
                + self.paths[d][1] * phasor[1]
                + self.paths[d][2] * phasor[2];
        }
        (amp, phasor)
    }

    /// Probabilities of the three detector outcomes at total phases `delta_phi`.
    pub fn outcome_probabilities(&self, delta_phi: PhaseVector) -> [f64; 3] {
        let (amp, _) = self.amplitudes(delta_phi);
        amp.map(|a| self.scale * a.norm_sqr() + self.offset)
    }

    /// Probability of a single outcome.
    pub fn probability(&self, outcome: usize, delta_phi: PhaseVector) -> f64 {
        let mut phasor = [Complex64::new(1.0, 0.0); 3];
        phasor[self.modes[0]] = Complex64::from_polar(1.0, delta_phi.phi1);
        phasor[self.modes[1]] = Complex64::from_polar(1.0, delta_phi.phi2);
        let p = &self.paths[outcome];
        let a = p[0] * phasor[0] + p[1] * phasor[1] + p[2] * phasor[2];
        self.scale * a.norm_sqr() + self.offset
    }

    /// Probabilities and their gradients with respect to `(Δφ₁, Δφ₂)`,
    /// differentiating the amplitudes analytically.
    pub fn probabilities_with_gradient(&self, delta_phi: PhaseVector) -> ([f64; 3], [[f64; 2]; 3]) {
        let (amp, phasor) = self.amplitudes(delta_phi);
        let i = Complex64::new(0.0, 1.0);
        let mut p = [0.0; 3];
        let mut grad = [[0.0; 2]; 3];
        for d in 0..3 {
            p[d] = self.scale * amp[d].norm_sqr() + self.offset;
            for (j, &m) in self.modes.iter().enumerate() {
                let da = i * self.paths[d][m] * phasor[m];
                grad[d][j] = self.scale * 2.0 * (amp[d].conj() * da).re;
            }
        }
        (p, grad)
    }

    /// Classical Fisher information `F_jk = Σ_d ∂_j p_d ∂_k p_d / p_d`.
    pub fn fisher_matrix(&self, delta_phi: PhaseVector) -> FisherMatrix {
        let (p, grad) = self.probabilities_with_gradient(delta_phi);
        fisher_from_gradients(&p, &grad)
    }

    pub fn expansion(&self) -> LikelihoodExpansion {
        let zero = Complex64::new(0.0, 0.0);
        let mut out = LikelihoodExpansion {
            constant: [0.0; 3],
            first: [zero; 3],
            second: [zero; 3],
            cross: [zero; 3],
        };
        let [m1, m2] = self.modes;
        let r = self.reference;
        for d in 0..3 {
            let v = &self.paths[d];
            let s = self.scale;
            out.constant[d] = s * (v[0].norm_sqr() + v[1].norm_sqr() + v[2].norm_sqr()) + self.offset;
            out.first[d] = 2.0 * s * v[m1] * v[r].conj();
            out.second[d] = 2.0 * s * v[m2] * v[r].conj();
            out.cross[d] = 2.0 * s * v[m1] * v[m2].conj();
        }
        out
    }
}

/// Fisher matrix from outcome probabilities and their gradients, with the
/// probability floor in the denominators.
pub fn fisher_from_gradients(p: &[f64; 3], grad: &[[f64; 2]; 3]) -> FisherMatrix {
    let mut f = Matrix2::zeros();
    let mut singular_point = false;
    for d in 0..3 {
        if p[d] < PROBABILITY_FLOOR {
            singular_point = true;
        }
        let denom = p[d].max(0.0) + PROBABILITY_FLOOR;
        for j in 0..2 {
            for k in 0..2 {
                f[(j, k)] += grad[d][j] * grad[d][k] / denom;
            }
        }
    }
    FisherMatrix {
        entries: f,
        singular_point,
    }
}

/// Search settings for [`min_trace_inverse_fisher`].
#[derive(Debug, Clone, Copy)]
pub struct MinSearchOptions {
    /// Grid points per axis.
    pub grid: usize,
    /// Cells whose value is within this relative margin of the grid minimum
    /// are refined.
    pub window: f64,
    /// Relative margin for a refined point to count as a global minimizer.
    pub value_tol: f64,
}

impl Default for MinSearchOptions {
    fn default() -> Self {
        Self {
            grid: 180,
            window: 0.1,
            value_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinTraceResult {
    pub value: f64,
    /// Distinct minimizers, wrapped into `[0, 2π)²`, in lexicographic order.
    pub minimizers: Vec<PhaseVector>,
}

/// Global minimum of `Tr(F⁻¹)` over the torus and all distinct phase
/// pairs attaining it.
pub fn min_trace_inverse_fisher(dev: &Interferometer, opts: MinSearchOptions) -> MinTraceResult {
    let g = opts.grid.max(8);
    let step = TAU / g as f64;
    let objective = |x: &[f64; 2]| {
        let t = dev.fisher_matrix(PhaseVector::new(x[0], x[1])).trace_inverse();
        if t.is_finite() && t > 0.0 {
            t
        } else {
            f64::INFINITY
        }
    };

    let mut values = vec![f64::INFINITY; g * g];
    for i in 0..g {
        for j in 0..g {
            values[i * g + j] = objective(&[i as f64 * step, j as f64 * step]);
        }
    }
    let grid_min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if !grid_min.is_finite() {
        return MinTraceResult {
            value: f64::INFINITY,
            minimizers: Vec::new(),
        };
    }

    let at = |i: isize, j: isize| {
        let gi = i.rem_euclid(g as isize) as usize;
        let gj = j.rem_euclid(g as isize) as usize;
        values[gi * g + gj]
    };
    let threshold = grid_min * (1.0 + opts.window);
    let mut refined: Vec<(PhaseVector, f64)> = Vec::new();
    for i in 0..g as isize {
        for j in 0..g as isize {
            let v = at(i, j);
            if v > threshold {
                continue;
            }
            let local_min = (-1..=1).all(|di| {
                (-1..=1).all(|dj| (di == 0 && dj == 0) || v <= at(i + di, j + dj))
            });
            if !local_min {
                continue;
            }
            let r = nelder_mead(
                objective,
                [i as f64 * step, j as f64 * step],
                SimplexOptions {
                    initial_step: step,
                    x_tol: 1e-9,
                    f_tol: 1e-15,
                    max_evals: 4000,
                },
            );
            let p = PhaseVector::new(r.x[0], r.x[1]).wrapped();
            refined.push((p, r.value));
        }
    }

    let value = refined
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    let mut minimizers: Vec<PhaseVector> = Vec::new();
    refined.sort_by(|a, b| a.1.total_cmp(&b.1));
    for (p, v) in refined {
        if v > value * (1.0 + opts.value_tol) {
            continue;
        }
        if minimizers
            .iter()
            .all(|q| q.wrapped_distance(p) >= MINIMIZER_DISTINCTNESS)
        {
            minimizers.push(p);
        }
    }
    minimizers.sort_by(|a, b| a.lex_cmp(*b));
    MinTraceResult { value, minimizers }
}

/// Sanity helper used by tests and the CLI: `‖U†U − I‖_max`.
pub fn unitarity_defect(u: &Unitary3) -> f64 {
    let m = u.adjoint() * u - Unitary3::identity();
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
