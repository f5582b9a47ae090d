//! Control-phase selection.
//!
//! * `asymptotic` steers the estimated total phase onto a fixed minimizer
//!   `δφ*` of `Tr(F⁻¹)`.
//! * `hybrid` uses random controls for the first `K` probes, then behaves
//!   like `asymptotic`.
//! * `optimized` minimizes the expected posterior covariance trace after
//!   the next probe.
//! * `random` draws uniform controls every probe.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interferometer::{
    min_trace_inverse_fisher, Interferometer, LikelihoodExpansion, MinSearchOptions,
};
use crate::optimize::{nelder_mead, SimplexOptions};
use crate::phase::{wrap_2pi, PhaseVector};
use crate::smc::ParticleCloud;

/// Predictive probabilities below this contribute nothing to the utility.
pub const PREDICTIVE_FLOOR: f64 = 1e-12;

const REFINE_MAX_EVALS: usize = 50;
const REFINE_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Asymptotic,
    Hybrid,
    #[default]
    Optimized,
    Random,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Asymptotic,
        StrategyKind::Hybrid,
        StrategyKind::Optimized,
        StrategyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Asymptotic => "asymptotic",
            StrategyKind::Hybrid => "hybrid",
            StrategyKind::Optimized => "optimized",
            StrategyKind::Random => "random",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "strategy = \"{s}\" is not one of asymptotic, hybrid, optimized, random"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPolicy {
    #[serde(rename = "strategy", default)]
    pub kind: StrategyKind,
    /// Number of random probes before switching to the asymptotic rule
    /// (hybrid only).
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    /// Lattice points per axis for the utility search (optimized only).
    #[serde(default = "default_utility_grid")]
    pub utility_grid: usize,
    /// Polish the best lattice point with a simplex search.
    #[serde(default = "default_refine")]
    pub refine: bool,
}

fn default_k() -> usize {
    20
}
fn default_utility_grid() -> usize {
    20
}
fn default_refine() -> bool {
    true
}

impl Default for ControlPolicy {
    fn default() -> Self {
        Self::new(StrategyKind::Optimized)
    }
}

impl ControlPolicy {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            k: default_k(),
            utility_grid: default_utility_grid(),
            refine: default_refine(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.utility_grid < 2 {
            return Err(Error::config(format!(
                "policy.utility_grid = {} must be at least 2",
                self.utility_grid
            )));
        }
        Ok(())
    }
}

/// Particle sums from which the post-outcome covariance trace of every
/// hypothetical `(Φ, d)` follows in constant time.
///
/// `sums[b][m] = Σ wᵢ gᵦ(φᵢ) mₘ(φᵢ)` with basis
/// `g ∈ {1, e^{iφ₁}, e^{iφ₂}, e^{i(φ₁−φ₂)}}` and moments
/// `m ∈ {1, x₁, x₂, x₁² + x₂²}`, `x = φ − μ`.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorSums {
    sums: [[Complex64; 4]; 4],
}

impl PosteriorSums {
    pub fn new(cloud: &ParticleCloud) -> Self {
        let mu = cloud.posterior_mean();
        let zero = Complex64::new(0.0, 0.0);
        let mut sums = [[zero; 4]; 4];
        for (p, &w) in cloud.particles().iter().zip(cloud.weights()) {
            let x1 = p.phi1 - mu.phi1;
            let x2 = p.phi2 - mu.phi2;
            let moments = [w, w * x1, w * x2, w * (x1 * x1 + x2 * x2)];
            let e1 = Complex64::from_polar(1.0, p.phi1);
            let e2 = Complex64::from_polar(1.0, p.phi2);
            let basis = [Complex64::new(1.0, 0.0), e1, e2, e1 * e2.conj()];
            for (row, g) in sums.iter_mut().zip(basis) {
                for (s, m) in row.iter_mut().zip(moments) {
                    *s += g * m;
                }
            }
        }
        Self { sums }
    }

    /// Expected posterior covariance trace after one probe at `controls`.
    pub fn utility(&self, lik: &LikelihoodExpansion, controls: PhaseVector) -> f64 {
        let c1 = Complex64::from_polar(1.0, controls.phi1);
        let c2 = Complex64::from_polar(1.0, controls.phi2);
        let c12 = c1 * c2.conj();
        let mut total = 0.0;
        for d in 0..3 {
            let k0 = lik.constant[d];
            let k1 = lik.first[d] * c1;
            let k2 = lik.second[d] * c2;
            let k3 = lik.cross[d] * c12;
            let s = |m: usize| {
                k0 * self.sums[0][m].re
                    + (k1 * self.sums[1][m]).re
                    + (k2 * self.sums[2][m]).re
                    + (k3 * self.sums[3][m]).re
            };
            let z = s(0);
            if z < PREDICTIVE_FLOOR {
                continue;
            }
            let (s1, s2) = (s(1), s(2));
            // p(d)·Tr Cov_d = Q − |S|²/Z
            total += s(3) - (s1 * s1 + s2 * s2) / z;
        }
        total
    }
}

/// `U(Φ) = Σ_d p(d|Φ) · Tr[Cov(φ | d, {w})]`.
pub fn utility(controls: PhaseVector, cloud: &ParticleCloud, dev: &Interferometer) -> f64 {
    PosteriorSums::new(cloud).utility(&dev.expansion(), controls)
}

/// A control policy bound to a device.
#[derive(Debug, Clone)]
pub struct Controller {
    policy: ControlPolicy,
    expansion: LikelihoodExpansion,
    working_point: PhaseVector,
}

impl Controller {
    /// Resolves the working point `δφ*` (lexicographically first minimizer of
    /// `Tr(F⁻¹)`) when the policy needs it.
    pub fn new(policy: ControlPolicy, dev: &Interferometer) -> Result<Self> {
        policy.validate()?;
        let working_point = match policy.kind {
            StrategyKind::Asymptotic | StrategyKind::Hybrid => {
                let r = min_trace_inverse_fisher(dev, MinSearchOptions::default());
                *r.minimizers.first().ok_or_else(|| {
                    Error::config("device has no point with invertible Fisher information")
                })?
            }
            _ => PhaseVector::ZERO,
        };
        Ok(Self::with_working_point(policy, dev, working_point))
    }

    pub fn with_working_point(
        policy: ControlPolicy,
        dev: &Interferometer,
        working_point: PhaseVector,
    ) -> Self {
        Self {
            policy,
            expansion: dev.expansion(),
            working_point,
        }
    }

    pub fn policy(&self) -> &ControlPolicy {
        &self.policy
    }

    pub fn working_point(&self) -> PhaseVector {
        self.working_point
    }

    /// Controls for probe number `step` (1-based). The result lies in `[0, 2π)²`.
    pub fn select<R: Rng + ?Sized>(
        &self,
        step: usize,
        cloud: &ParticleCloud,
        rng: &mut R,
    ) -> PhaseVector {
        match self.policy.kind {
            StrategyKind::Asymptotic => self.asymptotic(cloud),
            StrategyKind::Hybrid if step > self.policy.k => self.asymptotic(cloud),
            StrategyKind::Hybrid | StrategyKind::Random => random_controls(rng),
            StrategyKind::Optimized => self.optimized(cloud),
        }
    }

    fn asymptotic(&self, cloud: &ParticleCloud) -> PhaseVector {
        (self.working_point - cloud.posterior_mean()).wrapped()
    }

    fn optimized(&self, cloud: &ParticleCloud) -> PhaseVector {
        let sums = PosteriorSums::new(cloud);
        let objective = |phi: PhaseVector| sums.utility(&self.expansion, phi);
        let (best, best_value) = lattice_argmin(self.policy.utility_grid, objective);
        if !self.policy.refine {
            return best;
        }
        let g = self.policy.utility_grid as f64;
        let refined = nelder_mead(
            |x: &[f64; 2]| objective(PhaseVector::new(x[0], x[1])),
            best.to_array(),
            SimplexOptions {
                initial_step: 0.5 * TAU / g,
                x_tol: REFINE_TOL,
                f_tol: 0.0,
                max_evals: REFINE_MAX_EVALS,
            },
        );
        if refined.value < best_value {
            PhaseVector::from_array(refined.x).wrapped()
        } else {
            best
        }
    }
}

/// Minimum of `f` over the `g × g` lattice `{(2πi/g, 2πj/g)}`, scanned in
/// row-major order; ties keep the first candidate.
pub fn lattice_argmin<F>(g: usize, mut f: F) -> (PhaseVector, f64)
where
    F: FnMut(PhaseVector) -> f64,
{
    let step = TAU / g as f64;
    let mut best = (PhaseVector::ZERO, f64::INFINITY);
    for i in 0..g {
        for j in 0..g {
            let phi = PhaseVector::new(i as f64 * step, j as f64 * step);
            let v = f(phi);
            if v < best.1 {
                best = (phi, v);
            }
        }
    }
    best
}

pub fn random_controls<R: Rng + ?Sized>(rng: &mut R) -> PhaseVector {
    PhaseVector::new(
        wrap_2pi(rng.random::<f64>() * TAU),
        wrap_2pi(rng.random::<f64>() * TAU),
    )
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::interferometer::DeviceModel;

    /// Builds the three hypothetical posteriors explicitly.
    fn brute_force_utility(controls: PhaseVector, cloud: &ParticleCloud, dev: &Interferometer) -> f64 {
        let mut total = 0.0;
        for d in 0..3 {
            let raw: Vec<f64> = cloud
                .particles()
                .iter()
                .zip(cloud.weights())
                .map(|(p, w)| w * dev.outcome_probabilities(*p + controls)[d])
                .collect();
            let pd: f64 = raw.iter().sum();
            if pd < PREDICTIVE_FLOOR {
                continue;
            }
            let post = ParticleCloud::new(cloud.particles().to_vec(), raw).unwrap();
            total += pd * post.posterior_covariance().trace();
        }
        total
    }

    fn random_cloud(rng: &mut ChaCha8Rng, m: usize) -> ParticleCloud {
        let centre = PhaseVector::new(rng.random::<f64>() * TAU, rng.random::<f64>() * TAU);
        let spread = rng.random::<f64>() * 2.0;
        let particles = (0..m)
            .map(|_| {
                PhaseVector::new(
                    centre.phi1 + spread * (rng.random::<f64>() - 0.5),
                    centre.phi2 + spread * (rng.random::<f64>() - 0.5),
                )
            })
            .collect();
        let weights = (0..m).map(|_| rng.random::<f64>()).collect();
        ParticleCloud::new(particles, weights).unwrap()
    }

    #[test]
    fn utility_matches_three_branch_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dev = Interferometer::new(DeviceModel::ideal().with_noise(0.95, 0.01)).unwrap();
        for _ in 0..50 {
            let cloud = random_cloud(&mut rng, 200);
            let phi = random_controls(&mut rng);
            let fast = utility(phi, &cloud, &dev);
            let slow = brute_force_utility(phi, &cloud, &dev);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn flat_likelihood_gives_prior_trace() {
        let dev = Interferometer::new(DeviceModel::ideal().with_noise(0.0, 0.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cloud = random_cloud(&mut rng, 300);
        let tr = cloud.posterior_covariance().trace();
        for k in 0..10 {
            let u = utility(PhaseVector::new(0.6 * k as f64, 1.3 * k as f64), &cloud, &dev);
            assert!((u - tr).abs() < 1e-12);
        }
    }

    #[test]
    fn asymptotic_at_working_point_is_zero_control() {
        let dev = Interferometer::ideal();
        let wp = PhaseVector::new(0.25, 2.35);
        let ctl = Controller::with_working_point(ControlPolicy::new(StrategyKind::Asymptotic), &dev, wp);
        let cloud = ParticleCloud::new(vec![wp; 3], vec![1.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let phi = ctl.select(1, &cloud, &mut rng);
        assert!(phi.wrapped_distance(PhaseVector::ZERO) < 1e-15);
    }

    #[test]
    fn hybrid_switches_after_k() {
        let dev = Interferometer::ideal();
        let wp = PhaseVector::new(0.25, 2.35);
        let mut policy = ControlPolicy::new(StrategyKind::Hybrid);
        policy.k = 3;
        let ctl = Controller::with_working_point(policy, &dev, wp);
        let cloud = ParticleCloud::uniform_grid(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let expected = (wp - cloud.posterior_mean()).wrapped();
        for step in 1..=3 {
            assert_ne!(ctl.select(step, &cloud, &mut rng), expected);
        }
        assert_eq!(ctl.select(4, &cloud, &mut rng), expected);
    }

    #[test]
    fn coarse_lattice_matches_exhaustive_search() {
        let dev = Interferometer::ideal();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cloud = random_cloud(&mut rng, 150);
        let policy = ControlPolicy {
            kind: StrategyKind::Optimized,
            k: 0,
            utility_grid: 3,
            refine: false,
        };
        let ctl = Controller::with_working_point(policy, &dev, PhaseVector::ZERO);
        let chosen = ctl.select(5, &cloud, &mut rng);
        let mut best = (PhaseVector::ZERO, f64::INFINITY);
        for i in 0..3 {
            for j in 0..3 {
                let phi = PhaseVector::new(i as f64 * TAU / 3.0, j as f64 * TAU / 3.0);
                let u = brute_force_utility(phi, &cloud, &dev);
                if u < best.1 {
                    best = (phi, u);
                }
            }
        }
        assert_eq!(chosen, best.0);
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        let err = "greedy".parse::<StrategyKind>().unwrap_err().to_string();
        assert!(err.contains("greedy"));
    }
}
