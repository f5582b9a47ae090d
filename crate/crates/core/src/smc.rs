//! Sequential Monte Carlo posterior over phase pairs.
//!
//! The posterior is a weighted particle set `p(φ) ≈ Σ wᵢ δ(φ − φᵢ)`.
//! Bayes updates reweight particles in place; when the effective sample
//! size drops below a fraction of `M` the cloud is regenerated with the
//! Liu-West kernel, which keeps the first two moments of the cloud.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{Matrix2, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interferometer::Interferometer;
use crate::phase::{wrap_2pi, wrap_pi, PhaseVector};

/// Floor on the kernel standard deviation when the cloud covariance is
/// rank deficient, in radians.
pub const SIGMA_MIN: f64 = 1e-6;

const ZERO_EVIDENCE: f64 = 1e-300;
const LOG_SPACE_BELOW: f64 = 1e-280;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResampleConfig {
    /// Liu-West shrinkage parameter, `0 < a < 1`.
    #[serde(default = "default_a")]
    pub a: f64,
    /// Resample when `ESS < trigger_fraction · M`.
    #[serde(default = "default_trigger")]
    pub trigger_fraction: f64,
    /// Move every particle to the 2π-image closest to the circular mean
    /// before resampling. See [`ParticleCloud::recenter`].
    #[serde(default = "default_recenter")]
    pub recenter: bool,
    /// Disables resampling altogether (pure importance sampling).
    #[serde(default = "default_enabled")]
    pub enabled: bool,
}

fn default_a() -> f64 {
    0.98
}
fn default_trigger() -> f64 {
    0.5
}
fn default_recenter() -> bool {
    true
}
fn default_enabled() -> bool {
    true
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            a: default_a(),
            trigger_fraction: default_trigger(),
            recenter: default_recenter(),
            enabled: default_enabled(),
        }
    }
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::config(format!(
                "resample.a = {} must lie in the open interval (0, 1)",
                self.a
            )));
        }
        if !(self.trigger_fraction >= 0.0 && self.trigger_fraction <= 1.0) {
            return Err(Error::config(format!(
                "resample.trigger_fraction = {} must lie in [0, 1]",
                self.trigger_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    particles: Vec<PhaseVector>,
    weights: Vec<f64>,
}

/// Output of [`ParticleCloud::liu_west_resample`].
#[derive(Debug, Clone)]
pub struct Resampled {
    pub cloud: ParticleCloud,
    /// The cloud covariance was rank deficient and its eigenvalues were
    /// clamped to `SIGMA_MIN²`.
    pub degenerate_covariance: bool,
}

/// Grid dimensions `(g₁, g₂)` with `g₁·g₂ = m`, `g₁ ≥ g₂`, as square as possible.
pub fn grid_shape(m: usize) -> (usize, usize) {
    let mut g2 = (m as f64).sqrt().floor() as usize;
    while g2 > 1 && !m.is_multiple_of(g2) {
        g2 -= 1;
    }
    let g2 = g2.max(1);
    (m / g2, g2)
}

impl ParticleCloud {
    /// Cloud from explicit particles and (unnormalized) weights.
    pub fn new(particles: Vec<PhaseVector>, weights: Vec<f64>) -> Result<Self> {
        if particles.is_empty() || particles.len() != weights.len() {
            return Err(Error::config(format!(
                "particle cloud needs matching non-empty particle/weight lists (got {} and {})",
                particles.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("particle weights must be finite and >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::config("particle weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { particles, weights })
    }

    /// Equal-weight particles at the cell centres of a `g₁ × g₂` grid
    /// tiling `[0, 2π)²` (φ₁ is the slow index).
    pub fn uniform_grid(m: usize) -> Result<Self> {
        if m < 4 {
            return Err(Error::config(format!(
                "particles = {m} is too small; need at least 4"
            )));
        }
        let (g1, g2) = grid_shape(m);
        let (h1, h2) = (TAU / g1 as f64, TAU / g2 as f64);
        let particles = (0..g1)
            .flat_map(|i| {
                (0..g2).map(move |j| {
                    PhaseVector::new((i as f64 + 0.5) * h1, (j as f64 + 0.5) * h2)
                })
            })
            .collect();
        Ok(Self {
            particles,
            weights: vec![1.0 / m as f64; m],
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[PhaseVector] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Multiplies each weight by `likelihood(φᵢ)` and renormalizes.
    ///
    /// Falls back to log-space arithmetic when every product is tiny. The
    /// cloud is left untouched on error.
    pub fn reweight<F>(&mut self, outcome: usize, likelihood: F) -> Result<()>
    where
        F: Fn(PhaseVector) -> f64,
    {
        let mut updated: Vec<f64> = self
            .particles
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * likelihood(p).max(0.0))
            .collect();
        let max = updated.iter().copied().fold(0.0, f64::max);
        if !(max >= ZERO_EVIDENCE) {
            return Err(Error::ZeroEvidence {
                outcome,
                max_weight: max,
            });
        }
        if max < LOG_SPACE_BELOW {
            let logs: Vec<f64> = self
                .particles
                .iter()
                .zip(&self.weights)
                .map(|(&p, &w)| w.ln() + likelihood(p).max(0.0).ln())
                .collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (u, l) in updated.iter_mut().zip(logs) {
                *u = (l - top).exp();
            }
        }
        let total: f64 = updated.iter().sum();
        for u in &mut updated {
            *u /= total;
        }
        self.weights = updated;
        Ok(())
    }

    /// Bayes rule for one detected photon: `wᵢ ← wᵢ·p(d | φᵢ + Φ)`.
    pub fn bayes_update(
        &mut self,
        outcome: usize,
        controls: PhaseVector,
        dev: &Interferometer,
    ) -> Result<()> {
        if outcome > 2 {
            return Err(Error::InvalidOutcome(outcome));
        }
        self.reweight(outcome, |phi| dev.probability(outcome, phi + controls))
    }

    /// Weighted mean of the particle coordinates (no wrapping).
    pub fn posterior_mean(&self) -> PhaseVector {
        let (mut m1, mut m2) = (0.0, 0.0);
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            m1 += w * p.phi1;
            m2 += w * p.phi2;
        }
        PhaseVector::new(m1, m2)
    }

    /// Weighted covariance `Σ wᵢ (φᵢ − μ)(φᵢ − μ)ᵀ`.
    pub fn posterior_covariance(&self) -> Matrix2<f64> {
        let mu = self.posterior_mean();
        let (mut c11, mut c12, mut c22) = (0.0, 0.0, 0.0);
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            let d1 = p.phi1 - mu.phi1;
            let d2 = p.phi2 - mu.phi2;
            c11 += w * d1 * d1;
            c12 += w * d1 * d2;
            c22 += w * d2 * d2;
        }
        Matrix2::new(c11, c12, c12, c22)
    }

    /// `1 / Σ wᵢ²`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn needs_resample(&self, cfg: &ResampleConfig) -> bool {
        cfg.enabled && self.effective_sample_size() < cfg.trigger_fraction * self.len() as f64
    }

    /// Moves every coordinate to its 2π-image nearest the weighted circular
    /// mean of that coordinate.
    ///
    /// The likelihood is 2π-periodic, so this only changes which
    /// representative carries each particle. It matters for the moments:
    /// a posterior straddling the 0/2π seam otherwise looks bimodal with a
    /// mean near π.
    pub fn recenter(&mut self) {
        let (mut c1, mut s1, mut c2, mut s2) = (0.0, 0.0, 0.0, 0.0);
        for (p, &w) in self.particles.iter().zip(&self.weights) {
            c1 += w * p.phi1.cos();
            s1 += w * p.phi1.sin();
            c2 += w * p.phi2.cos();
            s2 += w * p.phi2.sin();
        }
        // a resultant this short carries no direction
        let centre1 = (c1.hypot(s1) > 1e-9).then(|| wrap_2pi(s1.atan2(c1)));
        let centre2 = (c2.hypot(s2) > 1e-9).then(|| wrap_2pi(s2.atan2(c2)));
        for p in &mut self.particles {
            if let Some(c) = centre1 {
                p.phi1 = c + wrap_pi(p.phi1 - c);
            }
            if let Some(c) = centre2 {
                p.phi2 = c + wrap_pi(p.phi2 - c);
            }
        }
    }

    /// Liu-West regeneration: `M` ancestors are drawn by systematic
    /// resampling, and each new particle is sampled from
    /// `N(a·φ_anc + (1 − a)·μ, (1 − a²)·Cov)`. Weights are reset to `1/M`.
    pub fn liu_west_resample<R: Rng + ?Sized>(&self, a: f64, rng: &mut R) -> Resampled {
        let m = self.len();
        let mu = self.posterior_mean();
        let cov = self.posterior_covariance();

        let eig = SymmetricEigen::new(cov);
        let floor = SIGMA_MIN * SIGMA_MIN;
        let degenerate = eig.eigenvalues.iter().any(|&l| !(l >= floor));
        let lambda = eig.eigenvalues.map(|l| if l >= floor { l } else { floor });
        // kernel square root: V·sqrt((1 − a²)Λ)
        let spread = (1.0 - a * a).sqrt();
        let root = eig.eigenvectors * Matrix2::from_diagonal(&lambda.map(|l| spread * l.sqrt()));

        let ancestors = systematic_indices(&self.weights, rng.random::<f64>());
        let particles = ancestors
            .into_iter()
            .map(|k| {
                let anc = self.particles[k];
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                PhaseVector::new(
                    a * anc.phi1 + (1.0 - a) * mu.phi1 + root[(0, 0)] * z1 + root[(0, 1)] * z2,
                    a * anc.phi2 + (1.0 - a) * mu.phi2 + root[(1, 0)] * z1 + root[(1, 1)] * z2,
                )
            })
            .collect();
        Resampled {
            cloud: ParticleCloud {
                particles,
                weights: vec![1.0 / m as f64; m],
            },
            degenerate_covariance: degenerate,
        }
    }

    /// Writes `phi1,phi2,w` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phi1", "phi2", "w"])?;
        for (p, wt) in self.particles.iter().zip(&self.weights) {
            w.write_record([p.phi1.to_string(), p.phi2.to_string(), wt.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Systematic resampling: one uniform offset `u ∈ [0,1)`, stride `1/M`.
pub fn systematic_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let m = weights.len();
    let mut out = Vec::with_capacity(m);
    let mut cumulative = weights[0];
    let mut k = 0;
    for i in 0..m {
        let target = (i as f64 + u) / m as f64;
        while cumulative < target && k + 1 < m {
            k += 1;
            cumulative += weights[k];
        }
        out.push(k);
    }
    out
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::interferometer::DeviceModel;

    #[test]
    fn grid_shapes() {
        assert_eq!(grid_shape(4), (2, 2));
        assert_eq!(grid_shape(2000), (50, 40));
        assert_eq!(grid_shape(1600), (40, 40));
        assert_eq!(grid_shape(7), (7, 1));
    }

    #[test]
    fn four_particle_grid() {
        let c = ParticleCloud::uniform_grid(4).unwrap();
        let h = PI / 2.0;
        let expect = [(h, h), (h, 3.0 * h), (3.0 * h, h), (3.0 * h, 3.0 * h)];
        for (p, (a, b)) in c.particles().iter().zip(expect) {
            assert!((p.phi1 - a).abs() < 1e-15 && (p.phi2 - b).abs() < 1e-15);
        }
        assert!(c.weights().iter().all(|&w| w == 0.25));
        assert!(ParticleCloud::uniform_grid(3).is_err());
    }

    #[test]
    fn fresh_grid_moments() {
        let c = ParticleCloud::uniform_grid(2000).unwrap();
        assert_eq!(c.len(), 2000);
        assert!((c.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mu = c.posterior_mean();
        assert!((mu.phi1 - PI).abs() < 1e-12 && (mu.phi2 - PI).abs() < 1e-12);

        // variance of g equally spaced cell centres: h²(g² − 1)/12
        let cov = c.posterior_covariance();
        for (axis, g) in [(0, 50.0), (1, 40.0)] {
            let h = TAU / g;
            let direct: f64 = (0..g as usize)
                .map(|i| ((i as f64 + 0.5) * h - PI).powi(2) / g)
                .sum();
            assert!((cov[(axis, axis)] - direct).abs() < 1e-12);
            assert!((direct - h * h * (g * g - 1.0) / 12.0).abs() < 1e-12);
        }
        assert!(cov[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn single_point_mass() {
        let c = ParticleCloud::new(
            vec![PhaseVector::new(1.0, 2.0), PhaseVector::new(4.0, 0.5)],
            vec![1.0, 0.0],
        )
        .unwrap();
        assert_eq!(c.posterior_mean(), PhaseVector::new(1.0, 2.0));
        assert_eq!(c.posterior_covariance(), Matrix2::zeros());
        assert_eq!(c.effective_sample_size(), 1.0);
    }

    #[test]
    fn ess_examples() {
        let c = ParticleCloud::uniform_grid(100).unwrap();
        assert!((c.effective_sample_size() - 100.0).abs() < 1e-9);
        let mut w = vec![0.0; 10];
        w[0] = 0.5;
        w[1] = 0.5;
        let c = ParticleCloud::new(vec![PhaseVector::ZERO; 10], w).unwrap();
        assert!((c.effective_sample_size() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn flat_likelihood_leaves_weights() {
        let dev = Interferometer::new(DeviceModel::ideal().with_noise(0.0, 0.0)).unwrap();
        let mut c = ParticleCloud::uniform_grid(64).unwrap();
        let before = c.clone();
        c.bayes_update(1, PhaseVector::new(0.3, 2.0), &dev).unwrap();
        for (a, b) in c.weights().iter().zip(before.weights()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_evidence_keeps_cloud() {
        let mut c = ParticleCloud::uniform_grid(16).unwrap();
        let before = c.clone();
        let err = c.reweight(0, |_| 0.0).unwrap_err();
        assert!(matches!(err, Error::ZeroEvidence { .. }));
        assert_eq!(c, before);
        assert!(matches!(
            c.bayes_update(3, PhaseVector::ZERO, &Interferometer::ideal()),
            Err(Error::InvalidOutcome(3))
        ));
    }

    #[test]
    fn tiny_likelihoods_use_log_space() {
        let mut c = ParticleCloud::uniform_grid(16).unwrap();
        c.reweight(0, |p| if p.phi1 < PI { 1e-290 } else { 2e-290 })
            .unwrap();
        let w = c.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[15] / w[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn systematic_resampling_counts() {
        let idx = systematic_indices(&[0.5, 0.0, 0.25, 0.25], 0.5);
        assert_eq!(idx, vec![0, 0, 2, 3]);
        let idx = systematic_indices(&[0.0, 0.0, 1.0, 0.0], 0.99);
        assert_eq!(idx, vec![2, 2, 2, 2]);
    }

    #[test]
    fn point_cloud_resample_stays_put() {
        let c = ParticleCloud::new(vec![PhaseVector::new(1.0, 2.0); 50], vec![1.0; 50]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = c.liu_west_resample(0.98, &mut rng);
        assert!(r.degenerate_covariance);
        for p in r.cloud.particles() {
            assert!((p.phi1 - 1.0).abs() < 10.0 * SIGMA_MIN);
            assert!((p.phi2 - 2.0).abs() < 10.0 * SIGMA_MIN);
        }
    }

    #[test]
    fn a_near_one_keeps_ancestors() {
        let c = ParticleCloud::uniform_grid(100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = c.liu_west_resample(1.0 - 1e-10, &mut rng);
        // uniform weights + systematic resampling keeps every ancestor once
        for (p, q) in r.cloud.particles().iter().zip(c.particles()) {
            assert!(p.wrapped_distance(*q) < 1e-3);
        }
        assert!(!r.degenerate_covariance);
    }

    #[test]
    fn recenter_merges_seam_modes() {
        let mut c = ParticleCloud::new(
            vec![PhaseVector::new(0.05, 3.0), PhaseVector::new(TAU - 0.05, 3.0)],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!((c.posterior_mean().phi1 - PI).abs() < 1e-12);
        c.recenter();
        assert!(wrap_pi(c.posterior_mean().phi1).abs() < 1e-12);
        assert!(c.posterior_covariance()[(0, 0)] < 0.01);
        assert!((c.posterior_mean().phi2 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn csv_snapshot_has_header_and_rows() {
        let c = ParticleCloud::uniform_grid(4).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "phi1,phi2,w");
        assert_eq!(lines.len(), 5);
    }
}
