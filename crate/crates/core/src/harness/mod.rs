//! Simulated estimation runs and Monte Carlo campaigns.

mod campaign;
mod convergence;

use rand::Rng;
use serde::Serialize;

pub use campaign::{pairwise_sum, CampaignResult, CrbReference, RunFailure, StepAggregate};
pub use convergence::{fit_convergence_time, ConvergenceFit, DEFAULT_FIT_START};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::interferometer::{min_trace_inverse_fisher, Interferometer, MinSearchOptions};
use crate::phase::{wrap_pi, PhaseVector};
use crate::power_model::controls_for_target;
use crate::rng::probe_rng;
use crate::smc::ParticleCloud;
use crate::strategies::{Controller, StrategyKind};

/// Samples a detector outcome for total phase `true_phi + controls`.
pub fn simulate_outcome<R: Rng + ?Sized>(
    dev: &Interferometer,
    true_phi: PhaseVector,
    controls: PhaseVector,
    rng: &mut R,
) -> usize {
    sample_outcome(&dev.outcome_probabilities(true_phi + controls), rng)
}

pub(crate) fn sample_outcome<R: Rng + ?Sized>(p: &[f64; 3], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * (p[0] + p[1] + p[2]);
    if u < p[0] {
        0
    } else if u < p[0] + p[1] {
        1
    } else {
        2
    }
}

/// `Σᵢ (φᵢ − φ̂ᵢ)²`, with each difference optionally wrapped into `[−π, π)`.
pub fn quadratic_loss(true_phi: PhaseVector, estimate: PhaseVector, wrapped: bool) -> f64 {
    let [e1, e2] = errors(true_phi, estimate, wrapped);
    e1 * e1 + e2 * e2
}

fn errors(true_phi: PhaseVector, estimate: PhaseVector, wrapped: bool) -> [f64; 2] {
    let d = true_phi - estimate;
    if wrapped {
        [wrap_pi(d.phi1), wrap_pi(d.phi2)]
    } else {
        [d.phi1, d.phi2]
    }
}

/// Identifies one run inside a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunIndex {
    pub pair: usize,
    pub repetition: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub controls: PhaseVector,
    pub outcome: usize,
    pub mean: PhaseVector,
    /// `[c11, c12, c22]`
    pub covariance: [f64; 3],
    /// `φ − φ̂` per parameter.
    pub error: [f64; 2],
    /// Same, wrapped into `[−π, π)`.
    pub error_wrapped: [f64; 2],
    pub resampled: bool,
}

impl StepRecord {
    pub fn covariance_trace(&self) -> f64 {
        self.covariance[0] + self.covariance[2]
    }

    pub fn loss(&self) -> f64 {
        self.error[0] * self.error[0] + self.error[1] * self.error[1]
    }

    pub fn loss_wrapped(&self) -> f64 {
        self.error_wrapped[0].powi(2) + self.error_wrapped[1].powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationTrace {
    pub run: RunIndex,
    pub true_phi: PhaseVector,
    pub records: Vec<StepRecord>,
    pub estimate: PhaseVector,
}

impl EstimationTrace {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "N", "control1", "control2", "outcome", "mean1", "mean2", "cov11", "cov12", "cov22",
            "loss", "loss_wrapped", "resampled",
        ])?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.controls.phi1.to_string(),
                r.controls.phi2.to_string(),
                r.outcome.to_string(),
                r.mean.phi1.to_string(),
                r.mean.phi2.to_string(),
                r.covariance[0].to_string(),
                r.covariance[1].to_string(),
                r.covariance[2].to_string(),
                r.loss().to_string(),
                r.loss_wrapped().to_string(),
                (r.resampled as u8).to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// A validated configuration with the device, controller and CRB reference
/// resolved once, shared by all runs.
#[derive(Debug, Clone)]
pub struct Experiment {
    cfg: ExperimentConfig,
    device: Interferometer,
    controller: Controller,
    crb: CrbReference,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let device = Interferometer::new(cfg.device)?;
        let landscape = min_trace_inverse_fisher(&device, MinSearchOptions::default());
        let working_point = landscape.minimizers.first().copied();

        let controller = match (cfg.policy.kind, working_point) {
            (StrategyKind::Asymptotic | StrategyKind::Hybrid, None) => {
                return Err(crate::error::Error::config(
                    "device has no point with invertible Fisher information; asymptotic strategies are undefined",
                ))
            }
            (_, wp) => Controller::with_working_point(cfg.policy, &device, wp.unwrap_or_default()),
        };

        let crb = match (cfg.crb_trace, working_point) {
            (Some(trace), _) => CrbReference {
                trace,
                diagonal: [trace / 2.0; 2],
                off_diagonal: None,
                working_point,
            },
            (None, Some(wp)) => {
                let inv = device.fisher_matrix(wp).inverse();
                CrbReference {
                    trace: landscape.value,
                    diagonal: inv.map_or([f64::NAN; 2], |m| [m[(0, 0)], m[(1, 1)]]),
                    off_diagonal: inv.map(|m| m[(0, 1)]),
                    working_point,
                }
            }
            (None, None) => CrbReference {
                trace: f64::INFINITY,
                diagonal: [f64::INFINITY; 2],
                off_diagonal: None,
                working_point: None,
            },
        };

        Ok(Self {
            cfg,
            device,
            controller,
            crb,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn device(&self) -> &Interferometer {
        &self.device
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn crb(&self) -> &CrbReference {
        &self.crb
    }

    /// Maps requested controls to the controls the hardware can realise.
    fn realise(&self, controls: PhaseVector) -> PhaseVector {
        if !self.cfg.hardware_mode {
            return controls;
        }
        let p = &self.cfg.power;
        controls_for_target(
            &p.coefficients,
            &p.resistors,
            controls,
            p.control_indices(),
            p.quantum,
        )
        .achieved
        .wrapped()
    }

    /// One adaptive estimation of `true_phi` with `N` probes, calling
    /// `observe` with the cloud after every probe.
    pub fn run_observed<F>(&self, true_phi: PhaseVector, run: RunIndex, mut observe: F) -> Result<EstimationTrace>
    where
        F: FnMut(usize, &ParticleCloud),
    {
        let cfg = &self.cfg;
        let mut cloud = ParticleCloud::uniform_grid(cfg.particles)?;
        let mut records = Vec::with_capacity(cfg.probes);
        for step in 1..=cfg.probes {
            let mut rng = probe_rng(cfg.seed, run.pair, run.repetition, step);
            let requested = self.controller.select(step, &cloud, &mut rng);
            let controls = self.realise(requested);
            let outcome = simulate_outcome(&self.device, true_phi, controls, &mut rng);
            cloud.bayes_update(outcome, controls, &self.device)?;

            let resampled = cloud.needs_resample(&cfg.resample);
            if resampled {
                if cfg.resample.recenter {
                    cloud.recenter();
                }
                cloud = cloud.liu_west_resample(cfg.resample.a, &mut rng).cloud;
            }
            observe(step, &cloud);

            // particles may sit on any 2π image; report the estimate in [0, 2π)
            let mean = cloud.posterior_mean().wrapped();
            let cov = cloud.posterior_covariance();
            records.push(StepRecord {
                step,
                controls,
                outcome,
                mean,
                covariance: [cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]],
                error: errors(true_phi, mean, false),
                error_wrapped: errors(true_phi, mean, true),
                resampled,
            });
        }
        let estimate = records.last().map(|r| r.mean).unwrap_or_default();
        Ok(EstimationTrace {
            run,
            true_phi,
            records,
            estimate,
        })
    }

    pub fn run_estimation(&self, true_phi: PhaseVector, run: RunIndex) -> Result<EstimationTrace> {
        self.run_observed(true_phi, run, |_, _| {})
    }
}
