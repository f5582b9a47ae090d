use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{fit_convergence_time, ConvergenceFit, EstimationTrace, Experiment, RunIndex, DEFAULT_FIT_START};
use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::phase::PhaseVector;
use crate::rng::phase_pair_rng;

/// Bound used for the CRB curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrbReference {
    /// `Tr(F⁻¹)`; the curve is this over N.
    pub trace: f64,
    /// `[(F⁻¹)₁₁, (F⁻¹)₂₂]`.
    pub diagonal: [f64; 2],
    pub off_diagonal: Option<f64>,
    /// Working point `δφ*` when the bound comes from the device.
    pub working_point: Option<PhaseVector>,
}

/// Averages over all successful runs at one probe count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepAggregate {
    pub n: usize,
    pub loss: f64,
    pub loss1: f64,
    pub loss2: f64,
    /// Mean of `e₁·e₂`.
    pub cross: f64,
    pub loss_wrapped: f64,
    pub loss1_wrapped: f64,
    pub loss2_wrapped: f64,
    pub cross_wrapped: f64,
    pub covariance_trace: f64,
    pub crb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub run: RunIndex,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignResult {
    pub config: ExperimentConfig,
    pub phase_pairs: Vec<PhaseVector>,
    pub crb: CrbReference,
    pub steps: Vec<StepAggregate>,
    pub runs: usize,
    pub failures: Vec<RunFailure>,
    /// Fit of `a + b·exp(−N/τ)` to the wrapped loss minus the CRB.
    pub fit: Option<ConvergenceFit>,
    pub fit_error: Option<String>,
    /// Fit of the unwrapped loss minus the CRB.
    pub fit_unwrapped: Option<ConvergenceFit>,
    #[serde(skip)]
    pub traces: Vec<EstimationTrace>,
}

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

impl Experiment {
    /// True phase pairs of the campaign, uniform on `[0, 2π)²` unless listed.
    pub fn phase_pairs(&self) -> Vec<PhaseVector> {
        let cfg = self.config();
        if let Some(v) = cfg.explicit_pairs() {
            return v;
        }
        let count = match cfg.phase_pairs {
            crate::config::PhasePairs::Sampled(n) => n,
            crate::config::PhasePairs::Explicit(_) => unreachable!(),
        };
        let mut rng = phase_pair_rng(cfg.seed);
        (0..count)
            .map(|_| PhaseVector::new(rng.random::<f64>() * TAU, rng.random::<f64>() * TAU).wrapped())
            .collect()
    }

    /// Runs every (pair, repetition) combination on the current rayon pool
    /// and aggregates the loss curves. Failed runs are reported and
    /// excluded from the averages.
    pub fn run_campaign(&self) -> Result<CampaignResult> {
        let pairs = self.phase_pairs();
        let reps = self.config().repetitions;
        let jobs: Vec<(RunIndex, PhaseVector)> = pairs
            .iter()
            .enumerate()
            .flat_map(|(p, &phi)| {
                (0..reps).map(move |r| {
                    (
                        RunIndex {
                            pair: p,
                            repetition: r,
                        },
                        phi,
                    )
                })
            })
            .collect();

        let outcomes: Vec<_> = jobs
            .par_iter()
            .map(|&(run, phi)| (run, self.run_estimation(phi, run)))
            .collect();

        let mut traces = Vec::with_capacity(outcomes.len());
        let mut failures = Vec::new();
        for (run, res) in outcomes {
            match res {
                Ok(t) => traces.push(t),
                Err(e) => failures.push(RunFailure {
                    run,
                    message: e.to_string(),
                }),
            }
        }

        let steps = aggregate(&traces, self.config().probes, self.crb().trace);
        let wrapped: Vec<f64> = steps.iter().map(|s| s.loss_wrapped).collect();
        let unwrapped: Vec<f64> = steps.iter().map(|s| s.loss).collect();
        let crb: Vec<f64> = steps.iter().map(|s| s.crb).collect();
        let (fit, fit_error) = match fit_convergence_time(&wrapped, &crb, DEFAULT_FIT_START) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let fit_unwrapped = fit_convergence_time(&unwrapped, &crb, DEFAULT_FIT_START).ok();

        Ok(CampaignResult {
            config: self.config().clone(),
            phase_pairs: pairs,
            crb: *self.crb(),
            steps,
            runs: jobs.len(),
            failures,
            fit,
            fit_error,
            fit_unwrapped,
            traces,
        })
    }
}

/// Per-step means over `traces` (in the given order).
pub(super) fn aggregate(traces: &[EstimationTrace], probes: usize, crb_trace: f64) -> Vec<StepAggregate> {
    let count = traces.len() as f64;
    let mut column = vec![0.0; traces.len()];
    let mut mean_of = |f: &dyn Fn(&super::StepRecord) -> f64, k: usize| {
        if traces.is_empty() {
            return f64::NAN;
        }
        for (slot, t) in column.iter_mut().zip(traces) {
            *slot = f(&t.records[k]);
        }
        pairwise_sum(&column) / count
    };
    (0..probes)
        .map(|k| StepAggregate {
            n: k + 1,
            loss: mean_of(&|r| r.loss(), k),
            loss1: mean_of(&|r| r.error[0] * r.error[0], k),
            loss2: mean_of(&|r| r.error[1] * r.error[1], k),
            cross: mean_of(&|r| r.error[0] * r.error[1], k),
            loss_wrapped: mean_of(&|r| r.loss_wrapped(), k),
            loss1_wrapped: mean_of(&|r| r.error_wrapped[0].powi(2), k),
            loss2_wrapped: mean_of(&|r| r.error_wrapped[1].powi(2), k),
            cross_wrapped: mean_of(&|r| r.error_wrapped[0] * r.error_wrapped[1], k),
            covariance_trace: mean_of(&|r| r.covariance_trace(), k),
            crb: crb_trace / (k + 1) as f64,
        })
        .collect()
}

impl CampaignResult {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "N", "L", "L1", "L2", "cross", "L_wrapped", "L1_wrapped", "L2_wrapped",
            "cross_wrapped", "cov_trace", "crb",
        ])?;
        for s in &self.steps {
            w.write_record([
                s.n.to_string(),
                s.loss.to_string(),
                s.loss1.to_string(),
                s.loss2.to_string(),
                s.cross.to_string(),
                s.loss_wrapped.to_string(),
                s.loss1_wrapped.to_string(),
                s.loss2_wrapped.to_string(),
                s.cross_wrapped.to_string(),
                s.covariance_trace.to_string(),
                s.crb.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aggregate at probe count `n` (1-based).
    pub fn at(&self, n: usize) -> &StepAggregate {
        &self.steps[n - 1]
    }
}
