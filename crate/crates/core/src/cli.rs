//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::harness::{Experiment, RunIndex};
use crate::interferometer::{min_trace_inverse_fisher, Interferometer, MinSearchOptions};
use crate::output::{ensure_dir, write_with, OUT_DIR_ENV};
use crate::phase::PhaseVector;
use crate::smc::ParticleCloud;

#[derive(Debug, Parser)]
#[command(
    name = "multiphase",
    version,
    about = "Adaptive Bayesian two-phase estimation in a three-mode interferometer"
)]
struct Cli {
    /// Worker threads for campaigns (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo campaign: loss and covariance curves versus N with the CRB.
    Campaign {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write one CSV per run under traces/.
        #[arg(long)]
        traces: bool,
    },
    /// A single estimation run at the given true phases.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        truth: TruthArgs,
    },
    /// Fisher information and Tr(F⁻¹) on a phase grid.
    FisherScan {
        #[command(flatten)]
        common: CommonArgs,
        /// Grid points per axis.
        #[arg(long, default_value_t = 90)]
        grid: usize,
    },
    /// Global minimum of Tr(F⁻¹) and all its minimizers.
    MinCrb {
        #[command(flatten)]
        common: CommonArgs,
        /// Grid points per axis before local refinement.
        #[arg(long, default_value_t = 180)]
        grid: usize,
    },
    /// Particle clouds (phi1, phi2, w) at selected probe counts of one run.
    PosteriorSnapshot {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        truth: TruthArgs,
        /// Probe counts to export; 0 is the prior.
        #[arg(long, value_delimiter = ',', default_value = "0,1,10,50,100")]
        steps: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DevicePreset {
    /// Two Fourier tritters, no detector noise.
    Ideal,
    /// Planar couplers with φ_T = 1.49 (A) and 0.72 (B).
    Reck,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. --set policy.K=10 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory [env: MULTIPHASE_OUT_DIR, default: current directory].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed [config key: seed, default 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Device preset, replacing the [device] table.
    #[arg(long, value_enum)]
    device: Option<DevicePreset>,
    /// Control strategy [config key: policy.strategy, default optimized].
    #[arg(long, value_parser = ["asymptotic", "hybrid", "optimized", "random"])]
    strategy: Option<String>,
    /// Probes per run N [config key: probes, default 100].
    #[arg(long)]
    probes: Option<usize>,
    /// Runs per phase pair [config key: repetitions, default 50].
    #[arg(long)]
    repetitions: Option<usize>,
    /// Number of uniformly drawn phase pairs [config key: phase_pairs, default 20].
    #[arg(long)]
    phase_pairs: Option<usize>,
    /// Particles M [config key: particles, default 2000].
    #[arg(long)]
    particles: Option<usize>,
}

#[derive(Debug, Args)]
struct TruthArgs {
    /// True φ₁ (default: first configured or sampled pair).
    #[arg(long, allow_negative_numbers = true)]
    phi1: Option<f64>,
    /// True φ₂.
    #[arg(long, allow_negative_numbers = true)]
    phi2: Option<f64>,
}

impl CommonArgs {
    fn overrides(&self) -> Vec<String> {
        let mut v = self.overrides.clone();
        if let Some(s) = self.seed {
            v.push(format!("seed={s}"));
        }
        if let Some(s) = &self.strategy {
            v.push(format!("policy.strategy=\"{s}\""));
        }
        if let Some(n) = self.probes {
            v.push(format!("probes={n}"));
        }
        if let Some(n) = self.repetitions {
            v.push(format!("repetitions={n}"));
        }
        if let Some(n) = self.phase_pairs {
            v.push(format!("phase_pairs={n}"));
        }
        if let Some(n) = self.particles {
            v.push(format!("particles={n}"));
        }
        v
    }

    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref(), &self.overrides())?;
        if let Some(preset) = self.device {
            cfg.device = match preset {
                DevicePreset::Ideal => crate::interferometer::DeviceModel::ideal(),
                DevicePreset::Reck => crate::interferometer::DeviceModel {
                    tritter_a: crate::interferometer::TritterConfig::reck_planar(1.49),
                    tritter_b: crate::interferometer::TritterConfig::reck_planar(0.72),
                    ..crate::interferometer::DeviceModel::ideal()
                },
            };
            cfg.validate()?;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

const SUBCOMMANDS: [&str; 5] = ["campaign", "run", "fisher-scan", "min-crb", "posterior-snapshot"];

fn help_footer() -> String {
    format!(
        "Configuration keys and their defaults (TOML; flags override file keys, --set overrides both):\n\n{}\nOptional: crb_trace = <Tr(F^-1)> replaces the device bound in CRB curves (4.2 for the experimental working point).\n\nExit codes: 0 success, 1 configuration error, 2 runtime failure.",
        ExperimentConfig::default().to_toml_string()
    )
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let footer = help_footer();
    let mut cmd = Cli::command().after_long_help(footer.clone());
    for name in SUBCOMMANDS {
        cmd = cmd.mut_subcommand(name, |c| c.after_long_help(footer.clone()));
    }
    let cli = match cmd
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };

    let result = match cli.threads {
        Some(0) => Err(Error::config("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("--threads {n}: {e}")))
            .and_then(|pool| pool.install(|| execute(cli.command))),
        None => execute(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                1
            } else {
                2
            }
        }
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value)?;
    s.push(b'\n');
    Ok(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = json_bytes(value)?;
    write_with(path, |buf| {
        buf.extend_from_slice(&bytes);
        Ok(())
    })
}

fn truth_for(exp: &Experiment, truth: &TruthArgs) -> Result<PhaseVector> {
    match (truth.phi1, truth.phi2) {
        (Some(a), Some(b)) if a.is_finite() && b.is_finite() => Ok(PhaseVector::new(a, b)),
        (None, None) => Ok(exp.phase_pairs()[0]),
        _ => Err(Error::config("--phi1 and --phi2 must be given together and be finite")),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Campaign { common, traces } => {
            let cfg = common.load()?;
            let out = common.out_dir();
            ensure_dir(&out)?;
            let exp = Experiment::new(cfg)?;
            let result = exp.run_campaign()?;
            write_with(&out.join("campaign.csv"), |b| result.write_csv(b))?;
            write_json(&out.join("campaign.json"), &result)?;
            if traces {
                for t in &result.traces {
                    let name = format!("run_p{:03}_r{:03}.csv", t.run.pair, t.run.repetition);
                    write_with(&out.join("traces").join(name), |b| t.write_csv(b))?;
                }
            }
            let last = result.steps.last().expect("probes >= 1");
            println!(
                "{} runs ({} failed); L({}) = {:.6} (wrapped {:.6}), CRB = {:.6}",
                result.runs,
                result.failures.len(),
                last.n,
                last.loss,
                last.loss_wrapped,
                last.crb
            );
            match &result.fit {
                Some(f) => println!("convergence fit: a = {:.6}, b = {:.6}, tau = {:.4}", f.a, f.b, f.tau),
                None => println!(
                    "convergence fit failed: {}",
                    result.fit_error.as_deref().unwrap_or("unknown")
                ),
            }
            Ok(())
        }
        Command::Run { common, truth } => {
            let cfg = common.load()?;
            let out = common.out_dir();
            let exp = Experiment::new(cfg)?;
            let phi = truth_for(&exp, &truth)?;
            let trace = exp.run_estimation(phi, RunIndex { pair: 0, repetition: 0 })?;
            write_with(&out.join("trace.csv"), |b| trace.write_csv(b))?;
            let last = trace.records.last().expect("probes >= 1");
            write_json(
                &out.join("run.json"),
                &json!({
                    "config": exp.config(),
                    "true_phi": phi,
                    "estimate": trace.estimate,
                    "covariance": last.covariance,
                    "loss": last.loss(),
                    "loss_wrapped": last.loss_wrapped(),
                    "resamples": trace.records.iter().filter(|r| r.resampled).count(),
                }),
            )?;
            println!(
                "estimate = ({:.6}, {:.6}), truth = ({:.6}, {:.6}), wrapped loss = {:.6}",
                trace.estimate.phi1,
                trace.estimate.phi2,
                phi.phi1,
                phi.phi2,
                last.loss_wrapped()
            );
            Ok(())
        }
        Command::FisherScan { common, grid } => {
            if grid < 2 {
                return Err(Error::config("--grid must be at least 2"));
            }
            let cfg = common.load()?;
            let out = common.out_dir();
            let dev = Interferometer::new(cfg.device)?;
            let step = std::f64::consts::TAU / grid as f64;
            let mut best = f64::INFINITY;
            write_with(&out.join("fisher_scan.csv"), |buf| {
                let mut w = csv::Writer::from_writer(buf);
                w.write_record(["phi1", "phi2", "F11", "F12", "F22", "trace_inverse", "singular"])?;
                for i in 0..grid {
                    for j in 0..grid {
                        let phi = PhaseVector::new(i as f64 * step, j as f64 * step);
                        let f = dev.fisher_matrix(phi);
                        let t = f.trace_inverse();
                        best = best.min(t);
                        w.write_record([
                            phi.phi1.to_string(),
                            phi.phi2.to_string(),
                            f.entries[(0, 0)].to_string(),
                            f.entries[(0, 1)].to_string(),
                            f.entries[(1, 1)].to_string(),
                            t.to_string(),
                            (f.singular_point as u8).to_string(),
                        ])?;
                    }
                }
                w.flush().map_err(csv::Error::from)?;
                Ok(())
            })?;
            write_json(
                &out.join("fisher_scan.json"),
                &json!({ "config": cfg, "grid": grid, "grid_min_trace_inverse": best }),
            )?;
            println!("grid minimum of Tr(F^-1) = {best:.6}");
            Ok(())
        }
        Command::MinCrb { common, grid } => {
            if grid < 8 {
                return Err(Error::config("--grid must be at least 8"));
            }
            let cfg = common.load()?;
            let out = common.out_dir();
            let dev = Interferometer::new(cfg.device)?;
            let r = min_trace_inverse_fisher(
                &dev,
                MinSearchOptions {
                    grid,
                    ..MinSearchOptions::default()
                },
            );
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            let _ = writeln!(lock, "min Tr(F^-1) = {:.6}", r.value);
            let _ = writeln!(lock, "minimizers ({}):", r.minimizers.len());
            for m in &r.minimizers {
                let _ = writeln!(lock, "  ({:.6}, {:.6})", m.phi1, m.phi2);
            }
            write_json(
                &out.join("min_crb.json"),
                &json!({ "config": cfg, "grid": grid, "value": r.value, "minimizers": r.minimizers }),
            )?;
            Ok(())
        }
        Command::PosteriorSnapshot {
            common,
            truth,
            steps,
        } => {
            let cfg = common.load()?;
            if let Some(&s) = steps.iter().find(|&&s| s > cfg.probes) {
                return Err(Error::config(format!(
                    "--steps entry {s} exceeds probes = {}",
                    cfg.probes
                )));
            }
            let out = common.out_dir();
            let exp = Experiment::new(cfg)?;
            let phi = truth_for(&exp, &truth)?;
            let mut snapshots: Vec<(usize, ParticleCloud)> = Vec::new();
            if steps.contains(&0) {
                snapshots.push((0, ParticleCloud::uniform_grid(exp.config().particles)?));
            }
            let trace = exp.run_observed(phi, RunIndex { pair: 0, repetition: 0 }, |n, cloud| {
                if steps.contains(&n) {
                    snapshots.push((n, cloud.clone()));
                }
            })?;
            let mut written = Vec::new();
            for (n, cloud) in &snapshots {
                let name = format!("posterior_N{n:03}.csv");
                write_with(&out.join(&name), |b| cloud.write_csv(b))?;
                written.push(json!({
                    "N": n,
                    "file": name,
                    "mean": cloud.posterior_mean(),
                    "ess": cloud.effective_sample_size(),
                }));
            }
            write_json(
                &out.join("snapshot.json"),
                &json!({
                    "config": exp.config(),
                    "true_phi": phi,
                    "estimate": trace.estimate,
                    "snapshots": written,
                }),
            )?;
            println!("wrote {} snapshots to {}", snapshots.len(), out.display());
            Ok(())
        }
    }
}
