//! Experiment configuration: TOML files plus `key=value` overrides.
//!
//! Every table rejects unknown keys, and the error names the key.
//! See the README for the full schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interferometer::DeviceModel;
use crate::phase::PhaseVector;
use crate::power_model::{ResistorState, ResponseCoefficients, RESISTORS};
use crate::smc::ResampleConfig;
use crate::strategies::ControlPolicy;

/// Either a number of uniformly sampled pairs or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhasePairs {
    Sampled(usize),
    Explicit(Vec<[f64; 2]>),
}

impl Default for PhasePairs {
    fn default() -> Self {
        PhasePairs::Sampled(20)
    }
}

/// Hardware-realistic control path: controls pass through the resistor
/// response and current quantization before they reach the device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    #[serde(default = "ResponseCoefficients::demo")]
    pub coefficients: ResponseCoefficients,
    #[serde(default)]
    pub resistors: ResistorState,
    /// 1-based indices of the resistors driving Φ.
    #[serde(default = "default_control_resistors")]
    pub control_resistors: [usize; 2],
    /// Current step of the supply (A); 0 means continuous.
    #[serde(default = "default_quantum")]
    pub quantum: f64,
}

fn default_control_resistors() -> [usize; 2] {
    [1, 2]
}

fn default_quantum() -> f64 {
    1e-4
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            coefficients: ResponseCoefficients::demo(),
            resistors: ResistorState::default(),
            control_resistors: default_control_resistors(),
            quantum: default_quantum(),
        }
    }
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        self.coefficients.validate()?;
        self.resistors.validate()?;
        let [a, b] = self.control_resistors;
        if a == b || !(1..=RESISTORS).contains(&a) || !(1..=RESISTORS).contains(&b) {
            return Err(Error::config(format!(
                "power.control_resistors = [{a}, {b}] must be two distinct indices in 1..=6"
            )));
        }
        if !(self.quantum >= 0.0 && self.quantum.is_finite()) {
            return Err(Error::config("power.quantum must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn control_indices(&self) -> [usize; 2] {
        self.control_resistors.map(|i| i - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Probes per run (N).
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Runs per phase pair (N_exp).
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// True phase pairs (N_ph sampled pairs, or an explicit list).
    #[serde(default)]
    pub phase_pairs: PhasePairs,
    /// Particles (M).
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hardware_mode: bool,
    /// Overrides the bound `Tr(F⁻¹)` used for the CRB curve, e.g. 4.2 for
    /// the experimental Fisher fixture. By default it is the minimum over
    /// the configured device.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crb_trace: Option<f64>,
    #[serde(default)]
    pub policy: ControlPolicy,
    #[serde(default)]
    pub device: DeviceModel,
    #[serde(default)]
    pub resample: ResampleConfig,
    #[serde(default)]
    pub power: PowerConfig,
}

fn default_probes() -> usize {
    100
}
fn default_repetitions() -> usize {
    50
}
fn default_particles() -> usize {
    2000
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            probes: default_probes(),
            repetitions: default_repetitions(),
            phase_pairs: PhasePairs::default(),
            particles: default_particles(),
            seed: 0,
            hardware_mode: false,
            crb_trace: None,
            policy: ControlPolicy::default(),
            device: DeviceModel::ideal(),
            resample: ResampleConfig::default(),
            power: PowerConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.probes < 1 {
            return Err(Error::config("probes must be >= 1"));
        }
        if self.repetitions < 1 {
            return Err(Error::config("repetitions must be >= 1"));
        }
        if self.particles < 4 {
            return Err(Error::config(format!(
                "particles = {} must be >= 4",
                self.particles
            )));
        }
        match &self.phase_pairs {
            PhasePairs::Sampled(0) => return Err(Error::config("phase_pairs must be >= 1")),
            PhasePairs::Explicit(v) if v.is_empty() => {
                return Err(Error::config("phase_pairs list is empty"))
            }
            PhasePairs::Explicit(v) if v.iter().flatten().any(|x| !x.is_finite()) => {
                return Err(Error::config("phase_pairs entries must be finite"))
            }
            _ => {}
        }
        if let Some(t) = self.crb_trace {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config(format!("crb_trace = {t} must be positive")));
            }
        }
        self.policy.validate()?;
        self.device.validate()?;
        self.resample.validate()?;
        self.power.validate()?;
        Ok(())
    }

    pub fn explicit_pairs(&self) -> Option<Vec<PhaseVector>> {
        match &self.phase_pairs {
            PhasePairs::Explicit(v) => Some(v.iter().map(|p| PhaseVector::from_array(*p)).collect()),
            PhasePairs::Sampled(_) => None,
        }
    }

    /// Parses a TOML document and applies `key=value` overrides (dotted
    /// keys address nested tables, values use TOML syntax, bare words are
    /// taken as strings).
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| Error::ReadConfig {
                path: p.to_path_buf(),
                source,
            })?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::config(format!("override `{assignment}` is not of the form key=value"))
    })?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(Error::config(format!("override `{assignment}` has an empty key")));
    }
    let value = parse_value(raw);
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("split yields at least one part");
    let mut cursor = table;
    for part in parts {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("`{part}` in override key `{key}` is not a table")))?;
    }
    cursor.insert(leaf.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
