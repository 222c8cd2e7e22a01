//! Run configuration: one TOML file with `[spec]`, `[ode]`, `[sgd]`,
//! `[analysis]` and `[output]` sections. Unknown keys are rejected; every
//! run echoes the fully-resolved config (defaults included) next to its
//! outputs so a run can be reproduced from its artifacts alone.

use crate::analysis::Thresholds;
use crate::coefficients::CoefficientSpec;
use crate::macro_ode::IntegrateOptions;
use crate::width_sim::SgdConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSection {
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    #[serde(default = "default_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_grid_lo")]
    pub grid_tau_lo: f64,
    #[serde(default = "default_per_decade")]
    pub grid_per_decade: usize,
}

fn default_tau_max() -> f64 {
    1e3
}
fn default_tol() -> f64 {
    1e-9
}
fn default_grid_lo() -> f64 {
    1e-4
}
fn default_per_decade() -> usize {
    64
}

impl Default for OdeSection {
    fn default() -> Self {
        Self {
            tau_max: default_tau_max(),
            rel_tol: default_tol(),
            abs_tol: default_tol(),
            grid_tau_lo: default_grid_lo(),
            grid_per_decade: default_per_decade(),
        }
    }
}

impl OdeSection {
    pub fn integrate_options(&self) -> IntegrateOptions {
        IntegrateOptions {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            grid_tau_lo: self.grid_tau_lo,
            grid_per_decade: self.grid_per_decade,
            sample_grid: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    pub d: usize,
    pub n: usize,
    pub m: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    pub steps: usize,
    #[serde(default = "default_measure_every")]
    pub measure_every: usize,
    #[serde(default = "default_pair_sample")]
    pub pair_sample: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_gamma() -> f64 {
    1.0
}
fn default_measure_every() -> usize {
    50
}
fn default_pair_sample() -> usize {
    500
}

impl SgdSection {
    pub fn sgd_config(&self, spec: &CoefficientSpec) -> SgdConfig {
        SgdConfig {
            spec: spec.clone(),
            d: self.d,
            n: self.n,
            m: self.m,
            gamma: self.gamma,
            steps: self.steps,
            measure_every: self.measure_every,
            pair_sample: self.pair_sample.min(self.m * self.m.saturating_sub(1) / 2),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_c_bar")]
    pub c_bar_threshold: f64,
    #[serde(default = "default_zero")]
    pub zero_threshold: f64,
    #[serde(default = "default_learn")]
    pub learn_threshold: f64,
    #[serde(default = "default_fit_decades")]
    pub fit_decades: u32,
}

fn default_c_bar() -> f64 {
    0.2
}
fn default_zero() -> f64 {
    0.05
}
fn default_learn() -> f64 {
    0.2
}
fn default_fit_decades() -> u32 {
    2
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            c_bar_threshold: default_c_bar(),
            zero_threshold: default_zero(),
            learn_threshold: default_learn(),
            fit_decades: default_fit_decades(),
        }
    }
}

impl AnalysisSection {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            c_bar: self.c_bar_threshold,
            zero: self.zero_threshold,
            learn: self.learn_threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_out_dir() -> String {
    "out".into()
}
fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_out_dir(),
            formats: default_formats(),
        }
    }
}

/// The full run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec: CoefficientSpec,
    #[serde(default)]
    pub ode: OdeSection,
    #[serde(default)]
    pub sgd: Option<SgdSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Fully-resolved echo, defaults included.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
