//! Versioned TOML run configuration with field-level validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thermoflow_core::{
    scenarios, ExternalField, FieldConfig, GeneralizedField, IntegratorConfig, LorentzForce,
    ManifoldModel,
};

/// Schema version accepted by this binary.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "THERMOFLOW_OUT";

/// A rejected configuration: which field and why.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error in `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    #[serde(default = "default_model")]
    pub model: ManifoldModel,
    #[serde(default)]
    pub field: Option<FieldSection>,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub criteria: CriteriaSection,
    #[serde(default)]
    pub identities: IdentitySection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_model() -> ManifoldModel {
    ManifoldModel::FlatTorus2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    #[serde(default)]
    pub external: Option<ExternalField>,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub lorentz: Option<LorentzForce>,
    #[serde(default)]
    pub generalized: Option<GeneralizedField>,
}

fn one() -> f64 {
    1.0
}

impl FieldSection {
    pub fn to_core(&self) -> FieldConfig {
        FieldConfig {
            external: self.external,
            scale: self.scale,
            lorentz: self.lorentz,
            generalized: self.generalized,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_renorm_every")]
    pub renorm_every: usize,
    #[serde(default = "default_max_transitions")]
    pub max_transitions: usize,
}

fn default_step() -> f64 {
    1e-3
}
fn default_renorm_every() -> usize {
    1
}
fn default_max_transitions() -> usize {
    4
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection {
            step: default_step(),
            renorm_every: default_renorm_every(),
            max_transitions: default_max_transitions(),
        }
    }
}

impl IntegratorSection {
    pub fn to_core(&self) -> IntegratorConfig {
        IntegratorConfig {
            step: self.step,
            renorm_every: self.renorm_every,
            max_transitions: self.max_transitions,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_time")]
    pub time: f64,
    #[serde(default = "default_transient")]
    pub transient: f64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_sample_every")]
    pub sample_every: usize,
    #[serde(default = "default_s_grid")]
    pub s_grid: Vec<f64>,
    /// Explicit start state: `[x1, x2, phi]` on surfaces or
    /// `[x1, x2, x3, v1, v2, v3]` on three-dimensional models.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default = "default_renorm_interval")]
    pub renorm_interval: f64,
    #[serde(default = "default_conv_tol")]
    pub conv_tol: f64,
}

fn default_seed() -> u64 {
    scenarios::DEFAULT_SEED
}
fn default_time() -> f64 {
    2000.0
}
fn default_transient() -> f64 {
    50.0
}
fn default_batches() -> usize {
    20
}
fn default_sample_every() -> usize {
    5
}
fn default_s_grid() -> Vec<f64> {
    vec![-0.15, -0.10, -0.05, 0.0, 0.05, 0.10, 0.15]
}
fn default_renorm_interval() -> f64 {
    1.0
}
fn default_conv_tol() -> f64 {
    0.01
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: default_seed(),
            time: default_time(),
            transient: default_transient(),
            batches: default_batches(),
            sample_every: default_sample_every(),
            s_grid: default_s_grid(),
            start: None,
            renorm_interval: default_renorm_interval(),
            conv_tol: default_conv_tol(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriteriaSection {
    #[serde(default = "default_tags")]
    pub tags: Vec<String>,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_planes")]
    pub planes: usize,
}

fn default_tags() -> Vec<String> {
    vec!["k".into(), "k-weyl".into(), "k-one".into()]
}
fn default_points() -> usize {
    256
}
fn default_planes() -> usize {
    4
}

impl Default for CriteriaSection {
    fn default() -> Self {
        CriteriaSection {
            tags: default_tags(),
            points: default_points(),
            planes: default_planes(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitySection {
    #[serde(default = "default_identity_step")]
    pub step: f64,
    #[serde(default = "default_identity_points")]
    pub points: usize,
}

fn default_identity_step() -> f64 {
    0.02
}
fn default_identity_points() -> usize {
    5
}

impl Default for IdentitySection {
    fn default() -> Self {
        IdentitySection {
            step: default_identity_step(),
            points: default_identity_points(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    /// Built-in configuration used when no file is given: the flat torus
    /// with a moderate potential forcing, quick to run for every subcommand.
    pub fn builtin_default() -> Self {
        RunConfig {
            schema: SCHEMA_VERSION,
            model: ManifoldModel::FlatTorus2,
            field: Some(FieldSection {
                external: Some(ExternalField::TorusPotential {
                    amplitude: 0.4,
                    freq: [2, 1, 0],
                    phase: 0.3,
                }),
                scale: 0.7,
                lorentz: None,
                generalized: None,
            }),
            integrator: IntegratorSection::default(),
            run: RunSection::default(),
            criteria: CriteriaSection::default(),
            identities: IdentitySection::default(),
            output: OutputSection::default(),
        }
    }

    /// Core field configuration (geodesic when the section is absent).
    pub fn field_config(&self) -> FieldConfig {
        self.field
            .as_ref()
            .map(FieldSection::to_core)
            .unwrap_or(FieldConfig {
                external: None,
                scale: 0.0,
                lorentz: None,
                generalized: None,
            })
    }

    /// Schema and cross-field validation shared by every subcommand.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != SCHEMA_VERSION {
            return Err(ConfigError::new(
                "schema",
                format!(
                    "unsupported schema version {} (this binary reads {SCHEMA_VERSION})",
                    self.schema
                ),
            ));
        }
        self.field_config()
            .validate(&self.model)
            .map_err(|e| ConfigError::new("field", e.to_string()))?;
        if !(self.integrator.step > 0.0 && self.integrator.step < 0.5) {
            return Err(ConfigError::new(
                "integrator.step",
                "the integrator step must lie in (0, 0.5)",
            ));
        }
        if self.integrator.renorm_every == 0 {
            return Err(ConfigError::new(
                "integrator.renorm_every",
                "renormalization stride must be at least 1",
            ));
        }
        if !(self.run.time > 0.0) {
            return Err(ConfigError::new("run.time", "run time must be positive"));
        }
        if !(self.run.transient >= 0.0 && self.run.transient < self.run.time) {
            return Err(ConfigError::new(
                "run.transient",
                "the transient must be nonnegative and shorter than the run time",
            ));
        }
        if self.run.batches < 2 {
            return Err(ConfigError::new(
                "run.batches",
                "batch means need at least 2 batches",
            ));
        }
        if self.run.sample_every == 0 {
            return Err(ConfigError::new(
                "run.sample_every",
                "sampling stride must be at least 1",
            ));
        }
        if !(self.run.renorm_interval > 0.0) {
            return Err(ConfigError::new(
                "run.renorm_interval",
                "the renormalization interval must be positive",
            ));
        }
        if !(self.run.conv_tol > 0.0) {
            return Err(ConfigError::new(
                "run.conv_tol",
                "the convergence tolerance must be positive",
            ));
        }
        if let Some(start) = &self.run.start {
            let want = if self.model.dim() == 2 { 3 } else { 6 };
            if start.len() != want {
                return Err(ConfigError::new(
                    "run.start",
                    format!(
                        "model `{}` needs {want} start components, got {}",
                        self.model.name(),
                        start.len()
                    ),
                ));
            }
        }
        if self.criteria.points == 0 {
            return Err(ConfigError::new(
                "criteria.points",
                "criterion scans need at least one point",
            ));
        }
        if self.criteria.planes == 0 {
            return Err(ConfigError::new(
                "criteria.planes",
                "criterion scans need at least one plane per point",
            ));
        }
        for tag in &self.criteria.tags {
            if !matches!(tag.as_str(), "k" | "k-weyl" | "k-one") {
                return Err(ConfigError::new(
                    "criteria.tags",
                    format!("unknown criterion tag `{tag}` (known: k, k-weyl, k-one)"),
                ));
            }
        }
        if !(self.identities.step > 0.0 && self.identities.step < 0.2) {
            return Err(ConfigError::new(
                "identities.step",
                "the refinement step must lie in (0, 0.2)",
            ));
        }
        if self.identities.points == 0 {
            return Err(ConfigError::new(
                "identities.points",
                "the identity suite needs at least one sample point",
            ));
        }
        Ok(())
    }
}

/// Load the configuration, apply the seed override, and validate.
pub fn load(path: Option<&Path>, seed_override: Option<u64>) -> Result<RunConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                ConfigError::new("config", format!("cannot read {}: {e}", p.display()))
            })?;
            toml::from_str::<RunConfig>(&text)
                .map_err(|e| ConfigError::new("config", e.to_string()))?
        }
        None => RunConfig::builtin_default(),
    };
    if let Some(seed) = seed_override {
        cfg.run.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Output root precedence: `--out` flag, then `[output] dir`, then the
/// environment variable, then `./thermoflow-out`.
pub fn resolve_out_root(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| cfg.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("thermoflow-out"))
}
