//! Experiment configuration (JSON, unknown keys rejected).

use std::path::{Path, PathBuf};

use rbmd_core::market_models::ModelFile;
use rbmd_core::mirror_descent::StepSchedule;
use rbmd_core::risk_loss::MeasureSpec;
use rbmd_core::{MixtureModel, RiskBudget};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::synthetic::{synthetic_model, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub budget: BudgetSpec,
    pub measure: MeasureSpec,
    #[serde(default)]
    pub optimizers: Vec<OptimizerSpec>,
    /// Return samples drawn per replication for stochastic methods.
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub reference: ReferenceSpec,
    /// Directory read by `figure-data`; defaults to `--out`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSource {
    /// `"three_asset"`: the two-regime example model.
    Builtin(String),
    Inline(ModelFile),
    /// Path to a JSON model file, relative to the config file.
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum BudgetSpec {
    #[default]
    #[serde(with = "uniform_tag")]
    Uniform,
    Explicit(Vec<f64>),
}

mod uniform_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("uniform")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "uniform" {
            Ok(())
        } else {
            Err(D::Error::custom(format!("unknown budget \"{s}\"")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dmd,
    Smd,
    Csgd,
    Tsgd,
}

impl Method {
    pub fn is_stochastic(self) -> bool {
        self != Method::Dmd
    }

    pub fn is_tamed(self) -> bool {
        self != Method::Csgd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub label: String,
    pub method: Method,
    /// Cap radius; defaults to 100 for `d <= 10` and `100 d` otherwise.
    #[serde(default)]
    pub m: Option<f64>,
    /// Required for `dmd`; stochastic methods fall back to per-dimension defaults.
    #[serde(default)]
    pub schedule: Option<StepSchedule>,
    /// Number of updates for `dmd`.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default = "one")]
    pub epochs: usize,
    /// Explicit starting point; overrides `init`.
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    #[serde(default)]
    pub init: InitRule,
    #[serde(default)]
    pub xi0: f64,
    #[serde(default = "default_floor")]
    pub floor_eps: f64,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    #[serde(default = "default_record")]
    pub record_every: usize,
    #[serde(default)]
    pub reshuffle: bool,
}

/// Starting point when `y0` is not given; every rule is rescaled onto the
/// cap ball when it lies outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// `y0_i = 1 / (d sigma_i^2)` from the first mixture component.
    #[default]
    InverseVariance,
    /// Inverse-variance direction scaled so that `g'(r(y0)) r(y0) = 1`.
    RiskScaled,
    /// `e^-1 (1, ..., 1)`.
    Entropy,
}

fn default_floor() -> f64 {
    1e-4
}

fn default_tail() -> f64 {
    0.2
}

fn default_record() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec {
            tolerance: default_tolerance(),
        }
    }
}

fn default_tolerance() -> f64 {
    1e-10
}

/// Learning-rate defaults by dimension for `gamma_n = gamma n^-0.65`.
pub fn default_schedule(method: Method, d: usize) -> Option<StepSchedule> {
    const TAMED: [(usize, f64); 5] = [(10, 1.0), (25, 2.5), (50, 5.0), (100, 10.0), (250, 25.0)];
    const CLASSICAL: [(usize, f64); 5] = [(10, 5.0), (25, 1.0), (50, 0.5), (100, 0.25), (250, 0.1)];
    let table = match method {
        Method::Dmd => return None,
        Method::Csgd => &CLASSICAL,
        Method::Smd | Method::Tsgd => &TAMED,
    };
    table
        .iter()
        .find(|(dim, _)| *dim == d)
        .map(|(_, g)| StepSchedule::power_law(*g, 0.65))
}

impl ExperimentConfig {
    /// Parses and validates; errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::config(format!("{path}: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let ModelSource::File(p) = &cfg.model {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.model = ModelSource::File(base.join(p));
            }
        }
        Ok((cfg, text))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let BudgetSpec::Explicit(b) = &self.budget {
            RiskBudget::new(b.clone()).map_err(|e| CliError::config(format!("budget: {e}")))?;
        }
        self.measure
            .validate()
            .map_err(|e| CliError::config(format!("measure: {e}")))?;
        if self.replications == 0 {
            return Err(CliError::config("replications: must be at least 1"));
        }
        if self.samples == Some(0) {
            return Err(CliError::config("samples: must be at least 1"));
        }
        if !(self.reference.tolerance > 0.0) {
            return Err(CliError::config("reference.tolerance: must be positive"));
        }
        let mut labels = std::collections::BTreeSet::new();
        for (i, o) in self.optimizers.iter().enumerate() {
            let key = format!("optimizers[{i}]");
            if o.label.is_empty() || !o.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(CliError::config(format!("{key}.label: use letters, digits, '_' or '-'")));
            }
            if !labels.insert(o.label.clone()) {
                return Err(CliError::config(format!("{key}.label: duplicate label \"{}\"", o.label)));
            }
            if o.method == Method::Dmd {
                if o.schedule.is_none() {
                    return Err(CliError::config(format!("{key}.schedule: required for dmd")));
                }
                if o.iterations.unwrap_or(0) == 0 {
                    return Err(CliError::config(format!("{key}.iterations: required for dmd")));
                }
            } else {
                if o.iterations.is_some() {
                    return Err(CliError::config(format!(
                        "{key}.iterations: stochastic methods run samples x epochs updates"
                    )));
                }
                if self.samples.is_none() {
                    return Err(CliError::config(format!("samples: required by {key}")));
                }
            }
            if let Some(s) = &o.schedule {
                s.validate().map_err(|e| CliError::config(format!("{key}.schedule: {e}")))?;
            }
            if o.epochs == 0 {
                return Err(CliError::config(format!("{key}.epochs: must be at least 1")));
            }
            if let Some(m) = o.m {
                if !(m > 0.0 && m.is_finite()) {
                    return Err(CliError::config(format!("{key}.m: must be positive")));
                }
            }
            if !(o.floor_eps > 0.0) {
                return Err(CliError::config(format!("{key}.floor_eps: must be positive")));
            }
            if !(o.tail_fraction > 0.0 && o.tail_fraction <= 1.0) {
                return Err(CliError::config(format!("{key}.tail_fraction: must lie in (0, 1]")));
            }
            if o.record_every == 0 {
                return Err(CliError::config(format!("{key}.record_every: must be at least 1")));
            }
        }
        Ok(())
    }

    /// Model of replication `index`; synthetic sources use `seed ^ index`.
    pub fn build_model(&self, index: u64) -> Result<MixtureModel, CliError> {
        let model = match &self.model {
            ModelSource::Builtin(name) if name == "three_asset" => MixtureModel::three_asset_example(),
            ModelSource::Builtin(name) => {
                return Err(CliError::config(format!("model.builtin: unknown model \"{name}\"")))
            }
            ModelSource::Inline(file) => {
                MixtureModel::from_file_repr(file).map_err(|e| CliError::config(format!("model.inline: {e}")))?
            }
            ModelSource::File(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::io(format!("model.file: cannot read {}: {e}", path.display())))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                let file: ModelFile = serde_path_to_error::deserialize(de)
                    .map_err(|e| CliError::config(format!("model.file: {}: {}", e.path(), e.inner())))?;
                MixtureModel::from_file_repr(&file).map_err(|e| CliError::config(format!("model.file: {e}")))?
            }
            ModelSource::Synthetic(spec) => synthetic_model(&SyntheticSpec {
                seed: spec.seed ^ index,
                ..spec.clone()
            })
            .map_err(|e| CliError::config(format!("model.synthetic: {e}")))?,
        };
        Ok(model)
    }

    pub fn build_budget(&self, d: usize) -> Result<RiskBudget, CliError> {
        match &self.budget {
            BudgetSpec::Uniform => Ok(RiskBudget::uniform(d)),
            BudgetSpec::Explicit(b) => {
                if b.len() != d {
                    return Err(CliError::config(format!(
                        "budget: expected {d} entries for the model, got {}",
                        b.len()
                    )));
                }
                RiskBudget::new(b.clone()).map_err(|e| CliError::config(format!("budget: {e}")))
            }
        }
    }
}
