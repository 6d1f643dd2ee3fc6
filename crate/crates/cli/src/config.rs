//! Experiment configuration: a versioned JSON document with defaults that
//! mirror the reference evaluation setup (5 fully connected clients,
//! balanced mixing weights, lambda 0.05, batch 256, 50 rounds, beta 0.025,
//! five seeds).
//!
//! Unknown fields are rejected so typos fail loudly, and every artifact
//! echoes the effective config so a run can be reproduced from its output.

use dfl_core::{AggregationRule, ModelKind, ModelSpec, PartitionKind, TopologyKind};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default = "defaults::topology")]
    pub topology: TopologyConfig,
    #[serde(default = "defaults::rules")]
    pub rules: Vec<RuleName>,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::model")]
    pub model: ModelConfig,
    #[serde(default = "defaults::dataset")]
    pub dataset: DatasetConfig,
    #[serde(default = "defaults::partition")]
    pub partition: PartitionConfig,
    #[serde(default = "defaults::lambda")]
    pub lambda: f64,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "defaults::seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "defaults::sensitivity")]
    pub sensitivity: SensitivityConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologyConfig {
    Full {
        n: usize,
    },
    Ring {
        n: usize,
    },
    /// JSON edge-list file: {"n": 3, "edges": [[0,1],[1,2],[2,0]]}.
    Custom {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    Dsgt,
    Dp,
    Lppa,
}

impl RuleName {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleName::Dsgt => "dsgt",
            RuleName::Dp => "dp",
            RuleName::Lppa => "lppa",
        }
    }

    pub fn to_rule(self, beta: f64) -> AggregationRule {
        match self {
            RuleName::Dsgt => AggregationRule::Dsgt,
            RuleName::Dp => AggregationRule::Dp { beta },
            RuleName::Lppa => AggregationRule::Lppa { beta },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Logreg,
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        n_samples: usize,
        dim: usize,
        n_classes: usize,
        separation: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionConfig {
    Iid,
    QuantitySkew { alpha: f64 },
    LabelSkewDirichlet { alpha: f64 },
    LabelSkewCount { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensitivityConfig {
    /// Use a fixed query sensitivity everywhere.
    Fixed { value: f64 },
    /// Probe each client's shard gradient at its initial model.
    Empirical,
}

mod defaults {
    use super::*;

    pub fn topology() -> TopologyConfig {
        TopologyConfig::Full { n: 5 }
    }
    pub fn rules() -> Vec<RuleName> {
        vec![RuleName::Dsgt, RuleName::Dp, RuleName::Lppa]
    }
    pub fn beta() -> f64 {
        0.025
    }
    pub fn model() -> ModelConfig {
        ModelConfig::Logreg
    }
    pub fn dataset() -> DatasetConfig {
        DatasetConfig::Synthetic {
            n_samples: 1000,
            dim: 10,
            n_classes: 2,
            separation: 4.0,
        }
    }
    pub fn partition() -> PartitionConfig {
        PartitionConfig::Iid
    }
    pub fn lambda() -> f64 {
        0.05
    }
    pub fn rounds() -> usize {
        50
    }
    pub fn local_epochs() -> usize {
        1
    }
    pub fn batch_size() -> usize {
        256
    }
    pub fn test_fraction() -> f64 {
        0.2
    }
    pub fn seeds() -> Vec<u64> {
        vec![1, 2, 3, 4, 5]
    }
    pub fn sensitivity() -> SensitivityConfig {
        SensitivityConfig::Fixed { value: 1.0 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            topology: defaults::topology(),
            rules: defaults::rules(),
            beta: defaults::beta(),
            model: defaults::model(),
            dataset: defaults::dataset(),
            partition: defaults::partition(),
            lambda: defaults::lambda(),
            rounds: defaults::rounds(),
            local_epochs: defaults::local_epochs(),
            batch_size: defaults::batch_size(),
            test_fraction: defaults::test_fraction(),
            seeds: defaults::seeds(),
            sensitivity: defaults::sensitivity(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.rules.is_empty() {
            return Err(CliError::Config("rules must not be empty".into()));
        }
        let mut seen = self.rules.clone();
        seen.dedup();
        if seen.len() != self.rules.len() {
            return Err(CliError::Config("rules contains duplicates".into()));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(CliError::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        if let SensitivityConfig::Fixed { value } = self.sensitivity {
            if !(value > 0.0) || !value.is_finite() {
                return Err(CliError::Config(format!(
                    "sensitivity value must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.model {
            ModelConfig::Logreg => ModelKind::Logreg,
            ModelConfig::Mlp { hidden } => ModelKind::Mlp { hidden },
        }
    }

    pub fn partition_kind(&self) -> PartitionKind {
        match self.partition {
            PartitionConfig::Iid => PartitionKind::Iid,
            PartitionConfig::QuantitySkew { alpha } => PartitionKind::QuantitySkew { alpha },
            PartitionConfig::LabelSkewDirichlet { alpha } => {
                PartitionKind::LabelSkewDirichlet { alpha }
            }
            PartitionConfig::LabelSkewCount { k } => PartitionKind::LabelSkewCount { k },
        }
    }

    /// Resolves the topology, reading the edge-list file for custom graphs.
    pub fn build_graph(&self) -> Result<dfl_core::Digraph, CliError> {
        match &self.topology {
            TopologyConfig::Full { n } => Ok(dfl_core::build_topology(&TopologyKind::Full, *n)?),
            TopologyConfig::Ring { n } => Ok(dfl_core::build_topology(&TopologyKind::Ring, *n)?),
            TopologyConfig::Custom { path } => {
                let text = std::fs::read_to_string(path)?;
                Ok(dfl_core::parse_edge_list(&text)?)
            }
        }
    }

    /// The model spec implied by the dataset shape.
    pub fn model_spec(&self, dim: usize, n_classes: usize) -> Result<ModelSpec, CliError> {
        Ok(ModelSpec::new(self.model_kind(), dim, n_classes)?)
    }
}

/// Reads a config from a plain config file, from the `# `-prefixed echo line
/// of a metrics file, or from the `config` field of a summary document, so
/// any artifact can seed an identical re-run.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)?;
    let config = if let Some(rest) = text.strip_prefix("# ") {
        let first_line = rest.lines().next().unwrap_or("");
        serde_json::from_str(first_line)
            .map_err(|e| CliError::Config(format!("bad config echo in {}: {e}", path.display())))?
    } else {
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let source = match value.get("config") {
            Some(embedded) => embedded.clone(),
            None => value,
        };
        serde_json::from_value(source)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    Ok(config)
}
