//! Flow configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration; command-line flags override it.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pareto::Axis;
use super::synth::SynthConfig;
use crate::dnas::{default_lambda_grid, CostMetric};
use crate::error::{Error, Result};
use crate::kernels::Backend;
use crate::postproc::DEFAULT_WINDOW;
use crate::quant::{enumerate_specs, QuantSpec};
use crate::train::TrainConfig;

/// Which bit-width assignments to quantize to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SpecSelection {
    /// All sixteen INT4/INT8 assignments.
    All,
    /// The eight assignments with the first layer at 8 bits.
    First8,
    List(Vec<QuantSpec>),
}

impl SpecSelection {
    pub fn specs(&self) -> Vec<QuantSpec> {
        match self {
            Self::All => enumerate_specs(false),
            Self::First8 => enumerate_specs(true),
            Self::List(v) => v.clone(),
        }
    }
}

impl FromStr for SpecSelection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(Self::All),
            "first8" => Ok(Self::First8),
            "" => Ok(Self::List(Vec::new())),
            list => Ok(Self::List(list.split(',').map(|p| p.trim().parse()).collect::<Result<_>>()?)),
        }
    }
}

impl fmt::Display for SpecSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::All => f.write_str("all"),
            Self::First8 => f.write_str("first8"),
            Self::List(v) => {
                let parts: Vec<String> = v.iter().map(|s| s.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl TryFrom<String> for SpecSelection {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SpecSelection> for String {
    fn from(s: SpecSelection) -> String {
        s.to_string()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CSV dataset; the synthetic generator is used when absent.
    pub path: Option<PathBuf>,
    pub synth: SynthConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchStage {
    pub lambdas: Vec<f64>,
    pub metric: CostMetric,
    pub train: TrainConfig,
}

impl Default for SearchStage {
    fn default() -> Self {
        Self {
            lambdas: default_lambda_grid(),
            metric: CostMetric::Params,
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneStage {
    pub train: TrainConfig,
    /// Extract the searched sub-network before fine-tuning. When false the
    /// masked network is fine-tuned with trainable masks (no cost term) and
    /// extracted afterwards.
    pub freeze_masks: bool,
}

impl Default for FinetuneStage {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            freeze_masks: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantStage {
    pub specs: SpecSelection,
    pub qat: TrainConfig,
}

impl Default for QuantStage {
    fn default() -> Self {
        Self {
            specs: SpecSelection::First8,
            qat: TrainConfig {
                epochs: 10,
                lr: 5e-4,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate only the first this-many folds.
    pub max_folds: Option<usize>,
    pub vote_window: usize,
    pub backend: Backend,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_folds: None,
            vote_window: DEFAULT_WINDOW,
            backend: Backend::Host,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParetoConfig {
    pub axes: Vec<Axis>,
}

impl Default for ParetoConfig {
    fn default() -> Self {
        Self { axes: Axis::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    /// Plain training of the seed network (the `train` command).
    pub train: TrainConfig,
    pub search: SearchStage,
    pub finetune: FinetuneStage,
    pub quant: QuantStage,
    pub eval: EvalConfig,
    pub pareto: ParetoConfig,
    /// Worker threads; 0 means one per available core.
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            data: DataConfig::default(),
            train: TrainConfig::default(),
            search: SearchStage::default(),
            finetune: FinetuneStage::default(),
            quant: QuantStage::default(),
            eval: EvalConfig::default(),
            pareto: ParetoConfig::default(),
            workers: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl FlowConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.search.lambdas.is_empty() {
            return Err(Error::Config("the lambda grid is empty".into()));
        }
        if let Some(l) = self.search.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(Error::Config(format!("lambda {l} is not a non-negative number")));
        }
        if self.eval.vote_window == 0 {
            return Err(Error::Config("vote_window must be at least 1".into()));
        }
        if self.eval.max_folds == Some(0) {
            return Err(Error::Config("max_folds must be at least 1".into()));
        }
        for (name, t) in [
            ("train", &self.train),
            ("search.train", &self.search.train),
            ("finetune.train", &self.finetune.train),
            ("quant.qat", &self.quant.qat),
        ] {
            if t.batch_size == 0 {
                return Err(Error::Config(format!("{name}.batch_size must be positive")));
            }
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(FlowConfig::from_toml("").unwrap(), FlowConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = FlowConfig::default();
        cfg.quant.specs = "8-8-8-8,8-4-4-8".parse().unwrap();
        cfg.eval.max_folds = Some(2);
        cfg.data.path = Some("data.csv".into());
        let text = cfg.to_toml().unwrap();
        assert_eq!(FlowConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(FlowConfig::from_toml("seedz = [1]").is_err());
        assert!(FlowConfig::from_toml("[search.train]\nepoch = 3").is_err());
    }

    #[test]
    fn partial_sections() {
        let cfg = FlowConfig::from_toml("seeds = [7]\n[quant]\nspecs = \"all\"\n[eval]\nbackend = \"isa-sim\"").unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.quant.specs.specs().len(), 16);
        assert_eq!(cfg.eval.backend, Backend::IsaSim);
        assert_eq!(cfg.search.train.epochs, 20);
    }

    #[test]
    fn invalid_values() {
        assert!(FlowConfig::from_toml("seeds = []").is_err());
        assert!(FlowConfig::from_toml("[eval]\nvote_window = 0").is_err());
        assert!(FlowConfig::from_toml("[quant]\nspecs = \"8-2-8-8\"").is_err());
    }
}
