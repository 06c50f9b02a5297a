//! Training configuration and its flat `key = value` file form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{PromptOrder, PromptTemplate};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::plm::PlmConfig;
use crate::qase::{HeadConfig, HeadKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Every knob of a training run. Field names double as config-file keys and
/// CLI flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub head: HeadKind,
    pub prompt_order: PromptOrder,
    pub multi_span_clause: bool,
    /// Hard cap on optimizer steps across all epochs; 0 means no cap.
    pub max_steps: usize,
    /// Stop once the mean loss of the last `early_stop_window` steps improves
    /// on the window before it by less than `early_stop_delta`. 0 disables.
    pub early_stop_window: usize,
    pub early_stop_delta: f64,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub num_heads: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    /// Projection width of the tagging head; 0 means `hidden_dim`.
    pub proj_dim: usize,
    pub max_seq_len: usize,
    pub max_new_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta: 1.0,
            epochs: 3,
            batch_size: 2,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            head: HeadKind::Qase,
            prompt_order: PromptOrder::ContextFirst,
            multi_span_clause: false,
            max_steps: 0,
            early_stop_window: 50,
            early_stop_delta: 1e-4,
            hidden_dim: 192,
            ff_dim: 384,
            num_heads: 4,
            num_encoder_layers: 1,
            num_decoder_layers: 1,
            proj_dim: 0,
            max_seq_len: 512,
            max_new_tokens: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::config("max_new_tokens must be at least 1"));
        }
        Ok(())
    }

    pub fn template(&self) -> PromptTemplate {
        PromptTemplate {
            order: self.prompt_order,
            multi_span_format_clause: self.multi_span_clause,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            plm: PlmConfig {
                vocab_size,
                hidden_dim: self.hidden_dim,
                ff_dim: self.ff_dim,
                num_encoder_layers: self.num_encoder_layers,
                num_decoder_layers: self.num_decoder_layers,
                num_heads: self.num_heads,
                max_seq_len: self.max_seq_len,
                seed: self.seed,
            },
            head: HeadConfig {
                kind: self.head,
                proj_dim: if self.proj_dim == 0 { self.hidden_dim } else { self.proj_dim },
                num_heads: self.num_heads,
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    /// Overrides one field from its textual form, as given on a command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).expect("flat config serializes");
        let Some(current) = table.get(key) else {
            return Err(Error::config(format!("unknown config key `{key}`")));
        };
        let parsed = match current {
            toml::Value::String(_) => toml::Value::String(value.to_string()),
            toml::Value::Integer(_) => value
                .parse::<i64>()
                .map(toml::Value::Integer)
                .map_err(|_| Error::config(format!("`{key}` expects an integer, got `{value}`")))?,
            toml::Value::Float(_) => value
                .parse::<f64>()
                .map(toml::Value::Float)
                .map_err(|_| Error::config(format!("`{key}` expects a number, got `{value}`")))?,
            toml::Value::Boolean(_) => value
                .parse::<bool>()
                .map(toml::Value::Boolean)
                .map_err(|_| Error::config(format!("`{key}` expects true or false, got `{value}`")))?,
            _ => return Err(Error::config(format!("`{key}` cannot be set from the command line"))),
        };
        table.insert(key.to_string(), parsed);
        let next: TrainConfig = table.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Names of every settable key, in declaration order.
    pub fn keys() -> Vec<String> {
        toml::Table::try_from(TrainConfig::default())
            .expect("flat config serializes")
            .keys()
            .cloned()
            .collect()
    }
}
