use std::path::Path;

use fsps_core::predictor::PredictorConfig;
use fsps_core::senet::ModelConfig;
use fsps_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Margin used for corpora made only of visual-search scanpaths.
pub const SEARCH_MARGIN: f64 = 1.0;

/// Resolved run configuration: training keys at the top level of the TOML
/// file, plus optional `[model]` and `[predictor]` tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub predictor: PredictorConfig,
    #[serde(skip)]
    pub margin_set: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let section = |table: &mut toml::Table, name: &str| -> CliResult<toml::Table> {
            match table.remove(name) {
                None => Ok(toml::Table::new()),
                Some(toml::Value::Table(t)) => Ok(t),
                Some(_) => Err(CliError::Config(format!("`{name}` must be a table"))),
            }
        };
        let model = section(&mut table, "model")?;
        let predictor = section(&mut table, "predictor")?;
        let margin_set = table.contains_key("margin");
        let config = RunConfig {
            train: toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?,
            model: toml::Value::Table(model).try_into().map_err(|e: toml::de::Error| CliError::Config(format!("[model]: {e}")))?,
            predictor: toml::Value::Table(predictor)
                .try_into()
                .map_err(|e: toml::de::Error| CliError::Config(format!("[predictor]: {e}")))?,
            margin_set,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => RunConfig::parse(&std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        self.model.validate()?;
        self.predictor.validate()?;
        Ok(())
    }

    /// Applies the global seed and the search-task margin default.
    pub fn resolve(mut self, seed: Option<u64>, search_only: bool) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.predictor.seed = s;
        }
        if search_only && !self.margin_set {
            self.train.margin = SEARCH_MARGIN;
        }
        self
    }
}
