//! JSON run configuration (`"schema": 1`, unknown keys rejected).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bath::OffDiagonalBath;
use crate::engine::IntegratorConfig;
use crate::error::{Error, Result};
use crate::scenario::ScenarioSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutConfig {
    pub threshold_fraction: f64,
    /// Readout time; `t_final` when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub at: Option<f64>,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        ReadoutConfig {
            threshold_fraction: 0.5,
            at: None,
        }
    }
}

/// File names inside the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub timeseries: String,
    pub distributions: String,
    pub readout: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            timeseries: "timeseries.csv".into(),
            distributions: "distributions.csv".into(),
            readout: "readout.json".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub offdiag_bath: OffDiagonalBath,
    #[serde(default)]
    pub readout: ReadoutConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn new(scenario: ScenarioSpec) -> Self {
        RunConfig {
            schema: SCHEMA_VERSION,
            scenario,
            integrator: IntegratorConfig::default(),
            offdiag_bath: OffDiagonalBath::default(),
            readout: ReadoutConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn readout_time(&self) -> f64 {
        self.readout.at.unwrap_or(self.scenario.t_final)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::config(
                "schema",
                format!("unsupported schema version {} (expected {SCHEMA_VERSION})", self.schema),
            ));
        }
        self.scenario.validate()?;
        self.integrator.validate()?;
        let f = self.readout.threshold_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::config("readout.threshold_fraction", "must lie in (0, 1)"));
        }
        let at = self.readout_time();
        if !(at >= 0.0 && at <= self.scenario.t_final) {
            return Err(Error::config("readout.at", "must lie in [0, t_final]"));
        }
        for (key, name) in [
            ("output.timeseries", &self.output.timeseries),
            ("output.distributions", &self.output.distributions),
            ("output.readout", &self.output.readout),
        ] {
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(Error::config(key, "must be a plain file name"));
            }
        }
        Ok(())
    }
}

/// Parses and validates a config from JSON text.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::config(if key == "." { "<root>".to_string() } else { key }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}
