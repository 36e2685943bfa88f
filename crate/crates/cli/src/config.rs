//! Run configuration read from JSON. Command-line flags override its fields.

use std::path::{Path, PathBuf};

use itr_core::{Case, EstimatorConfig, Scenario};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Simulate,
    Fit,
    Qcurve,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// When present it must name the subcommand being run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    /// Built-in simulation design 1 to 6; combined with `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Full scenario; overrides `design` and `n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Scenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<Case>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Missing fields take the simulation defaults for `simulate` and the
    /// observational defaults (quartic kernel, narrow pilot) otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    /// Covariates standardized to mean 0 and sd 1 before fitting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Parses JSON, naming the offending key path and line on failure.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::Input(format!("config key `{path}` (line {}, column {}): {inner}", inner.line(), inner.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [("n", self.n), ("reps", self.reps), ("bootstrap", self.bootstrap)];
        for (name, v) in positive {
            if v == Some(0) {
                return Err(CliError::Input(format!("`{name}` must be positive")));
            }
        }
        if let Some(d) = self.design {
            if !(1..=6).contains(&d) {
                return Err(CliError::Input(format!("`design` must be 1 to 6, got {d}")));
            }
        }
        if let Some(s) = &self.scenario {
            s.validate().map_err(|e| CliError::Input(format!("`scenario`: {e}")))?;
        }
        if let Some(e) = &self.estimator {
            e.validate().map_err(|e| CliError::Input(format!("`estimator`: {e}")))?;
        }
        Ok(())
    }

    pub fn check_mode(&self, mode: Mode) -> Result<(), CliError> {
        match self.mode {
            Some(m) if m != mode => Err(CliError::Input(format!(
                "config mode {m:?} does not match the {mode:?} command"
            ))),
            _ => Ok(()),
        }
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        if let Some(s) = &self.scenario {
            return Ok(s.clone());
        }
        let design = self
            .design
            .ok_or_else(|| CliError::Input("config needs `scenario` or `design`".into()))?;
        Scenario::preset(design, self.n.unwrap_or(500)).map_err(|e| CliError::Input(e.to_string()))
    }

    pub fn estimator_for(&self, mode: Mode) -> EstimatorConfig {
        match (&self.estimator, mode) {
            (Some(e), _) => e.clone(),
            (None, Mode::Simulate) => EstimatorConfig::default(),
            (None, _) => EstimatorConfig::real_data(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let err = RunConfig::from_json("{\"design\": 1,\n \"estimator\": {\"pilot_cc\": 2}}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("estimator"), "{msg}");
        assert!(msg.contains("pilot_cc"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn non_positive_settings_are_rejected() {
        assert!(RunConfig::from_json("{\"reps\": 0}").is_err());
        assert!(RunConfig::from_json("{\"design\": 9}").is_err());
        assert!(RunConfig::from_json("{\"estimator\": {\"pilot_c\": -1}}").is_err());
    }

    #[test]
    fn mode_must_match_command() {
        let cfg = RunConfig::from_json("{\"mode\": \"fit\"}").unwrap();
        assert!(cfg.check_mode(Mode::Fit).is_ok());
        assert!(cfg.check_mode(Mode::Simulate).is_err());
    }

    #[test]
    fn defaults_depend_on_mode() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.estimator_for(Mode::Simulate), EstimatorConfig::default());
        assert_eq!(cfg.estimator_for(Mode::Fit), EstimatorConfig::real_data());
    }

    #[test]
    fn full_config_round_trips() {
        let cfg = RunConfig {
            mode: Some(Mode::Simulate),
            design: Some(3),
            n: Some(200),
            case: Some(Case::II),
            reps: Some(7),
            seed: Some(9),
            estimator: Some(EstimatorConfig::real_data()),
            bootstrap: Some(60),
            covariates: Some(vec!["a".into(), "b".into()]),
            out: Some("out".into()),
            ..RunConfig::default()
        };
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json(), cfg.to_json());
    }
}
