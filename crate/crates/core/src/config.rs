//! Application config: one TOML file with sections for scoring, the
//! simulator, the live backend, and the controller. Every field has a
//! default, so an empty file is a valid config; unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::LiveBackendConfig;
use crate::controller::TunerOptions;
use crate::error::{Error, Result};
use crate::knobs::{self, KnobSpace, KnobVector};
use crate::scoring::ScoreWeights;
use crate::simulator::SimConfig;

/// Which measurement backend a command drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Sim,
    Live,
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sim" => Ok(BackendKind::Sim),
            "live" => Ok(BackendKind::Live),
            other => Err(Error::InvalidArgument(format!(
                "backend must be `sim` or `live`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Sim => "sim",
            BackendKind::Live => "live",
        })
    }
}

/// Controller section. `budget` defaults per backend: 8 steps live, 6 sim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub budget: Option<u32>,
    pub delta: f64,
    pub strict_alg1: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            budget: None,
            delta: 0.02,
            strict_alg1: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub slo_s: f64,
    pub output_dir: PathBuf,
    pub root_seed: u64,
    pub scoring: ScoreWeights,
    pub simulator: SimConfig,
    pub live: LiveBackendConfig,
    pub controller: ControllerConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            slo_s: 1.2,
            output_dir: PathBuf::from("runs"),
            root_seed: 42,
            scoring: ScoreWeights::default(),
            simulator: SimConfig::default(),
            live: LiveBackendConfig::default(),
            controller: ControllerConfig::default(),
        }
    }
}

impl AppConfig {
    /// Parse and validate a config file.
    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn from_toml(text: &str, path_label: &str) -> Result<AppConfig> {
        let cfg: AppConfig = toml::from_str(text).map_err(|source| Error::ConfigParse {
            path: path_label.to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, reason: &str| Error::InvalidConfig {
            field: name.into(),
            reason: reason.into(),
        };
        if self.slo_s <= 0.0 {
            return Err(field("slo_s", "must be > 0"));
        }
        if self.controller.delta < 0.0 {
            return Err(field("controller.delta", "must be >= 0"));
        }
        if self.controller.budget == Some(0) {
            return Err(field("controller.budget", "must be >= 1"));
        }
        let w = &self.scoring;
        if w.w_conc < 0.0 || w.w_max < 0.0 || w.w_spec < 0.0 || w.sim_w_w < 0.0 || w.sim_w_k < 0.0
        {
            return Err(field("scoring", "weights must be >= 0"));
        }
        if w.lambda <= 0.0 {
            return Err(field("scoring.lambda", "must be > 0"));
        }
        if w.sim_violation_multiplier <= 0.0 {
            return Err(field("scoring.sim_violation_multiplier", "must be > 0"));
        }
        self.simulator.validate()?;
        self.live.validate()?;
        Ok(())
    }

    /// Step budget for the chosen backend.
    pub fn budget_for(&self, backend: BackendKind) -> u32 {
        self.controller.budget.unwrap_or(match backend {
            BackendKind::Live => 8,
            BackendKind::Sim => 6,
        })
    }

    pub fn tuner_options(&self, backend: BackendKind) -> TunerOptions {
        TunerOptions {
            budget: self.budget_for(backend),
            slo_s: self.slo_s,
            delta: self.controller.delta,
            weights: self.scoring,
            strict_alg1: self.controller.strict_alg1,
        }
    }

    pub fn space_for(backend: BackendKind) -> KnobSpace {
        match backend {
            BackendKind::Sim => knobs::sim_space(),
            BackendKind::Live => knobs::live_space(),
        }
    }

    pub fn start_for(backend: BackendKind) -> KnobVector {
        match backend {
            BackendKind::Sim => knobs::sim_start(),
            BackendKind::Live => knobs::live_start(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_yields_full_defaults() {
        let cfg = AppConfig::from_toml("", "test").unwrap();
        assert_eq!(cfg, AppConfig::default());
        assert_eq!(cfg.slo_s, 1.2);
        assert_eq!(cfg.scoring.lambda, 5.0);
        assert_eq!(cfg.controller.delta, 0.02);
        assert_eq!(cfg.live.warmup_s, 10.0);
        assert_eq!(cfg.live.window_s, 30.0);
    }

    #[test]
    fn budget_defaults_per_backend() {
        let cfg = AppConfig::default();
        assert_eq!(cfg.budget_for(BackendKind::Live), 8);
        assert_eq!(cfg.budget_for(BackendKind::Sim), 6);
        let cfg = AppConfig::from_toml("[controller]\nbudget = 3\n", "test").unwrap();
        assert_eq!(cfg.budget_for(BackendKind::Live), 3);
        assert_eq!(cfg.budget_for(BackendKind::Sim), 3);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = AppConfig::from_toml("mystery_knob = 3\n", "test").unwrap_err();
        assert!(err.to_string().contains("mystery_knob"), "{err}");
        let err =
            AppConfig::from_toml("[simulator]\nnot_a_real_key = 1\n", "test").unwrap_err();
        assert!(err.to_string().contains("not_a_real_key"), "{err}");
    }

    #[test]
    fn validation_names_offending_field() {
        let err = AppConfig::from_toml("slo_s = -1.0\n", "test").unwrap_err();
        assert!(err.to_string().contains("slo_s"), "{err}");
        let err = AppConfig::from_toml("[simulator]\np_acc = 1.5\n", "test").unwrap_err();
        assert!(err.to_string().contains("p_acc"), "{err}");
        let err = AppConfig::from_toml("[scoring]\nlambda = 0.0\n", "test").unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
    }

    #[test]
    fn sections_override_defaults() {
        let text = "slo_s = 2.0\n[simulator]\nsteady_rate_rps = 3.5\n[live]\nwindow_s = 5.0\n";
        let cfg = AppConfig::from_toml(text, "test").unwrap();
        assert_eq!(cfg.slo_s, 2.0);
        assert_eq!(cfg.simulator.steady_rate_rps, 3.5);
        assert_eq!(cfg.live.window_s, 5.0);
        // untouched fields keep defaults
        assert_eq!(cfg.simulator.min_completions, 1500);
    }

    #[test]
    fn backend_kind_parses() {
        assert_eq!("sim".parse::<BackendKind>().unwrap(), BackendKind::Sim);
        assert_eq!("live".parse::<BackendKind>().unwrap(), BackendKind::Live);
        assert!("gpu".parse::<BackendKind>().is_err());
    }
}
