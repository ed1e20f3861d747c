//! Service configuration: a TOML file overlaid with `GRADECAST_*`
//! environment variables (nested keys separated by `__`, e.g.
//! `GRADECAST_SERVER__BIND`). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use figment::providers::{Env, Format, Serialized, Toml};
use figment::Figment;
use gradecast_core::explain::ShapleyBudget;
use gradecast_core::pipeline::{AssessmentCalendar, PipelineParams};
use gradecast_core::trees::{ForestParams, TreeParams};
use gradecast_core::GradeScheme;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "GRADECAST_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    /// Directory in the ingest layout (see `gradecast synth`).
    pub cohort_dir: PathBuf,
    pub model_dir: PathBuf,
    /// Where `evaluate` writes its table and JSON report.
    pub report_dir: PathBuf,
    /// Optional dashboard build served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            cohort_dir: PathBuf::from("data/cohort"),
            model_dir: PathBuf::from("data/models"),
            report_dir: PathBuf::from("data/reports"),
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    pub bind: String,
    /// Bearer token for `POST /api/v1/admin/train`; the endpoint is
    /// disabled when unset.
    pub admin_token: Option<String>,
    /// Allowed CORS origins; `"*"` allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            admin_token: None,
            cors_origins: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub forest: ForestParams,
    pub regressor: TreeParams,
    pub folds: usize,
    pub shapley_budget: ShapleyBudget,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let p = PipelineParams::default();
        ModelConfig {
            forest: p.forest,
            regressor: p.regressor,
            folds: p.folds,
            shapley_budget: p.shapley_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub data: DataPaths,
    pub server: ServerConfig,
    pub scheme: GradeScheme,
    /// Checkpoint cutoffs; monthly from the semester start when empty.
    pub checkpoint_cutoffs: Vec<NaiveDate>,
    pub model: ModelConfig,
    pub risk_threshold: f64,
    pub seed: u64,
    /// Explanation sentences per prediction.
    pub top_k: usize,
    /// Rayon worker threads for training and attribution (0 = all cores).
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data: DataPaths::default(),
            server: ServerConfig::default(),
            scheme: GradeScheme::reference(),
            checkpoint_cutoffs: Vec::new(),
            model: ModelConfig::default(),
            risk_threshold: 0.5,
            seed: 42,
            top_k: 3,
            workers: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Load(#[from] Box<figment::Error>),
    #[error("config: {0}")]
    Invalid(String),
}

impl ServiceConfig {
    /// Defaults, then the TOML file (if given), then environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut fig = Figment::from(Serialized::defaults(ServiceConfig::default()));
        if let Some(p) = path {
            if !p.exists() {
                return Err(ConfigError::Invalid(format!("{} does not exist", p.display())));
            }
            fig = fig.merge(Toml::file(p));
        }
        Self::extract(fig.merge(Env::prefixed(ENV_PREFIX).split("__")))
    }

    /// Parses a TOML document without consulting the environment.
    pub fn from_toml_str(doc: &str) -> Result<Self, ConfigError> {
        Self::extract(Figment::from(Serialized::defaults(ServiceConfig::default())).merge(Toml::string(doc)))
    }

    fn extract(fig: Figment) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = fig.extract().map_err(Box::new)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: gradecast_core::Error| ConfigError::Invalid(e.to_string());
        self.scheme.validate().map_err(invalid)?;
        self.pipeline_params().validate().map_err(invalid)?;
        if self.top_k == 0 {
            return Err(ConfigError::Invalid("top_k must be at least 1".into()));
        }
        if !self.checkpoint_cutoffs.is_empty() {
            AssessmentCalendar::with_cutoffs(&self.scheme, &self.checkpoint_cutoffs).map_err(invalid)?;
        }
        if self.server.admin_token.as_deref() == Some("") {
            return Err(ConfigError::Invalid("server.admin_token must not be empty".into()));
        }
        Ok(())
    }

    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            forest: self.model.forest.clone(),
            regressor: self.model.regressor.clone(),
            risk_threshold: self.risk_threshold,
            folds: self.model.folds,
            seed: self.seed,
            shapley_budget: self.model.shapley_budget,
        }
        .reseeded(self.seed)
    }

    pub fn calendar(&self, semester_start: NaiveDate) -> gradecast_core::Result<AssessmentCalendar> {
        if self.checkpoint_cutoffs.is_empty() {
            AssessmentCalendar::monthly(&self.scheme, semester_start)
        } else {
            AssessmentCalendar::with_cutoffs(&self.scheme, &self.checkpoint_cutoffs)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ServiceConfig::from_toml_str("").unwrap();
        assert_eq!(c, ServiceConfig::default());
        assert_eq!(c.pipeline_params().forest.tree.seed, 42);
    }

    #[test]
    fn overrides_apply() {
        let c = ServiceConfig::from_toml_str(
            r#"
            seed = 7
            risk_threshold = 0.6
            [server]
            bind = "0.0.0.0:9000"
            admin_token = "s3cret"
            [model.forest]
            n_trees = 10
            tree = { min_samples_leaf = 1, min_samples_split = 2, criterion = "gini" }
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.server.bind, "0.0.0.0:9000");
        assert_eq!(c.model.forest.n_trees, 10);
        assert_eq!(c.pipeline_params().forest.tree.seed, 7);
        assert_eq!(c.pipeline_params().risk_threshold, 0.6);
    }

    #[test]
    fn example_file_spells_out_the_defaults() {
        let c = ServiceConfig::from_toml_str(include_str!("../gradecast.example.toml")).unwrap();
        assert_eq!(c, ServiceConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ServiceConfig::from_toml_str("sede = 3").is_err());
        assert!(ServiceConfig::from_toml_str("[server]\nport = 80").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ServiceConfig::from_toml_str("risk_threshold = 1.5").is_err());
        assert!(ServiceConfig::from_toml_str("top_k = 0").is_err());
        assert!(ServiceConfig::from_toml_str("checkpoint_cutoffs = [2021-11-01]").is_err());
        assert!(ServiceConfig::from_toml_str("[server]\nadmin_token = \"\"").is_err());
    }

    #[test]
    #[allow(clippy::result_large_err)]
    fn env_overrides() {
        figment::Jail::expect_with(|jail| {
            jail.create_file("svc.toml", "seed = 1\n[server]\nbind = \"127.0.0.1:1\"")?;
            jail.set_env("GRADECAST_SEED", "99");
            jail.set_env("GRADECAST_SERVER__BIND", "127.0.0.1:2");
            let c = ServiceConfig::load(Some(Path::new("svc.toml"))).unwrap();
            assert_eq!(c.seed, 99);
            assert_eq!(c.server.bind, "127.0.0.1:2");
            jail.set_env("GRADECAST_BOGUS", "1");
            assert!(ServiceConfig::load(Some(Path::new("svc.toml"))).is_err());
            Ok(())
        });
    }
}
