use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::corpus::DatasetKind;
use crate::gateway::{BackendKind, GatewayConfig, MockOracleConfig};
use crate::metrics::AurocScope;
use crate::prompting::AnswerLayout;
use crate::selector::{ShotPlan, Strategy};
use crate::verdict::ErrorPolicy;

/// Experimental condition of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Base model without fine-tuning, zero-shot.
    Vanilla,
    NoIcl,
    IclRices,
    IclOurs,
    IclRandom,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::Vanilla,
        Setting::NoIcl,
        Setting::IclRices,
        Setting::IclOurs,
        Setting::IclRandom,
    ];

    pub fn strategy(self) -> Option<Strategy> {
        match self {
            Setting::Vanilla | Setting::NoIcl => None,
            Setting::IclRices => Some(Strategy::Rices),
            Setting::IclOurs => Some(Strategy::Ours),
            Setting::IclRandom => Some(Strategy::Random),
        }
    }

    /// Column header used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Setting::Vanilla => "Vanilla",
            Setting::NoIcl => "w/o ICL",
            Setting::IclRices => "ICL (RICES)",
            Setting::IclOurs => "ICL (Ours)",
            Setting::IclRandom => "ICL (Random)",
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Setting::Vanilla => "vanilla",
            Setting::NoIcl => "no_icl",
            Setting::IclRices => "icl_rices",
            Setting::IclOurs => "icl_ours",
            Setting::IclRandom => "icl_random",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Setting::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| format!("unknown setting {s:?} (vanilla, no_icl, icl_rices, icl_ours, icl_random)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub kind: DatasetKind,
    /// Dataset root, or the manifest file for `custom`.
    pub root: PathBuf,
    /// Restrict queries to these categories.
    #[serde(default)]
    pub categories: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    /// Other test images of the query's category, answers derived from masks.
    #[default]
    Dataset,
    /// A VQA manifest of reference examples.
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    #[serde(default)]
    pub source: PoolSource,
    #[serde(default)]
    pub manifest: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub setting: Setting,
    #[serde(default = "ShotPlan::zero")]
    pub shot_plan: ShotPlan,
    #[serde(default)]
    pub embeddings_path: Option<PathBuf>,
    #[serde(default)]
    pub gateway: GatewayConfig,
    /// Mock backend behaviour; required when `gateway.backend = "mock"`.
    #[serde(default)]
    pub oracle: Option<MockOracleConfig>,
    #[serde(default)]
    pub error_policy: ErrorPolicy,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub pool: PoolConfig,
    #[serde(default)]
    pub answer_layout: AnswerLayout,
    #[serde(default = "default_true")]
    pub pixel_auroc: bool,
    #[serde(default)]
    pub auroc_scope: AurocScope,
    #[serde(default)]
    pub overlays: bool,
    /// Keep successful rows from an existing predictions file.
    #[serde(default)]
    pub resume: bool,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parse TOML; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, RunError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        resolve(base_dir, &mut cfg.dataset.root);
        resolve(base_dir, &mut cfg.output_dir);
        if let Some(p) = cfg.embeddings_path.as_mut() {
            resolve(base_dir, p);
        }
        if let Some(p) = cfg.pool.manifest.as_mut() {
            resolve(base_dir, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        match self.setting.strategy() {
            None if !self.shot_plan.is_empty() => {
                return bad(format!("setting {} takes shot_plan \"0\", got {}", self.setting, self.shot_plan))
            }
            Some(_) if self.shot_plan.is_empty() => {
                return bad(format!("setting {} needs a non-empty shot_plan", self.setting))
            }
            Some(Strategy::Ours | Strategy::Rices) if self.embeddings_path.is_none() => {
                return bad(format!("setting {} needs embeddings_path", self.setting))
            }
            _ => {}
        }
        if self.pool.source == PoolSource::Manifest && self.pool.manifest.is_none() {
            return bad("pool.source = \"manifest\" needs pool.manifest".into());
        }
        match self.gateway.backend {
            BackendKind::Mock if self.oracle.is_none() => return bad("mock backend needs an [oracle] table".into()),
            BackendKind::Remote if self.setting == Setting::Vanilla && self.gateway.base_model_name.is_none() => {
                return bad("setting vanilla needs gateway.base_model_name".into())
            }
            _ => {}
        }
        self.gateway.validate()?;
        if let Some(o) = &self.oracle {
            o.validate()?;
        }
        Ok(())
    }

    /// Model the run talks to: the base model for `vanilla`.
    pub fn model_name(&self) -> &str {
        match (self.setting, &self.gateway.base_model_name) {
            (Setting::Vanilla, Some(base)) => base,
            _ => &self.gateway.model_name,
        }
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.output_dir.join("predictions.jsonl")
    }
}
