//! Run configuration. Every path in the document is resolved against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blocking::PassConfig;
use crate::hits::MANUAL_CANDIDATE_CAP;
use crate::ingest::ColumnMap;
use crate::scoring::{ScoreSettings, DEFAULT_DICE_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub columns: ColumnMap,
}

fn default_threshold() -> f64 {
    DEFAULT_DICE_THRESHOLD
}

fn default_passes() -> Vec<PassConfig> {
    PassConfig::default_passes()
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

fn default_cap() -> usize {
    MANUAL_CANDIDATE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub left: InputSpec,
    pub right: InputSpec,
    /// Rule documents; the built-in plans are used when absent.
    #[serde(default)]
    pub name_rules: Option<PathBuf>,
    #[serde(default)]
    pub addr_rules: Option<PathBuf>,
    #[serde(default = "default_passes")]
    pub passes: Vec<PassConfig>,
    #[serde(default = "default_threshold")]
    pub dice_threshold: f64,
    #[serde(default)]
    pub name_dice_threshold: Option<f64>,
    #[serde(default)]
    pub addr_dice_threshold: Option<f64>,
    #[serde(default)]
    pub city_comparator: bool,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub gold_standard: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub manual_hits: bool,
    #[serde(default = "default_cap")]
    pub manual_candidate_cap: usize,
    /// Also write each pass's candidate graph as CSV.
    #[serde(default)]
    pub debug_candidates: bool,
}

impl RunConfig {
    /// A config with defaults for everything but the inputs.
    pub fn new(left: InputSpec, right: InputSpec, output_dir: PathBuf) -> Self {
        Self {
            left,
            right,
            name_rules: None,
            addr_rules: None,
            passes: default_passes(),
            dice_threshold: DEFAULT_DICE_THRESHOLD,
            name_dice_threshold: None,
            addr_dice_threshold: None,
            city_comparator: false,
            output_dir,
            gold_standard: None,
            manual_hits: true,
            manual_candidate_cap: MANUAL_CANDIDATE_CAP,
            debug_candidates: false,
        }
    }

    /// Loads and validates a config file, making its paths absolute.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.left.path);
        fix(&mut self.right.path);
        fix(&mut self.output_dir);
        for p in [&mut self.name_rules, &mut self.addr_rules, &mut self.gold_standard]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.passes.is_empty() {
            return Err(ConfigError::Invalid("at least one pass is required".into()));
        }
        for pass in &self.passes {
            pass.validate().map_err(ConfigError::Invalid)?;
        }
        if let Some(w) = self.passes.windows(2).find(|w| w[1].pass_number <= w[0].pass_number) {
            return Err(ConfigError::Invalid(format!(
                "pass numbers must increase (pass {} follows pass {})",
                w[1].pass_number, w[0].pass_number
            )));
        }
        let s = self.score_settings();
        for (what, t) in [
            ("dice_threshold", self.dice_threshold),
            ("name threshold", s.name_threshold),
            ("address threshold", s.addr_threshold),
        ] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(ConfigError::Invalid(format!("{what} {t} is outside (0, 1]")));
            }
        }
        if self.manual_candidate_cap == 0 {
            return Err(ConfigError::Invalid("manual_candidate_cap must be positive".into()));
        }
        Ok(())
    }

    pub fn score_settings(&self) -> ScoreSettings {
        ScoreSettings {
            name_threshold: self.name_dice_threshold.unwrap_or(self.dice_threshold),
            addr_threshold: self.addr_dice_threshold.unwrap_or(self.dice_threshold),
            city_comparator: self.city_comparator,
        }
    }

    pub fn resolutions_path(&self) -> PathBuf {
        self.output_dir.join("resolutions.csv")
    }
}
