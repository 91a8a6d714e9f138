//! Run configuration file, version 1 (TOML).
//!
//! ```toml
//! version = 1
//! mode = "full_analysis"          # or "design_review"
//! runs = 3                        # review runs per group
//! critic_threshold = 7.0
//! max_attempts = 5                # datasheet candidates tried per part
//! time_budget_secs = 1200         # optional; checked before each page
//! base_schematic = "base.json"    # design_review: diff against this
//! pages_override = ["P2"]         # design_review: always analyze these
//! cache_dir = ".schemrev-cache"
//! out_dir = "schemrev-out"
//! trace_out = "schemrev-out/trace.ndjson"   # default: <out_dir>/trace.ndjson
//! checklists_dir = "checklists"
//! page_parallelism = 1
//! summarize_errors = false        # ask the error-grouping agent for summaries
//!
//! [backend]                       # see BackendConfig
//! kind = "mock"
//! fixture_path = "fixtures"
//! strong_model = "large"
//! weak_model = "small"
//!
//! [[libraries]]                   # see LibrarySource
//! kind = "csv_table"
//! priority = 1
//! path = "parts.csv"
//!
//! [sink]                          # see SinkConfig; default: file sink in out_dir
//! kind = "file"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::datasheet::{validate_libraries, LibrarySource, RetrievalConfig};
use crate::gateway::BackendConfig;
use crate::report::SinkConfig;
use crate::review::DEFAULT_RUNS;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("reading config {path}: {detail}")]
    Read { path: PathBuf, detail: String },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    UnsupportedVersion(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Only pages that differ from the base schematic, plus explicit overrides.
    DesignReview,
    FullAnalysis,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "design_review" | "review" => Ok(Mode::DesignReview),
            "full_analysis" | "full" => Ok(Mode::FullAnalysis),
            other => Err(format!("unknown mode `{other}` (expected design_review or full_analysis)")),
        }
    }
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_mode() -> Mode {
    Mode::FullAnalysis
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}

fn default_threshold() -> f64 {
    RetrievalConfig::default().threshold
}

fn default_max_attempts() -> usize {
    RetrievalConfig::default().max_attempts
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from(".schemrev-cache")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("schemrev-out")
}

fn default_parallelism() -> usize {
    1
}

fn default_sink() -> SinkConfig {
    SinkConfig::File { dir: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_threshold")]
    pub critic_threshold: f64,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    #[serde(default)]
    pub time_budget_secs: Option<f64>,
    #[serde(default)]
    pub base_schematic: Option<PathBuf>,
    #[serde(default)]
    pub pages_override: Vec<String>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub trace_out: Option<PathBuf>,
    #[serde(default)]
    pub checklists_dir: Option<PathBuf>,
    #[serde(default = "default_parallelism")]
    pub page_parallelism: usize,
    #[serde(default)]
    pub summarize_errors: bool,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub libraries: Vec<LibrarySource>,
    #[serde(default = "default_sink")]
    pub sink: SinkConfig,
    /// Directory that relative library paths and `file:` URLs resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_toml("").expect("empty config parses")
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub base_schematic: Option<PathBuf>,
    pub time_budget_secs: Option<f64>,
    pub runs: Option<usize>,
    pub critic_threshold: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
    pub pages: Vec<String>,
}

impl RunConfig {
    /// Parses a config without resolving paths.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError::UnsupportedVersion(cfg.version));
        }
        Ok(RunConfig {
            base_dir: PathBuf::from("."),
            ..cfg
        })
    }

    /// Reads a config file and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.resolve_paths(dir);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        join(&mut self.cache_dir);
        join(&mut self.out_dir);
        for p in [&mut self.trace_out, &mut self.base_schematic, &mut self.checklists_dir]
            .into_iter()
            .flatten()
        {
            join(p);
        }
        if let Some(p) = self.backend.as_mut().and_then(|b| b.fixture_path.as_mut()) {
            join(p);
        }
        if let SinkConfig::File { dir: Some(p) } = &mut self.sink {
            join(p);
        }
        self.base_dir = dir.to_path_buf();
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if o.base_schematic.is_some() {
            self.base_schematic = o.base_schematic;
        }
        if o.time_budget_secs.is_some() {
            self.time_budget_secs = o.time_budget_secs;
        }
        if let Some(k) = o.runs {
            self.runs = k;
        }
        if let Some(t) = o.critic_threshold {
            self.critic_threshold = t;
        }
        if let Some(d) = o.out_dir {
            self.out_dir = d;
        }
        if let Some(d) = o.cache_dir {
            self.cache_dir = d;
        }
        if o.trace_out.is_some() {
            self.trace_out = o.trace_out;
        }
        for p in o.pages {
            if !self.pages_override.contains(&p) {
                self.pages_override.push(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.runs == 0 {
            return invalid("`runs` must be at least 1".into());
        }
        if !(0.0..=10.0).contains(&self.critic_threshold) {
            return invalid(format!("`critic_threshold` {} is outside [0, 10]", self.critic_threshold));
        }
        if self.max_attempts == 0 {
            return invalid("`max_attempts` must be at least 1".into());
        }
        if self.page_parallelism == 0 {
            return invalid("`page_parallelism` must be at least 1".into());
        }
        if let Some(t) = self.time_budget_secs {
            if !(t.is_finite() && t >= 0.0) {
                return invalid(format!("`time_budget_secs` {t} must be a nonnegative number"));
            }
        }
        if self.mode == Mode::DesignReview && self.base_schematic.is_none() && self.pages_override.is_empty() {
            return invalid("design_review mode needs `base_schematic` or `pages_override`".into());
        }
        match &self.backend {
            None => return invalid("missing [backend] section".into()),
            Some(b) => b.validate().map_err(|e| ConfigError::Invalid(format!("backend: {e}")))?,
        }
        validate_libraries(&self.libraries).map_err(|e| ConfigError::Invalid(format!("libraries: {e}")))?;
        Ok(())
    }

    pub fn time_budget(&self) -> Option<Duration> {
        self.time_budget_secs.map(Duration::from_secs_f64)
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            threshold: self.critic_threshold,
            max_attempts: self.max_attempts,
        }
    }

    pub fn trace_path(&self) -> PathBuf {
        self.trace_out.clone().unwrap_or_else(|| self.out_dir.join("trace.ndjson"))
    }
}
