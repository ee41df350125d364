//! Service configuration: a TOML file plus `SIEVE__SECTION__KEY` environment
//! overrides.
//!
//! Override values are read as TOML when they parse (`true`, `8080`,
//! `["a", "b"]`) and as plain strings otherwise.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::auto_screen::ClassifierSettings;
use crate::dedup::DedupConfig;
use crate::error::{Error, Result};
use crate::search::ConnectorConfig;

pub const ENV_PREFIX: &str = "SIEVE__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub path: PathBuf,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { path: PathBuf::from("sieve.db") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { bind: "127.0.0.1:8080".into() }
    }
}

fn default_model_id() -> String {
    "bigscience/T0_3B".into()
}

fn default_max_new_tokens() -> u32 {
    8
}

fn default_model_in_flight() -> usize {
    4
}

fn default_grobid_in_flight() -> usize {
    2
}

fn default_timeout() -> f64 {
    60.0
}

/// The text-generation service used for question answering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub base_url: String,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default = "default_model_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrobidConfig {
    pub base_url: String,
    #[serde(default = "default_grobid_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewerToken {
    pub reviewer_id: String,
    pub token: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuthConfig {
    /// When false, mutating endpoints accept anonymous requests.
    pub enabled: bool,
    pub reviewers: Vec<ReviewerToken>,
}

impl AuthConfig {
    pub fn reviewer_for(&self, token: &str) -> Option<&str> {
        self.reviewers
            .iter()
            .find(|r| r.token == token)
            .map(|r| r.reviewer_id.as_str())
    }
}

pub const DEFAULT_UPLOAD_LIMIT: usize = 20 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct UploadConfig {
    pub max_bytes: usize,
}

impl Default for UploadConfig {
    fn default() -> Self {
        UploadConfig { max_bytes: DEFAULT_UPLOAD_LIMIT }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub store: StoreConfig,
    pub server: ServerConfig,
    pub dedup: DedupConfig,
    pub classifiers: ClassifierSettings,
    pub model: Option<ModelConfig>,
    pub grobid: Option<GrobidConfig>,
    pub auth: AuthConfig,
    pub upload: UploadConfig,
    pub connectors: Vec<ConnectorConfig>,
}

fn parse_override(raw: &str) -> toml::Value {
    // wrap so scalars and arrays parse through the document parser
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_owned())),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("override paths are non-empty");
    let mut table = root;
    for key in parents {
        let entry = table
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("cannot override inside non-table `{key}`")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl Config {
    /// Parses `text`, then applies every `SIEVE__…` pair in `overrides`.
    /// Other names are ignored.
    pub fn from_toml_with<I>(text: &str, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let mut pairs: Vec<(String, String)> = overrides
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX))
            .collect();
        pairs.sort();
        for (name, value) in pairs {
            let path: Vec<String> = name[ENV_PREFIX.len()..]
                .split("__")
                .map(str::to_lowercase)
                .collect();
            if path.iter().any(String::is_empty) {
                return Err(Error::Config(format!("malformed override {name}")));
            }
            apply_override(&mut table, &path, parse_override(&value))?;
        }
        let config: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies the
    /// process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with(&text, std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.dedup.fuzzy_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!("dedup.fuzzy_threshold must be in (0, 1], got {t}")));
        }
        let mut names = HashSet::new();
        for c in &self.connectors {
            c.validate()?;
            if !names.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate connector name {:?}", c.name)));
            }
        }
        if self.auth.enabled && self.auth.reviewers.is_empty() {
            return Err(Error::Config("auth.enabled needs at least one reviewer token".into()));
        }
        let mut tokens = HashSet::new();
        for r in &self.auth.reviewers {
            if r.token.len() < 8 {
                return Err(Error::Config(format!("token for {} is shorter than 8 characters", r.reviewer_id)));
            }
            if !tokens.insert(r.token.as_str()) {
                return Err(Error::Config(format!("token for {} is not unique", r.reviewer_id)));
            }
        }
        if self.upload.max_bytes == 0 {
            return Err(Error::Config("upload.max_bytes must be positive".into()));
        }
        let c = &self.classifiers;
        if c.logreg.l2 < 0.0 || c.logreg.max_epochs == 0 || c.hash_linear.epochs == 0 {
            return Err(Error::Config("classifier settings out of range".into()));
        }
        if c.hash_linear.buckets == 0 || c.hash_linear.dim == 0 || c.hash_linear.learning_rate <= 0.0 {
            return Err(Error::Config("hash_linear settings out of range".into()));
        }
        if let Some(m) = &self.model {
            if m.max_in_flight == 0 || m.timeout_secs <= 0.0 {
                return Err(Error::Config("model.max_in_flight and model.timeout_secs must be positive".into()));
            }
        }
        if let Some(g) = &self.grobid {
            if g.max_in_flight == 0 || g.timeout_secs <= 0.0 {
                return Err(Error::Config("grobid.max_in_flight and grobid.timeout_secs must be positive".into()));
            }
        }
        Ok(())
    }
}
