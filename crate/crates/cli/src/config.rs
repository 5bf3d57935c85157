//! Layered configuration: flag > environment > config file > built-in default.
//!
//! Every key is reachable from the environment as `MMFILTER_<SECTION>_<KEY>`,
//! e.g. `MMFILTER_PROVIDER_BATCH_SIZE=64` sets `provider.batch_size`. Values
//! are parsed as JSON when they parse, and taken as strings otherwise.

use std::path::{Path, PathBuf};

use mmfilter_core::filters::{BasicParams, RoundMode, TieMode};
use mmfilter_core::stats::BinSpec;
use mmfilter_core::{Channel, MaskRules, RemoteConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const ENV_PREFIX: &str = "MMFILTER_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad config at `{key}`: {message}")]
    BadConfig { key: String, message: String },
}

fn bad(key: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::BadConfig {
        key: key.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Toy,
    Remote,
}

/// Where image vectors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    /// The shard's image sidecar when present, else the text backend.
    Auto,
    /// Always the text backend.
    Backend,
    /// Always the image sidecar.
    Precomputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    pub image_source: ImageSource,
    pub dim: usize,
    /// Toy embedder seed; also the embed seed of generated corpora.
    pub seed: u64,
    pub endpoint: String,
    pub model: String,
    pub batch_size: usize,
    pub max_retries: usize,
    pub max_in_flight: usize,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub timeout_ms: u64,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        let r = RemoteConfig::default();
        ProviderSettings {
            kind: ProviderKind::Toy,
            image_source: ImageSource::Auto,
            dim: r.dim,
            seed: 7,
            endpoint: r.endpoint,
            model: r.model,
            batch_size: r.batch_size,
            max_retries: r.max_retries,
            max_in_flight: r.max_in_flight,
            backoff_base_ms: r.backoff_base_ms,
            backoff_max_ms: r.backoff_max_ms,
            timeout_ms: r.timeout_ms,
        }
    }
}

impl ProviderSettings {
    pub fn remote_config(&self) -> RemoteConfig {
        RemoteConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            dim: self.dim,
            batch_size: self.batch_size,
            max_retries: self.max_retries,
            max_in_flight: self.max_in_flight,
            backoff_base_ms: self.backoff_base_ms,
            backoff_max_ms: self.backoff_max_ms,
            timeout_ms: self.timeout_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSettings {
    pub channel: Channel,
    pub format: ScoreFormat,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        ScoreSettings {
            channel: Channel::Original,
            format: ScoreFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Tmc,
    ClipFraction,
    ClipThreshold,
    Basic,
    Synset,
    Composite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub method: Method,
    pub alpha: f64,
    pub theta: f64,
    pub channel: Channel,
    pub round_mode: RoundMode,
    pub tie_mode: TieMode,
    pub floor_theta: f64,
    pub floor_channel: Channel,
    pub wordlist: Option<PathBuf>,
    pub basic: BasicParams,
}

impl Default for FilterSettings {
    fn default() -> Self {
        FilterSettings {
            method: Method::Tmc,
            alpha: 0.4,
            theta: 0.28,
            channel: Channel::Original,
            round_mode: RoundMode::default(),
            tie_mode: TieMode::default(),
            floor_theta: 0.0255,
            floor_channel: Channel::Masked,
            wordlist: None,
            basic: BasicParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSettings {
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
}

impl Default for IoSettings {
    fn default() -> Self {
        IoSettings { jobs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub provider: ProviderSettings,
    pub rules: MaskRules,
    pub score: ScoreSettings,
    pub filter: FilterSettings,
    pub stats: BinSpec,
    pub io: IoSettings,
}

const SECTIONS: [&str; 6] = ["provider", "rules", "score", "filter", "stats", "io"];

/// One flag-level override: a dotted key path and its value.
pub type Override = (&'static str, Value);

/// Merges defaults, the optional config file, `MMFILTER_*` variables and
/// flag overrides, then deserializes the result.
pub fn load_config<'e>(
    path: Option<&Path>,
    flags: &[Override],
    env: impl IntoIterator<Item = (&'e str, &'e str)>,
) -> Result<Config, ConfigError> {
    let mut merged = serde_json::to_value(Config::default()).expect("defaults serialize");

    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| bad("<root>", format!("{}: {e}", path.display())))?;
        if !file.is_object() {
            return Err(bad("<root>", "config file must hold a JSON object"));
        }
        merge(&mut merged, file);
    }

    let mut env_pairs: Vec<(String, Value)> = Vec::new();
    for (name, raw) in env {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let key = env_key(rest).ok_or_else(|| bad(name, "unknown environment setting"))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        env_pairs.push((key, value));
    }
    env_pairs.sort_by(|a, b| a.0.cmp(&b.0));
    for (key, value) in env_pairs {
        set_path(&mut merged, &key, value);
    }

    for (key, value) in flags {
        set_path(&mut merged, key, value.clone());
    }

    let config: Config = serde_path_to_error::deserialize(merged).map_err(|e| {
        let key = e.path().to_string();
        bad(key, e.into_inner().to_string())
    })?;
    config
        .rules
        .validate()
        .map_err(|e| bad("rules", e.to_string()))?;
    config
        .stats
        .bin_count()
        .map_err(|e| bad("stats", e.to_string()))?;
    Ok(config)
}

/// `PROVIDER_BATCH_SIZE` -> `provider.batch_size`.
fn env_key(rest: &str) -> Option<String> {
    let lower = rest.to_ascii_lowercase();
    let (section, field) = lower.split_once('_')?;
    (SECTIONS.contains(&section) && !field.is_empty()).then(|| format!("{section}.{field}"))
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn set_path(root: &mut Value, dotted: &str, value: Value) {
    let mut cur = root;
    let mut parts = dotted.split('.').peekable();
    while let Some(part) = parts.next() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("object");
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return;
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
}
