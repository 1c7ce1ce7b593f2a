//! Layered settings (command line over config file over defaults) and the
//! run manifest written before any command does real work.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;
use topdown_core::parse_kv;

use crate::failure::{io_failure, Failure, Outcome};

pub const GLOBAL_KEYS: &[&str] = &["seed", "deterministic", "out", "data"];
pub const GEN_KEYS: &[&str] = &["train_envs", "test_envs", "episode_len", "episodes_per_env", "force"];
pub const TRAIN_KEYS: &[&str] = &[
    "profile",
    "encoder",
    "batch_size",
    "total_iterations",
    "final_scale",
    "iterations_per_scale",
    "fade_iterations",
    "lr_g",
    "beta1_g",
    "beta2_g",
    "lr_d",
    "beta1_d",
    "beta2_d",
    "adam_eps",
    "lambda_gp",
    "use_drift",
    "drift_epsilon",
    "n_critic",
    "checkpoint_every",
    "routing_iterations",
    "resume",
    "log_every",
    "force",
];
pub const EVAL_KEYS: &[&str] = &["checkpoints", "eval_count", "oracle", "baselines", "allow_reduced_scale"];
pub const SAMPLE_KEYS: &[&str] = &["checkpoint", "split", "episode", "steps", "frames"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Cli,
}

/// Resolved `key = value` settings of one command with where each came from.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, Source)>,
}

impl Settings {
    /// `own` are the keys this command understands; file keys meant for other
    /// commands are ignored, unknown ones are rejected.
    pub fn resolve(
        own: &[&[&str]],
        defaults: BTreeMap<String, String>,
        file: &[(String, String)],
        cli: BTreeMap<String, String>,
    ) -> Outcome<Self> {
        let all = [GLOBAL_KEYS, GEN_KEYS, TRAIN_KEYS, EVAL_KEYS, SAMPLE_KEYS];
        let mine = |k: &str| own.iter().any(|keys| keys.contains(&k));
        let mut values: BTreeMap<String, (String, Source)> =
            defaults.into_iter().map(|(k, v)| (k, (v, Source::Default))).collect();
        for (k, v) in file {
            if !all.iter().any(|keys| keys.contains(&k.as_str())) {
                return Err(Failure::Config(format!("unknown key {k:?} in config file")));
            }
            if mine(k) {
                values.insert(k.clone(), (v.clone(), Source::File));
            }
        }
        for (k, v) in cli {
            values.insert(k, (v, Source::Cli));
        }
        Ok(Self { values })
    }

    /// Adds a default computed from other settings, unless already present.
    pub fn default_for(&mut self, key: &str, value: String) {
        self.values.entry(key.to_string()).or_insert((value, Source::Default));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Outcome<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Failure::Config(format!("bad value {v:?} for {key}")))
            })
            .transpose()
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Outcome<T> {
        self.parse(key)?
            .ok_or_else(|| Failure::Config(format!("missing required setting {key}")))
    }

    pub fn flag(&self, key: &str) -> Outcome<bool> {
        Ok(self.parse(key)?.unwrap_or(false))
    }

    pub fn values(&self) -> BTreeMap<String, String> {
        self.values.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect()
    }

    /// Startup banner listing every resolved key.
    pub fn describe(&self) -> String {
        let mut out = String::from("settings (command line > config file > defaults):\n");
        for (k, (v, s)) in &self.values {
            let s = match s {
                Source::Default => "default",
                Source::File => "file",
                Source::Cli => "cli",
            };
            out.push_str(&format!("  {k} = {v}  [{s}]\n"));
        }
        out
    }
}

pub fn read_config_file(path: Option<&Path>) -> Outcome<Vec<(String, String)>> {
    let Some(path) = path else {
        return Ok(Vec::new());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    parse_kv(&text).map_err(Failure::from)
}

/// Inserts `key` into `map` when the flag was given.
pub fn put<T: ToString>(map: &mut BTreeMap<String, String>, key: &str, value: Option<T>) {
    if let Some(v) = value {
        map.insert(key.to_string(), v.to_string());
    }
}

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub sources: BTreeMap<String, Source>,
    pub seed: u64,
    pub version: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub outcome: Option<String>,
    pub dataset_sha256: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, settings: &Settings, seed: u64, dataset_sha256: Option<String>) -> Self {
        Self {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: settings.values(),
            sources: settings.values.iter().map(|(k, (_, s))| (k.clone(), *s)).collect(),
            seed,
            version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            started_at: Utc::now(),
            finished_at: None,
            outcome: None,
            dataset_sha256,
        }
    }

    pub fn write(&self, dir: &Path) -> Outcome<PathBuf> {
        fs::create_dir_all(dir).map_err(io_failure(dir))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Failure::Internal(e.to_string()))?;
        fs::write(&path, text).map_err(io_failure(&path))?;
        Ok(path)
    }

    pub fn finish(mut self, dir: &Path, outcome: &Outcome) -> Outcome<PathBuf> {
        self.finished_at = Some(Utc::now());
        self.outcome = Some(match outcome {
            Ok(()) => "ok".into(),
            Err(e) => e.to_string(),
        });
        self.write(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn command_line_beats_file_beats_defaults() {
        let file = vec![
            ("seed".to_string(), "5".to_string()),
            ("batch_size".to_string(), "8".to_string()),
            ("eval_count".to_string(), "3".to_string()),
        ];
        let s = Settings::resolve(
            &[GLOBAL_KEYS, TRAIN_KEYS],
            map(&[("seed", "0"), ("batch_size", "16"), ("lr_g", "0.001")]),
            &file,
            map(&[("seed", "9")]),
        )
        .unwrap();
        assert_eq!(s.get("seed"), Some("9"));
        assert_eq!(s.get("batch_size"), Some("8"));
        assert_eq!(s.get("lr_g"), Some("0.001"));
        assert_eq!(s.get("eval_count"), None);
        assert!(s.describe().contains("batch_size = 8  [file]"));

        let bad = vec![("bogus".to_string(), "1".to_string())];
        assert!(Settings::resolve(&[GLOBAL_KEYS], BTreeMap::new(), &bad, BTreeMap::new()).is_err());
    }
}
