//! Run configuration: a TOML file plus `--dotted.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::imgc::{EvalConfig, EvalMode};
use crate::kgc::{ExtractorConfig, KgeConfig};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "OZSL_CONFIG";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Imgc,
    Kgc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Fixture or dataset directory (schema, words, features or kg).
    pub data: PathBuf,
    /// Artifact directory.
    pub out: PathBuf,
    /// Optional `relation<TAB>entity` candidate file for tail ranking.
    pub candidates: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("runs"),
            candidates: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KgcEvalConfig {
    /// Generated relation embeddings averaged per query.
    pub n_generated: usize,
}

impl Default for KgcEvalConfig {
    fn default() -> Self {
        Self { n_generated: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: Task,
    pub mode: EvalMode,
    pub seed: u64,
    /// Property tags to drop from the schema (`hierarchy`, `attribute`,
    /// `domain_range`, `comment`).
    pub ablate: Vec<String>,
    pub paths: Paths,
    pub encoder: EncoderConfig,
    pub gan: GanConfig,
    pub eval: EvalConfig,
    pub kge: KgeConfig,
    pub extractor: ExtractorConfig,
    pub kgc_eval: KgcEvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::Imgc,
            mode: EvalMode::Standard,
            seed: 7,
            ablate: Vec::new(),
            paths: Paths::default(),
            encoder: EncoderConfig::default(),
            gan: GanConfig::default(),
            eval: EvalConfig::default(),
            kge: KgeConfig::default(),
            extractor: ExtractorConfig::default(),
            kgc_eval: KgcEvalConfig::default(),
        }
    }
}

/// Parses `a.b.c=value` into a path and a TOML value; bare words that are
/// not valid TOML become strings.
fn parse_override(item: &str) -> Result<(Vec<String>, toml::Value)> {
    let item = item.strip_prefix("--").unwrap_or(item);
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    if key.is_empty() {
        return Err(Error::Config(format!("override `{item}` has an empty key")));
    }
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` is not a section")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Loads `file` (or an empty config), applies overrides, and rejects
    /// unknown keys.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    Error::Config(format!("cannot read config {}: {e}", path.display()))
                })?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            let (path, value) = parse_override(item)?;
            set_path(&mut table, &path, value)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.apply_seed();
        Ok(cfg)
    }

    /// Propagates the run seed into every module configuration.
    pub fn apply_seed(&mut self) {
        let s = self.seed;
        self.encoder.seed = s;
        self.gan.seed = s;
        self.eval.seed = s;
        self.eval.classifier.seed = s;
        self.kge.seed = s;
        self.extractor.seed = s;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = RunConfig::load(
            None,
            &[
                "--gan.lr=0.001".into(),
                "--mode=generalized".into(),
                "--seed=3".into(),
                "--ablate=[\"attribute\"]".into(),
                "--paths.data=fx".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.gan.lr, 0.001);
        assert_eq!(cfg.mode, EvalMode::Generalized);
        assert_eq!(cfg.gan.seed, 3);
        assert_eq!(cfg.eval.classifier.seed, 3);
        assert_eq!(cfg.ablate, vec!["attribute".to_string()]);
        assert_eq!(cfg.paths.data, PathBuf::from("fx"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &["--gan.nope=1".into()]).is_err());
        assert!(RunConfig::load(None, &["--nope=1".into()]).is_err());
        assert!(RunConfig::load(None, &["novalue".into()]).is_err());
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "task = \"kgc\"\n[kge]\ndim = 12\nmethod = \"distmult\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(Some(&p), &["--kge.dim=20".into()]).unwrap();
        assert_eq!(cfg.task, Task::Kgc);
        assert_eq!(cfg.kge.dim, 20);
        assert_eq!(cfg.kge.method, crate::kgc::KgeMethod::Distmult);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.to_toml(), back.to_toml());
        let parsed: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(parsed.to_toml(), cfg.to_toml());
    }
}
