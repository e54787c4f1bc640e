//! The declarative run configuration: a TOML file with `[model]`, `[train]`,
//! `[data]`, `[run]`, `[eval]` and `[synth]` sections, overridden by flags.

use std::path::{Path, PathBuf};

use mbp_core::data::ToyBenchmark;
use mbp_core::infer::InferOptions;
use mbp_core::train::TrainConfig;
use mbp_core::ModelConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset root holding `train/` and `test/`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub dir: PathBuf,
    pub deterministic: bool,
    /// Progress line on stderr every this many steps; 0 is silent.
    pub progress_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            deterministic: false,
            progress_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub tile: usize,
    pub max_pixels: usize,
    pub dump_frames: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        let d = InferOptions::default();
        Self {
            tile: d.tile,
            max_pixels: d.max_pixels,
            dump_frames: false,
        }
    }
}

impl EvalSection {
    pub fn infer(&self) -> InferOptions {
        InferOptions {
            tile: self.tile,
            max_pixels: self.max_pixels,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    pub run: RunSection,
    pub eval: EvalSection,
    pub synth: ToyBenchmark,
}

/// Keys that serialize away when unset.
const OPTIONAL_KEYS: &[(&str, &str)] = &[("train", "grad_clip"), ("data", "root")];

fn defaults_table() -> Table {
    match Value::try_from(RunConfig::default()).expect("default config serializes") {
        Value::Table(t) => t,
        _ => unreachable!(),
    }
}

fn known_keys(defaults: &Table, section: &str) -> Vec<String> {
    let mut keys: Vec<String> = match defaults.get(section) {
        Some(Value::Table(t)) => t.keys().cloned().collect(),
        _ => Vec::new(),
    };
    keys.extend(OPTIONAL_KEYS.iter().filter(|(s, _)| *s == section).map(|(_, k)| k.to_string()));
    keys
}

fn de_section<T: DeserializeOwned>(t: &Table) -> Result<T, String> {
    T::deserialize(Value::Table(t.clone())).map_err(|e| e.message().to_string())
}

/// Builds and validates a [`RunConfig`], reporting every problem at once.
#[derive(Debug, Default)]
pub struct ConfigBuilder {
    tree: Table,
    problems: Vec<String>,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(mut self, path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(self) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        match text.parse::<Table>() {
            Ok(t) => self.tree = t,
            Err(e) => self.problems.push(format!("{}: {}", path.display(), e.message())),
        }
        Ok(self)
    }

    /// `section.key=value`; the value is read as TOML, or as a string if that fails.
    pub fn set_str(&mut self, assignment: &str) {
        let Some((key, raw)) = assignment.split_once('=') else {
            self.problems.push(format!("--set {assignment:?}: expected section.key=value"));
            return;
        };
        let Some((section, field)) = key.trim().split_once('.') else {
            self.problems.push(format!("--set {assignment:?}: key must look like section.key"));
            return;
        };
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(section, field, value);
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<Value>) {
        let entry = self
            .tree
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        match entry {
            Value::Table(t) => {
                t.insert(key.to_string(), value.into());
            }
            _ => self.problems.push(format!("[{section}] must be a table")),
        }
    }

    pub fn set_opt(&mut self, section: &str, key: &str, value: Option<impl Into<Value>>) {
        if let Some(v) = value {
            self.set(section, key, v);
        }
    }

    pub fn build(self) -> Result<RunConfig, CliError> {
        let mut problems = self.problems;
        let defaults = defaults_table();
        let mut merged = defaults.clone();
        for (section, value) in &self.tree {
            let Some(Value::Table(base)) = merged.get_mut(section) else {
                problems.push(format!("unknown section [{section}]"));
                continue;
            };
            let Value::Table(given) = value else {
                problems.push(format!("[{section}] must be a table"));
                continue;
            };
            let known = known_keys(&defaults, section);
            for (k, v) in given {
                if !known.contains(k) {
                    problems.push(format!("unknown key {k:?} in [{section}] (known: {})", known.join(", ")));
                    continue;
                }
                base.insert(k.clone(), v.clone());
            }
        }
        // Per-key type checks so every bad value is named. Bad values are then
        // reset to their defaults so the semantic checks still run everywhere.
        let mut bad = Vec::new();
        for (section, value) in &merged {
            let Value::Table(t) = value else { continue };
            let Some(Value::Table(base)) = defaults.get(section) else { continue };
            for (k, v) in t {
                let mut probe = base.clone();
                probe.insert(k.clone(), v.clone());
                let res = match section.as_str() {
                    "model" => de_section::<ModelConfig>(&probe).map(drop),
                    "train" => de_section::<TrainConfig>(&probe).map(drop),
                    "data" => de_section::<DataSection>(&probe).map(drop),
                    "run" => de_section::<RunSection>(&probe).map(drop),
                    "eval" => de_section::<EvalSection>(&probe).map(drop),
                    "synth" => de_section::<ToyBenchmark>(&probe).map(drop),
                    _ => Ok(()),
                };
                if let Err(e) = res {
                    problems.push(format!("[{section}] {k}: {e}"));
                    bad.push((section.clone(), k.clone(), base.get(k).cloned()));
                }
            }
        }
        for (section, k, default) in bad {
            if let Some(Value::Table(t)) = merged.get_mut(&section) {
                match default {
                    Some(v) => t.insert(k, v),
                    None => t.remove(&k),
                };
            }
        }
        match RunConfig::deserialize(Value::Table(merged)) {
            Ok(cfg) => {
                problems.extend(cfg.problems());
                if problems.is_empty() {
                    Ok(cfg)
                } else {
                    Err(CliError::Config(problems))
                }
            }
            Err(e) => {
                problems.push(e.message().to_string());
                Err(CliError::Config(problems))
            }
        }
    }
}

fn model_problems(m: &ModelConfig) -> Vec<String> {
    match m.validate() {
        Ok(()) => Vec::new(),
        Err(e) => config_messages(&e).into_iter().map(|m| format!("[model] {m}")).collect(),
    }
}

fn eval_problems(e: &EvalSection) -> Vec<String> {
    match e.infer().validate() {
        Ok(()) => Vec::new(),
        Err(err) => config_messages(&err).into_iter().map(|m| format!("[eval] {m}")).collect(),
    }
}

impl RunConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut p = model_problems(&self.model);
        p.extend(self.train.problems().into_iter().map(|m| format!("[train] {m}")));
        p.extend(self.synth.problems().into_iter().map(|m| format!("[synth] {m}")));
        p.extend(eval_problems(&self.eval));
        p
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn config_messages(e: &mbp_core::Error) -> Vec<String> {
    match e {
        mbp_core::Error::Config(m) => m.split("; ").map(str::to_string).collect(),
        other => vec![other.to_string()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_problem_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(
            &p,
            "[model]\nvariant = \"nope\"\nwidth = 3\n[train]\nlr_max = \"high\"\nbatch_size = 0\nfoo = 1\n[extra]\na = 1\n",
        )
        .unwrap();
        let err = ConfigBuilder::new().file(Some(&p)).unwrap().build().unwrap_err();
        let CliError::Config(list) = err else { panic!() };
        let joined = list.join("\n");
        assert!(joined.contains("[extra]"), "{joined}");
        assert!(joined.contains("\"width\""), "{joined}");
        assert!(joined.contains("\"foo\""), "{joined}");
        assert!(joined.contains("variant"), "{joined}");
        assert!(joined.contains("lr_max"), "{joined}");
        assert!(joined.contains("batch_size"), "{joined}");
    }

    #[test]
    fn set_parses_toml_values() {
        let mut b = ConfigBuilder::new();
        b.set_str("train.lr_max=1e-3");
        b.set_str("model.variant=baseline");
        b.set_str("train.patch=\"full\"");
        let cfg = b.build().unwrap();
        assert_eq!(cfg.train.lr_max, 1e-3);
        assert_eq!(cfg.model.variant, mbp_core::Variant::Baseline);
        assert_eq!(cfg.train.patch, None);
    }
}
