//! Run configuration: a TOML file with sections, overridden by `--set`
//! flags in order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mcenet::eval::ExperimentConfig;
use mcenet::Variant;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "MCENET_OUTPUT_ROOT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset manifests, resolved relative to the config file.
    pub manifests: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub variant: String,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            variant: Variant::HmGp.tag().to_string(),
            output_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub data: DataSection,
    pub run: RunSection,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("override {0:?} must look like section.key=value")]
    Override(String),
    #[error("{0}")]
    Invalid(String),
}

/// Parses `value` as a TOML value, falling back to a plain string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Sets a dotted `key` in `table`, creating intermediate tables.
fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(key.to_string()));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(ConfigError::Invalid(format!("{key}: {part} is not a section"))),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Loads `file` (if any), applies `key=value` overrides in order and
/// deserializes. Relative manifest paths are resolved against the file.
pub fn load_config(file: Option<&Path>, overrides: &[String]) -> Result<CliConfig, ConfigError> {
    let (mut table, base) = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.to_path_buf(),
                source,
            })?;
            let table: toml::Table = text
                .parse()
                .map_err(|e| ConfigError::Syntax(format!("{}: {e}", path.display())))?;
            (table, path.parent().map(Path::to_path_buf))
        }
        None => (toml::Table::new(), None),
    };
    for o in overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
        apply_override(&mut table, key.trim(), parse_value(value.trim()))?;
    }
    let mut cfg: CliConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(format!("invalid config: {e}")))?;
    if let Some(base) = base {
        for m in &mut cfg.data.manifests {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
    }
    Ok(cfg)
}

impl CliConfig {
    pub fn variant(&self) -> Result<Variant, ConfigError> {
        self.run
            .variant
            .parse()
            .map_err(|e: mcenet::Error| ConfigError::Invalid(format!("run.variant: {e}")))
    }

    /// Checks value ranges and that referenced manifests exist.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.variant()?;
        self.experiment
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for m in &self.data.manifests {
            if !m.is_file() {
                return Err(ConfigError::Invalid(format!(
                    "data.manifests: {} does not exist",
                    m.display()
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Output directory: explicit flag, then config, then the environment
/// variable joined with the subcommand name, then `./mcenet-out/<command>`.
pub fn output_dir(flag: Option<&Path>, cfg: &CliConfig, command: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.run.output_dir {
        return p.clone();
    }
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(command),
        None => PathBuf::from("mcenet-out").join(command),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_last_wins() {
        let cfg = load_config(
            None,
            &[
                "experiment.model.epochs=3".into(),
                "experiment.model.epochs=5".into(),
                "run.variant=+gp".into(),
                "experiment.features.grid.reference_frame=global".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.experiment.model.epochs, 5);
        assert_eq!(cfg.variant().unwrap(), Variant::Gp);
        assert_eq!(
            cfg.experiment.features.grid.reference_frame,
            mcenet::context::ReferenceFrame::Global
        );
    }

    #[test]
    fn file_values_are_overridden_and_paths_resolved() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "[data]\nmanifests = [\"a.toml\"]\n[experiment.model]\nepochs = 7\nlstm_hidden = 16\n",
        )
        .unwrap();
        let cfg = load_config(Some(&path), &["experiment.model.epochs=2".into()]).unwrap();
        assert_eq!(cfg.experiment.model.epochs, 2);
        assert_eq!(cfg.experiment.model.lstm_hidden, 16);
        assert_eq!(cfg.data.manifests, vec![dir.path().join("a.toml")]);
        assert!(cfg.validate().is_err(), "manifest does not exist");
    }

    #[test]
    fn unknown_fields_and_bad_values_are_reported() {
        let err = load_config(None, &["experiment.model.epoch=3".into()]).unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
        let err = load_config(None, &["experiment.model.epochs=lots".into()]).unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
        assert!(load_config(None, &["novalue".into()]).is_err());
        let cfg = load_config(None, &["run.variant=+xx".into()]).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn resolved_snapshot_reloads_identically() {
        let cfg = load_config(None, &["experiment.k=5".into(), "experiment.model.num_samples=5".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resolved.toml");
        std::fs::write(&path, cfg.to_toml()).unwrap();
        assert_eq!(load_config(Some(&path), &[]).unwrap(), cfg);
    }
}
