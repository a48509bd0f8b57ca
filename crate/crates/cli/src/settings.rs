//! Layered configuration: built-in defaults (or a preset), then a TOML file,
//! then command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;
use ghost_deblur::blursynth::{ProceduralConfig, SynthConfig};

/// Configuration of `synth`: windowing plus the optional procedural scenes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub synth: SynthConfig,
    pub procedural: ProceduralConfig,
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_path(t: &mut Table, path: &str, v: Value) {
    match path.split_once('.') {
        Some((head, rest)) => {
            let entry = t.entry(head.to_string()).or_insert_with(|| Value::Table(Table::new()));
            if !entry.is_table() {
                *entry = Value::Table(Table::new());
            }
            set_path(entry.as_table_mut().expect("table"), rest, v);
        }
        None => {
            t.insert(path.to_string(), v);
        }
    }
}

/// Read a TOML file into a table.
pub fn read_toml(path: &Path) -> Result<Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("reading config {}: {e}", path.display())))?;
    text.parse::<Table>().map_err(|e| CliError::Usage(format!("parsing config {}: {e}", path.display())))
}

/// `base` overlaid with `file` and then with the dotted-path `flags`.
pub fn layered<T: Serialize + DeserializeOwned>(
    base: &T,
    file: Option<&Path>,
    flags: Vec<(&str, Value)>,
) -> Result<T, CliError> {
    let mut table = Table::try_from(base).map_err(|e| CliError::Usage(format!("serializing defaults: {e}")))?;
    if let Some(p) = file {
        merge(&mut table, read_toml(p)?);
    }
    for (k, v) in flags {
        set_path(&mut table, k, v);
    }
    let origin = file.map_or("flags".to_string(), |p| p.display().to_string());
    T::deserialize(Value::Table(table)).map_err(|e| CliError::Usage(format!("invalid configuration ({origin}): {e}")))
}

/// Pretty TOML of a resolved configuration.
pub fn to_toml<T: Serialize>(cfg: &T) -> Result<String, CliError> {
    toml::to_string_pretty(cfg).map_err(|e| CliError::Usage(format!("serializing configuration: {e}")))
}

/// Collects `(key, value)` overrides for the flags that were given.
#[derive(Default)]
pub struct Flags(pub Vec<(&'static str, Value)>);

impl Flags {
    pub fn int(mut self, key: &'static str, v: Option<u64>) -> Self {
        if let Some(v) = v {
            self.0.push((key, Value::Integer(v as i64)));
        }
        self
    }

    pub fn float(mut self, key: &'static str, v: Option<f64>) -> Self {
        if let Some(v) = v {
            self.0.push((key, Value::Float(v)));
        }
        self
    }

    pub fn value(mut self, key: &'static str, v: Option<Value>) -> Self {
        if let Some(v) = v {
            self.0.push((key, v));
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ghost_deblur::training::TrainConfig;

    #[test]
    fn flags_override_file_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.toml");
        std::fs::write(&f, "epochs = 3\nseed = 5\n[discriminator]\nn_layers = 2\n").unwrap();
        let base = TrainConfig::preset("smoke").unwrap();
        let cfg: TrainConfig = layered(&base, Some(&f), Flags::default().int("seed", Some(9)).0).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.discriminator.n_layers, 2);
        assert_eq!(cfg.discriminator.base_channels, base.discriminator.base_channels);
        assert_eq!(cfg.lr_generator, base.lr_generator);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("c.toml");
        std::fs::write(&f, "epoch = 3\n").unwrap();
        assert!(layered(&TrainConfig::default(), Some(&f), Vec::new()).is_err());
    }

    #[test]
    fn synth_settings_round_trip() {
        let s = SynthSettings::default();
        let back: SynthSettings = layered(&s, None, Vec::new()).unwrap();
        assert_eq!(back, s);
    }
}
