//! Layered run configuration: TOML file, then `--set key=value` dotted-path
//! overrides, then explicit subcommand flags. Unknown keys are rejected, and
//! every run writes a resolved snapshot next to its outputs so it can be
//! replayed exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthesis::SynthesisConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub synthesis: SynthesisConfig,
    pub training: TrainConfig,
}

/// Reads the optional config file and applies `--set` overrides in order.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<AppConfig> {
    let mut table = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for set in sets {
        apply_set(&mut table, set)?;
    }
    table
        .try_into::<AppConfig>()
        .map_err(|e| Error::Config(e.to_string()))
}

/// Applies one `key.path=value` override. Values parse as TOML scalars or
/// arrays, falling back to a plain string.
fn apply_set(table: &mut toml::Table, kv: &str) -> Result<()> {
    let (key, raw_value) = kv
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("--set expects key=value, got `{kv}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Usage("--set key must not be empty".into()));
    }
    let value = parse_toml_value(raw_value.trim());

    let parts: Vec<&str> = key.split('.').collect();
    let mut current = table;
    for part in &parts[..parts.len() - 1] {
        let entry = current
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        current = entry.as_table_mut().ok_or_else(|| {
            Error::Usage(format!("--set {key}: `{part}` is not a table"))
        })?;
    }
    current.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_toml_value(raw: &str) -> toml::Value {
    // reuse the TOML grammar for scalars/arrays; unparseable input is a string
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key v was just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[derive(Serialize)]
struct Snapshot<'a> {
    run: RunInfo,
    config: &'a AppConfig,
}

#[derive(Serialize)]
struct RunInfo {
    command: String,
    args: toml::Table,
}

/// Writes `resolved.toml` next to a run's outputs: the subcommand, its
/// arguments, and the fully resolved configuration.
pub fn write_snapshot(
    out_dir: &Path,
    command: &str,
    args: toml::Table,
    cfg: &AppConfig,
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let snapshot = Snapshot {
        run: RunInfo {
            command: command.to_string(),
            args,
        },
        config: cfg,
    };
    let text = toml::to_string_pretty(&snapshot)
        .map_err(|e| Error::Config(format!("snapshot serialization failed: {e}")))?;
    let path = out_dir.join("resolved.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_round_trip() {
        let cfg = load_config(None, &[]).unwrap();
        assert_eq!(cfg.training.epochs, 80);
        assert_eq!(cfg.training.batch_size, 2);
        assert_eq!(cfg.training.learning_rate, 2e-4);
        assert_eq!(cfg.training.n_steps, 3);
        assert_eq!(cfg.synthesis.alpha_range, (0.8, 1.0));
        // serialized config reparses to itself
        let text = toml::to_string_pretty(&cfg).unwrap();
        let reparsed: AppConfig = toml::from_str(&text).unwrap();
        assert_eq!(reparsed.training.epochs, cfg.training.epochs);
    }

    #[test]
    fn set_overrides_apply_with_types() {
        let sets = vec![
            "training.epochs=3".to_string(),
            "training.learning_rate=0.001".to_string(),
            "training.subnet.base_channels=8".to_string(),
            "synthesis.alpha_range=[0.9, 1.0]".to_string(),
            "training.ablation=\"no_iteration\"".to_string(),
        ];
        let cfg = load_config(None, &sets).unwrap();
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.learning_rate, 0.001);
        assert_eq!(cfg.training.subnet.base_channels, 8);
        assert_eq!(cfg.synthesis.alpha_range, (0.9, 1.0));
        assert_eq!(cfg.training.ablation, Some(crate::training::Ablation::NoIteration));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(load_config(None, &["training.bogus=1".to_string()]).is_err());
        assert!(load_config(None, &["mystery.section=1".to_string()]).is_err());
        assert!(load_config(None, &["not-an-assignment".to_string()]).is_err());
    }

    #[test]
    fn file_then_sets_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        fs::write(&path, "[training]\nepochs = 5\nbatch_size = 4\n").unwrap();
        let cfg = load_config(Some(&path), &["training.epochs=9".to_string()]).unwrap();
        assert_eq!(cfg.training.epochs, 9); // --set wins over the file
        assert_eq!(cfg.training.batch_size, 4);
    }

    #[test]
    fn snapshot_written_and_replayable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load_config(None, &["training.seed=11".to_string()]).unwrap();
        let mut args = toml::Table::new();
        args.insert("n".into(), toml::Value::Integer(4));
        let path = write_snapshot(dir.path(), "synth", args, &cfg).unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert!(text.contains("command = \"synth\""));
        assert!(text.contains("seed = 11"));
    }
}
