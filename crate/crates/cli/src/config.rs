//! Training configuration from a TOML file plus command-line overrides.
//!
//! ```toml
//! seed = 7
//!
//! [training]
//! epochs = 30
//! lr = 1e-3
//!
//! [model]
//! dim = 100
//!
//! [contrastive]
//! beta = 0.1
//! ```
//!
//! Keys left out take their defaults. Precedence, lowest first: file,
//! `--set section.key=value`, then `--seed` / `--epochs` / `--ablation`.

use std::path::Path;

use simcgnn::training::{Ablation, TrainConfig};

use crate::error::{read, CliError, CliResult};

/// `name=on|off` for one ablation flag.
pub fn parse_ablation(arg: &str) -> CliResult<(Ablation, bool)> {
    let (name, state) = arg
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("ablation `{arg}` must look like name=on|off")))?;
    let flag: Ablation = name.trim().parse().map_err(CliError::Core)?;
    let on = match state.trim() {
        "on" => true,
        "off" => false,
        other => return Err(CliError::usage(format!("ablation state `{other}` must be on or off"))),
    };
    Ok((flag, on))
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_set(table: &mut toml::Table, arg: &str) -> CliResult<()> {
    let (path, raw) = arg
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override `{arg}` must look like section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::usage(format!("bad override key `{path}`")));
    }
    let (last, parents) = keys.split_last().expect("split yields one key");
    let mut node = table;
    for key in parents {
        node = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::usage(format!("`{key}` is not a section")))?;
    }
    node.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

#[derive(Debug, Default)]
pub struct Overrides {
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub ablations: Vec<String>,
}

/// Merges the file and overrides into a validated configuration.
pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> CliResult<TrainConfig> {
    let mut table = match file {
        Some(path) => read(path)?
            .parse::<toml::Table>()
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?,
        None => toml::Table::new(),
    };
    for arg in &overrides.sets {
        apply_set(&mut table, arg)?;
    }
    let mut config: TrainConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::usage(format!("configuration: {e}")))?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(epochs) = overrides.epochs {
        config.schedule.epochs = epochs;
    }
    for arg in &overrides.ablations {
        let (flag, on) = parse_ablation(arg)?;
        config.set_flag(flag, on);
    }
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_defaults() {
        assert_eq!(resolve(None, &Overrides::default()).unwrap(), TrainConfig::default());
    }

    #[test]
    fn overrides_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 3\n[training]\nepochs = 4\nlr = 0.01\n[model]\ndim = 8\n").unwrap();
        let o = Overrides {
            sets: vec!["training.lr=0.5".into(), "contrastive.strategy=random".into()],
            seed: Some(9),
            epochs: None,
            ablations: vec!["norm=off".into()],
        };
        let c = resolve(Some(&path), &o).unwrap();
        assert_eq!((c.seed, c.schedule.epochs, c.schedule.lr, c.model.dim), (9, 4, 0.5, 8));
        assert!(!c.model.normalize);
        assert_eq!(c.contrastive.strategy, simcgnn::contrastive::NegativeStrategy::Random);
        assert_eq!(c.schedule.batch_size, TrainConfig::default().schedule.batch_size);
    }

    #[test]
    fn conflicts_and_typos_are_usage_errors() {
        let o = Overrides {
            ablations: vec!["contrast=off".into(), "weakneg=on".into()],
            ..Overrides::default()
        };
        assert!(matches!(
            resolve(None, &o),
            Err(CliError::Core(simcgnn::Error::Config(_)))
        ));
        let o = Overrides {
            sets: vec!["training.epoch=3".into()],
            ..Overrides::default()
        };
        assert!(matches!(resolve(None, &o), Err(CliError::Usage(_))));
        assert!(parse_ablation("contrast").is_err());
        assert!(parse_ablation("contrast=maybe").is_err());
        assert!(parse_ablation("dropout=off").is_err());
    }
}
