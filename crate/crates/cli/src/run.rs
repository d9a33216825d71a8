use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use medsynth::data::{
    load_records, load_vocabulary, save_records, save_vocabulary, DataKind, RecordDataset,
};

use crate::Common;

pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Effective run config: the config file (if any) with every flag that was
/// given layered on top, then `extra` (switch-style flags).
pub fn resolve<T: DeserializeOwned>(
    common: &Common,
    flags: &impl Serialize,
    extra: &[(&str, Value)],
) -> Result<T> {
    let mut merged = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            match serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
            {
                Value::Object(map) => map,
                _ => bail!("config {} must be a flat JSON object", path.display()),
            }
        }
        None => Map::new(),
    };
    if let Value::Object(given) = serde_json::to_value(flags)? {
        merged.extend(given.into_iter().filter(|(_, v)| !v.is_null()));
    }
    for (key, value) in extra {
        merged.insert(key.to_string(), value.clone());
    }
    serde_json::from_value(Value::Object(merged)).context("invalid configuration")
}

/// Creates the output directory, refusing a non-empty one without `--force`,
/// and echoes the effective config into it.
pub fn prepare_output(common: &Common, config: &impl Serialize) -> Result<PathBuf> {
    let out = &common.out;
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .with_context(|| format!("reading output directory {}", out.display()))?
            .next()
            .is_some();
        if non_empty && !common.force {
            bail!(
                "output directory {} is not empty (use --force to overwrite)",
                out.display()
            );
        }
    }
    fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    let text = serde_json::to_string_pretty(config)? + "\n";
    fs::write(out.join(CONFIG_FILE), text)
        .with_context(|| format!("writing {}", out.join(CONFIG_FILE).display()))?;
    Ok(out.clone())
}

pub fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .with_context(|| format!("missing required input --{flag}"))
}

/// Loads a JSONL dataset. A `vocab.txt` next to the file fixes the column
/// order; otherwise the codes seen in the file are used.
pub fn load_dataset(path: &Path, kind: DataKind) -> Result<RecordDataset> {
    let vocab_path = path.with_file_name(VOCAB_FILE);
    let vocab = if vocab_path.is_file() {
        Some(
            load_vocabulary(&vocab_path)
                .with_context(|| format!("loading {}", vocab_path.display()))?,
        )
    } else {
        None
    };
    load_records(path, vocab.as_ref(), Some(kind))
        .with_context(|| format!("loading {}", path.display()))
}

/// Writes `name` and the shared vocabulary file into `dir`.
pub fn save_dataset(dir: &Path, name: &str, data: &RecordDataset) -> Result<()> {
    save_records(data, dir.join(name))
        .with_context(|| format!("writing {}", dir.join(name).display()))?;
    save_vocabulary(data.vocabulary(), dir.join(VOCAB_FILE))
        .with_context(|| format!("writing {}", dir.join(VOCAB_FILE).display()))
}
