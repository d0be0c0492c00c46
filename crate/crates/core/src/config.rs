//! Experiment files. One TOML document describes a whole pipeline run; a
//! top-level `include` list pulls in other documents (paths relative to the
//! including file) whose tables are merged underneath the including one.

use std::fs;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::train::PipelineConfig;

pub const INCLUDE_KEY: &str = "include";

/// Recursively merges `over` into `base`; tables merge key by key, every
/// other value replaces.
pub fn merge_tables(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge_tables(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

fn load(path: &Path, stack: &mut Vec<PathBuf>) -> Result<Table> {
    let canonical = fs::canonicalize(path).map_err(|e| Error::io(path, e))?;
    if stack.contains(&canonical) {
        return Err(Error::Config(format!("include cycle through {}", path.display())));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: Table = text
        .parse()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let includes = match table.remove(INCLUDE_KEY) {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(Error::Config(format!("{}: include entries must be paths, got {other}", path.display()))),
            })
            .collect::<Result<_>>()?,
        Some(other) => {
            return Err(Error::Config(format!("{}: include must be a path or a list of paths, got {other}", path.display())))
        }
    };
    stack.push(canonical);
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut merged = Table::new();
    for inc in includes {
        merge_tables(&mut merged, load(&dir.join(inc), stack)?);
    }
    stack.pop();
    merge_tables(&mut merged, table);
    Ok(merged)
}

/// Reads `path` with its includes resolved.
pub fn load_table(path: &Path) -> Result<Table> {
    load(path, &mut Vec::new())
}

pub fn pipeline_config_from_table(table: Table) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("pipeline config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_pipeline_config(path: &Path) -> Result<PipelineConfig> {
    pipeline_config_from_table(load_table(path)?)
}

pub fn parse_pipeline_config(text: &str) -> Result<PipelineConfig> {
    let table: Table = text
        .parse()
        .map_err(|e| Error::Config(format!("pipeline config: {e}")))?;
    if table.contains_key(INCLUDE_KEY) {
        return Err(Error::Config("include needs a file path to resolve against".into()));
    }
    pipeline_config_from_table(table)
}

pub fn to_toml<T: serde::Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(format!("config does not serialize: {e}")))
}

pub fn format_pipeline_config(cfg: &PipelineConfig) -> Result<String> {
    to_toml(cfg)
}
