//! Turning a TOML config file into command-line flags.
//!
//! Top-level keys are global flags (`seed`, `threads`); the table named
//! after the subcommand holds its flags. Keys use snake_case or the flag
//! spelling. Config flags are placed before the user's own flags, so the
//! latter win.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

fn flag_values(key: &str, value: &toml::Value) -> Result<Vec<String>, CliError> {
    let flag = format!("--{}", key.replace('_', "-"));
    Ok(match value {
        toml::Value::Boolean(true) => vec![flag],
        toml::Value::Boolean(false) => vec![],
        toml::Value::String(s) => vec![flag, s.clone()],
        toml::Value::Integer(i) => vec![flag, i.to_string()],
        toml::Value::Float(f) => vec![flag, f.to_string()],
        other => {
            return Err(CliError::Usage(format!("config key `{key}` has unsupported value {other}")));
        }
    })
}

/// Config file named by `--config` in `argv`, if any.
pub fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// `argv` with the config file's flags spliced in after the subcommand.
pub fn expand_argv(argv: Vec<String>, subcommands: &[&str]) -> Result<Vec<String>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let Some(pos) = argv.iter().skip(1).position(|a| subcommands.contains(&a.as_str())) else {
        return Ok(argv);
    };
    let pos = pos + 1;
    let sub = argv[pos].as_str();
    let mut injected = Vec::new();
    for (key, value) in &table {
        match value {
            toml::Value::Table(section) if key.replace('_', "-") == sub => {
                for (k, v) in section {
                    injected.extend(flag_values(k, v)?);
                }
            }
            toml::Value::Table(_) => {}
            v => injected.extend(flag_values(key, v)?),
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

#[derive(Serialize)]
struct Echo<'a, G: Serialize, A: Serialize> {
    #[serde(flatten)]
    global: &'a G,
    #[serde(flatten)]
    section: std::collections::BTreeMap<&'a str, &'a A>,
}

/// Write the resolved flags as `<sub>.toml` in `dir`, in the same layout
/// `--config` reads.
pub fn echo_config<G: Serialize, A: Serialize>(dir: &Path, global: &G, sub: &str, args: &A) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    let echo = Echo {
        global,
        section: [(sub, args)].into_iter().collect(),
    };
    let text = toml::to_string(&echo).map_err(|e| CliError::Usage(format!("config echo: {e}")))?;
    let path = dir.join(format!("{sub}.toml"));
    std::fs::write(&path, text).map_err(|e| CliError::Io(path, e))
}
