//! Resolution of option values: flag, then `LEAFLITE_*` environment
//! variable, then the config file, then the built-in default.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::ArgMatches;

use crate::CliError;

/// Parses flat `key=value` text; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", i + 1)))?;
        map.insert(normalize(k.trim()), v.trim().to_string());
    }
    Ok(map)
}

fn normalize(key: &str) -> String {
    key.replace('-', "_").to_ascii_lowercase()
}

pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: Vec<(String, String, &'static str)>,
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self, CliError> {
        let file = match config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Engine(leaflite::Error::Io { path: p.to_path_buf(), source: e }))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Resolver {
            file,
            resolved: Vec::new(),
        })
    }

    /// Resolves option `id` (the clap argument id). `cli` is what clap
    /// parsed from the flag or environment.
    pub fn get<T>(&mut self, matches: &ArgMatches, id: &str, cli: Option<T>, default: Option<T>) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let (value, source) = if let Some(v) = cli {
            let declared = matches.ids().any(|i| i.as_str() == id);
            let source = match declared.then(|| matches.value_source(id)).flatten() {
                Some(ValueSource::EnvVariable) => "env",
                _ => "flag",
            };
            (v, source)
        } else if let Some(raw) = self.file.get(&normalize(id)) {
            let v = raw
                .parse()
                .map_err(|e| CliError::Usage(format!("config key {id}: cannot parse {raw:?}: {e}")))?;
            (v, "config")
        } else if let Some(v) = default {
            (v, "default")
        } else {
            return Err(CliError::Usage(format!(
                "missing --{} (or LEAFLITE_{}, or config key {})",
                id.replace('_', "-"),
                id.to_ascii_uppercase(),
                id
            )));
        };
        self.resolved.push((id.to_string(), value.to_string(), source));
        Ok(value)
    }

    pub fn opt<T>(&mut self, matches: &ArgMatches, id: &str, cli: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        if cli.is_none() && !self.file.contains_key(&normalize(id)) {
            return Ok(None);
        }
        self.get(matches, id, cli, None).map(Some)
    }

    /// `key=value  # source` lines for the run directory.
    pub fn to_text(&self, command: &str) -> String {
        let mut s = format!("command={command}\n");
        for (k, v, src) in &self.resolved {
            s += &format!("{k}={v}  # {src}\n");
        }
        s
    }
}

/// `on`/`off` switch usable from flags, environment and config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Switch(pub bool);

impl FromStr for Switch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "on" | "true" | "yes" | "1" => Ok(Switch(true)),
            "off" | "false" | "no" | "0" => Ok(Switch(false)),
            _ => Err(format!("expected on or off, got {s:?}")),
        }
    }
}

impl Display for Switch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.0 { "on" } else { "off" })
    }
}

/// Path wrapper so paths go through the same resolution as other values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathArg(pub std::path::PathBuf);

impl FromStr for PathArg {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(PathArg(s.into()))
    }
}

impl Display for PathArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0.display())
    }
}
