//! Command options merged from an optional `key = value` config file and the
//! command line, with the command line taking precedence.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::ArgMatches;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
enum Origin {
    CommandLine,
    File { path: PathBuf, line: usize },
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    values: BTreeMap<String, (String, Origin)>,
}

/// Config keys may use `_` or `-`; flags use `-`.
fn normalize_key(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl Options {
    /// Reads `--config` (if given) and overlays every option set on the
    /// command line. `known` lists the keys the command accepts.
    pub fn collect(matches: &ArgMatches, known: &[&str]) -> CliResult<Self> {
        let mut opts = Options::default();
        if let Some(path) = matches.get_one::<String>("config") {
            opts.read_file(Path::new(path), known)?;
        }
        for id in matches.ids() {
            let id = id.as_str();
            if id == "config" || matches.value_source(id) != Some(ValueSource::CommandLine) {
                continue;
            }
            let value = match matches.try_get_one::<bool>(id) {
                Ok(Some(flag)) => flag.to_string(),
                _ => matches.get_one::<String>(id).cloned().unwrap_or_default(),
            };
            opts.values.insert(id.to_string(), (value, Origin::CommandLine));
        }
        Ok(opts)
    }

    fn read_file(&mut self, path: &Path, known: &[&str]) -> CliResult<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(CliError::config(
                    "config",
                    format!("{}:{line}: expected `key = value`", path.display()),
                ));
            };
            let key = normalize_key(key);
            if key == "config" || !known.contains(&key.as_str()) {
                return Err(CliError::config(key, format!("{}:{line}: unknown key", path.display())));
            }
            let value = value.trim().trim_matches('"').to_string();
            self.values.insert(
                key,
                (
                    value,
                    Origin::File {
                        path: path.to_path_buf(),
                        line,
                    },
                ),
            );
        }
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    /// Parses `key` if present.
    pub fn get<T>(&self, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some((value, origin)) = self.values.get(key) else {
            return Ok(None);
        };
        value.parse::<T>().map(Some).map_err(|e| {
            let location = match origin {
                Origin::CommandLine => String::new(),
                Origin::File { path, line } => format!(" ({}:{line})", path.display()),
            };
            CliError::config(key, format!("cannot parse `{value}`: {e}{location}"))
        })
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T>(&self, key: &str) -> CliResult<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| CliError::config(key, "is required"))
    }

    pub fn flag(&self, key: &str) -> CliResult<bool> {
        self.get_or(key, false)
    }

    /// Comma-separated list of values.
    pub fn list<T>(&self, key: &str) -> CliResult<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.raw(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|item| {
                item.trim()
                    .parse::<T>()
                    .map_err(|e| CliError::config(key, format!("cannot parse `{}`: {e}", item.trim())))
            })
            .collect::<CliResult<Vec<T>>>()
            .map(Some)
    }
}

/// Seeds from `--seed N` or `--seeds` given as a comma list whose items are
/// integers or half-open ranges `a..b`. Defaults to seed 0.
pub fn seeds(opts: &Options) -> CliResult<Vec<u64>> {
    match (opts.contains("seed"), opts.raw("seeds")) {
        (true, Some(_)) => Err(CliError::config("seeds", "give either --seed or --seeds, not both")),
        (true, None) => Ok(vec![opts.require::<u64>("seed")?]),
        (false, None) => Ok(vec![0]),
        (false, Some(raw)) => {
            let mut out = Vec::new();
            for item in raw.split(',').map(str::trim) {
                let parse = |s: &str| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|e| CliError::config("seeds", format!("cannot parse `{s}`: {e}")))
                };
                match item.split_once("..") {
                    Some((a, b)) => {
                        let (a, b) = (parse(a)?, parse(b)?);
                        if a >= b {
                            return Err(CliError::config("seeds", format!("empty range `{item}`")));
                        }
                        out.extend(a..b);
                    }
                    None => out.push(parse(item)?),
                }
            }
            let mut seen = std::collections::BTreeSet::new();
            if let Some(dup) = out.iter().find(|s| !seen.insert(**s)) {
                return Err(CliError::config("seeds", format!("seed {dup} listed twice")));
            }
            Ok(out)
        }
    }
}
