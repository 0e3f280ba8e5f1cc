//! Line-oriented `key = value` configuration.
//!
//! Keys before the first `[section]` header apply to every command; a
//! section named after a command overrides them for that command. `#` starts
//! a comment. Every key a command reads is recorded with its resolved value,
//! so the full effective configuration can be echoed next to the outputs and
//! hashed.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Command names accepted as section headers.
pub const COMMANDS: &[&str] = &[
    "generate",
    "pca-fit",
    "db-build",
    "rollout",
    "evaluate",
    "ablate-2x2",
    "ablate-oracle",
    "ablate-dbsize",
    "ablate-ride",
    "ablate-horizon",
    "ablate-history",
    "export-csv",
];

/// Every key some command reads. A shared key outside this list is a typo;
/// a shared key inside it may simply belong to another command.
pub const KNOWN_KEYS: &[&str] = &[
    "alpha",
    "boot_seed",
    "ci_level",
    "config_hash",
    "context_start",
    "count",
    "database",
    "db_frame_hi",
    "db_frame_lo",
    "deterministic",
    "dt",
    "encoder",
    "entries",
    "eval_latents",
    "eval_manifest",
    "eval_manifests",
    "eval_nu",
    "first_id",
    "forcing_amplitude",
    "frame_hi",
    "frame_lo",
    "grid",
    "history_length",
    "horizon",
    "horizons",
    "ic_decay",
    "ic_peak",
    "ic_rms",
    "inputs",
    "k_f",
    "key_dim",
    "label",
    "latents",
    "long_history",
    "method",
    "methods",
    "n_boot",
    "n_components",
    "n_frames",
    "nu",
    "oracle_history",
    "oracle_magnitude",
    "oracle_matching",
    "out",
    "out_dir",
    "pca_model",
    "record_interval",
    "ride_length",
    "ride_lengths",
    "seed",
    "sizes",
    "source_manifest",
    "spinup_time",
    "update_rule",
    "workers",
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
    shared: bool,
}

/// A parsed configuration file.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    shared: BTreeMap<String, Entry>,
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
    /// Directory that relative paths are resolved against.
    base_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config {
                        line,
                        reason: format!("malformed section header `{content}`"),
                    })?
                    .trim();
                if !COMMANDS.contains(&name) {
                    return Err(Error::Config {
                        line,
                        reason: format!("unknown section [{name}]"),
                    });
                }
                cfg.sections.entry(name.to_string()).or_default();
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                reason: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::Config {
                    line,
                    reason: format!("invalid key `{key}`"),
                });
            }
            let target = match &section {
                Some(s) => cfg.sections.get_mut(s).expect("inserted with header"),
                None => &mut cfg.shared,
            };
            let entry = Entry {
                value: value.trim().to_string(),
                line,
                shared: section.is_none(),
            };
            if let Some(prev) = target.insert(key.to_string(), entry) {
                return Err(Error::Config {
                    line,
                    reason: format!("duplicate key `{key}` (first set at line {})", prev.line),
                });
            }
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// Effective settings for `command`.
    pub fn settings(&self, command: &str) -> Result<Settings> {
        if !COMMANDS.contains(&command) {
            return Err(Error::InvalidArgument(format!("unknown command `{command}`")));
        }
        let mut values = self.shared.clone();
        if let Some(sec) = self.sections.get(command) {
            values.extend(sec.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        Ok(Settings {
            command: command.to_string(),
            values,
            base_dir: self.base_dir.clone(),
            resolved: RefCell::new(BTreeMap::new()),
            consumed: RefCell::new(BTreeSet::new()),
        })
    }
}

/// Key lookups for one command, with typed defaults.
#[derive(Debug)]
pub struct Settings {
    command: String,
    values: BTreeMap<String, Entry>,
    base_dir: Option<PathBuf>,
    resolved: RefCell<BTreeMap<String, String>>,
    consumed: RefCell<BTreeSet<String>>,
}

impl Settings {
    /// Settings with no file behind them.
    pub fn empty(command: &str) -> Result<Self> {
        ConfigFile::default().settings(command)
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    /// Sets or replaces a value, as a command-line flag would.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: 0,
                shared: false,
            },
        );
    }

    fn take(&self, key: &str) -> Option<&Entry> {
        debug_assert!(KNOWN_KEYS.contains(&key), "`{key}` missing from KNOWN_KEYS");
        self.consumed.borrow_mut().insert(key.to_string());
        self.values.get(key)
    }

    fn record(&self, key: &str, value: String) {
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    fn parse_entry<T: FromStr>(&self, key: &str, e: &Entry) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        e.value.parse().map_err(|err: T::Err| Error::Config {
            line: e.line,
            reason: format!("[{}] {key} = `{}`: {err}", self.command, e.value),
        })
    }

    pub fn get<T: FromStr + ToString>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = match self.take(key) {
            Some(e) => self.parse_entry(key, e)?,
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn require<T: FromStr + ToString>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let e = self.take(key).ok_or_else(|| Error::Config {
            line: 0,
            reason: format!("[{}] missing required key `{key}`", self.command),
        })?;
        let v: T = self.parse_entry(key, e)?;
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn opt<T: FromStr + ToString>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            Some(e) => {
                let v: T = self.parse_entry(key, e)?;
                self.record(key, v.to_string());
                Ok(Some(v))
            }
            None => {
                self.record(key, "none".into());
                Ok(None)
            }
        }
    }

    pub fn flag(&self, key: &str, default: bool) -> Result<bool> {
        let v = match self.take(key) {
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "1" | "on" => true,
                "false" | "no" | "0" | "off" => false,
                other => {
                    return Err(Error::Config {
                        line: e.line,
                        reason: format!("[{}] {key} = `{other}` is not a boolean", self.command),
                    })
                }
            },
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    /// Comma-separated list; an empty value gives an empty list.
    pub fn list<T: FromStr + ToString + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let v = match self.take(key) {
            Some(e) => e
                .value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|err: T::Err| Error::Config {
                        line: e.line,
                        reason: format!("[{}] {key}: `{s}`: {err}", self.command),
                    })
                })
                .collect::<Result<Vec<T>>>()?,
            None => default.to_vec(),
        };
        self.record(key, v.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        Ok(v)
    }

    fn resolve_path(&self, raw: &str) -> PathBuf {
        let p = PathBuf::from(raw);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p,
        }
    }

    /// A path; relative values resolve against the config file's directory.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        let raw: String = self.require(key)?;
        let p = self.resolve_path(&raw);
        self.record(key, p.display().to_string());
        Ok(p)
    }

    pub fn opt_path(&self, key: &str) -> Result<Option<PathBuf>> {
        Ok(match self.opt::<String>(key)? {
            Some(raw) => {
                let p = self.resolve_path(&raw);
                self.record(key, p.display().to_string());
                Some(p)
            }
            None => None,
        })
    }

    pub fn paths(&self, key: &str) -> Result<Vec<PathBuf>> {
        let raw: Vec<String> = self.list(key, &[])?;
        let ps: Vec<PathBuf> = raw.iter().map(|r| self.resolve_path(r)).collect();
        self.record(
            key,
            ps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
        );
        Ok(ps)
    }

    /// Rejects keys that were set for this command but never read, and
    /// shared keys that no command reads.
    pub fn finish(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        let unknown = |(k, e): &(&String, &Entry)| {
            !consumed.contains(*k) && !(e.shared && KNOWN_KEYS.contains(&k.as_str()))
        };
        if let Some((k, e)) = self.values.iter().find(unknown) {
            return Err(Error::Config {
                line: e.line,
                reason: format!("unknown key `{k}` for command {}", self.command),
            });
        }
        Ok(())
    }

    /// Resolved configuration, one `key = value` per line, sorted by key.
    pub fn echo(&self) -> String {
        let mut out = format!("[{}]\n", self.command);
        for (k, v) in self.resolved.borrow().iter() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Settings::echo`].
    pub fn hash(&self) -> String {
        config_hash(&self.echo())
    }
}

pub fn config_hash(echo: &str) -> String {
    let digest = Sha256::digest(echo.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
