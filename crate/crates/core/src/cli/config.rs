//! Flat `key=value` config files merged under command-line flags.

use crate::error::{Error, Result};
use crate::io::read_string;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

/// Parses `key = value` lines; `#` starts a comment line, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("config line {}: expected key=value", i + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::config(format!("config line {}: empty key", i + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::config(format!("config line {}: duplicate key '{k}'", i + 1)));
        }
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read_string(path).map_err(|e| match e {
        Error::Io { .. } => Error::config(format!("cannot read config {}: {e}", path.display())),
        e => e,
    })?;
    parse_config(&text)
}

/// Resolves settings as flag, then config file, then default, recording the
/// effective value of every key it resolves.
#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    effective: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Resolver {
            file,
            effective: BTreeMap::new(),
        }
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.file.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::config(format!("config key '{key}': cannot parse '{v}': {e}"))),
        }
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let file = self.from_file(key)?;
        let v = flag.or(file).unwrap_or(default);
        self.effective.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Optional setting; absent values are recorded as empty strings.
    pub fn get_opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let file = self.from_file(key)?;
        let v = flag.or(file);
        self.effective
            .insert(key.to_string(), v.as_ref().map(|x| x.to_string()).unwrap_or_default());
        Ok(v)
    }

    pub fn require<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: Display,
    {
        self.get_opt(key, flag)?
            .ok_or_else(|| Error::config(format!("missing required setting '{key}' (flag --{key})")))
    }

    /// Drops a recorded key, e.g. an output directory that must not leak into reports.
    pub fn forget(&mut self, key: &str) {
        self.effective.remove(key);
    }

    /// Fails on leftover config keys that no subcommand understands.
    ///
    /// Keys belonging to other subcommands are skipped, so one file can
    /// drive a whole pipeline.
    pub fn finish(self) -> Result<BTreeMap<String, String>> {
        if let Some(k) = self.file.keys().find(|k| !super::is_known_key(k)) {
            return Err(Error::config(format!("unknown config key '{k}'")));
        }
        Ok(self.effective)
    }
}

/// `on/off`-style boolean accepted on flags and in config files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Switch(pub bool);

impl FromStr for Switch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" | "true" | "yes" | "1" => Ok(Switch(true)),
            "off" | "false" | "no" | "0" => Ok(Switch(false)),
            other => Err(Error::config(format!("expected on | off, got '{other}'"))),
        }
    }
}

impl Display for Switch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.0 { "on" } else { "off" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let m = parse_config("# c\nepochs = 3\n\nlr=0.5\n").unwrap();
        assert_eq!(m["epochs"], "3");
        assert_eq!(m["lr"], "0.5");
        assert!(parse_config("epochs 3").is_err());
        assert!(parse_config("a=1\na=2").is_err());
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut r = Resolver::new(parse_config("epochs=3\nlr=0.5").unwrap());
        assert_eq!(r.get("epochs", Some(7usize), 1).unwrap(), 7);
        assert_eq!(r.get("lr", None, 0.1f64).unwrap(), 0.5);
        assert_eq!(r.get("seed", None, 9u64).unwrap(), 9);
        let eff = r.finish().unwrap();
        assert_eq!(eff["epochs"], "7");
        assert_eq!(eff["lr"], "0.5");
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut r = Resolver::new(parse_config("epochs=3\nbogus=1").unwrap());
        r.get("epochs", None, 1usize).unwrap();
        assert!(matches!(r.finish(), Err(Error::Config(_))));
        // A key used by some other subcommand is tolerated and not echoed.
        let r = Resolver::new(parse_config("budget=5").unwrap());
        assert!(r.finish().unwrap().is_empty());
        let mut r = Resolver::new(parse_config("epochs=x").unwrap());
        assert!(r.get("epochs", None, 1usize).is_err());
    }
}
