//! `key = value` settings: defaults, then a config file, then flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::CliError;

/// One setting a subcommand understands.
#[derive(Debug, Clone, Copy)]
pub struct Key {
    pub name: &'static str,
    pub flag: &'static str,
    /// `None` means unset unless given.
    pub default: Option<&'static str>,
    pub help: &'static str,
    /// Accepts several values; stored comma-separated.
    pub multi: bool,
    pub required: bool,
}

impl Key {
    pub const fn new(name: &'static str, flag: &'static str, default: Option<&'static str>, help: &'static str) -> Self {
        Self {
            name,
            flag,
            default,
            help,
            multi: false,
            required: false,
        }
    }

    pub const fn multi(mut self) -> Self {
        self.multi = true;
        self
    }

    pub const fn required(mut self) -> Self {
        self.required = true;
        self
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are
/// skipped.
pub fn parse_config(text: &str, source: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{source}:{}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::Usage(format!("{source}:{}: empty key", i + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Effective settings of one run.
#[derive(Debug, Clone)]
pub struct Settings {
    keys: &'static [Key],
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Layers `file` and then `flags` over the key defaults. Unknown keys
    /// in the file are rejected.
    pub fn resolve(
        keys: &'static [Key],
        file: Option<(&str, BTreeMap<String, String>)>,
        flags: BTreeMap<String, String>,
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = keys
            .iter()
            .filter_map(|k| k.default.map(|d| (k.name.to_string(), d.to_string())))
            .collect();
        if let Some((source, file)) = file {
            for (k, v) in file {
                if !keys.iter().any(|key| key.name == k) {
                    return Err(CliError::Usage(format!("{source}: unknown setting `{k}`")));
                }
                values.insert(k, v);
            }
        }
        values.extend(flags);
        values.retain(|_, v| !v.is_empty());
        for k in keys.iter().filter(|k| k.required) {
            if !values.contains_key(k.name) {
                return Err(CliError::Usage(format!("missing required setting `{}` (--{})", k.name, k.flag)));
            }
        }
        Ok(Self { keys, values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::Usage(format!("invalid value `{v}` for `{key}`: {e}")))
            })
            .transpose()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?
            .ok_or_else(|| CliError::Usage(format!("missing setting `{key}`")))
    }

    pub fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .map(|v| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect())
            .unwrap_or_default()
    }

    /// Records a resolved value so the log shows what actually ran.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Every known key in declaration order; unset keys are commented out.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in self.keys {
            match self.values.get(k.name) {
                Some(v) => writeln!(s, "{} = {v}", k.name).unwrap(),
                None => writeln!(s, "# {} =", k.name).unwrap(),
            }
        }
        s
    }
}

/// Parses a boolean setting value.
pub fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid value `{v}` for `{key}`: expected true or false"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    static KEYS: &[Key] = &[
        Key::new("seed", "seed", Some("0"), "seed"),
        Key::new("out", "out", None, "run directory").required(),
        Key::new("threads", "threads", None, "workers"),
    ];

    #[test]
    fn comments_and_blanks() {
        let m = parse_config("# header\n\nseed = 3  # trailing\n out=x \n", "c").unwrap();
        assert_eq!(m["seed"], "3");
        assert_eq!(m["out"], "x");
        assert!(parse_config("seed 3\n", "c").is_err());
    }

    #[test]
    fn flags_override_file_and_defaults() {
        let file = parse_config("seed = 3\nout = a\n", "c").unwrap();
        let flags = BTreeMap::from([("seed".to_string(), "9".to_string())]);
        let s = Settings::resolve(KEYS, Some(("c", file)), flags).unwrap();
        assert_eq!(s.get::<u64>("seed").unwrap(), 9);
        assert_eq!(s.raw("out"), Some("a"));
        assert_eq!(s.to_text(), "seed = 9\nout = a\n# threads =\n");
    }

    #[test]
    fn unknown_and_missing_keys_are_usage_errors() {
        let file = parse_config("bogus = 1\nout = a\n", "c").unwrap();
        assert!(matches!(Settings::resolve(KEYS, Some(("c", file)), BTreeMap::new()), Err(CliError::Usage(_))));
        assert!(matches!(Settings::resolve(KEYS, None, BTreeMap::new()), Err(CliError::Usage(_))));
    }
}
