//! Resolution of run settings: built-in defaults, then a `key = value`
//! config file, then command-line values. Every setting is a string key so
//! a manifest written after a run can be fed back as a config file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use hdphase::io::parse_key_values;
use hdphase::Error;

/// Keys a manifest adds beyond the settings; ignored when read back.
fn is_manifest_key(k: &str) -> bool {
    k == "command" || k == "version" || k.ends_with("_sha256")
}

#[derive(Clone, Debug)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Input(msg.into()).into()
}

impl Settings {
    pub fn resolve(
        defaults: &[(&str, String)],
        config: Option<&Path>,
        overrides: &[(String, String)],
    ) -> anyhow::Result<Settings> {
        let mut values: BTreeMap<String, String> = defaults.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let mut apply = |k: &str, v: &str, origin: &str| -> anyhow::Result<()> {
            match values.get_mut(k) {
                Some(slot) => {
                    *slot = v.to_string();
                    Ok(())
                }
                None => Err(input_error(format!("unknown setting {k:?} in {origin}"))),
            }
        };
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
            let map = parse_key_values(&text)?;
            for (k, v) in &map {
                if !is_manifest_key(k) {
                    apply(k, v, &path.display().to_string())?;
                }
            }
        }
        for (k, v) in overrides {
            apply(k, v, "command-line options")?;
        }
        Ok(Settings { values })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("setting {key} has no default"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<T>
    where
        T::Err: Display,
    {
        let raw = self.str(key);
        raw.parse()
            .map_err(|e| input_error(format!("setting {key} = {raw:?}: {e}")))
    }

    /// `auto` or empty means unset.
    pub fn optional<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.str(key) {
            "" | "auto" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    /// One of the allowed words.
    pub fn choice<'a>(&self, key: &str, allowed: &[&'a str]) -> anyhow::Result<&'a str> {
        let raw = self.str(key);
        allowed
            .iter()
            .find(|&&a| a == raw)
            .copied()
            .ok_or_else(|| input_error(format!("setting {key} = {raw:?}: expected one of {}", allowed.join(", "))))
    }

    pub fn path(&self, key: &str) -> anyhow::Result<&Path> {
        match self.str(key) {
            "" => Err(input_error(format!("setting {key} is required"))),
            p => Ok(Path::new(p)),
        }
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

/// Parses `key=value` pairs given with `--set`.
pub fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
