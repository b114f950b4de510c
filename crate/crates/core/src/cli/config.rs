//! Flat `key = value` config files and flag/file/default resolution.
//!
//! Keys are long flag names without the leading dashes. Blank lines and
//! lines starting with `#` are ignored. A `run.json` written by a previous
//! run is accepted too; its `effective_config` object is used.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use super::CliError;

pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "exemplars",
    "contexts",
    "per-class",
    "context-mode",
    "no-scaling",
    "no-shearing",
    "no-rotation",
    "no-colouring",
    "tilt",
    "scale-range",
    "shear-range",
    "rotation-range",
    "colour-range",
    "tilt-range",
    "focal",
    "canvas",
    "long-side",
    "interp",
    "alpha-threshold",
    "black-substitute",
    "format",
    "n",
    "manifest",
    "plan",
    "synth",
    "real",
    "pred",
    "gt",
    "iou",
    "ap",
    "respect-difficult",
    "check-images",
    "csv",
    "images",
    "name",
];

pub type ConfigMap = BTreeMap<String, String>;

pub fn parse_config_text(text: &str) -> Result<ConfigMap, CliError> {
    let mut map = ConfigMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "config line {}: expected `key = value`",
                i + 1
            )));
        };
        let key = k.trim().trim_start_matches("--").to_owned();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(CliError::Usage(format!("config line {}: unknown key `{key}`", i + 1)));
        }
        map.insert(key, v.trim().to_owned());
    }
    Ok(map)
}

pub fn load_config(path: &Path) -> Result<ConfigMap, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let Some(obj) = v.get("effective_config").and_then(|c| c.as_object()) else {
            return Err(CliError::Usage(format!(
                "{}: no `effective_config` object",
                path.display()
            )));
        };
        let mut map = ConfigMap::new();
        for (k, v) in obj {
            let s = v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string());
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(CliError::Usage(format!("{}: unknown key `{k}`", path.display())));
            }
            map.insert(k.clone(), s);
        }
        return Ok(map);
    }
    parse_config_text(&text)
}

/// Resolves each setting as flag, then config file, then default, and
/// records the effective value.
pub struct Resolver<'a> {
    file: &'a ConfigMap,
    pub effective: ConfigMap,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigMap) -> Self {
        Resolver {
            file,
            effective: ConfigMap::new(),
        }
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|s| {
                s.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("config `{key}`: {e}")))
            })
            .transpose()
    }

    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.effective.insert(key.to_owned(), v.to_string());
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.effective.insert(key.to_owned(), v.to_string());
        }
        Ok(v)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required option --{key}")))
    }

    /// Switch flags: present on the command line means true.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool, CliError> {
        self.get(key, flag.then_some(true), false)
    }
}

/// `lo,hi` pair of reals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range(pub [f64; 2]);

impl FromStr for Range {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("`{s}` is not `lo,hi`"))?;
        let p = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
        Ok(Range([p(a)?, p(b)?]))
    }
}

impl Display for Range {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.0[0], self.0[1])
    }
}

/// `WxH` pixel size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Size(pub [u32; 2]);

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("`{s}` is not `WxH`"))?;
        let p = |x: &str| x.trim().parse::<u32>().map_err(|e| format!("`{x}`: {e}"));
        Ok(Size([p(a)?, p(b)?]))
    }
}

impl Display for Size {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.0[0], self.0[1])
    }
}
