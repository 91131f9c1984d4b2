//! `key=value` run configuration files.
//!
//! Keys are the long flag names, with `-` or `_` accepted interchangeably.
//! Blank lines and lines starting with `#` are ignored. Command-line flags
//! override file values.

use std::collections::HashMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MASC_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "masc_out";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected key=value, got {line:?}", i + 1)))?;
            values.insert(normalize(k), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("--config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize(key)).map(String::as_str)
    }

    /// Flag value, else file value, else nothing.
    pub fn opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Config(format!("config key {key}: {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn get<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    /// A switch is on when the flag is given or the file sets it true.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.opt::<bool>(None, key)?.unwrap_or(false))
    }

    /// Output directory: flag, file, environment, then the default.
    pub fn out_dir(&self, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        if let Some(p) = self.opt(flag, "out")? {
            return Ok(p);
        }
        Ok(std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)))
    }

    /// A required input path that must exist.
    pub fn existing_path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        let flag_name = format!("--{}", key.replace('_', "-"));
        let p = self
            .opt(flag, key)?
            .ok_or_else(|| CliError::Config(format!("{flag_name} is required")))?;
        if !p.exists() {
            return Err(CliError::Config(format!("{flag_name}: {} does not exist", p.display())));
        }
        Ok(p)
    }
}

/// `WIDTHxHEIGHT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims(pub usize, pub usize);

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
        let w = w.trim().parse::<usize>().map_err(|e| e.to_string())?;
        let h = h.trim().parse::<usize>().map_err(|e| e.to_string())?;
        if w == 0 || h == 0 {
            return Err("dimensions must be positive".into());
        }
        Ok(Dims(w, h))
    }
}

/// `N` or `MIN-MAX`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountRange(pub usize, pub usize);

impl FromStr for CountRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
        match s.split_once('-') {
            Some((a, b)) => Ok(CountRange(parse(a)?, parse(b)?)),
            None => {
                let n = parse(s)?;
                Ok(CountRange(n, n))
            }
        }
    }
}

pub fn unit_interval(name: &str, v: f64) -> Result<f64, CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(CliError::Config(format!("--{name} must be in [0, 1], got {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let c = ConfigFile::parse("# run\npatch-size = 640\niou_thresh=0.3\n\noverlay=true\n").unwrap();
        assert_eq!(c.get::<usize>(None, "patch_size", 1280).unwrap(), 640);
        assert_eq!(c.get::<usize>(Some(320), "patch_size", 1280).unwrap(), 320);
        assert_eq!(c.get::<f64>(None, "iou-thresh", 0.25).unwrap(), 0.3);
        assert_eq!(c.get::<f64>(None, "conf", 0.25).unwrap(), 0.25);
        assert!(c.switch(false, "overlay").unwrap());
        assert!(ConfigFile::parse("novalue").is_err());
        assert!(c.get::<usize>(None, "iou_thresh", 1).is_err());
    }

    #[test]
    fn value_types() {
        assert_eq!("640x480".parse::<Dims>().unwrap(), Dims(640, 480));
        assert!("640".parse::<Dims>().is_err());
        assert_eq!("20".parse::<CountRange>().unwrap(), CountRange(20, 20));
        assert_eq!("18-22".parse::<CountRange>().unwrap(), CountRange(18, 22));
    }
}
