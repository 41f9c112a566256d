//! Key-value config files and flag/file/default resolution.
//!
//! Format: one `key = value` per line, `#` starts a comment. Lists are
//! comma-separated.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "tau_p",
    "tau_r",
    "band",
    "folds",
    "seed",
    "grid",
    "patch_size",
    "dilation_mm",
    "connectivity",
    "jobs",
    "subject",
    "n_subjects",
    "lesions_per_subject",
    "prl_fraction",
    "rim_thickness_vox",
    "partial_rim_fraction",
    "rim_arc_degrees",
    "noise_sigma",
    "blur_radius_vox",
    "spacing",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`", n + 1);
            };
            let key = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key `{key}`", n + 1);
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                bail!("line {}: duplicate key `{key}`", n + 1);
            }
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key).map(|v| parse_scalar(key, v)).transpose()
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        self.raw(key).map(|v| parse_list(key, v)).transpose()
    }
}

pub fn parse_scalar<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.trim()
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value `{v}` for {key}: {e}"))
}

pub fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_scalar(key, s))
        .collect()
}

pub fn parse_pair<T: FromStr + Copy>(key: &str, v: &str) -> Result<(T, T)>
where
    T::Err: Display,
{
    match parse_list::<T>(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => bail!("{key} expects two comma-separated values, got `{v}`"),
    }
}

pub fn parse_triple<T: FromStr + Copy>(key: &str, v: &str) -> Result<[T; 3]>
where
    T::Err: Display,
{
    match parse_list::<T>(key, v)?.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!("{key} expects three comma-separated values, got `{v}`"),
    }
}

/// Flag value if given, else config file value, else the default.
pub fn resolve<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T>
where
    T::Err: Display,
{
    Ok(match flag {
        Some(v) => v,
        None => file.get(key)?.unwrap_or(default),
    })
}

/// As [`resolve`] for values given as raw text with a custom parser.
pub fn resolve_with<T>(
    flag: Option<&str>,
    file: &ConfigFile,
    key: &str,
    default: T,
    parse: impl Fn(&str, &str) -> Result<T>,
) -> Result<T> {
    match flag.or_else(|| file.raw(key)) {
        Some(v) => parse(key, v),
        None => Ok(default),
    }
}
