//! Line-oriented `key=value` text shared by run configs, checkpoint headers
//! and reports. Blank lines and lines starting with `#` are ignored.

use std::str::FromStr;

use crate::error::{Error, Result};

/// A configuration section that round-trips through `key=value` pairs.
pub trait KeyValue {
    /// Every key with its current value, in a stable order.
    fn pairs(&self) -> Vec<(String, String)>;
    /// Sets one key; unknown keys are a configuration error.
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
}

pub fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

pub fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v)).collect()
}

pub fn format_list(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub fn unknown_key(key: &str) -> Error {
    Error::Config(format!("unknown key {key:?}"))
}

/// Splits text into `(key, value)` pairs, trimming both sides.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn to_text(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

/// Prefixes every key of `section` with `prefix.`.
pub fn prefixed(prefix: &str, section: &dyn KeyValue) -> Vec<(String, String)> {
    section
        .pairs()
        .into_iter()
        .map(|(k, v)| (format!("{prefix}.{k}"), v))
        .collect()
}

/// Applies `pairs` to `section`, rejecting duplicates.
pub fn apply(section: &mut dyn KeyValue, pairs: &[(String, String)]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for (k, v) in pairs {
        if !seen.insert(k) {
            return Err(Error::Config(format!("duplicate key {k:?}")));
        }
        section.set(k, v)?;
    }
    Ok(())
}

/// 64-bit FNV-1a, used to fingerprint resolved configurations.
pub fn fingerprint(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
