//! Stats file: one `key=value` per line. Frame statistics come first, in
//! the order of [`FrameStats::key_values`], followed by run-level entries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use hpsf_core::FrameStats;

use crate::error::{Error, Result};

pub fn format(stats: &FrameStats, extra: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in stats.key_values() {
        let _ = writeln!(out, "{k}={v}");
    }
    for (k, v) in extra {
        let _ = writeln!(out, "{k}={v}");
    }
    out
}

pub fn write(path: &Path, stats: &FrameStats, extra: &[(String, String)]) -> Result<()> {
    std::fs::write(path, format(stats, extra)).map_err(|e| Error::io(path, e))
}

/// Reads a stats file back. Fails on lines without `=` and repeated keys.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse("stats", i + 1, "expected key=value"))?;
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::parse("stats", i + 1, format!("repeated key '{k}'")));
        }
    }
    Ok(map)
}
