//! Flat `key = value` configuration with `[section]` headers.
//!
//! ```text
//! [render]
//! spp = 4
//! frames = 30
//!
//! [filter]
//! s_pixels = 3
//! jitter = true
//!
//! [table]
//! capacity = 65536
//!
//! [temporal]
//! temporal_mode = hybrid
//! ```
//!
//! Keys may also appear before the first section header. Every key belongs
//! to exactly one section; a key under the wrong header is an error.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use hpsf_core::temporal::TemporalMode;
use hpsf_core::{FilterConfig, SumMode};

use crate::error::{Error, Result};

const RENDER: &[&str] = &["scene", "spp", "seed", "frames", "threads", "mode", "out", "width", "height", "vertices"];
const FILTER: &[&str] = &[
    "s_pixels",
    "include_normal",
    "normal_bins",
    "normal_in_fingerprint",
    "include_incident_angle",
    "angle_bins",
    "include_layer",
    "jitter",
    "base_voxel",
    "low_count_threshold",
    "neighborhood_search",
    "multi_level",
    "coarse_offset",
];
const TABLE: &[&str] = &["capacity", "probe_limit", "sum_mode", "eviction_horizon", "protected_frames"];
const TEMPORAL: &[&str] = &[
    "temporal_mode",
    "ema_alpha",
    "delta_max",
    "delta_epsilon",
    "reevaluation_period",
    "alpha_refine",
    "sample_cap",
    "migrate",
];

fn section_of(key: &str) -> Option<&'static str> {
    [("render", RENDER), ("filter", FILTER), ("table", TABLE), ("temporal", TEMPORAL)]
        .into_iter()
        .find(|(_, keys)| keys.contains(&key))
        .map(|(name, _)| name)
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    file: String,
    entries: BTreeMap<String, Entry>,
}

pub fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "on" | "yes" | "1" => Some(true),
        "false" | "off" | "no" | "0" => Some(false),
        _ => None,
    }
}

pub fn parse_sum_mode(s: &str) -> Option<SumMode> {
    match s {
        "fixed" => Some(SumMode::Fixed),
        "float" => Some(SumMode::Float),
        _ => None,
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut out = ConfigFile {
            file: file.to_string(),
            entries: BTreeMap::new(),
        };
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(file, n, "unterminated section header"))?
                    .trim();
                if !["render", "filter", "table", "temporal"].contains(&name) {
                    return Err(Error::parse(file, n, format!("unknown section '{name}'")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(file, n, "expected 'key = value'"))?;
            let (key, value) = (key.trim(), value.trim());
            let home = section_of(key).ok_or_else(|| Error::parse(file, n, format!("unknown key '{key}'")))?;
            if let Some(s) = &section {
                if s != home {
                    return Err(Error::parse(file, n, format!("'{key}' belongs in [{home}], not [{s}]")));
                }
            }
            let entry = Entry {
                value: value.to_string(),
                line: n,
            };
            if out.entries.insert(key.to_string(), entry).is_some() {
                return Err(Error::parse(file, n, format!("'{key}' set twice")));
            }
        }
        Ok(out)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    /// Parsed value of `key` with `parse`, if present.
    pub fn get_with<T>(&self, key: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Option<T>> {
        let Some(e) = self.entries.get(key) else { return Ok(None) };
        parse(&e.value)
            .map(Some)
            .ok_or_else(|| Error::parse(&self.file, e.line, format!("bad value '{}' for {key}", e.value)))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get_with(key, |s| s.parse().ok())
    }

    /// Overrides the fields of `cfg` that the file sets.
    pub fn apply(&self, cfg: &mut FilterConfig) -> Result<()> {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.get(stringify!($field))? { cfg.$field = v; })*
            };
        }
        macro_rules! set_bool {
            ($($field:ident),*) => {
                $(if let Some(v) = self.get_with(stringify!($field), parse_bool)? { cfg.$field = v; })*
            };
        }
        set!(
            s_pixels,
            normal_bins,
            angle_bins,
            base_voxel,
            low_count_threshold,
            coarse_offset,
            capacity,
            probe_limit,
            eviction_horizon,
            protected_frames,
            ema_alpha,
            delta_max,
            delta_epsilon,
            reevaluation_period,
            alpha_refine,
            sample_cap
        );
        set_bool!(
            include_normal,
            normal_in_fingerprint,
            include_incident_angle,
            include_layer,
            jitter,
            neighborhood_search,
            multi_level,
            migrate
        );
        if let Some(m) = self.get_with("sum_mode", parse_sum_mode)? {
            cfg.sum_mode = m;
        }
        if let Some(m) = self.get_with("temporal_mode", |s| TemporalMode::from_str(s).ok())? {
            cfg.temporal_mode = m;
        }
        Ok(())
    }
}
