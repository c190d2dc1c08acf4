//! Flat `key=value` configuration files.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. The same
//! file carries floor keys (`tiles_x=5`) and radio keys (`radio.loss_prob=0.05`).

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::floor::FloorConfig;
use crate::radio::RadioConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value {value:?} for {key}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

/// Splits a flat config text into `(line_no, key, value)` triples.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            text: raw.to_string(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        }
        out.push((line, k.to_string(), v.to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// Everything a floor config file describes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeploymentConfig {
    pub floor: FloorConfig,
    pub radio: RadioConfig,
}

impl DeploymentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = DeploymentConfig::default();
        for (line, key, value) in parse_pairs(text)? {
            let v = value.as_str();
            match key.as_str() {
                "tiles_x" => cfg.floor.tiles_x = parse_value(line, &key, v)?,
                "tiles_y" => cfg.floor.tiles_y = parse_value(line, &key, v)?,
                "tile_side_m" => cfg.floor.tile_side_m = parse_value(line, &key, v)?,
                "sensors_per_node" => cfg.floor.sensors_per_node = parse_value(line, &key, v)?,
                "pir_section_len_tiles" => {
                    cfg.floor.pir_section_len_tiles = parse_value(line, &key, v)?
                }
                "seed" => cfg.floor.seed = parse_value(line, &key, v)?,
                "radio.radius_m" | "radio.radio_radius_m" => {
                    cfg.radio.radio_radius_m = parse_value(line, &key, v)?
                }
                "radio.latency_us" | "radio.latency_base_us" => {
                    cfg.radio.latency_base_us = parse_value(line, &key, v)?
                }
                "radio.jitter_us" | "radio.latency_jitter_us" => {
                    cfg.radio.latency_jitter_us = parse_value(line, &key, v)?
                }
                "radio.loss_prob" => cfg.radio.loss_prob = parse_value(line, &key, v)?,
                "radio.stream" => cfg.radio.stream = parse_value(line, &key, v)?,
                _ => return Err(ConfigError::UnknownKey { line, key }),
            }
        }
        cfg.floor.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.radio.validate().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }
}
