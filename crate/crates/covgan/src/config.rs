//! Flat `key = value` scene configuration files.
//!
//! Keys are the [`SceneConfig`] field names. Pairs and points are written as
//! comma-separated numbers; `bs_positions` takes `;`-separated points, each
//! either `x,y,z` or `x,y` (height taken from `bs_height_m`). `#` starts a
//! comment.

use std::fmt::Write as _;
use std::path::Path;

use covgan_core::scene::SceneConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("scene config not found: {0}")]
    NotFound(String),
    #[error("failed to read scene config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {reason}")]
    BadValue { line: usize, key: String, reason: String },
}

const KEYS: [&str; 11] = [
    "street_length_m",
    "street_width_m",
    "wall_y",
    "ground_z",
    "bs_positions",
    "bs_height_m",
    "user_height_m",
    "carrier_hz",
    "reflection_coeff",
    "max_bounces",
    "max_paths",
];

fn numbers(v: &str) -> Result<Vec<f64>, String> {
    v.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{}`: {e}", t.trim())))
        .collect()
}

/// Parses configuration text; keys not present keep their defaults.
pub fn parse_scene_config(text: &str) -> Result<SceneConfig, ConfigError> {
    let mut cfg = SceneConfig::default();
    let mut seen: Vec<&str> = Vec::new();
    let mut raw_positions: Option<(usize, Vec<Vec<f64>>)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        let Some(&known) = KEYS.iter().find(|k| **k == key) else {
            return Err(ConfigError::UnknownKey { line, key: key.to_string() });
        };
        if seen.contains(&known) {
            return Err(ConfigError::DuplicateKey { line, key: key.to_string() });
        }
        seen.push(known);
        let bad = |reason: String| ConfigError::BadValue { line, key: key.to_string(), reason };
        let scalar = || -> Result<f64, ConfigError> {
            match numbers(value).map_err(bad)?.as_slice() {
                [x] => Ok(*x),
                other => Err(bad(format!("expected one number, got {}", other.len()))),
            }
        };
        let integer = || -> Result<u64, ConfigError> {
            value.parse::<u64>().map_err(|e| bad(format!("`{value}`: {e}")))
        };
        match known {
            "street_length_m" => cfg.street_length_m = scalar()?,
            "street_width_m" => cfg.street_width_m = scalar()?,
            "ground_z" => cfg.ground_z = scalar()?,
            "bs_height_m" => cfg.bs_height_m = scalar()?,
            "user_height_m" => cfg.user_height_m = scalar()?,
            "carrier_hz" => cfg.carrier_hz = scalar()?,
            "reflection_coeff" => cfg.reflection_coeff = scalar()?,
            "max_bounces" => {
                cfg.max_bounces = u32::try_from(integer()?).map_err(|_| bad(String::from("out of range")))?
            }
            "max_paths" => {
                cfg.max_paths = usize::try_from(integer()?).map_err(|_| bad(String::from("out of range")))?
            }
            "wall_y" => match numbers(value).map_err(bad)?.as_slice() {
                [a, b] => cfg.wall_y = (*a, *b),
                other => return Err(bad(format!("expected two numbers, got {}", other.len()))),
            },
            "bs_positions" => {
                let mut pts = Vec::new();
                for p in value.split(';').map(str::trim).filter(|p| !p.is_empty()) {
                    let v = numbers(p).map_err(bad)?;
                    if v.len() != 2 && v.len() != 3 {
                        return Err(bad(format!("point `{p}` needs 2 or 3 coordinates")));
                    }
                    pts.push(v);
                }
                raw_positions = Some((line, pts));
            }
            _ => unreachable!("key list and match arms disagree"),
        }
    }
    if let Some((_, pts)) = raw_positions {
        cfg.bs_positions = pts
            .into_iter()
            .map(|p| if p.len() == 3 { [p[0], p[1], p[2]] } else { [p[0], p[1], cfg.bs_height_m] })
            .collect();
    } else if seen.contains(&"bs_height_m") {
        for p in &mut cfg.bs_positions {
            p[2] = cfg.bs_height_m;
        }
    }
    Ok(cfg)
}

pub fn read_scene_config(path: &Path) -> Result<SceneConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ConfigError::NotFound(path.display().to_string()),
        _ => ConfigError::Io { path: path.display().to_string(), source: e },
    })?;
    parse_scene_config(&text)
}

/// Canonical text form; parsing it reproduces `cfg` exactly and its bytes
/// define the scene digest.
pub fn format_scene_config(cfg: &SceneConfig) -> String {
    let mut s = String::new();
    // `{:?}` on f64 prints the shortest string that round-trips.
    let _ = writeln!(s, "street_length_m = {:?}", cfg.street_length_m);
    let _ = writeln!(s, "street_width_m = {:?}", cfg.street_width_m);
    let _ = writeln!(s, "wall_y = {:?}, {:?}", cfg.wall_y.0, cfg.wall_y.1);
    let _ = writeln!(s, "ground_z = {:?}", cfg.ground_z);
    let pts: Vec<String> = cfg.bs_positions.iter().map(|p| format!("{:?}, {:?}, {:?}", p[0], p[1], p[2])).collect();
    let _ = writeln!(s, "bs_positions = {}", pts.join("; "));
    let _ = writeln!(s, "bs_height_m = {:?}", cfg.bs_height_m);
    let _ = writeln!(s, "user_height_m = {:?}", cfg.user_height_m);
    let _ = writeln!(s, "carrier_hz = {:?}", cfg.carrier_hz);
    let _ = writeln!(s, "reflection_coeff = {:?}", cfg.reflection_coeff);
    let _ = writeln!(s, "max_bounces = {}", cfg.max_bounces);
    let _ = writeln!(s, "max_paths = {}", cfg.max_paths);
    s
}

/// SHA-256 of the canonical text.
pub fn scene_digest(cfg: &SceneConfig) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    Sha256::digest(format_scene_config(cfg).as_bytes()).into()
}
